//! Central finite differences against the hand-written backward passes.

mod common;

use common::*;
use tubekit::{PoolMode, PosEmbKind, TubeBank, TubeSpec, TubeVit};

#[test]
fn tiny_config_has_at_most_20_tokens() {
    let model = TubeVit::<f64>::init(tiny_config(), 0).unwrap();
    let n = model.tokens(&random_clip([8, 8, 8], 2, 1)).unwrap().len();
    assert_eq!(n, 20);
}

#[test]
fn full_model_mean_pool_with_gate() {
    let (worst, n) = check_model(
        perturbed(tiny_config(), 1),
        &random_clip([8, 8, 8], 2, 2),
        "a",
        1,
    );
    assert!(n > 10_000);
    assert!(worst < 1e-4);
}

#[test]
fn second_head_and_image_input() {
    check_model(
        perturbed(tiny_config(), 3),
        &random_clip([1, 8, 8], 2, 4),
        "b",
        4,
    );
}

#[test]
fn class_token_pooling() {
    let mut cfg = tiny_config();
    cfg.encoder.pool = PoolMode::Cls;
    check_model(perturbed(cfg, 5), &random_clip([8, 8, 8], 2, 6), "a", 0);
}

#[test]
fn interpolated_kernel_model() {
    let mut cfg = tiny_config();
    cfg.interpolated_kernel = Some([4, 4, 4]);
    check_model(perturbed(cfg, 7), &random_clip([8, 8, 8], 2, 8), "b", 2);
}

#[test]
fn learned_positions() {
    let mut cfg = tiny_config();
    cfg.posemb = PosEmbKind::Learned;
    check_model(perturbed(cfg, 9), &random_clip([8, 8, 8], 2, 10), "a", 2);
}

#[test]
fn tokenizer_plain_tubes() {
    let bank = TubeBank::new(tiny_tubes()[..2].to_vec(), 12);
    check_tokenizer(&bank, init_kernels(&bank, None, 11), [8, 8, 8], 12);
}

#[test]
fn tokenizer_space_to_depth() {
    let bank = TubeBank::new(
        vec![
            TubeSpec::new([1, 4, 4], [8, 4, 4]).image(),
            TubeSpec::new([2, 4, 4], [4, 4, 4]).with_group([2, 1, 1]),
            TubeSpec::new([2, 2, 2], [2, 4, 4]).with_group([1, 2, 2]),
        ],
        12,
    );
    check_tokenizer(&bank, init_kernels(&bank, None, 13), [8, 8, 8], 14);
}

#[test]
fn tokenizer_interpolated() {
    let bank = TubeBank::new(tiny_tubes(), 12);
    check_tokenizer(
        &bank,
        init_kernels(&bank, Some([3, 5, 5]), 15),
        [8, 8, 8],
        16,
    );
}
