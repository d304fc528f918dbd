//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tubekit::config::{EncoderSection, HeadSpec};
use tubekit::encoder::cross_entropy;
use tubekit::tokenizer::tokenize_gradient;
use tubekit::tube_config::Dims;
use tubekit::{
    tokenize, KernelBank, ModelConfig, PoolMode, PosEmbKind, TubeBank, TubeSpec, TubeVit, VideoClip,
};

pub const STEP: f64 = 1e-5;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub fn tiny_tubes() -> Vec<TubeSpec> {
    vec![
        TubeSpec::new([1, 4, 4], [8, 4, 4]).image(),
        TubeSpec::new([4, 4, 4], [4, 4, 4]),
        TubeSpec::new([2, 4, 4], [4, 4, 4]).with_group([2, 1, 1]),
    ]
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        hidden_size: 24,
        tau: 10_000.0,
        tubes: tiny_tubes(),
        encoder: EncoderSection {
            layers: 2,
            heads: 2,
            mlp_size: 48,
            pool: PoolMode::Mean,
            gate_layer: Some(0),
            freeze_below: None,
        },
        heads: vec![
            HeadSpec {
                name: "a".into(),
                classes: 3,
                task: None,
            },
            HeadSpec {
                name: "b".into(),
                classes: 5,
                task: None,
            },
        ],
        channels: 2,
        posemb: PosEmbKind::Fixed,
        exponent_mode: Default::default(),
        interpolated_kernel: None,
        input_dims: Some([8, 8, 8]),
        train: None,
    }
}

pub fn random_clip(dims: [usize; 3], channels: usize, seed: u64) -> VideoClip<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Array4::from_shape_fn((dims[0], dims[1], dims[2], channels), |_| {
        rng.random_range(-1.0..1.0)
    });
    VideoClip::new(data)
}

pub fn loss(model: &TubeVit<f64>, clip: &VideoClip<f64>, head: &str, label: usize) -> f64 {
    cross_entropy(&model.forward(clip, head).unwrap(), label).0
}

/// Checks every scalar of every parameter and returns the worst relative error.
pub fn check_model(
    mut model: TubeVit<f64>,
    clip: &VideoClip<f64>,
    head: &str,
    label: usize,
) -> (f64, usize) {
    let analytic = model.loss_grad(clip, head, label, 1.0).unwrap().grads;
    let analytic: Vec<(String, Vec<f64>)> = analytic
        .arrays()
        .into_iter()
        .map(|(id, v)| (id.name, v.to_vec()))
        .collect();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (p, (name, grad)) in analytic.iter().enumerate() {
        for (i, &g) in grad.iter().enumerate() {
            let orig = model.params.arrays_mut()[p].1[i];
            model.params.arrays_mut()[p].1[i] = orig + STEP;
            let up = loss(&model, clip, head, label);
            model.params.arrays_mut()[p].1[i] = orig - STEP;
            let down = loss(&model, clip, head, label);
            model.params.arrays_mut()[p].1[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let e = rel_err(g, numeric);
            assert!(e < 1e-4, "{name}[{i}]: analytic {g:e}, numeric {numeric:e}");
            worst = worst.max(e);
            checked += 1;
        }
    }
    (worst, checked)
}

pub fn perturbed(config: ModelConfig, seed: u64) -> TubeVit<f64> {
    let mut model = TubeVit::<f64>::init(config, seed).unwrap();
    model.params.encoder.alpha[0] = 0.4;
    // non-trivial norms and biases so their gradients are exercised
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for (id, v) in model.params.arrays_mut() {
        if !id.decay && !id.name.ends_with("alpha") {
            for x in v.iter_mut() {
                *x += rng.random_range(-0.2..0.2);
            }
        }
    }
    model
}

/// `sum(U * tokens)` is linear in kernels and voxels, so differences are
/// exact up to round-off.
pub fn check_tokenizer(bank: &TubeBank, mut kernels: KernelBank<f64>, dims: [usize; 3], seed: u64) {
    let mut clip = random_clip(dims, 2, seed);
    let n = tokenize(&clip, bank, &kernels).unwrap().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let upstream = Array2::from_shape_fn((n, bank.hidden_size), |_| rng.random_range(-1.0..1.0));
    let objective = |clip: &VideoClip<f64>, k: &KernelBank<f64>| {
        (&tokenize(clip, bank, k).unwrap().tokens * &upstream).sum()
    };
    let grads = tokenize_gradient(upstream.view(), &clip, bank, &kernels, true).unwrap();
    let analytic: Vec<Vec<f64>> = grads
        .kernels
        .arrays()
        .into_iter()
        .map(|(_, v)| v.to_vec())
        .collect();
    for (p, grad) in analytic.iter().enumerate() {
        for (i, &g) in grad.iter().enumerate() {
            let orig = kernels.arrays_mut()[p].1[i];
            kernels.arrays_mut()[p].1[i] = orig + STEP;
            let up = objective(&clip, &kernels);
            kernels.arrays_mut()[p].1[i] = orig - STEP;
            let down = objective(&clip, &kernels);
            kernels.arrays_mut()[p].1[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            assert!(
                rel_err(g, numeric) < 1e-6,
                "kernel {p}[{i}]: {g:e} vs {numeric:e}"
            );
        }
    }
    let input = grads.input.unwrap();
    for (idx, &g) in input.indexed_iter() {
        let orig = clip.data[idx];
        clip.data[idx] = orig + STEP;
        let up = objective(&clip, &kernels);
        clip.data[idx] = orig - STEP;
        let down = objective(&clip, &kernels);
        clip.data[idx] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        assert!(
            rel_err(g, numeric) < 1e-6,
            "voxel {idx:?}: {g:e} vs {numeric:e}"
        );
    }
}

pub fn init_kernels(
    bank: &TubeBank,
    interpolated: Option<[usize; 3]>,
    seed: u64,
) -> KernelBank<f64> {
    KernelBank::init(bank, 2, interpolated, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Window origins along each axis found by visiting every voxel of the input
/// and keeping those where a window fits and lines up with the stride.
pub fn brute_force_tokens(tube: &TubeSpec, dims: Dims) -> Option<usize> {
    let pre = [0, 1, 2].map(|a| tube.stride[a] / tube.s2d_group[a]);
    let mut seen: [Vec<bool>; 3] = [0, 1, 2].map(|a| vec![false; dims[a]]);
    let mut windows = 0usize;
    for t in 0..dims[0] {
        for h in 0..dims[1] {
            for w in 0..dims[2] {
                let p = [t, h, w];
                let ok = (0..3).all(|a| {
                    p[a] >= tube.offset[a]
                        && (p[a] - tube.offset[a]) % pre[a] == 0
                        && p[a] + tube.kernel[a] <= dims[a]
                });
                if ok {
                    windows += 1;
                    for a in 0..3 {
                        seen[a][p[a]] = true;
                    }
                }
            }
        }
    }
    if windows == 0 {
        return None;
    }
    let per_axis = [0, 1, 2].map(|a| seen[a].iter().filter(|&&s| s).count());
    assert_eq!(windows, per_axis.iter().product::<usize>());
    let merged: usize = (0..3).map(|a| per_axis[a] / tube.s2d_group[a]).product();
    (merged > 0).then_some(merged)
}
