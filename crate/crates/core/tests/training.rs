use tubekit::trainer::presets::{desk_model, desk_tubes, motion, shapes};
use tubekit::trainer::{
    decode_checkpoint, encode_checkpoint, load_state, save_state, train_joint, TrainConfig,
    TrainState, TrainTask,
};
use tubekit::{Error, TubeVit};

fn tasks() -> Vec<TrainTask> {
    vec![motion(3), shapes(4)]
}

fn small_model(seed: u64) -> TubeVit<f32> {
    TubeVit::init(desk_model(desk_tubes(), &tasks(), 24, 2), seed).unwrap()
}

fn short_run(steps: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        steps,
        lr: 3e-3,
        warmup_steps: 2,
        weight_decay: 1e-3,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn train(model: TubeVit<f32>, cfg: &TrainConfig) -> TrainState<f32> {
    train_joint(model, &tasks(), cfg, &mut |_| {}).unwrap()
}

#[test]
fn same_seed_same_weights() {
    let a = train(small_model(1), &short_run(6));
    let b = train(small_model(1), &short_run(6));
    assert_eq!(a.model, b.model);
    assert_eq!(a.adam, b.adam);
    let c = train(small_model(2), &short_run(6));
    assert_ne!(a.model, c.model);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let state = train(small_model(1), &short_run(3));
    let bytes = encode_checkpoint(
        &state.model,
        Some(&state.adam),
        state.step,
        state.seed,
        Some(&state.train),
    );
    let back = decode_checkpoint::<f32>(&bytes).unwrap();
    assert_eq!(back, state);
    assert_eq!(
        encode_checkpoint(
            &back.model,
            Some(&back.adam),
            back.step,
            back.seed,
            Some(&back.train)
        ),
        bytes
    );
}

#[test]
fn resume_equals_straight_through() {
    let cfg = short_run(8);
    let straight = train(small_model(5), &cfg);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.tkc");
    let mut first = TrainState::new(small_model(5), cfg.clone());
    first.run_until(&tasks(), 3, &mut |_| {}).unwrap();
    save_state(&path, &first).unwrap();
    drop(first);

    let mut resumed = load_state::<f32>(&path).unwrap();
    assert_eq!(resumed.step, 3);
    resumed.run_until(&tasks(), cfg.steps, &mut |_| {}).unwrap();
    assert_eq!(resumed, straight);
}

#[test]
fn truncated_or_padded_checkpoints_are_rejected() {
    let state = train(small_model(1), &short_run(1));
    let bytes = encode_checkpoint(
        &state.model,
        Some(&state.adam),
        state.step,
        state.seed,
        None,
    );
    let newline = bytes.iter().position(|&b| b == b'\n').unwrap();
    for cut in [
        0,
        10,
        newline,
        newline + 1,
        newline + 7,
        bytes.len() / 2,
        bytes.len() - 1,
    ] {
        match decode_checkpoint::<f32>(&bytes[..cut]) {
            Err(Error::CorruptManifest(_)) => {}
            other => panic!("cut at {cut}: {other:?}"),
        }
    }
    let mut padded = bytes.clone();
    padded.push(0);
    assert!(matches!(
        decode_checkpoint::<f32>(&padded),
        Err(Error::CorruptManifest(_))
    ));
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let init = small_model(7);
    let cfg = TrainConfig {
        lr: 0.0,
        ..short_run(4)
    };
    let state = train(init.clone(), &cfg);
    assert_eq!(state.step, 4);
    assert_eq!(state.model.params, init.params);
}

#[test]
fn frozen_parameters_stay_bit_identical() {
    let mut init = small_model(9);
    init.config.encoder.freeze_below = Some(1);
    init.config.encoder.gate_layer = Some(1);
    let state = train(init.clone(), &short_run(5));
    let before = init.params.arrays();
    let after = state.model.params.arrays();
    let mut frozen = 0;
    for ((id, a), (_, b)) in before.iter().zip(&after) {
        if init.is_frozen(id) {
            frozen += 1;
            assert_eq!(a, b, "{} moved", id.name);
        } else if id.name.starts_with("encoder.layer1.w") || id.name == "encoder.gate.alpha" {
            assert_ne!(a, b, "{} did not train", id.name);
        }
    }
    assert!(frozen > 10);
}

#[test]
fn non_finite_step_keeps_the_last_good_state() {
    let cfg = TrainConfig {
        lr: 1e30,
        warmup_steps: 0,
        ..short_run(10)
    };
    let abort = train_joint(small_model(1), &tasks(), &cfg, &mut |_| {}).unwrap_err();
    assert!(
        matches!(abort.error, Error::NonFinite(_)),
        "{:?}",
        abort.error
    );
    assert!(abort.state.step < 10);
    assert!(abort
        .state
        .model
        .params
        .arrays()
        .iter()
        .all(|(_, v)| v.iter().all(|x| x.is_finite())));

    // replaying the same number of steps reaches the same state
    let mut replay = TrainState::new(small_model(1), cfg.clone());
    replay
        .run_until(&tasks(), abort.state.step, &mut |_| {})
        .unwrap();
    assert_eq!(replay, abort.state);
}

#[test]
fn wrong_head_or_channels_fail_before_training() {
    let mut t = tasks();
    t[0].head = "nope".into();
    let err = train_joint(small_model(1), &t, &short_run(2), &mut |_| {}).unwrap_err();
    assert!(matches!(err.error, Error::UnknownHead(_)));
    assert_eq!(err.state.step, 0);
}
