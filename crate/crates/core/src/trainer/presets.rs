//! Desk-scale models and tasks used by the experiment harness.

use crate::config::{EncoderSection, HeadSpec, ModelConfig, PosEmbKind};
use crate::encoder::PoolMode;
use crate::posemb::ExponentMode;
use crate::trainer::data::SyntheticTask;
use crate::trainer::train::{TrainConfig, TrainTask};
use crate::tube_config::{TubeSpec, DEFAULT_TAU};

pub const VIDEO_DIMS: [usize; 3] = [16, 32, 32];
pub const IMAGE_DIMS: [usize; 3] = [1, 32, 32];
pub const MOTION_HEAD: &str = "motion";
pub const SHAPE_HEAD: &str = "shape";

pub fn motion_task(seed: u64) -> SyntheticTask {
    SyntheticTask::motion(VIDEO_DIMS, 4, seed).with_noise(0.05)
}

pub fn shape_task(seed: u64) -> SyntheticTask {
    SyntheticTask::shapes(IMAGE_DIMS, 4, seed).with_noise(0.05)
}

pub fn motion(seed: u64) -> TrainTask {
    TrainTask {
        head: MOTION_HEAD.into(),
        task: motion_task(seed),
    }
}

pub fn shapes(seed: u64) -> TrainTask {
    TrainTask {
        head: SHAPE_HEAD.into(),
        task: shape_task(seed),
    }
}

/// Flat 8x8 patches on the first frame only.
pub fn patch_tube() -> TubeSpec {
    TubeSpec::new([1, 8, 8], [16, 8, 8]).image()
}

/// Patches plus three video tubes of different shapes, one of them merged
/// space-to-depth.
pub fn desk_tubes() -> Vec<TubeSpec> {
    vec![
        patch_tube(),
        TubeSpec::new([8, 8, 8], [8, 8, 8]),
        TubeSpec::new([16, 4, 4], [16, 8, 8]).with_offset([0, 2, 2]),
        TubeSpec::new([4, 6, 6], [4, 16, 16])
            .with_offset([2, 4, 4])
            .with_group([1, 1, 2]),
    ]
}

pub fn desk_train(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        steps,
        lr: 2e-3,
        warmup_steps: steps / 20,
        cosine_decay: true,
        weight_decay: 1e-4,
        seed,
        ..TrainConfig::default()
    }
}

/// A small encoder over `tubes` with one head per task.
pub fn desk_model(
    tubes: Vec<TubeSpec>,
    tasks: &[TrainTask],
    hidden: usize,
    layers: usize,
) -> ModelConfig {
    ModelConfig {
        hidden_size: hidden,
        tau: DEFAULT_TAU,
        tubes,
        encoder: EncoderSection {
            layers,
            heads: 2,
            mlp_size: 2 * hidden,
            pool: PoolMode::Mean,
            gate_layer: None,
            freeze_below: None,
        },
        heads: tasks
            .iter()
            .map(|t| HeadSpec {
                name: t.head.clone(),
                classes: t.task.classes,
                task: Some(t.task.clone()),
            })
            .collect(),
        channels: 1,
        posemb: PosEmbKind::Fixed,
        exponent_mode: ExponentMode::Normalized,
        interpolated_kernel: None,
        input_dims: Some(VIDEO_DIMS),
        train: None,
    }
}

/// The training tasks named by a config's heads.
pub fn tasks_of(config: &ModelConfig) -> Vec<TrainTask> {
    config
        .heads
        .iter()
        .filter_map(|h| {
            h.task.as_ref().map(|task| TrainTask {
                head: h.name.clone(),
                task: task.clone(),
            })
        })
        .collect()
}
