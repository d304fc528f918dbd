//! Desk-scale joint image and video training, evaluation and experiment grids.

mod ablation;
mod checkpoint;
mod data;
mod eval;
mod optim;
pub mod presets;
mod train;

pub use ablation::{
    ablation_matrix, result_rows, run_cell, write_results_csv, AblationCell, AblationGrid,
    ResultRow, CSV_HEADER,
};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_model, load_state, read_manifest, save_model,
    save_state, Manifest, TensorEntry,
};
pub use data::{
    make_dataset, SyntheticTask, TaskKind, BLOB_SIGMA, DIRECTIONS, MOTION_SPEED, SHAPES,
};
pub use eval::{
    crop_origins, eval_bank, evaluate, halved_strides, CropResult, EvalMetrics, EvalSpec,
};
pub use optim::{learning_rate, AdamState, ADAM_EPS, BETA1, BETA2};
pub use train::{
    thread_count, train_joint, StepLog, TrainAbort, TrainConfig, TrainState, TrainTask,
};
