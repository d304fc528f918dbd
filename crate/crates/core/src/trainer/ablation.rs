//! Grids of train-then-evaluate runs written as one results table.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::TubeVit;
use crate::scalar::Scalar;
use crate::trainer::eval::{eval_bank, evaluate, EvalSpec};
use crate::trainer::presets::tasks_of;
use crate::trainer::train::{train_joint, TrainState};
use crate::tube_config::estimate_cost;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationCell {
    pub name: String,
    /// Must carry a `train` section and at least one head with a task.
    pub config: ModelConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationGrid {
    pub cells: Vec<AblationCell>,
    #[serde(default)]
    pub eval: EvalSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub run_id: String,
    pub config_hash: String,
    pub task: String,
    pub top1: f64,
    pub top5: f64,
    pub tokens: usize,
    pub params: usize,
    pub macs: u64,
    pub wall_seconds: f64,
}

pub const CSV_HEADER: &str = "run_id,config_hash,task,top1,top5,tokens,params,macs,wall_seconds";

impl ResultRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{},{},{},{:.3}",
            self.run_id,
            self.config_hash,
            self.task,
            self.top1,
            self.top5,
            self.tokens,
            self.params,
            self.macs,
            self.wall_seconds
        )
    }
}

pub fn write_results_csv(rows: &[ResultRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}

/// Evaluates every task head of a trained model. `wall_seconds` is left at
/// zero so that reruns produce identical tables.
pub fn result_rows<T: Scalar>(
    run_id: &str,
    model: &TubeVit<T>,
    eval: &EvalSpec,
) -> Result<Vec<ResultRow>> {
    let bank = eval_bank(&model.bank(), eval)?;
    let mut rows = Vec::new();
    for t in tasks_of(&model.config) {
        let metrics = evaluate(model, &t.head, &t.task, eval)?;
        let cost = estimate_cost(
            &bank,
            t.task.dims,
            &model.encoder_config(),
            model.config.channels,
        )?;
        rows.push(ResultRow {
            run_id: run_id.to_string(),
            config_hash: model.config.hash(),
            task: t.head.clone(),
            top1: metrics.top1,
            top5: metrics.top5,
            tokens: metrics.tokens,
            params: model.params.param_count(),
            macs: cost.total_macs,
            wall_seconds: 0.0,
        });
    }
    Ok(rows)
}

/// Trains one cell from its own seed and evaluates all of its tasks.
pub fn run_cell<T: Scalar>(
    cell: &AblationCell,
    eval: &EvalSpec,
    timing: bool,
) -> Result<(TrainState<T>, Vec<ResultRow>)> {
    let start = Instant::now();
    let train = cell.config.train.clone().ok_or_else(|| {
        Error::InvalidConfig(format!("cell {:?} has no train section", cell.name))
    })?;
    let tasks = tasks_of(&cell.config);
    let model = TubeVit::<T>::init(cell.config.clone(), train.seed)?;
    let state = train_joint(model, &tasks, &train, &mut |_| {}).map_err(|abort| abort.error)?;
    let mut rows = result_rows(&cell.name, &state.model, eval)?;
    if timing {
        let secs = start.elapsed().as_secs_f64();
        rows.iter_mut().for_each(|r| r.wall_seconds = secs);
    }
    Ok((state, rows))
}

/// Runs the cells in order and concatenates their rows.
pub fn ablation_matrix<T: Scalar>(grid: &AblationGrid, timing: bool) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for cell in &grid.cells {
        rows.extend(run_cell::<T>(cell, &grid.eval, timing)?.1);
    }
    Ok(rows)
}
