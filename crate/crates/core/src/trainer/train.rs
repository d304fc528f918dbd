//! The interleaved multi-task training loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, SampleGrad, TubeVit};
use crate::scalar::Scalar;
use crate::trainer::data::SyntheticTask;
use crate::trainer::optim::{learning_rate, AdamState};

fn yes() -> bool {
    true
}

fn default_batch() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    #[serde(default)]
    pub warmup_steps: usize,
    #[serde(default = "yes")]
    pub cosine_decay: bool,
    #[serde(default)]
    pub weight_decay: f64,
    /// Consecutive steps given to each task per round. Empty means one each.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mix: Vec<usize>,
    /// Per-task loss multipliers. Empty means all ones.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_weights: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: default_batch(),
            steps: 0,
            lr: 1e-3,
            warmup_steps: 0,
            cosine_decay: true,
            weight_decay: 0.0,
            mix: Vec::new(),
            loss_weights: Vec::new(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self, tasks: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite())
            || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite())
        {
            return bad("lr and weight_decay must be finite and non-negative");
        }
        if !self.mix.is_empty() && (self.mix.len() != tasks || self.mix.contains(&0)) {
            return bad("mix needs one positive entry per task");
        }
        if !self.loss_weights.is_empty()
            && (self.loss_weights.len() != tasks
                || self
                    .loss_weights
                    .iter()
                    .any(|w| !(w.is_finite() && *w > 0.0)))
        {
            return bad("loss_weights needs one positive entry per task");
        }
        Ok(())
    }

    fn mix_of(&self, tasks: usize) -> Vec<usize> {
        if self.mix.is_empty() {
            vec![1; tasks]
        } else {
            self.mix.clone()
        }
    }

    /// Task trained at `step` and how many earlier steps that task had.
    pub fn schedule(&self, tasks: usize, step: usize) -> (usize, usize) {
        let mix = self.mix_of(tasks);
        let round: usize = mix.iter().sum();
        let (full, mut r) = (step / round, step % round);
        for (k, &m) in mix.iter().enumerate() {
            if r < m {
                return (k, full * m + r);
            }
            r -= m;
        }
        unreachable!("remainder is below the round length")
    }

    pub fn loss_weight(&self, task: usize) -> f64 {
        self.loss_weights.get(task).copied().unwrap_or(1.0)
    }
}

/// One dataset trained through one named head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTask {
    pub head: String,
    pub task: SyntheticTask,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub model: TubeVit<T>,
    pub adam: AdamState<T>,
    /// Completed optimizer steps.
    pub step: usize,
    pub seed: u64,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub task: String,
    pub loss: f64,
    pub lr: f64,
    pub accuracy: f64,
}

impl std::fmt::Display for StepLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "step {} task {} loss {:.6} lr {:.6e} acc {:.4}",
            self.step, self.task, self.loss, self.lr, self.accuracy
        )
    }
}

/// Training stopped early. `state` is the last state with finite values.
#[derive(Debug)]
pub struct TrainAbort<T> {
    pub state: TrainState<T>,
    pub error: Error,
}

/// Worker count from `TUBEKIT_THREADS`, falling back to rayon's default.
pub fn thread_count() -> usize {
    std::env::var("TUBEKIT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

pub(crate) fn pool() -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .expect("thread pool")
}

fn all_finite<T: Scalar>(p: &ModelParams<T>) -> bool {
    p.arrays()
        .iter()
        .all(|(_, a)| a.iter().all(|v| v.is_finite()))
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: TubeVit<T>, train: TrainConfig) -> Self {
        Self {
            adam: AdamState::new(&model.params),
            seed: train.seed,
            step: 0,
            model,
            train,
        }
    }

    fn check_tasks(&self, tasks: &[TrainTask]) -> Result<()> {
        if tasks.is_empty() {
            return Err(Error::InvalidConfig("no training tasks".into()));
        }
        self.train.check(tasks.len())?;
        for t in tasks {
            t.task.check()?;
            self.model.params.encoder.head_index(&t.head)?;
            if t.task.channels != self.model.config.channels {
                return Err(Error::ShapeMismatch(format!(
                    "task for head {:?} has {} channels, model takes {}",
                    t.head, t.task.channels, self.model.config.channels
                )));
            }
        }
        Ok(())
    }

    /// Per-sample gradients of one step, summed in sample order so the
    /// result does not depend on the worker count.
    fn step_gradients(
        &self,
        task: &TrainTask,
        task_step: usize,
        scale: f64,
    ) -> Result<(f64, usize, ModelParams<T>)> {
        let b = self.train.batch_size;
        let samples: Vec<Result<SampleGrad<T>>> = pool().install(|| {
            (0..b)
                .into_par_iter()
                .map(|i| {
                    let (clip, label) = task.task.sample::<T>((task_step * b + i) as u64);
                    self.model.loss_grad(&clip, &task.head, label, scale)
                })
                .collect()
        });
        let mut loss = 0.0;
        let mut correct = 0;
        let mut total: Option<ModelParams<T>> = None;
        for s in samples {
            let s = s?;
            loss += s.loss;
            correct += s.correct as usize;
            match &mut total {
                None => total = Some(s.grads),
                Some(t) => t.add_assign(&s.grads),
            }
        }
        Ok((loss, correct, total.expect("batch is non-empty")))
    }

    /// One optimizer step. On error nothing is modified.
    pub fn step_once(&mut self, tasks: &[TrainTask]) -> Result<StepLog> {
        let (k, task_step) = self.train.schedule(tasks.len(), self.step);
        let task = &tasks[k];
        let b = self.train.batch_size;
        let weight = self.train.loss_weight(k);
        let (loss, correct, grads) = self.step_gradients(task, task_step, weight / b as f64)?;
        if !loss.is_finite() || !all_finite(&grads) {
            return Err(Error::NonFinite(format!(
                "step {}: loss or gradient",
                self.step
            )));
        }
        let lr = learning_rate(&self.train, self.step);
        let mut next = self.model.clone();
        let mut adam = self.adam.clone();
        adam.update(
            &mut next,
            &grads,
            self.step + 1,
            lr,
            self.train.weight_decay,
        );
        if !all_finite(&next.params) {
            return Err(Error::NonFinite(format!("step {}: parameters", self.step)));
        }
        self.model = next;
        self.adam = adam;
        self.step += 1;
        Ok(StepLog {
            step: self.step,
            task: task.head.clone(),
            loss: loss / weight,
            lr,
            accuracy: correct as f64 / b as f64,
        })
    }

    /// Trains until `until` completed steps (capped at the configured total).
    pub fn run_until(
        &mut self,
        tasks: &[TrainTask],
        until: usize,
        log: &mut dyn FnMut(&StepLog),
    ) -> Result<()> {
        self.check_tasks(tasks)?;
        let until = until.min(self.train.steps);
        while self.step < until {
            let entry = self.step_once(tasks)?;
            log(&entry);
        }
        Ok(())
    }
}

/// Trains `model` on `tasks` for `cfg.steps` steps. Batches rotate between
/// tasks by `cfg.mix`; each batch only touches its task's head.
pub fn train_joint<T: Scalar>(
    model: TubeVit<T>,
    tasks: &[TrainTask],
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&StepLog),
) -> std::result::Result<TrainState<T>, Box<TrainAbort<T>>> {
    let mut state = TrainState::new(model, cfg.clone());
    match state.run_until(tasks, cfg.steps, log) {
        Ok(()) => Ok(state),
        Err(error) => Err(Box::new(TrainAbort { state, error })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_robin_follows_the_mix() {
        let cfg = TrainConfig {
            mix: vec![2, 1],
            ..TrainConfig::default()
        };
        let order: Vec<_> = (0..7).map(|s| cfg.schedule(2, s)).collect();
        assert_eq!(
            order,
            vec![(0, 0), (0, 1), (1, 0), (0, 2), (0, 3), (1, 1), (0, 4)]
        );
        let even = TrainConfig::default();
        assert_eq!(even.schedule(3, 4), (1, 1));
    }

    #[test]
    fn config_checks() {
        let cfg = TrainConfig::default();
        assert!(cfg.check(2).is_ok());
        assert!(TrainConfig {
            batch_size: 0,
            ..cfg.clone()
        }
        .check(1)
        .is_err());
        assert!(TrainConfig {
            mix: vec![1],
            ..cfg.clone()
        }
        .check(2)
        .is_err());
        assert!(TrainConfig {
            loss_weights: vec![1.0, 0.0],
            ..cfg.clone()
        }
        .check(2)
        .is_err());
        assert!(TrainConfig {
            lr: f64::NAN,
            ..cfg
        }
        .check(1)
        .is_err());
    }
}
