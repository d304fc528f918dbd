//! Synthetic stand-ins for video and image datasets.
//!
//! Every sample is a pure function of `(rng_seed, index)`, so streams can be
//! read in any order and resumed anywhere.

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tokenizer::VideoClip;
use crate::tube_config::Dims;

/// Pixels per frame travelled by the motion blob.
pub const MOTION_SPEED: f64 = 1.0;
/// Gaussian radius of the motion blob, in pixels.
pub const BLOB_SIGMA: f64 = 2.0;

const EVAL_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Unit displacement per label, as `(dh, dw)`: up, down, left, right, then
/// the four diagonals.
pub const DIRECTIONS: [(f64, f64); 8] = [
    (-1.0, 0.0),
    (1.0, 0.0),
    (0.0, -1.0),
    (0.0, 1.0),
    (-1.0, -1.0),
    (-1.0, 1.0),
    (1.0, -1.0),
    (1.0, 1.0),
];

/// Shape names for static-shape labels.
pub const SHAPES: [&str; 4] = ["square", "frame", "plus", "cross"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// A blob drifting in one direction across a wrap-around field. Its start
    /// is uniform, so no single frame says anything about the label.
    MotionDirection,
    /// One still shape at a random position.
    StaticShape,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    /// `[T, H, W]`.
    pub dims: Dims,
    #[serde(default = "one")]
    pub channels: usize,
    pub classes: usize,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl SyntheticTask {
    pub fn motion(dims: Dims, classes: usize, seed: u64) -> Self {
        Self {
            kind: TaskKind::MotionDirection,
            dims,
            channels: 1,
            classes,
            noise_std: 0.0,
            rng_seed: seed,
        }
    }

    pub fn shapes(dims: Dims, classes: usize, seed: u64) -> Self {
        Self {
            kind: TaskKind::StaticShape,
            dims,
            channels: 1,
            classes,
            noise_std: 0.0,
            rng_seed: seed,
        }
    }

    pub fn with_noise(mut self, noise_std: f64) -> Self {
        self.noise_std = noise_std;
        self
    }

    pub fn is_video(&self) -> bool {
        self.dims[0] > 1
    }

    pub fn check(&self) -> Result<()> {
        let max = match self.kind {
            TaskKind::MotionDirection => DIRECTIONS.len(),
            TaskKind::StaticShape => SHAPES.len(),
        };
        if self.classes < 2 || self.classes > max {
            return Err(Error::InvalidConfig(format!(
                "{:?} supports 2..={max} classes, got {}",
                self.kind, self.classes
            )));
        }
        if self.dims.contains(&0) || self.channels == 0 {
            return Err(Error::InvalidConfig(format!(
                "empty task dims {:?}",
                self.dims
            )));
        }
        if self.kind == TaskKind::MotionDirection && self.dims[0] < 2 {
            return Err(Error::InvalidConfig(
                "motion needs at least two frames".into(),
            ));
        }
        if self.kind == TaskKind::StaticShape && self.dims[1].min(self.dims[2]) < 8 {
            return Err(Error::InvalidConfig(
                "shapes need at least 8x8 pixels".into(),
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig(
                "noise_std must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// The same task drawn from a disjoint stream, for held-out evaluation.
    pub fn eval_split(&self) -> Self {
        let mut out = self.clone();
        out.rng_seed ^= EVAL_SALT;
        out
    }

    fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(index);
        rng
    }

    /// Sample `index` of the stream.
    pub fn sample<T: Scalar>(&self, index: u64) -> (VideoClip<T>, usize) {
        self.sample_at(index, self.dims)
    }

    /// Sample `index` rendered at `dims` instead of the task's own size. Used
    /// for evaluation crops taken from a larger field.
    pub fn sample_at<T: Scalar>(&self, index: u64, dims: Dims) -> (VideoClip<T>, usize) {
        let mut rng = self.rng(index);
        let label = rng.random_range(0..self.classes);
        let mut data = Array4::<f64>::zeros((dims[0], dims[1], dims[2], self.channels));
        match self.kind {
            TaskKind::MotionDirection => draw_motion(&mut data, label, &mut rng),
            TaskKind::StaticShape => draw_shape(&mut data, label, &mut rng),
        }
        if self.noise_std > 0.0 {
            let normal = Normal::new(0.0, self.noise_std).expect("checked noise");
            data.mapv_inplace(|v| v + normal.sample(&mut rng));
        }
        (VideoClip::new(data.mapv(T::c)), label)
    }

    /// Reproducible stream of `(clip, label)` pairs starting at index 0.
    pub fn stream<T: Scalar>(&self) -> impl Iterator<Item = (VideoClip<T>, usize)> + '_ {
        (0u64..).map(move |i| self.sample(i))
    }
}

/// Validated stream for `task`.
pub fn make_dataset<T: Scalar>(
    task: &SyntheticTask,
) -> Result<impl Iterator<Item = (VideoClip<T>, usize)> + '_> {
    task.check()?;
    Ok(task.stream())
}

fn torus_delta(a: f64, b: f64, len: f64) -> f64 {
    let d = (a - b).rem_euclid(len);
    d.min(len - d)
}

fn draw_motion(data: &mut Array4<f64>, label: usize, rng: &mut ChaCha8Rng) {
    let (t_len, h, w, _) = data.dim();
    let (hf, wf) = (h as f64, w as f64);
    let start = (rng.random::<f64>() * hf, rng.random::<f64>() * wf);
    let (dh, dw) = DIRECTIONS[label];
    let inv = -0.5 / (BLOB_SIGMA * BLOB_SIGMA);
    for t in 0..t_len {
        let ch = start.0 + dh * MOTION_SPEED * t as f64;
        let cw = start.1 + dw * MOTION_SPEED * t as f64;
        for y in 0..h {
            let ey = torus_delta(y as f64, ch, hf);
            for x in 0..w {
                let ex = torus_delta(x as f64, cw, wf);
                let v = ((ey * ey + ex * ex) * inv).exp();
                data.slice_mut(ndarray::s![t, y, x, ..]).fill(v);
            }
        }
    }
}

fn shape_mask(label: usize, size: usize, y: usize, x: usize) -> bool {
    let (yf, xf) = (y as f64, x as f64);
    let last = (size - 1) as f64;
    let mid = last / 2.0;
    match label {
        0 => true,
        1 => y < 2 || x < 2 || y + 2 >= size || x + 2 >= size,
        2 => (yf - mid).abs() < 1.5 || (xf - mid).abs() < 1.5,
        _ => (yf - xf).abs() < 1.5 || (yf + xf - last).abs() < 1.5,
    }
}

fn draw_shape(data: &mut Array4<f64>, label: usize, rng: &mut ChaCha8Rng) {
    let (_, h, w, _) = data.dim();
    let size = rng.random_range(8..=12.min(h.min(w)));
    let top = rng.random_range(0..=h - size);
    let left = rng.random_range(0..=w - size);
    for y in 0..size {
        for x in 0..size {
            if shape_mask(label, size, y, x) {
                data.slice_mut(ndarray::s![.., top + y, left + x, ..])
                    .fill(1.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let task = SyntheticTask::motion([4, 16, 16], 4, 7).with_noise(0.1);
        let a: Vec<_> = task.stream::<f32>().take(100).collect();
        let b: Vec<_> = task.stream::<f32>().take(100).collect();
        assert_eq!(a, b);
        let other = SyntheticTask::motion([4, 16, 16], 4, 8).with_noise(0.1);
        assert_ne!(a[0].0, other.sample::<f32>(0).0);
    }

    #[test]
    fn eval_split_differs() {
        let task = SyntheticTask::shapes([1, 16, 16], 4, 3);
        assert_ne!(
            task.sample::<f64>(0).0,
            task.eval_split().sample::<f64>(0).0
        );
    }

    #[test]
    fn classes_are_balanced() {
        for task in [
            SyntheticTask::motion([2, 8, 8], 4, 1),
            SyntheticTask::shapes([1, 8, 8], 4, 2),
        ] {
            let mut counts = [0usize; 4];
            for i in 0..10_000u64 {
                let mut rng = task.rng(i);
                counts[rng.random_range(0..task.classes)] += 1;
            }
            for c in counts {
                let share = c as f64 / 10_000.0;
                assert!((share - 0.25).abs() < 0.02, "{counts:?}");
            }
        }
    }

    #[test]
    fn every_direction_moves() {
        for (dh, dw) in DIRECTIONS {
            assert!(dh != 0.0 || dw != 0.0);
        }
    }

    #[test]
    fn blob_peak_moves_one_pixel_per_frame() {
        let task = SyntheticTask::motion([3, 24, 24], 4, 11);
        for i in 0..8 {
            let (clip, label) = task.sample::<f64>(i);
            let peak = |t: usize| {
                let frame = clip.data.slice(ndarray::s![t, .., .., 0]);
                let mut best = (0, 0);
                for ((y, x), &v) in frame.indexed_iter() {
                    if v > frame[best] {
                        best = (y, x);
                    }
                }
                best
            };
            let (a, b) = (peak(0), peak(2));
            let dy = (b.0 as i64 - a.0 as i64).rem_euclid(24);
            let dx = (b.1 as i64 - a.1 as i64).rem_euclid(24);
            let want = DIRECTIONS[label];
            let wrap = |v: f64| (v * 2.0).rem_euclid(24.0) as i64;
            assert_eq!((dy, dx), (wrap(want.0), wrap(want.1)), "sample {i}");
        }
    }

    #[test]
    fn shapes_fill_their_mask() {
        let task = SyntheticTask::shapes([1, 16, 16], 4, 5);
        let mut sums = [0.0f64; 4];
        for i in 0..200 {
            let (clip, label) = task.sample::<f64>(i);
            assert_eq!(clip.dims(), [1, 16, 16]);
            sums[label] += clip.data.sum();
        }
        assert!(sums.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn checks_reject_bad_tasks() {
        assert!(SyntheticTask::motion([1, 8, 8], 4, 0).check().is_err());
        assert!(SyntheticTask::motion([2, 8, 8], 9, 0).check().is_err());
        assert!(SyntheticTask::shapes([1, 4, 4], 4, 0).check().is_err());
        assert!(SyntheticTask::shapes([1, 8, 8], 4, 0)
            .with_noise(-1.0)
            .check()
            .is_err());
        assert!(make_dataset::<f32>(&SyntheticTask::shapes([1, 8, 8], 4, 0)).is_ok());
    }
}
