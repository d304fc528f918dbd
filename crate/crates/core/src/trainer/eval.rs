//! Held-out evaluation with multi-crop averaging and eval-time strides.

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, TubeVit};
use crate::scalar::Scalar;
use crate::trainer::data::SyntheticTask;
use crate::trainer::train::pool;
use crate::tube_config::{total_tokens, Dims, TubeBank};

fn one() -> usize {
    1
}

fn default_samples() -> usize {
    512
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    #[serde(default = "one")]
    pub temporal_crops: usize,
    #[serde(default = "one")]
    pub spatial_crops: usize,
    /// Size the held-out clips are rendered at before cropping. Defaults to
    /// the task size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_dims: Option<Dims>,
    /// Replacement stride per tube.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strides: Option<Vec<Dims>>,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            temporal_crops: 1,
            spatial_crops: 1,
            source_dims: None,
            strides: None,
            samples: default_samples(),
        }
    }
}

impl EvalSpec {
    pub fn crops(t: usize, x: usize) -> Self {
        Self {
            temporal_crops: t,
            spatial_crops: x,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CropResult {
    pub temporal: usize,
    pub spatial: usize,
    pub origin: Dims,
    pub top1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub head: String,
    pub top1: f64,
    pub top5: f64,
    pub per_crop: Vec<CropResult>,
    /// Tokens per crop under the evaluation bank.
    pub tokens: usize,
    pub samples: usize,
}

/// Every stride halved where the result stays divisible by the tube's
/// grouping; other axes keep their stride.
pub fn halved_strides(bank: &TubeBank) -> Vec<Dims> {
    bank.tubes
        .iter()
        .map(|t| {
            let mut s = t.stride;
            for a in 0..3 {
                if s[a] % (2 * t.s2d_group[a]) == 0 {
                    s[a] /= 2;
                }
            }
            s
        })
        .collect()
}

/// The model's bank with the spec's stride replacements applied.
pub fn eval_bank(bank: &TubeBank, spec: &EvalSpec) -> Result<TubeBank> {
    let Some(strides) = &spec.strides else {
        return Ok(bank.clone());
    };
    if strides.len() != bank.tubes.len() {
        return Err(Error::InvalidConfig(format!(
            "{} stride overrides for {} tubes",
            strides.len(),
            bank.tubes.len()
        )));
    }
    let out = bank.map_strides(|i, _| strides[i]);
    out.check()?;
    Ok(out)
}

/// Evenly spaced crop origins: `n` positions over `0..=free`, centered when
/// `n == 1`.
fn positions(free: usize, n: usize) -> Vec<usize> {
    if n == 1 {
        return vec![free / 2];
    }
    (0..n).map(|i| i * free / (n - 1)).collect()
}

/// Crop origins, temporal-major. Spatial crops slide along width with height
/// centered.
pub fn crop_origins(source: Dims, crop: Dims, t: usize, x: usize) -> Vec<(usize, usize, Dims)> {
    let ts = positions(source[0] - crop[0], t);
    let xs = positions(source[2] - crop[2], x);
    let h = (source[1] - crop[1]) / 2;
    let mut out = Vec::new();
    for (i, &ot) in ts.iter().enumerate() {
        for (j, &ow) in xs.iter().enumerate() {
            out.push((i, j, [ot, h, ow]));
        }
    }
    out
}

fn top_k_hit<T: Scalar>(logits: &Array1<T>, label: usize, k: usize) -> bool {
    let target = logits[label];
    let above = logits
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v > target || (v == target && i < label))
        .count();
    above < k
}

/// Held-out accuracy of `head` on `task`. Logits are averaged over all
/// `t x x` crops before the arg-max.
pub fn evaluate<T: Scalar>(
    model: &TubeVit<T>,
    head: &str,
    task: &SyntheticTask,
    spec: &EvalSpec,
) -> Result<EvalMetrics> {
    if spec.temporal_crops == 0 || spec.spatial_crops == 0 || spec.samples == 0 {
        return Err(Error::InvalidConfig(
            "crop counts and samples must be positive".into(),
        ));
    }
    task.check()?;
    model.params.encoder.head_index(head)?;
    let crop = task.dims;
    let source = spec.source_dims.unwrap_or(crop);
    if (0..3).any(|a| source[a] < crop[a]) {
        return Err(Error::InvalidConfig(format!(
            "source {source:?} is smaller than crop {crop:?}"
        )));
    }
    let bank = eval_bank(&model.bank(), spec)?;
    let tokens = total_tokens(&bank, crop, crop[0] > 1)?;
    let origins = crop_origins(source, crop, spec.temporal_crops, spec.spatial_crops);
    let held_out = task.eval_split();

    let per_sample: Vec<Result<(usize, Vec<bool>, bool, bool)>> = pool().install(|| {
        (0..spec.samples)
            .into_par_iter()
            .map(|i| {
                let (clip, label) = held_out.sample_at::<T>(i as u64, source);
                let mut sum: Option<Array1<T>> = None;
                let mut hits = Vec::with_capacity(origins.len());
                for &(_, _, origin) in &origins {
                    let logits = model.forward_with_bank(&clip.crop(origin, crop)?, head, &bank)?;
                    hits.push(argmax(&logits) == label);
                    match &mut sum {
                        None => sum = Some(logits),
                        Some(s) => *s += &logits,
                    }
                }
                let mut mean = sum.expect("at least one crop");
                mean.mapv_inplace(|v| v / T::c(origins.len() as f64));
                Ok((
                    label,
                    hits,
                    top_k_hit(&mean, label, 1),
                    top_k_hit(&mean, label, 5),
                ))
            })
            .collect()
    });

    let n = spec.samples as f64;
    let mut top1 = 0usize;
    let mut top5 = 0usize;
    let mut crop_hits = vec![0usize; origins.len()];
    for r in per_sample {
        let (_, hits, h1, h5) = r?;
        top1 += h1 as usize;
        top5 += h5 as usize;
        for (c, h) in crop_hits.iter_mut().zip(hits) {
            *c += h as usize;
        }
    }
    Ok(EvalMetrics {
        head: head.to_string(),
        top1: top1 as f64 / n,
        top5: top5 as f64 / n,
        per_crop: origins
            .iter()
            .zip(crop_hits)
            .map(|(&(t, x, origin), hits)| CropResult {
                temporal: t,
                spatial: x,
                origin,
                top1: hits as f64 / n,
            })
            .collect(),
        tokens,
        samples: spec.samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tube_config::TubeSpec;
    use ndarray::array;

    #[test]
    fn crops_are_evenly_spaced() {
        let o = crop_origins([20, 40, 48], [16, 32, 32], 4, 3);
        assert_eq!(o.len(), 12);
        let ts: Vec<_> = o.iter().filter(|c| c.1 == 0).map(|c| c.2[0]).collect();
        assert_eq!(ts, vec![0, 1, 2, 4]);
        let ws: Vec<_> = o.iter().filter(|c| c.0 == 0).map(|c| c.2[2]).collect();
        assert_eq!(ws, vec![0, 8, 16]);
        assert!(o.iter().all(|c| c.2[1] == 4));
        assert_eq!(
            crop_origins([16, 32, 32], [16, 32, 32], 1, 1),
            vec![(0, 0, [0, 0, 0])]
        );
    }

    #[test]
    fn top_k_breaks_ties_by_index() {
        let l = array![1.0f64, 3.0, 3.0, 0.0];
        assert!(top_k_hit(&l, 1, 1));
        assert!(!top_k_hit(&l, 2, 1));
        assert!(top_k_hit(&l, 2, 2));
        assert!(top_k_hit(&l, 3, 5));
    }

    #[test]
    fn halving_respects_grouping() {
        let bank = TubeBank::new(
            vec![
                TubeSpec::new([1, 8, 8], [16, 8, 8]).image(),
                TubeSpec::new([4, 4, 4], [6, 4, 4]).with_group([1, 2, 2]),
            ],
            16,
        );
        assert_eq!(halved_strides(&bank), vec![[8, 4, 4], [3, 2, 2]]);
    }
}
