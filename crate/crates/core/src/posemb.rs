//! Fixed sine/cosine position embedding anchored at tube centers.
//!
//! For `j in 0..d/6` channels `6j..6j+6` hold
//! `[sin(t w), cos(t w), sin(x w), cos(x w), sin(y w), cos(y w)]` with
//! `w = tau^-j` (literal) or `w = tau^(-j / (d/6))` (normalized). Channels past
//! `6 * (d / 6)` are zero.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tokenizer::TokenBatch;
use crate::tube_config::DEFAULT_TAU;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExponentMode {
    /// `w_j = tau^-j`.
    Literal,
    /// `w_j = tau^(-j / (d/6))`.
    #[default]
    Normalized,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingParams {
    pub d: usize,
    pub tau: f64,
    pub mode: ExponentMode,
}

impl EmbeddingParams {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            tau: DEFAULT_TAU,
            mode: ExponentMode::Normalized,
        }
    }

    pub fn with_mode(mut self, mode: ExponentMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.d < 6 || !(self.tau > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "position embedding needs d >= 6 and tau > 1 (d = {}, tau = {})",
                self.d, self.tau
            )));
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let blocks = self.d / 6;
        (0..blocks)
            .map(|j| match self.mode {
                ExponentMode::Literal => self.tau.powi(-(j as i32)),
                ExponentMode::Normalized => self.tau.powf(-(j as f64) / blocks as f64),
            })
            .collect()
    }
}

/// `n x d` embedding of the given centers.
pub fn embed_positions(centers: &[[f64; 3]], params: &EmbeddingParams) -> Array2<f64> {
    let freqs = params.frequencies();
    let mut out = Array2::zeros((centers.len(), params.d));
    for (row, c) in out.rows_mut().into_iter().zip(centers) {
        let mut row = row;
        for (j, &w) in freqs.iter().enumerate() {
            for (axis, &coord) in c.iter().enumerate() {
                let (s, co) = (coord * w).sin_cos();
                row[6 * j + 2 * axis] = s;
                row[6 * j + 2 * axis + 1] = co;
            }
        }
    }
    out
}

/// Adds the embedding of each token's center to the token.
pub fn add_positions<T: Scalar>(
    mut batch: TokenBatch<T>,
    params: &EmbeddingParams,
) -> Result<TokenBatch<T>> {
    if batch.tokens.ncols() != params.d {
        return Err(Error::ShapeMismatch(format!(
            "tokens have {} channels, embedding has {}",
            batch.tokens.ncols(),
            params.d
        )));
    }
    let emb = embed_positions(&batch.centers, params);
    batch.tokens.zip_mut_with(&emb, |t, &e| *t = *t + T::c(e));
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_pattern() {
        let p = EmbeddingParams::new(20);
        let e = embed_positions(&[[0.0, 0.0, 0.0]], &p);
        let row: Vec<f64> = e.row(0).to_vec();
        let mut want = Vec::new();
        for _ in 0..3 {
            want.extend_from_slice(&[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        }
        want.extend_from_slice(&[0.0, 0.0]);
        assert_eq!(row, want);
    }

    #[test]
    fn first_frequency_is_one_in_both_modes() {
        for mode in [ExponentMode::Literal, ExponentMode::Normalized] {
            let p = EmbeddingParams::new(24).with_mode(mode);
            assert_eq!(p.frequencies()[0], 1.0);
            let e = embed_positions(&[[0.3, 0.0, 0.0]], &p);
            assert_eq!(e[[0, 0]], 0.3f64.sin());
        }
    }

    #[test]
    fn literal_unit_time_d6() {
        // sin(1), cos(1) to 20 digits: 0.84147098480789650665, 0.54030230586813971740
        let p = EmbeddingParams::new(6).with_mode(ExponentMode::Literal);
        let e = embed_positions(&[[1.0, 0.0, 0.0]], &p);
        let want = [
            0.841_470_984_807_896_5,
            0.540_302_305_868_139_7,
            0.0,
            1.0,
            0.0,
            1.0,
        ];
        for (a, b) in e.row(0).iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn literal_mode_collapses_frequencies() {
        let p = EmbeddingParams::new(48).with_mode(ExponentMode::Literal);
        let f = p.frequencies();
        assert!(f[3] < 1e-11);
        let n = EmbeddingParams::new(48).frequencies();
        assert!(n[7] > 1e-4);
    }

    #[test]
    fn add_twice_doubles_embedding() {
        let p = EmbeddingParams::new(12);
        let batch = TokenBatch {
            tokens: Array2::<f64>::zeros((2, 12)),
            centers: vec![[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]],
            tube_id: vec![0, 1],
        };
        let once = add_positions(batch, &p).unwrap();
        let emb = embed_positions(&once.centers, &p);
        assert_eq!(once.tokens, emb);
        assert_eq!(once.tokens.row(0), once.tokens.row(1));
        let twice = add_positions(once, &p).unwrap();
        assert_eq!(twice.tokens, &emb * 2.0);
    }

    #[test]
    fn wrong_width_is_rejected() {
        let batch = TokenBatch {
            tokens: Array2::<f32>::zeros((1, 8)),
            centers: vec![[0.0; 3]],
            tube_id: vec![0],
        };
        assert!(add_positions(batch, &EmbeddingParams::new(12)).is_err());
    }
}
