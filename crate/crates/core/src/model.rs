//! The full pipeline: tokenize, add positions, encode, classify, and the
//! matching per-sample backward pass.

use ndarray::{s, Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, PosEmbKind};
use crate::encoder::{
    backward, classify, cross_entropy, encode, EncoderConfig, EncoderWeights, LossGrad,
};
use crate::error::{Error, Result};
use crate::init::fan_in_array;
use crate::params::{ParamGroup, ParamId};
use crate::posemb::add_positions;
use crate::scalar::Scalar;
use crate::tokenizer::{tokenize, tokenize_gradient, KernelBank, TokenBatch, VideoClip};
use crate::tube_config::{total_tokens, TubeBank, TubeSpec};

/// Every learnable array of a model. Gradients use the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub kernels: KernelBank<T>,
    pub encoder: EncoderWeights<T>,
    /// Learned position table (`tokens x d`), only for [`PosEmbKind::Learned`].
    pub pos_table: Option<Array2<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros_like(&self) -> Self {
        Self {
            kernels: self.kernels.zeros_like(),
            encoder: self.encoder.zeros_like(),
            pos_table: self.pos_table.as_ref().map(|t| Array2::zeros(t.raw_dim())),
        }
    }

    pub fn arrays(&self) -> Vec<(ParamId, &[T])> {
        let shapes = self.kernels.shapes();
        let mut out: Vec<(ParamId, &[T])> = self
            .kernels
            .arrays()
            .into_iter()
            .zip(shapes)
            .map(|((name, v), shape)| (ParamId::new(name, ParamGroup::Tokenizer, &shape), v))
            .collect();
        if let Some(t) = &self.pos_table {
            out.push((
                ParamId::new("posemb.table", ParamGroup::PosEmb, t.shape()),
                t.as_slice().unwrap(),
            ));
        }
        out.extend(self.encoder.arrays());
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<(ParamId, &mut [T])> {
        let shapes = self.kernels.shapes();
        let mut out: Vec<(ParamId, &mut [T])> = self
            .kernels
            .arrays_mut()
            .into_iter()
            .zip(shapes)
            .map(|((name, v), shape)| (ParamId::new(name, ParamGroup::Tokenizer, &shape), v))
            .collect();
        if let Some(t) = &mut self.pos_table {
            let shape = t.shape().to_vec();
            out.push((
                ParamId::new("posemb.table", ParamGroup::PosEmb, &shape),
                t.as_slice_mut().unwrap(),
            ));
        }
        out.extend(self.encoder.arrays_mut());
        out
    }

    /// `self += other`, element by element in parameter order.
    pub fn add_assign(&mut self, other: &ModelParams<T>) {
        for ((_, a), (_, b)) in self.arrays_mut().into_iter().zip(other.arrays()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = *x + y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for (_, a) in self.arrays_mut() {
            for x in a.iter_mut() {
                *x = *x * factor;
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.arrays().iter().map(|(_, v)| v.len()).sum()
    }
}

/// Result of one forward/backward pass on a single labelled sample.
#[derive(Clone, Debug)]
pub struct SampleGrad<T> {
    pub loss: f64,
    pub correct: bool,
    pub grads: ModelParams<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TubeVit<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

impl<T: Scalar> TubeVit<T> {
    /// Fresh model with weights drawn from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = config.bank();
        let kernels =
            KernelBank::init(&bank, config.channels, config.interpolated_kernel, &mut rng);
        let encoder =
            EncoderWeights::init(&config.encoder_config(), &config.head_specs(), &mut rng);
        let pos_table = match config.posemb {
            PosEmbKind::Learned => {
                let dims = config.input_dims.expect("validated");
                let n = total_tokens(&bank, dims, dims[0] > 1)?;
                let mut t: Array2<T> = fan_in_array(&mut rng, (n, config.hidden_size), 1);
                t.mapv_inplace(|v| v * T::c(0.02));
                Some(t)
            }
            _ => None,
        };
        Ok(Self {
            config,
            params: ModelParams {
                kernels,
                encoder,
                pos_table,
            },
        })
    }

    pub fn bank(&self) -> TubeBank {
        self.config.bank()
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        self.config.encoder_config()
    }

    pub fn is_frozen(&self, id: &ParamId) -> bool {
        id.group
            .is_frozen(self.config.encoder.freeze_below, self.config.encoder.layers)
    }

    /// Tokens with positions added, using the model's own bank.
    pub fn tokens(&self, clip: &VideoClip<T>) -> Result<TokenBatch<T>> {
        self.tokens_with_bank(clip, &self.bank())
    }

    /// Tokens from an alternative bank with the same kernels (eval-time stride
    /// changes).
    pub fn tokens_with_bank(&self, clip: &VideoClip<T>, bank: &TubeBank) -> Result<TokenBatch<T>> {
        let batch = tokenize(clip, bank, &self.params.kernels)?;
        match self.config.posemb {
            PosEmbKind::Fixed => add_positions(batch, &self.config.embedding_params()),
            PosEmbKind::FixedIndex => {
                let mut batch = batch;
                let centers = batch.centers.clone();
                for (c, &id) in batch.centers.iter_mut().zip(&batch.tube_id) {
                    *c = grid_index(c, &bank.tubes[id]);
                }
                let mut batch = add_positions(batch, &self.config.embedding_params())?;
                batch.centers = centers;
                Ok(batch)
            }
            PosEmbKind::None => Ok(batch),
            PosEmbKind::Learned => {
                let mut batch = batch;
                let table = self.params.pos_table.as_ref().expect("learned table");
                if batch.len() > table.nrows() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} tokens but the learned table has {} rows",
                        batch.len(),
                        table.nrows()
                    )));
                }
                let n = batch.len();
                batch.tokens += &table.slice(s![..n, ..]);
                Ok(batch)
            }
        }
    }

    pub fn forward(&self, clip: &VideoClip<T>, head: &str) -> Result<Array1<T>> {
        self.forward_with_bank(clip, head, &self.bank())
    }

    pub fn forward_with_bank(
        &self,
        clip: &VideoClip<T>,
        head: &str,
        bank: &TubeBank,
    ) -> Result<Array1<T>> {
        let batch = self.tokens_with_bank(clip, bank)?;
        let cfg = self.encoder_config();
        let (features, _) = encode(&batch.tokens, &cfg, &self.params.encoder, false)?;
        classify(&features, &cfg, &self.params.encoder, head)
    }

    /// Cross-entropy loss on one sample (scaled by `loss_scale`) and the
    /// gradient of every parameter. Frozen parameters get zero gradients.
    pub fn loss_grad(
        &self,
        clip: &VideoClip<T>,
        head: &str,
        label: usize,
        loss_scale: f64,
    ) -> Result<SampleGrad<T>> {
        let batch = self.tokens(clip)?;
        let cfg = self.encoder_config();
        let (features, trace) = encode(&batch.tokens, &cfg, &self.params.encoder, true)?;
        let logits = classify(&features, &cfg, &self.params.encoder, head)?;
        if label >= logits.len() {
            return Err(Error::ShapeMismatch(format!(
                "label {label} for {} classes",
                logits.len()
            )));
        }
        let (loss, mut dlogits) = cross_entropy(&logits, label);
        dlogits.mapv_inplace(|v| v * T::c(loss_scale));
        let predicted = argmax(&logits);
        let enc = backward(
            &LossGrad {
                head: head.to_string(),
                logits: dlogits,
            },
            trace.as_ref(),
            &cfg,
            &self.params.encoder,
        )?;
        let mut grads = ModelParams {
            kernels: self.params.kernels.zeros_like(),
            encoder: enc.weights,
            pos_table: self
                .params
                .pos_table
                .as_ref()
                .map(|t| Array2::zeros(t.raw_dim())),
        };
        if let Some(dx) = enc.input {
            if let Some(table) = grads.pos_table.as_mut() {
                table.slice_mut(s![..dx.nrows(), ..]).assign(&dx);
            }
            grads.kernels =
                tokenize_gradient(dx.view(), clip, &self.bank(), &self.params.kernels, false)?
                    .kernels;
        }
        Ok(SampleGrad {
            loss: loss * loss_scale,
            correct: predicted == label,
            grads,
        })
    }
}

/// Position of a token center in units of its tube's stride.
fn grid_index(center: &[f64; 3], tube: &TubeSpec) -> [f64; 3] {
    let mut out = [0.0; 3];
    for a in 0..3 {
        let first = tube.offset[a] as f64 + (tube.kernel[a] as f64 - 1.0) / 2.0;
        out[a] = (center[a] - first) / tube.stride[a] as f64;
    }
    out
}

pub fn argmax<T: Scalar>(v: &Array1<T>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
