//! Pre-norm ViT encoder with per-dataset heads, an optional tanh-gated skip
//! from the input tokens, layer freezing, and a hand-written backward pass.
//!
//! Block `l` computes
//!
//! ```text
//! y = MSA(LN(z)) + z
//! z' = MLP(LN(y)) + y            (+ tanh(alpha) * z0 after the gated block)
//! ```
//!
//! where `z0` is the token matrix entering block 0 (positions already added).

mod ops;
pub mod scale;

pub use scale::{lift_bank, scale_up};

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use ops::{attention, gelu, gelu_grad, layer_norm, softmax_rows, LnCache, LN_EPS};
use ops::{attention_backward, layer_norm_backward, linear, linear_backward};

use crate::error::{Error, Result};
use crate::init::fan_in_array;
use crate::params::{ParamGroup, ParamId};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    #[default]
    Mean,
    Cls,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub mlp_size: usize,
    #[serde(default)]
    pub pool: PoolMode,
    /// Block after which `tanh(alpha) * z0` is added.
    #[serde(default)]
    pub gate_layer: Option<usize>,
    /// Layers with a lower index (and the tokenizer) are frozen.
    #[serde(default)]
    pub freeze_below: Option<usize>,
}

impl EncoderConfig {
    pub fn new(layers: usize, hidden: usize, heads: usize, mlp_size: usize) -> Self {
        Self {
            layers,
            hidden,
            heads,
            mlp_size,
            pool: PoolMode::Mean,
            gate_layer: None,
            freeze_below: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 || self.mlp_size == 0 {
            return bad("encoder sizes must be positive".into());
        }
        if self.hidden % self.heads != 0 {
            return bad(format!(
                "hidden {} not divisible by {} heads",
                self.hidden, self.heads
            ));
        }
        if let Some(s) = self.gate_layer {
            if s >= self.layers {
                return bad(format!("gate layer {s} outside 0..{}", self.layers));
            }
        }
        if let Some(f) = self.freeze_below {
            if f > self.layers {
                return bad(format!("freeze_below {f} exceeds {} layers", self.layers));
            }
        }
        Ok(())
    }

    /// Parameters of the blocks and final norm (no heads, gate or class token).
    pub fn param_count(&self) -> usize {
        let d = self.hidden;
        let m = self.mlp_size;
        let per_layer = 4 * d * d + 4 * d + 2 * d * m + m + d + 4 * d;
        self.layers * per_layer + 2 * d
    }

    fn frozen(&self, group: ParamGroup) -> bool {
        group.is_frozen(self.freeze_below, self.layers)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T> {
    pub ln1_g: Array1<T>,
    pub ln1_b: Array1<T>,
    pub wq: Array2<T>,
    pub bq: Array1<T>,
    pub wk: Array2<T>,
    pub bk: Array1<T>,
    pub wv: Array2<T>,
    pub bv: Array1<T>,
    pub wo: Array2<T>,
    pub bo: Array1<T>,
    pub ln2_g: Array1<T>,
    pub ln2_b: Array1<T>,
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array2<T>,
    pub b2: Array1<T>,
}

impl<T: Scalar> LayerWeights<T> {
    fn init<R: Rng + ?Sized>(d: usize, m: usize, rng: &mut R) -> Self {
        Self {
            ln1_g: Array1::ones(d),
            ln1_b: Array1::zeros(d),
            wq: fan_in_array(rng, (d, d), d),
            bq: Array1::zeros(d),
            wk: fan_in_array(rng, (d, d), d),
            bk: Array1::zeros(d),
            wv: fan_in_array(rng, (d, d), d),
            bv: Array1::zeros(d),
            wo: fan_in_array(rng, (d, d), d),
            bo: Array1::zeros(d),
            ln2_g: Array1::ones(d),
            ln2_b: Array1::zeros(d),
            w1: fan_in_array(rng, (d, m), d),
            b1: Array1::zeros(m),
            w2: fan_in_array(rng, (m, d), m),
            b2: Array1::zeros(d),
        }
    }

    fn zeros_like(&self) -> Self {
        let z1 = |a: &Array1<T>| Array1::zeros(a.raw_dim());
        let z2 = |a: &Array2<T>| Array2::zeros(a.raw_dim());
        Self {
            ln1_g: z1(&self.ln1_g),
            ln1_b: z1(&self.ln1_b),
            wq: z2(&self.wq),
            bq: z1(&self.bq),
            wk: z2(&self.wk),
            bk: z1(&self.bk),
            wv: z2(&self.wv),
            bv: z1(&self.bv),
            wo: z2(&self.wo),
            bo: z1(&self.bo),
            ln2_g: z1(&self.ln2_g),
            ln2_b: z1(&self.ln2_b),
            w1: z2(&self.w1),
            b1: z1(&self.b1),
            w2: z2(&self.w2),
            b2: z1(&self.b2),
        }
    }
}

/// Declares the name/field table of a layer once for shared and mutable views.
macro_rules! layer_fields {
    ($layer:expr, $as_slice:ident) => {
        [
            ("ln1.gamma", $layer.ln1_g.$as_slice().unwrap()),
            ("ln1.beta", $layer.ln1_b.$as_slice().unwrap()),
            ("attn.wq", $layer.wq.$as_slice().unwrap()),
            ("attn.bq", $layer.bq.$as_slice().unwrap()),
            ("attn.wk", $layer.wk.$as_slice().unwrap()),
            ("attn.bk", $layer.bk.$as_slice().unwrap()),
            ("attn.wv", $layer.wv.$as_slice().unwrap()),
            ("attn.bv", $layer.bv.$as_slice().unwrap()),
            ("attn.wo", $layer.wo.$as_slice().unwrap()),
            ("attn.bo", $layer.bo.$as_slice().unwrap()),
            ("ln2.gamma", $layer.ln2_g.$as_slice().unwrap()),
            ("ln2.beta", $layer.ln2_b.$as_slice().unwrap()),
            ("mlp.w1", $layer.w1.$as_slice().unwrap()),
            ("mlp.b1", $layer.b1.$as_slice().unwrap()),
            ("mlp.w2", $layer.w2.$as_slice().unwrap()),
            ("mlp.b2", $layer.b2.$as_slice().unwrap()),
        ]
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadWeights<T> {
    pub name: String,
    /// `d x classes`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights<T> {
    pub layers: Vec<LayerWeights<T>>,
    pub lnf_g: Array1<T>,
    pub lnf_b: Array1<T>,
    pub heads: Vec<HeadWeights<T>>,
    /// Gate scalar, stored as a length-1 array. Initialized to exactly zero.
    pub alpha: Array1<T>,
    /// Learned class token, present only with [`PoolMode::Cls`].
    pub cls: Option<Array1<T>>,
}

/// Gradients share the weight layout.
pub type WeightGradients<T> = EncoderWeights<T>;

impl<T: Scalar> EncoderWeights<T> {
    pub fn init<R: Rng + ?Sized>(
        cfg: &EncoderConfig,
        heads: &[(String, usize)],
        rng: &mut R,
    ) -> Self {
        let d = cfg.hidden;
        let layers = (0..cfg.layers)
            .map(|_| LayerWeights::init(d, cfg.mlp_size, rng))
            .collect();
        let heads = heads
            .iter()
            .map(|(name, classes)| HeadWeights {
                name: name.clone(),
                weight: fan_in_array(rng, (d, *classes), d),
                bias: Array1::zeros(*classes),
            })
            .collect();
        let cls = (cfg.pool == PoolMode::Cls).then(|| fan_in_array(rng, d, d));
        Self {
            layers,
            lnf_g: Array1::ones(d),
            lnf_b: Array1::zeros(d),
            heads,
            alpha: Array1::zeros(1),
            cls,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(LayerWeights::zeros_like).collect(),
            lnf_g: Array1::zeros(self.lnf_g.len()),
            lnf_b: Array1::zeros(self.lnf_b.len()),
            heads: self
                .heads
                .iter()
                .map(|h| HeadWeights {
                    name: h.name.clone(),
                    weight: Array2::zeros(h.weight.raw_dim()),
                    bias: Array1::zeros(h.bias.len()),
                })
                .collect(),
            alpha: Array1::zeros(1),
            cls: self.cls.as_ref().map(|c| Array1::zeros(c.len())),
        }
    }

    pub fn hidden(&self) -> usize {
        self.lnf_g.len()
    }

    pub fn head_index(&self, name: &str) -> Result<usize> {
        self.heads
            .iter()
            .position(|h| h.name == name)
            .ok_or_else(|| Error::UnknownHead(name.to_string()))
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        if let Some(c) = &self.cls {
            ids.push(ParamId::new("encoder.cls", ParamGroup::Cls, c.shape()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let shapes = [
                layer.ln1_g.shape(),
                layer.ln1_b.shape(),
                layer.wq.shape(),
                layer.bq.shape(),
                layer.wk.shape(),
                layer.bk.shape(),
                layer.wv.shape(),
                layer.bv.shape(),
                layer.wo.shape(),
                layer.bo.shape(),
                layer.ln2_g.shape(),
                layer.ln2_b.shape(),
                layer.w1.shape(),
                layer.b1.shape(),
                layer.w2.shape(),
                layer.b2.shape(),
            ];
            for ((name, _), shape) in layer_fields!(layer, as_slice).iter().zip(shapes) {
                ids.push(ParamId::new(
                    format!("encoder.layer{l}.{name}"),
                    ParamGroup::Layer(l),
                    shape,
                ));
            }
        }
        ids.push(ParamId::new(
            "encoder.final_ln.gamma",
            ParamGroup::FinalNorm,
            self.lnf_g.shape(),
        ));
        ids.push(ParamId::new(
            "encoder.final_ln.beta",
            ParamGroup::FinalNorm,
            self.lnf_b.shape(),
        ));
        ids.push(ParamId {
            decay: false,
            ..ParamId::new("encoder.gate.alpha", ParamGroup::Gate, &[1])
        });
        for (i, h) in self.heads.iter().enumerate() {
            ids.push(ParamId::new(
                format!("head.{}.weight", h.name),
                ParamGroup::Head(i),
                h.weight.shape(),
            ));
            ids.push(ParamId::new(
                format!("head.{}.bias", h.name),
                ParamGroup::Head(i),
                h.bias.shape(),
            ));
        }
        ids
    }

    /// Every parameter with its id, in a fixed order.
    pub fn arrays(&self) -> Vec<(ParamId, &[T])> {
        let mut slices: Vec<&[T]> = Vec::new();
        if let Some(c) = &self.cls {
            slices.push(c.as_slice().unwrap());
        }
        for layer in &self.layers {
            slices.extend(layer_fields!(layer, as_slice).into_iter().map(|(_, s)| s));
        }
        slices.push(self.lnf_g.as_slice().unwrap());
        slices.push(self.lnf_b.as_slice().unwrap());
        slices.push(self.alpha.as_slice().unwrap());
        for h in &self.heads {
            slices.push(h.weight.as_slice().unwrap());
            slices.push(h.bias.as_slice().unwrap());
        }
        self.param_ids().into_iter().zip(slices).collect()
    }

    pub fn arrays_mut(&mut self) -> Vec<(ParamId, &mut [T])> {
        let ids = self.param_ids();
        let mut slices: Vec<&mut [T]> = Vec::new();
        if let Some(c) = &mut self.cls {
            slices.push(c.as_slice_mut().unwrap());
        }
        for layer in &mut self.layers {
            slices.extend(
                layer_fields!(layer, as_slice_mut)
                    .into_iter()
                    .map(|(_, s)| s),
            );
        }
        slices.push(self.lnf_g.as_slice_mut().unwrap());
        slices.push(self.lnf_b.as_slice_mut().unwrap());
        slices.push(self.alpha.as_slice_mut().unwrap());
        for h in &mut self.heads {
            slices.push(h.weight.as_slice_mut().unwrap());
            slices.push(h.bias.as_slice_mut().unwrap());
        }
        ids.into_iter().zip(slices).collect()
    }
}

#[derive(Clone, Debug)]
struct LayerTrace<T> {
    ln1: LnCache<T>,
    a: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    ctx: Array2<T>,
    ln2: LnCache<T>,
    b: Array2<T>,
    u: Array2<T>,
    h: Array2<T>,
}

/// Activations cached by a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    z0: Array2<T>,
    layers: Vec<LayerTrace<T>>,
    lnf: LnCache<T>,
    features: Array2<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn features(&self) -> &Array2<T> {
        &self.features
    }
}

fn check_finite<T: Scalar>(x: &Array2<T>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn block_forward<T: Scalar>(
    z: &Array2<T>,
    w: &LayerWeights<T>,
    heads: usize,
) -> (Array2<T>, LayerTrace<T>) {
    let (a, ln1) = layer_norm(z, &w.ln1_g, &w.ln1_b);
    let q = linear(&a, &w.wq, &w.bq);
    let k = linear(&a, &w.wk, &w.bk);
    let v = linear(&a, &w.wv, &w.bv);
    let (ctx, probs) = attention(&q, &k, &v, heads);
    let y = linear(&ctx, &w.wo, &w.bo) + z;
    let (b, ln2) = layer_norm(&y, &w.ln2_g, &w.ln2_b);
    let u = linear(&b, &w.w1, &w.b1);
    let h = u.mapv(gelu);
    let out = linear(&h, &w.w2, &w.b2) + &y;
    (
        out,
        LayerTrace {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            ln2,
            b,
            u,
            h,
        },
    )
}

/// Returns `dz` at the block input; accumulates parameter gradients into
/// `grads` when given.
fn block_backward<T: Scalar>(
    dout: &Array2<T>,
    w: &LayerWeights<T>,
    tr: &LayerTrace<T>,
    mut grads: Option<&mut LayerWeights<T>>,
) -> Array2<T> {
    let dh = linear_backward(
        dout,
        &tr.h,
        &w.w2,
        grads.as_mut().map(|g| (&mut g.w2, &mut g.b2)),
    );
    let mut du = dh;
    du.zip_mut_with(&tr.u, |g, &u| *g = *g * gelu_grad(u));
    let db = linear_backward(
        &du,
        &tr.b,
        &w.w1,
        grads.as_mut().map(|g| (&mut g.w1, &mut g.b1)),
    );
    let dy = layer_norm_backward(
        &db,
        &tr.ln2,
        &w.ln2_g,
        grads.as_mut().map(|g| (&mut g.ln2_g, &mut g.ln2_b)),
    ) + dout;
    let dctx = linear_backward(
        &dy,
        &tr.ctx,
        &w.wo,
        grads.as_mut().map(|g| (&mut g.wo, &mut g.bo)),
    );
    let (dq, dk, dv) = attention_backward(&dctx, &tr.q, &tr.k, &tr.v, &tr.probs);
    let mut da = linear_backward(
        &dq,
        &tr.a,
        &w.wq,
        grads.as_mut().map(|g| (&mut g.wq, &mut g.bq)),
    );
    da += &linear_backward(
        &dk,
        &tr.a,
        &w.wk,
        grads.as_mut().map(|g| (&mut g.wk, &mut g.bk)),
    );
    da += &linear_backward(
        &dv,
        &tr.a,
        &w.wv,
        grads.as_mut().map(|g| (&mut g.wv, &mut g.bv)),
    );
    layer_norm_backward(
        &da,
        &tr.ln1,
        &w.ln1_g,
        grads.map(|g| (&mut g.ln1_g, &mut g.ln1_b)),
    ) + dy
}

/// Runs the encoder on `n x d` tokens. Returns the final-norm features
/// (`n x d`, or `(n + 1) x d` with a class token first) and, in training mode,
/// the activation trace needed by [`backward`].
pub fn encode<T: Scalar>(
    tokens: &Array2<T>,
    cfg: &EncoderConfig,
    weights: &EncoderWeights<T>,
    training: bool,
) -> Result<(Array2<T>, Option<ForwardTrace<T>>)> {
    if tokens.nrows() == 0 {
        return Err(Error::ShapeMismatch(
            "encoder needs at least one token".into(),
        ));
    }
    if tokens.ncols() != cfg.hidden
        || weights.hidden() != cfg.hidden
        || weights.layers.len() != cfg.layers
    {
        return Err(Error::ShapeMismatch(format!(
            "tokens {:?}, config d = {} / L = {}, weights d = {} / L = {}",
            tokens.dim(),
            cfg.hidden,
            cfg.layers,
            weights.hidden(),
            weights.layers.len()
        )));
    }
    let z0 = match (&weights.cls, cfg.pool) {
        (Some(cls), PoolMode::Cls) => {
            let mut z = Array2::zeros((tokens.nrows() + 1, cfg.hidden));
            z.row_mut(0).assign(cls);
            z.slice_mut(s![1.., ..]).assign(tokens);
            z
        }
        (None, PoolMode::Cls) => {
            return Err(Error::ShapeMismatch(
                "cls pooling without a class token".into(),
            ))
        }
        _ => tokens.clone(),
    };
    let gate = T::c(weights.alpha[0].as_f64().tanh());
    let mut z = z0.clone();
    let mut traces = Vec::new();
    for (l, w) in weights.layers.iter().enumerate() {
        let (mut out, tr) = block_forward(&z, w, cfg.heads);
        // tanh(0) = 0 adds nothing; skipping keeps the output bit-identical
        if cfg.gate_layer == Some(l) && gate != T::zero() {
            out.scaled_add(gate, &z0);
        }
        if training {
            traces.push(tr);
        }
        z = out;
    }
    let (features, lnf) = layer_norm(&z, &weights.lnf_g, &weights.lnf_b);
    check_finite(&features, "encoder output")?;
    let trace = training.then(|| ForwardTrace {
        z0,
        layers: traces,
        lnf,
        features: features.clone(),
    });
    Ok((features, trace))
}

fn pool<T: Scalar>(features: &Array2<T>, mode: PoolMode) -> Array1<T> {
    match mode {
        PoolMode::Mean => features.mean_axis(Axis(0)).expect("non-empty"),
        PoolMode::Cls => features.row(0).to_owned(),
    }
}

/// Logits of one head on pooled features.
pub fn classify<T: Scalar>(
    features: &Array2<T>,
    cfg: &EncoderConfig,
    weights: &EncoderWeights<T>,
    head: &str,
) -> Result<Array1<T>> {
    let h = &weights.heads[weights.head_index(head)?];
    let logits = pool(features, cfg.pool).dot(&h.weight) + &h.bias;
    if logits.iter().all(|v| v.is_finite()) {
        Ok(logits)
    } else {
        Err(Error::NonFinite(format!("logits of head {head}")))
    }
}

/// Gradient of the loss with respect to one head's logits.
#[derive(Clone, Debug)]
pub struct LossGrad<T> {
    pub head: String,
    pub logits: Array1<T>,
}

#[derive(Clone, Debug)]
pub struct EncoderGradients<T> {
    pub weights: WeightGradients<T>,
    /// Gradient with respect to the input tokens, present only when nothing
    /// is frozen (the tokenizer is then trainable).
    pub input: Option<Array2<T>>,
}

/// Exact gradients of all unfrozen parameters. Frozen ones stay zero, and the
/// pass stops at the lowest layer that still influences a trainable value.
pub fn backward<T: Scalar>(
    loss_grad: &LossGrad<T>,
    trace: Option<&ForwardTrace<T>>,
    cfg: &EncoderConfig,
    weights: &EncoderWeights<T>,
) -> Result<EncoderGradients<T>> {
    let trace = trace.ok_or(Error::MissingTrace)?;
    let hi = weights.head_index(&loss_grad.head)?;
    let head = &weights.heads[hi];
    if loss_grad.logits.len() != head.bias.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logit gradients for a head with {} classes",
            loss_grad.logits.len(),
            head.bias.len()
        )));
    }
    let mut grads = weights.zeros_like();
    let dl = &loss_grad.logits;
    let pooled = pool(&trace.features, cfg.pool);
    {
        let g = &mut grads.heads[hi];
        for (i, &p) in pooled.iter().enumerate() {
            g.weight.row_mut(i).scaled_add(p, dl);
        }
        g.bias += dl;
    }

    let freeze = cfg.freeze_below.unwrap_or(0);
    let layers = cfg.layers;
    // lowest block the backward loop has to visit
    let lowest = match cfg.gate_layer {
        Some(s) => freeze.min(s),
        None => freeze,
    };
    if lowest >= layers && cfg.frozen(ParamGroup::FinalNorm) {
        return Ok(EncoderGradients {
            weights: grads,
            input: None,
        });
    }

    let dpooled = head.weight.dot(dl);
    let n = trace.features.nrows();
    let mut dfeat = Array2::zeros((n, cfg.hidden));
    match cfg.pool {
        PoolMode::Mean => {
            let scale = T::c(1.0 / n as f64);
            for mut row in dfeat.rows_mut() {
                row.scaled_add(scale, &dpooled);
            }
        }
        PoolMode::Cls => dfeat.row_mut(0).assign(&dpooled),
    }
    let lnf_grads =
        (!cfg.frozen(ParamGroup::FinalNorm)).then_some((&mut grads.lnf_g, &mut grads.lnf_b));
    let mut dz = layer_norm_backward(&dfeat, &trace.lnf, &weights.lnf_g, lnf_grads);

    let want_input = freeze == 0;
    let tanh_a = weights.alpha[0].as_f64().tanh();
    let mut dz0 = want_input.then(|| Array2::zeros(trace.z0.raw_dim()));
    for l in (lowest..layers).rev() {
        if cfg.gate_layer == Some(l) {
            let dot: f64 = dz
                .iter()
                .zip(trace.z0.iter())
                .map(|(&g, &z)| (g * z).as_f64())
                .sum();
            grads.alpha[0] = grads.alpha[0] + T::c(dot * (1.0 - tanh_a * tanh_a));
            if let Some(dz0) = dz0.as_mut() {
                dz0.scaled_add(T::c(tanh_a), &dz);
            }
        }
        let frozen = cfg.frozen(ParamGroup::Layer(l));
        if frozen && l == lowest && !want_input {
            break;
        }
        let layer_grads = (!frozen).then(|| &mut grads.layers[l]);
        dz = block_backward(&dz, &weights.layers[l], &trace.layers[l], layer_grads);
    }

    let input = match dz0 {
        Some(mut dz0) => {
            dz0 += &dz;
            if let Some(cls) = grads.cls.as_mut() {
                cls.assign(&dz0.row(0));
                Some(dz0.slice(s![1.., ..]).to_owned())
            } else {
                Some(dz0)
            }
        }
        None => None,
    };
    Ok(EncoderGradients {
        weights: grads,
        input,
    })
}

/// Softmax cross-entropy of `logits` against `label`: returns the loss and
/// its gradient with respect to the logits.
pub fn cross_entropy<T: Scalar>(logits: &Array1<T>, label: usize) -> (f64, Array1<T>) {
    let mut p = logits.clone().insert_axis(Axis(0));
    softmax_rows(&mut p);
    let mut p = p.remove_axis(Axis(0));
    let loss = -(p[label].as_f64().max(1e-300)).ln();
    p[label] = p[label] - T::one();
    (loss, p)
}
