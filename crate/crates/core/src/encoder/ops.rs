//! Row-wise building blocks with their exact adjoints.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use crate::scalar::Scalar;

pub const LN_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_8;
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Debug, PartialEq)]
pub struct LnCache<T> {
    pub xhat: Array2<T>,
    pub rstd: Array1<T>,
}

/// Layer norm over the last axis.
pub fn layer_norm<T: Scalar>(
    x: &Array2<T>,
    gamma: &Array1<T>,
    beta: &Array1<T>,
) -> (Array2<T>, LnCache<T>) {
    let d = T::c(x.ncols() as f64);
    let eps = T::c(LN_EPS);
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<T>() / d;
        *r = (var + eps).sqrt().recip();
        let rs = *r;
        row.mapv_inplace(|v| v * rs);
    }
    let mut y = &xhat * gamma;
    y += beta;
    (y, LnCache { xhat, rstd })
}

/// Returns `dx` and accumulates `dgamma`, `dbeta` when given.
pub fn layer_norm_backward<T: Scalar>(
    dy: &Array2<T>,
    cache: &LnCache<T>,
    gamma: &Array1<T>,
    param_grads: Option<(&mut Array1<T>, &mut Array1<T>)>,
) -> Array2<T> {
    if let Some((dg, db)) = param_grads {
        *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
        *db += &dy.sum_axis(Axis(0));
    }
    let d = T::c(dy.ncols() as f64);
    let mut dx = dy * gamma;
    for ((mut row, xh), &r) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.rstd.iter())
    {
        let mean_g = row.sum() / d;
        let mean_gx = row.iter().zip(xh.iter()).map(|(&g, &x)| g * x).sum::<T>() / d;
        Zip::from(&mut row)
            .and(&xh)
            .for_each(|g, &x| *g = r * (*g - mean_g - x * mean_gx));
    }
    dx
}

#[inline]
pub fn gelu<T: Scalar>(u: T) -> T {
    let half = T::c(0.5);
    let inner = T::c(GELU_C) * (u + T::c(GELU_A) * u * u * u);
    half * u * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(u: T) -> T {
    let half = T::c(0.5);
    let inner = T::c(GELU_C) * (u + T::c(GELU_A) * u * u * u);
    let th = inner.tanh();
    let dinner = T::c(GELU_C) * (T::one() + T::c(3.0 * GELU_A) * u * u);
    half * (T::one() + th) + half * u * (T::one() - th * th) * dinner
}

/// `x W + b`.
pub fn linear<T: Scalar>(x: &Array2<T>, w: &Array2<T>, b: &Array1<T>) -> Array2<T> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Accumulates `dW = x^T dy`, `db = sum(dy)` and returns `dx = dy W^T`.
pub fn linear_backward<T: Scalar>(
    dy: &Array2<T>,
    x: &Array2<T>,
    w: &Array2<T>,
    param_grads: Option<(&mut Array2<T>, &mut Array1<T>)>,
) -> Array2<T> {
    if let Some((dw, db)) = param_grads {
        ndarray::linalg::general_mat_mul(T::one(), &x.t(), dy, T::one(), dw);
        *db += &dy.sum_axis(Axis(0));
    }
    dy.dot(&w.t())
}

/// Row softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(x: &mut Array2<T>) {
    for mut row in x.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Multi-head scaled dot-product attention. Returns the concatenated head
/// outputs and each head's probability matrix.
pub fn attention<T: Scalar>(
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    heads: usize,
) -> (Array2<T>, Vec<Array2<T>>) {
    let (n, d) = q.dim();
    let dh = d / heads;
    let scale = T::c((dh as f64).sqrt().recip());
    let mut ctx = Array2::zeros((n, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut p = q.slice(cols).dot(&k.slice(cols).t());
        p.mapv_inplace(|x| x * scale);
        softmax_rows(&mut p);
        ctx.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        probs.push(p);
    }
    (ctx, probs)
}

/// Gradients of [`attention`] with respect to `q`, `k` and `v`.
pub fn attention_backward<T: Scalar>(
    dctx: &Array2<T>,
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    probs: &[Array2<T>],
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let (n, d) = q.dim();
    let heads = probs.len();
    let dh = d / heads;
    let scale = T::c((dh as f64).sqrt().recip());
    let mut dq = Array2::zeros((n, d));
    let mut dk = Array2::zeros((n, d));
    let mut dv = Array2::zeros((n, d));
    for (h, p) in probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dout: ArrayView2<T> = dctx.slice(cols);
        dv.slice_mut(cols).assign(&p.t().dot(&dout));
        let mut ds = dout.dot(&v.slice(cols).t());
        for (mut g, pr) in ds.rows_mut().into_iter().zip(p.rows()) {
            let dot = g.iter().zip(pr.iter()).map(|(&a, &b)| a * b).sum::<T>();
            Zip::from(&mut g)
                .and(&pr)
                .for_each(|g, &p| *g = p * (*g - dot) * scale);
        }
        dq.slice_mut(cols).assign(&ds.dot(&k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&q.slice(cols)));
    }
    (dq, dk, dv)
}
