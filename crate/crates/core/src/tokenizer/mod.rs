//! Video and image tokenization with a bank of sparse tubes.
//!
//! Each tube gathers its (pre-merge) windows from the clip, projects every
//! flattened window with its own kernel and bias, then merges space-to-depth
//! groups back to the full hidden width. Rows are ordered tube-major, then
//! t, h, w-major within a tube.

mod clip;
mod interp;
mod s2d;

use std::borrow::Cow;

use ndarray::{s, Array1, Array2, Array4, ArrayView2, Axis as NdAxis};
use rand::Rng;

pub use clip::{decode_clip, encode_clip, read_clip, write_clip, CLIP_MAGIC};
pub use interp::{interpolate_kernel, interpolate_kernel_adjoint};
pub use s2d::{merge_centers, merge_s2d, split_s2d};

use crate::error::{Error, Result};
use crate::init::fan_in_array;
use crate::scalar::Scalar;
use crate::tube_config::{bank_grids, Dims, TokenGrid, TubeBank};

/// Dense voxels `T x H x W x C`. An image is a clip with `T == 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip<T> {
    pub data: Array4<T>,
}

pub type ImageFrame<T> = VideoClip<T>;

impl<T: Scalar> VideoClip<T> {
    pub fn new(data: Array4<T>) -> Self {
        Self { data }
    }

    pub fn zeros(dims: Dims, channels: usize) -> Self {
        Self {
            data: Array4::zeros((dims[0], dims[1], dims[2], channels)),
        }
    }

    pub fn dims(&self) -> Dims {
        let (t, h, w, _) = self.data.dim();
        [t, h, w]
    }

    pub fn channels(&self) -> usize {
        self.data.dim().3
    }

    pub fn is_image(&self) -> bool {
        self.data.dim().0 == 1
    }

    /// Sub-clip starting at `origin` with extent `dims`.
    pub fn crop(&self, origin: Dims, dims: Dims) -> Result<Self> {
        let full = self.dims();
        if (0..3).any(|a| origin[a] + dims[a] > full[a]) {
            return Err(Error::ShapeMismatch(format!(
                "crop {dims:?} at {origin:?} exceeds clip {full:?}"
            )));
        }
        let view = self.data.slice(s![
            origin[0]..origin[0] + dims[0],
            origin[1]..origin[1] + dims[1],
            origin[2]..origin[2] + dims[2],
            ..
        ]);
        Ok(Self {
            data: view.as_standard_layout().into_owned(),
        })
    }

    /// First frame as an image.
    pub fn frame(&self, t: usize) -> Self {
        let view = self.data.slice(s![t..t + 1, .., .., ..]);
        Self {
            data: view.as_standard_layout().into_owned(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> VideoClip<U> {
        VideoClip {
            data: self.data.mapv(|v| U::c(v.as_f64())),
        }
    }
}

/// Projection for one tube: `weight` is `(k_t * k_h * k_w * C) x (d / f)` with
/// rows in t, h, w, c order.
#[derive(Clone, Debug, PartialEq)]
pub struct TubeKernel<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> TubeKernel<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            weight: Array2::zeros((rows, cols)),
            bias: Array1::zeros(cols),
        }
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.weight.nrows(), self.weight.ncols())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum KernelBank<T> {
    /// One kernel per tube.
    PerTube {
        channels: usize,
        kernels: Vec<TubeKernel<T>>,
    },
    /// One shared base kernel resampled to every tube shape. Each tube uses
    /// the leading `d / f` output channels of the base.
    Interpolated {
        channels: usize,
        base_shape: Dims,
        base: TubeKernel<T>,
    },
}

impl<T: Scalar> KernelBank<T> {
    /// Truncated-normal weights (std `fan_in^-1/2`) and zero biases.
    pub fn init<R: Rng + ?Sized>(
        bank: &TubeBank,
        channels: usize,
        interpolated: Option<Dims>,
        rng: &mut R,
    ) -> Self {
        match interpolated {
            None => KernelBank::PerTube {
                channels,
                kernels: bank
                    .tubes
                    .iter()
                    .enumerate()
                    .map(|(i, tube)| {
                        let rows = tube.volume() * channels;
                        TubeKernel {
                            weight: fan_in_array(rng, (rows, bank.tube_width(i)), rows),
                            bias: Array1::zeros(bank.tube_width(i)),
                        }
                    })
                    .collect(),
            },
            Some(base_shape) => {
                let rows = base_shape.iter().product::<usize>() * channels;
                KernelBank::Interpolated {
                    channels,
                    base_shape,
                    base: TubeKernel {
                        weight: fan_in_array(rng, (rows, bank.hidden_size), rows),
                        bias: Array1::zeros(bank.hidden_size),
                    },
                }
            }
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            KernelBank::PerTube { channels, .. } | KernelBank::Interpolated { channels, .. } => {
                *channels
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            KernelBank::PerTube { channels, kernels } => KernelBank::PerTube {
                channels: *channels,
                kernels: kernels.iter().map(TubeKernel::zeros_like).collect(),
            },
            KernelBank::Interpolated {
                channels,
                base_shape,
                base,
            } => KernelBank::Interpolated {
                channels: *channels,
                base_shape: *base_shape,
                base: base.zeros_like(),
            },
        }
    }

    /// Checks that the stored kernels fit `bank`.
    pub fn check(&self, bank: &TubeBank) -> Result<()> {
        match self {
            KernelBank::PerTube { channels, kernels } => {
                if kernels.len() != bank.tubes.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} kernels for {} tubes",
                        kernels.len(),
                        bank.tubes.len()
                    )));
                }
                for (i, (k, tube)) in kernels.iter().zip(&bank.tubes).enumerate() {
                    let want = (tube.volume() * channels, bank.tube_width(i));
                    if k.weight.dim() != want || k.bias.len() != want.1 {
                        return Err(Error::ShapeMismatch(format!(
                            "tube {i}: kernel {:?} / bias {} but bank needs {want:?}",
                            k.weight.dim(),
                            k.bias.len()
                        )));
                    }
                }
            }
            KernelBank::Interpolated {
                channels,
                base_shape,
                base,
            } => {
                let rows = base_shape.iter().product::<usize>() * channels;
                let widest = (0..bank.tubes.len())
                    .map(|i| bank.tube_width(i))
                    .max()
                    .unwrap_or(0);
                let (r, c) = base.weight.dim();
                if r != rows || c < widest || base.bias.len() != c {
                    return Err(Error::ShapeMismatch(format!(
                        "base kernel {:?} but bank needs {rows} rows and at least {widest} columns",
                        base.weight.dim()
                    )));
                }
            }
        }
        Ok(())
    }

    /// The effective kernel of tube `i`.
    pub fn tube_kernel(&self, bank: &TubeBank, i: usize) -> Cow<'_, TubeKernel<T>> {
        match self {
            KernelBank::PerTube { kernels, .. } => Cow::Borrowed(&kernels[i]),
            KernelBank::Interpolated {
                channels,
                base_shape,
                base,
            } => {
                let width = bank.tube_width(i);
                let full =
                    interpolate_kernel(&base.weight, *base_shape, *channels, bank.tubes[i].kernel);
                Cow::Owned(TubeKernel {
                    weight: full.slice(s![.., ..width]).to_owned(),
                    bias: base.bias.slice(s![..width]).to_owned(),
                })
            }
        }
    }

    /// Visits every parameter array with a stable name.
    pub fn arrays(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        match self {
            KernelBank::PerTube { kernels, .. } => {
                for (i, k) in kernels.iter().enumerate() {
                    out.push((
                        format!("tokenizer.tube{i}.weight"),
                        k.weight.as_slice().unwrap(),
                    ));
                    out.push((
                        format!("tokenizer.tube{i}.bias"),
                        k.bias.as_slice().unwrap(),
                    ));
                }
            }
            KernelBank::Interpolated { base, .. } => {
                out.push((
                    "tokenizer.base.weight".into(),
                    base.weight.as_slice().unwrap(),
                ));
                out.push(("tokenizer.base.bias".into(), base.bias.as_slice().unwrap()));
            }
        }
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out = Vec::new();
        match self {
            KernelBank::PerTube { kernels, .. } => {
                for (i, k) in kernels.iter_mut().enumerate() {
                    out.push((
                        format!("tokenizer.tube{i}.weight"),
                        k.weight.as_slice_mut().unwrap(),
                    ));
                    out.push((
                        format!("tokenizer.tube{i}.bias"),
                        k.bias.as_slice_mut().unwrap(),
                    ));
                }
            }
            KernelBank::Interpolated { base, .. } => {
                out.push((
                    "tokenizer.base.weight".into(),
                    base.weight.as_slice_mut().unwrap(),
                ));
                out.push((
                    "tokenizer.base.bias".into(),
                    base.bias.as_slice_mut().unwrap(),
                ));
            }
        }
        out
    }

    /// Shapes in the same order as [`KernelBank::arrays`].
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        match self {
            KernelBank::PerTube { kernels, .. } => kernels
                .iter()
                .flat_map(|k| [k.weight.shape().to_vec(), k.bias.shape().to_vec()])
                .collect(),
            KernelBank::Interpolated { base, .. } => {
                vec![base.weight.shape().to_vec(), base.bias.shape().to_vec()]
            }
        }
    }
}

/// Tokens with their centers and originating tube.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch<T> {
    pub tokens: Array2<T>,
    /// `(t, h, w)` voxel coordinates of each token's center.
    pub centers: Vec<[f64; 3]>,
    pub tube_id: Vec<usize>,
}

impl<T> TokenBatch<T> {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Flattened pre-merge windows of one tube, one row per window.
fn gather_patches<T: Scalar>(clip: &VideoClip<T>, grid: &TokenGrid) -> Array2<T> {
    let c = clip.channels();
    let [kt, kh, kw] = grid.kernel;
    let row_len = kw * c;
    let cols = kt * kh * row_len;
    let data = clip.data.as_slice().expect("clip in standard layout");
    let (_, h, w, _) = clip.data.dim();
    let mut out = Array2::zeros((grid.pre_len(), cols));
    let mut row = 0;
    for it in 0..grid.pre_counts[0] {
        for ih in 0..grid.pre_counts[1] {
            for iw in 0..grid.pre_counts[2] {
                let [t0, h0, w0] = grid.pre_origin([it, ih, iw]);
                let mut dst = out.row_mut(row);
                let dst = dst.as_slice_mut().unwrap();
                let mut k = 0;
                for dt in 0..kt {
                    for dh in 0..kh {
                        let start = (((t0 + dt) * h + h0 + dh) * w + w0) * c;
                        dst[k..k + row_len].copy_from_slice(&data[start..start + row_len]);
                        k += row_len;
                    }
                }
                row += 1;
            }
        }
    }
    out
}

/// Adds each row of `patches` back into the voxels its window covers.
fn scatter_patches<T: Scalar>(patches: &Array2<T>, grid: &TokenGrid, out: &mut Array4<T>) {
    let c = out.dim().3;
    let [kt, kh, kw] = grid.kernel;
    let row_len = kw * c;
    let (_, h, w, _) = out.dim();
    let data = out.as_slice_mut().expect("standard layout");
    let mut row = 0;
    for it in 0..grid.pre_counts[0] {
        for ih in 0..grid.pre_counts[1] {
            for iw in 0..grid.pre_counts[2] {
                let [t0, h0, w0] = grid.pre_origin([it, ih, iw]);
                let src = patches.row(row);
                let src = src.as_slice().unwrap();
                let mut k = 0;
                for dt in 0..kt {
                    for dh in 0..kh {
                        let start = (((t0 + dt) * h + h0 + dh) * w + w0) * c;
                        for (d, &v) in data[start..start + row_len]
                            .iter_mut()
                            .zip(&src[k..k + row_len])
                        {
                            *d = *d + v;
                        }
                        k += row_len;
                    }
                }
                row += 1;
            }
        }
    }
}

fn check_channels<T: Scalar>(clip: &VideoClip<T>, kernels: &KernelBank<T>) -> Result<()> {
    if clip.channels() != kernels.channels() {
        return Err(Error::ShapeMismatch(format!(
            "clip has {} channels, kernels expect {}",
            clip.channels(),
            kernels.channels()
        )));
    }
    Ok(())
}

/// Tokenizes a clip. Clips with `T == 1` are images and only use the
/// image-applicable tubes.
pub fn tokenize<T: Scalar>(
    clip: &VideoClip<T>,
    bank: &TubeBank,
    kernels: &KernelBank<T>,
) -> Result<TokenBatch<T>> {
    kernels.check(bank)?;
    check_channels(clip, kernels)?;
    let grids = bank_grids(bank, clip.dims(), !clip.is_image())?;
    let n: usize = grids.iter().map(|(_, g)| g.len()).sum();
    let mut tokens = Array2::zeros((n, bank.hidden_size));
    let mut centers = Vec::with_capacity(n);
    let mut tube_id = Vec::with_capacity(n);
    let mut row = 0;
    for (i, grid) in &grids {
        let kernel = kernels.tube_kernel(bank, *i);
        let patches = gather_patches(clip, grid);
        let mut pre = patches.dot(&kernel.weight);
        pre += &kernel.bias;
        let merged = merge_s2d(pre.view(), grid.pre_counts, grid.group)?;
        tokens
            .slice_mut(s![row..row + grid.len(), ..])
            .assign(&merged);
        centers.extend_from_slice(&grid.centers);
        tube_id.extend(std::iter::repeat_n(*i, grid.len()));
        row += grid.len();
    }
    Ok(TokenBatch {
        tokens,
        centers,
        tube_id,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenizerGradients<T> {
    pub kernels: KernelBank<T>,
    pub input: Option<Array4<T>>,
}

/// Adjoint of [`tokenize`]: kernel and bias gradients (pulled back to the base
/// kernel in interpolated mode), and voxel gradients when `want_input`.
pub fn tokenize_gradient<T: Scalar>(
    upstream: ArrayView2<T>,
    clip: &VideoClip<T>,
    bank: &TubeBank,
    kernels: &KernelBank<T>,
    want_input: bool,
) -> Result<TokenizerGradients<T>> {
    kernels.check(bank)?;
    check_channels(clip, kernels)?;
    let grids = bank_grids(bank, clip.dims(), !clip.is_image())?;
    let n: usize = grids.iter().map(|(_, g)| g.len()).sum();
    if upstream.dim() != (n, bank.hidden_size) {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient {:?}, tokens are ({n}, {})",
            upstream.dim(),
            bank.hidden_size
        )));
    }
    let mut grads = kernels.zeros_like();
    let mut input = want_input.then(|| Array4::zeros(clip.data.dim()));
    let mut row = 0;
    for (i, grid) in &grids {
        let d_post = upstream.slice(s![row..row + grid.len(), ..]);
        row += grid.len();
        let d_pre = split_s2d(d_post, grid.pre_counts, grid.group)?;
        let patches = gather_patches(clip, grid);
        let d_weight = patches.t().dot(&d_pre);
        let d_bias = d_pre.sum_axis(NdAxis(0));
        if let Some(input) = input.as_mut() {
            let kernel = kernels.tube_kernel(bank, *i);
            let d_patches = d_pre.dot(&kernel.weight.t());
            scatter_patches(&d_patches, grid, input);
        }
        match &mut grads {
            KernelBank::PerTube { kernels, .. } => {
                kernels[*i].weight += &d_weight;
                kernels[*i].bias += &d_bias;
            }
            KernelBank::Interpolated {
                channels,
                base_shape,
                base,
            } => {
                let width = d_weight.ncols();
                let mut full = Array2::zeros((d_weight.nrows(), base.weight.ncols()));
                full.slice_mut(s![.., ..width]).assign(&d_weight);
                base.weight += &interpolate_kernel_adjoint(
                    &full,
                    *base_shape,
                    *channels,
                    bank.tubes[*i].kernel,
                );
                let mut b = base.bias.slice_mut(s![..width]);
                b += &d_bias;
            }
        }
    }
    Ok(TokenizerGradients {
        kernels: grads,
        input,
    })
}
