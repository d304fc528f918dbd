//! Tube geometry: token grids, centers, validation and cost estimates.
//!
//! All counting uses valid-window semantics: a window contributes a token only
//! when the whole kernel fits inside the input. There is no padding.

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Axis, GeometryError};

/// `[t, h, w]` triple in voxels.
pub type Dims = [usize; 3];

pub const DEFAULT_TAU: f64 = 10_000.0;

fn unit_group() -> Dims {
    [1, 1, 1]
}

/// One tube: a 3D sampling window applied with a stride and an offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TubeSpec {
    pub kernel: Dims,
    pub stride: Dims,
    #[serde(default)]
    pub offset: Dims,
    /// Space-to-depth grouping per axis. `[1, 1, 1]` disables merging.
    #[serde(default = "unit_group")]
    pub s2d_group: Dims,
    /// Whether this tube also tokenizes still images (requires `kernel[0] == 1`).
    #[serde(default)]
    pub image_applicable: bool,
}

impl TubeSpec {
    pub fn new(kernel: Dims, stride: Dims) -> Self {
        Self {
            kernel,
            stride,
            offset: [0, 0, 0],
            s2d_group: unit_group(),
            image_applicable: false,
        }
    }

    pub fn with_offset(mut self, offset: Dims) -> Self {
        self.offset = offset;
        self
    }

    pub fn with_group(mut self, group: Dims) -> Self {
        self.s2d_group = group;
        self
    }

    /// Marks the tube as the 2D patch tokenizer shared with images.
    pub fn image(mut self) -> Self {
        self.image_applicable = true;
        self
    }

    /// Channel-reduction factor `f = g_t * g_h * g_w`.
    pub fn reduction(&self) -> usize {
        self.s2d_group.iter().product()
    }

    /// Number of voxels covered by one window.
    pub fn volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Stride used to generate tokens before space-to-depth merging.
    pub fn pre_merge_stride(&self) -> Dims {
        [0, 1, 2].map(|a| self.stride[a] / self.s2d_group[a])
    }

    /// The tube as applied to a still image: the temporal offset is dropped.
    pub fn image_view(&self) -> TubeSpec {
        let mut t = *self;
        t.offset[0] = 0;
        t
    }

    /// Checks the per-tube invariants that do not depend on the input size.
    pub fn check(&self, index: usize) -> Result<(), GeometryError> {
        let bad = |reason: String| GeometryError::InvalidTube {
            tube: index,
            reason,
        };
        if self.kernel.iter().any(|&k| k == 0) {
            return Err(bad(format!(
                "kernel {:?} has a zero component",
                self.kernel
            )));
        }
        if self.stride.iter().any(|&s| s == 0) {
            return Err(bad(format!(
                "stride {:?} has a zero component",
                self.stride
            )));
        }
        if self.s2d_group.iter().any(|&g| g == 0) {
            return Err(bad(format!(
                "s2d_group {:?} has a zero component",
                self.s2d_group
            )));
        }
        if self.image_applicable && self.kernel[0] != 1 {
            return Err(bad(
                "image-applicable tubes need a temporal kernel of 1".into()
            ));
        }
        if self.image_applicable && self.s2d_group[0] != 1 {
            return Err(bad("image-applicable tubes cannot merge along time".into()));
        }
        for axis in Axis::ALL {
            let a = axis.index();
            if self.stride[a] % self.s2d_group[a] != 0 {
                return Err(GeometryError::StrideNotDivisible {
                    tube: index,
                    axis,
                    stride: self.stride[a],
                    group: self.s2d_group[a],
                });
            }
        }
        Ok(())
    }
}

/// An ordered set of tubes sharing one encoder width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeBank {
    pub tubes: Vec<TubeSpec>,
    pub hidden_size: usize,
    pub tau: f64,
}

impl TubeBank {
    pub fn new(tubes: Vec<TubeSpec>, hidden_size: usize) -> Self {
        Self {
            tubes,
            hidden_size,
            tau: DEFAULT_TAU,
        }
    }

    /// Output width of tube `i` before merging, `d / f`.
    pub fn tube_width(&self, i: usize) -> usize {
        self.hidden_size / self.tubes[i].reduction()
    }

    /// Same bank with every stride replaced through `f`. Used for eval-time
    /// token densification.
    pub fn map_strides(&self, mut f: impl FnMut(usize, &TubeSpec) -> Dims) -> TubeBank {
        let mut out = self.clone();
        for (i, tube) in out.tubes.iter_mut().enumerate() {
            tube.stride = f(i, &self.tubes[i]);
        }
        out
    }

    /// Bank-level and per-tube checks that do not depend on the input.
    pub fn check(&self) -> Result<(), GeometryError> {
        if self.tubes.is_empty() {
            return Err(GeometryError::EmptyBank);
        }
        if !self.tubes.iter().any(|t| t.image_applicable) {
            return Err(GeometryError::NoImageTube);
        }
        for (i, tube) in self.tubes.iter().enumerate() {
            tube.check(i)?;
            check_grouping(i, tube, self.hidden_size)?;
        }
        Ok(())
    }
}

fn check_grouping(index: usize, tube: &TubeSpec, hidden: usize) -> Result<(), GeometryError> {
    let factor = tube.reduction();
    if hidden % factor != 0 {
        return Err(GeometryError::BadGrouping {
            tube: index,
            factor,
            hidden,
        });
    }
    Ok(())
}

/// Number of valid window positions along one axis, if any.
pub fn axis_count(len: usize, kernel: usize, stride: usize, offset: usize) -> Option<usize> {
    if offset + kernel > len {
        None
    } else {
        Some((len - offset - kernel) / stride + 1)
    }
}

/// Token positions produced by one tube on one input.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TokenGrid {
    /// Post-merge token counts per axis.
    pub counts: Dims,
    /// Pre-merge counts actually consumed, always `counts * s2d_group`.
    pub pre_counts: Dims,
    pub pre_stride: Dims,
    /// Offset actually applied (the temporal offset is zero for images).
    pub offset: Dims,
    pub kernel: Dims,
    pub group: Dims,
    /// Post-merge centers `(t, h, w)` in raw voxel coordinates, t-major.
    pub centers: Vec<[f64; 3]>,
}

impl TokenGrid {
    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pre_len(&self) -> usize {
        self.pre_counts.iter().product()
    }

    /// First voxel of pre-merge window `idx` (t, h, w grid indices).
    pub fn pre_origin(&self, idx: Dims) -> Dims {
        [0, 1, 2].map(|a| self.offset[a] + idx[a] * self.pre_stride[a])
    }

    /// Center of pre-merge window `idx`.
    pub fn pre_center(&self, idx: Dims) -> [f64; 3] {
        [0, 1, 2].map(|a| self.pre_origin(idx)[a] as f64 + (self.kernel[a] as f64 - 1.0) / 2.0)
    }
}

/// Token grid for tube `index` on an input of `dims`.
///
/// Space-to-depth tubes generate tokens at stride `s / g`; trailing pre-merge
/// tokens that do not fill a whole group are dropped.
pub fn token_grid_indexed(
    index: usize,
    tube: &TubeSpec,
    dims: Dims,
) -> Result<TokenGrid, GeometryError> {
    tube.check(index)?;
    let pre_stride = tube.pre_merge_stride();
    let mut counts = [0; 3];
    let mut pre_counts = [0; 3];
    for axis in Axis::ALL {
        let a = axis.index();
        let g = tube.s2d_group[a];
        let n_pre = axis_count(dims[a], tube.kernel[a], pre_stride[a], tube.offset[a])
            .ok_or(GeometryError::EmptyGrid { tube: index, axis })?;
        let n = n_pre / g;
        if n == 0 {
            return Err(GeometryError::EmptyGrid { tube: index, axis });
        }
        counts[a] = n;
        pre_counts[a] = n * g;
    }

    // merged center = mean of member centers, computed in closed form per axis
    let axis_centers: Vec<Vec<f64>> = (0..3)
        .map(|a| {
            let g = tube.s2d_group[a] as f64;
            let base = tube.offset[a] as f64 + (tube.kernel[a] as f64 - 1.0) / 2.0;
            let step = pre_stride[a] as f64;
            (0..counts[a])
                .map(|i| base + step * (i as f64 * g + (g - 1.0) / 2.0))
                .collect()
        })
        .collect();
    let mut centers = Vec::with_capacity(counts.iter().product());
    for &ct in &axis_centers[0] {
        for &ch in &axis_centers[1] {
            for &cw in &axis_centers[2] {
                centers.push([ct, ch, cw]);
            }
        }
    }

    Ok(TokenGrid {
        counts,
        pre_counts,
        pre_stride,
        offset: tube.offset,
        kernel: tube.kernel,
        group: tube.s2d_group,
        centers,
    })
}

pub fn token_grid(tube: &TubeSpec, dims: Dims) -> Result<TokenGrid, GeometryError> {
    token_grid_indexed(0, tube, dims)
}

/// Grids of every tube that participates for this input, tagged with the tube
/// index. Video inputs use every tube; images use the image-applicable tubes
/// on a single frame.
pub fn bank_grids(
    bank: &TubeBank,
    dims: Dims,
    is_video: bool,
) -> Result<Vec<(usize, TokenGrid)>, GeometryError> {
    if bank.tubes.is_empty() {
        return Err(GeometryError::EmptyBank);
    }
    let mut out = Vec::with_capacity(bank.tubes.len());
    for (i, tube) in bank.tubes.iter().enumerate() {
        check_grouping(i, tube, bank.hidden_size)?;
        if is_video {
            out.push((i, token_grid_indexed(i, tube, dims)?));
        } else if tube.image_applicable {
            out.push((
                i,
                token_grid_indexed(i, &tube.image_view(), [1, dims[1], dims[2]])?,
            ));
        }
    }
    if out.is_empty() {
        return Err(GeometryError::NoImageTube);
    }
    Ok(out)
}

/// Total post-merge token count for a video (all tubes) or an image
/// (image-applicable tubes on one frame).
pub fn total_tokens(bank: &TubeBank, dims: Dims, is_video: bool) -> Result<usize, GeometryError> {
    Ok(bank_grids(bank, dims, is_video)?
        .iter()
        .map(|(_, g)| g.len())
        .sum())
}

#[derive(Clone, Debug, Serialize)]
pub struct TubeReport {
    pub index: usize,
    pub counts: Option<Dims>,
    pub tokens: usize,
    #[serde(serialize_with = "ser_errors")]
    pub errors: Vec<GeometryError>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub input_dims: Dims,
    pub is_video: bool,
    pub tubes: Vec<TubeReport>,
    #[serde(serialize_with = "ser_errors")]
    pub bank_errors: Vec<GeometryError>,
    pub total_tokens: usize,
}

fn ser_errors<S: serde::Serializer>(errs: &[GeometryError], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(errs.iter().map(|e| e.to_string()))
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.bank_errors.is_empty() && self.tubes.iter().all(|t| t.errors.is_empty())
    }

    pub fn errors(&self) -> impl Iterator<Item = &GeometryError> {
        self.bank_errors
            .iter()
            .chain(self.tubes.iter().flat_map(|t| t.errors.iter()))
    }

    pub fn into_result(self) -> Result<ValidationReport, GeometryError> {
        let first = self.errors().next().cloned();
        match first {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

/// Checks every tube against the input. Inputs with `T == 1` are treated as
/// images.
pub fn validate_bank(bank: &TubeBank, dims: Dims) -> ValidationReport {
    let is_video = dims[0] > 1;
    let mut bank_errors = Vec::new();
    if bank.tubes.is_empty() {
        bank_errors.push(GeometryError::EmptyBank);
    } else if !bank.tubes.iter().any(|t| t.image_applicable) {
        bank_errors.push(GeometryError::NoImageTube);
    }
    let mut tubes = Vec::new();
    for (i, tube) in bank.tubes.iter().enumerate() {
        if !is_video && !tube.image_applicable {
            continue;
        }
        let mut errors = Vec::new();
        if let Err(e) = check_grouping(i, tube, bank.hidden_size) {
            errors.push(e);
        }
        let grid = if is_video {
            token_grid_indexed(i, tube, dims)
        } else {
            token_grid_indexed(i, &tube.image_view(), [1, dims[1], dims[2]])
        };
        let (counts, tokens) = match grid {
            Ok(g) => (Some(g.counts), g.len()),
            Err(e) => {
                errors.push(e);
                (None, 0)
            }
        };
        tubes.push(TubeReport {
            index: i,
            counts,
            tokens,
            errors,
        });
    }
    let total_tokens = tubes.iter().map(|t| t.tokens).sum();
    ValidationReport {
        input_dims: dims,
        is_video,
        tubes,
        bank_errors,
        total_tokens,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TubeCost {
    pub index: usize,
    pub tokens: usize,
    pub pre_merge_tokens: usize,
    /// Learned kernel weights, `k_t * k_h * k_w * C * d / f`.
    pub kernel_params: usize,
    pub bias_params: usize,
    /// Kernel volume; the per-tube parameter count written as a multiple of `d`.
    pub d_multiplier: usize,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub tokens: usize,
    pub per_tube: Vec<TubeCost>,
    pub tokenizer_params: usize,
    pub encoder_params: usize,
    pub tokenizer_macs: u64,
    pub attention_macs: u64,
    pub mlp_macs: u64,
    pub total_macs: u64,
}

impl CostReport {
    pub fn total_params(&self) -> usize {
        self.tokenizer_params + self.encoder_params
    }
}

/// Parameter and multiply-accumulate estimate for one forward pass.
///
/// Tokenizer MACs count every pre-merge window; attention per layer is
/// `4 n d^2 + 2 n^2 d` and the MLP `2 n d m`.
pub fn estimate_cost(
    bank: &TubeBank,
    dims: Dims,
    encoder: &EncoderConfig,
    channels: usize,
) -> Result<CostReport, GeometryError> {
    let grids = bank_grids(bank, dims, dims[0] > 1)?;
    let d = bank.hidden_size as u64;
    let mut per_tube = Vec::new();
    let mut tokens = 0usize;
    for (i, grid) in &grids {
        let tube = &bank.tubes[*i];
        let width = bank.tube_width(*i);
        let kernel_params = tube.volume() * channels * width;
        let macs = grid.pre_len() as u64 * kernel_params as u64;
        tokens += grid.len();
        per_tube.push(TubeCost {
            index: *i,
            tokens: grid.len(),
            pre_merge_tokens: grid.pre_len(),
            kernel_params,
            bias_params: width,
            d_multiplier: tube.volume(),
            macs,
        });
    }
    let n = tokens as u64;
    let layers = encoder.layers as u64;
    let attention_macs = layers * (4 * n * d * d + 2 * n * n * d);
    let mlp_macs = layers * 2 * n * d * encoder.mlp_size as u64;
    let tokenizer_macs = per_tube.iter().map(|t| t.macs).sum::<u64>();
    let tokenizer_params = per_tube
        .iter()
        .map(|t| t.kernel_params + t.bias_params)
        .sum();
    Ok(CostReport {
        tokens,
        per_tube,
        tokenizer_params,
        encoder_params: encoder.param_count(),
        tokenizer_macs,
        attention_macs,
        mlp_macs,
        total_macs: tokenizer_macs + attention_macs + mlp_macs,
    })
}
