//! Space-to-depth token merging.
//!
//! Tokens are generated at a denser grid with `d / f` channels; each
//! `g_t x g_h x g_w` block of neighbours is then concatenated along the
//! channel axis (members in t, h, w-major order) into one `d`-wide token.

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tube_config::Dims;

fn check(counts: Dims, group: Dims) -> Result<Dims> {
    if (0..3).any(|a| group[a] == 0 || counts[a] % group[a] != 0) {
        return Err(Error::GridNotDivisible { counts, group });
    }
    Ok([0, 1, 2].map(|a| counts[a] / group[a]))
}

/// Visits `(post_row, member, pre_row)` for every merged block.
fn for_each_member(counts: Dims, group: Dims, post: Dims, mut f: impl FnMut(usize, usize, usize)) {
    let mut post_row = 0;
    for bt in 0..post[0] {
        for bh in 0..post[1] {
            for bw in 0..post[2] {
                let mut member = 0;
                for it in 0..group[0] {
                    for ih in 0..group[1] {
                        for iw in 0..group[2] {
                            let t = bt * group[0] + it;
                            let h = bh * group[1] + ih;
                            let w = bw * group[2] + iw;
                            let pre_row = (t * counts[1] + h) * counts[2] + w;
                            f(post_row, member, pre_row);
                            member += 1;
                        }
                    }
                }
                post_row += 1;
            }
        }
    }
}

/// Merges a `counts` grid of tokens (rows in t, h, w-major order).
pub fn merge_s2d<T: Scalar>(pre: ArrayView2<T>, counts: Dims, group: Dims) -> Result<Array2<T>> {
    let post = check(counts, group)?;
    let n_pre: usize = counts.iter().product();
    if pre.nrows() != n_pre {
        return Err(Error::ShapeMismatch(format!(
            "merge_s2d: {} rows for a grid of {:?}",
            pre.nrows(),
            counts
        )));
    }
    if group == [1, 1, 1] {
        return Ok(pre.to_owned());
    }
    let c = pre.ncols();
    let f: usize = group.iter().product();
    let mut out = Array2::zeros((post.iter().product(), c * f));
    for_each_member(counts, group, post, |row, m, pre_row| {
        out.slice_mut(s![row, m * c..(m + 1) * c])
            .assign(&pre.row(pre_row));
    });
    Ok(out)
}

/// Inverse of [`merge_s2d`]. Since merging is a permutation of entries this is
/// also its adjoint, which is how gradients flow back to the dense grid.
pub fn split_s2d<T: Scalar>(merged: ArrayView2<T>, counts: Dims, group: Dims) -> Result<Array2<T>> {
    let post = check(counts, group)?;
    let f: usize = group.iter().product();
    if merged.nrows() != post.iter().product::<usize>() || merged.ncols() % f != 0 {
        return Err(Error::ShapeMismatch(format!(
            "split_s2d: {:?} does not match grid {:?} / group {:?}",
            merged.dim(),
            counts,
            group
        )));
    }
    if group == [1, 1, 1] {
        return Ok(merged.to_owned());
    }
    let c = merged.ncols() / f;
    let mut out = Array2::zeros((counts.iter().product(), c));
    for_each_member(counts, group, post, |row, m, pre_row| {
        out.row_mut(pre_row)
            .assign(&merged.slice(s![row, m * c..(m + 1) * c]));
    });
    Ok(out)
}

/// Merged centers: the arithmetic mean of each block's member centers.
pub fn merge_centers(centers: &[[f64; 3]], counts: Dims, group: Dims) -> Result<Vec<[f64; 3]>> {
    let post = check(counts, group)?;
    if centers.len() != counts.iter().product::<usize>() {
        return Err(Error::ShapeMismatch(format!(
            "merge_centers: {} centers for grid {:?}",
            centers.len(),
            counts
        )));
    }
    let f = group.iter().product::<usize>() as f64;
    let mut out = vec![[0.0; 3]; post.iter().product()];
    for_each_member(counts, group, post, |row, _, pre_row| {
        for a in 0..3 {
            out[row][a] += centers[pre_row][a];
        }
    });
    for c in &mut out {
        for v in c.iter_mut() {
            *v /= f;
        }
    }
    Ok(out)
}
