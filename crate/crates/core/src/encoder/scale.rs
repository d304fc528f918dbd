//! Image-to-video scaling: reuse a small model's tube kernels in front of a
//! larger pre-trained encoder.
//!
//! Small tube tokens (width `d_small`) are widened to `d_large` by one more
//! space-to-depth merge of `d_large / d_small` grid neighbours, which is the
//! same as multiplying each tube's grouping by that ratio while keeping its
//! kernel. The large encoder is then frozen below `freeze_below` and
//! optionally gated at `gate_layer`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{HeadSpec, PosEmbKind};
use crate::encoder::HeadWeights;
use crate::error::{Error, Result};
use crate::init::fan_in_array;
use crate::model::{ModelParams, TubeVit};
use crate::scalar::Scalar;
use crate::tube_config::{TubeBank, TubeSpec};

fn prime_factors(mut n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        while n % p == 0 {
            out.push(p);
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// Multiplies one tube's grouping by `ratio`. Each prime factor goes to the
/// spatial axis with the largest remaining pre-merge stride that it divides
/// (ties: smaller existing group, then h); time is used only when neither
/// spatial axis can take it.
fn lift_tube(index: usize, tube: &TubeSpec, ratio: usize) -> Result<TubeSpec> {
    let mut out = *tube;
    for p in prime_factors(ratio) {
        let fits = |t: &TubeSpec, a: usize| t.stride[a] % (t.s2d_group[a] * p) == 0;
        let spatial = [1, 2]
            .into_iter()
            .filter(|&a| fits(&out, a))
            .max_by_key(|&a| {
                let g = out.s2d_group[a];
                (out.stride[a] / g, usize::MAX - g, usize::MAX - a)
            });
        let axis = match spatial {
            Some(a) => a,
            None if !out.image_applicable && fits(&out, 0) => 0,
            None => {
                return Err(Error::InvalidConfig(format!(
                    "tube {index}: no stride divisible by an extra grouping factor {p}"
                )))
            }
        };
        out.s2d_group[axis] *= p;
    }
    Ok(out)
}

/// The small bank re-expressed at width `large_hidden`.
pub fn lift_bank(small: &TubeBank, large_hidden: usize) -> Result<TubeBank> {
    if large_hidden % small.hidden_size != 0 {
        return Err(Error::IncompatibleWidths {
            small: small.hidden_size,
            large: large_hidden,
        });
    }
    let ratio = large_hidden / small.hidden_size;
    let tubes = small
        .tubes
        .iter()
        .enumerate()
        .map(|(i, t)| lift_tube(i, t, ratio))
        .collect::<Result<Vec<_>>>()?;
    Ok(TubeBank {
        tubes,
        hidden_size: large_hidden,
        tau: small.tau,
    })
}

/// Composes the small model's tube kernels with the large model's encoder.
///
/// Heads of the large model are kept; heads that only the small model has are
/// added at the large width, freshly initialized from `seed`.
pub fn scale_up<T: Scalar>(
    small: &TubeVit<T>,
    large: &TubeVit<T>,
    freeze_below: Option<usize>,
    gate_layer: Option<usize>,
    seed: u64,
) -> Result<TubeVit<T>> {
    let d_large = large.config.hidden_size;
    let bank = lift_bank(&small.bank(), d_large)?;
    if large.config.posemb == PosEmbKind::Learned {
        return Err(Error::InvalidConfig(
            "scale_up needs a large model without a learned position table".into(),
        ));
    }
    let mut config = large.config.clone();
    config.tubes = bank.tubes;
    config.tau = bank.tau;
    config.channels = small.config.channels;
    config.interpolated_kernel = small.config.interpolated_kernel;
    config.input_dims = small.config.input_dims;
    config.encoder.freeze_below = freeze_below;
    config.encoder.gate_layer = gate_layer;

    let mut encoder = large.params.encoder.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for head in &small.config.heads {
        if config.heads.iter().any(|h| h.name == head.name) {
            continue;
        }
        config.heads.push(HeadSpec {
            name: head.name.clone(),
            classes: head.classes,
            task: head.task.clone(),
        });
        encoder.heads.push(HeadWeights {
            name: head.name.clone(),
            weight: fan_in_array(&mut rng, (d_large, head.classes), d_large),
            bias: ndarray::Array1::zeros(head.classes),
        });
    }
    config.validate()?;
    let model = TubeVit {
        config,
        params: ModelParams {
            kernels: small.params.kernels.clone(),
            encoder,
            pos_table: None,
        },
    };
    model.params.kernels.check(&model.bank())?;
    Ok(model)
}
