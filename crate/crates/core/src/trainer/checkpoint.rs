//! Single-file checkpoints: one JSON manifest line, then raw little-endian
//! buffers in manifest order.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::TubeVit;
use crate::scalar::Scalar;
use crate::tokenizer::KernelBank;
use crate::trainer::optim::AdamState;
use crate::trainer::train::{TrainConfig, TrainState};

pub const FORMAT: &str = "tubekit-checkpoint-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the data section.
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub dtype: String,
    pub seed: u64,
    pub step: usize,
    pub config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    pub tensors: Vec<TensorEntry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptManifest(msg.into())
}

/// Serializes a model and, when given, its optimizer state.
pub fn encode_checkpoint<T: Scalar>(
    model: &TubeVit<T>,
    adam: Option<&AdamState<T>>,
    step: usize,
    seed: u64,
    train: Option<&TrainConfig>,
) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, values: &[T]| {
        let offset = data.len();
        for &v in values {
            v.write_le(&mut data);
        }
        tensors.push(TensorEntry {
            name,
            shape,
            offset,
            bytes: data.len() - offset,
        });
    };
    let arrays = model.params.arrays();
    for (id, values) in &arrays {
        push(id.name.clone(), id.shape.clone(), values);
    }
    if let Some(adam) = adam {
        for (prefix, moments) in [("adam.m", &adam.m), ("adam.v", &adam.v)] {
            for ((id, _), values) in arrays.iter().zip(moments) {
                push(format!("{prefix}/{}", id.name), id.shape.clone(), values);
            }
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        dtype: T::DTYPE.into(),
        seed,
        step,
        config: model.config.clone(),
        train: train.cloned(),
        tensors,
    };
    let mut out = serde_json::to_vec(&manifest).expect("manifest serializes");
    out.push(b'\n');
    out.extend_from_slice(&data);
    out
}

/// Splits a checkpoint into its manifest and data section.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("no manifest line"))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[..end]).map_err(|e| corrupt(format!("manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(corrupt(format!("unknown format {:?}", manifest.format)));
    }
    let data = &bytes[end + 1..];
    let mut expected = 0;
    for t in &manifest.tensors {
        if t.offset != expected
            || t.bytes != t.shape.iter().product::<usize>() * dtype_bytes(&manifest.dtype)?
        {
            return Err(corrupt(format!(
                "tensor {} has inconsistent extent",
                t.name
            )));
        }
        expected += t.bytes;
    }
    if data.len() != expected {
        return Err(corrupt(format!(
            "data section is {} bytes, manifest describes {expected}",
            data.len()
        )));
    }
    Ok((manifest, data))
}

fn dtype_bytes(dtype: &str) -> Result<usize> {
    match dtype {
        "f32" => Ok(4),
        "f64" => Ok(8),
        other => Err(corrupt(format!("unknown dtype {other:?}"))),
    }
}

fn values<T: Scalar>(data: &[u8], t: &TensorEntry) -> Vec<T> {
    data[t.offset..t.offset + t.bytes]
        .chunks_exact(T::BYTES)
        .map(T::read_le)
        .collect()
}

/// Rebuilds the full training state.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<TrainState<T>> {
    let (manifest, data) = read_manifest(bytes)?;
    if manifest.dtype != T::DTYPE {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint holds {} values, expected {}",
            manifest.dtype,
            T::DTYPE
        )));
    }
    let mut model = TubeVit::<T>::init(manifest.config.clone(), manifest.seed)?;
    // A reused interpolated base can be wider than this bank would create.
    if let KernelBank::Interpolated { base, .. } = &mut model.params.kernels {
        for t in &manifest.tensors {
            match (t.name.as_str(), t.shape.as_slice()) {
                ("tokenizer.base.weight", &[r, c]) => base.weight = Array2::zeros((r, c)),
                ("tokenizer.base.bias", &[c]) => base.bias = Array1::zeros(c),
                _ => {}
            }
        }
        model.params.kernels.check(&model.bank())?;
    }
    let find = |name: &str| manifest.tensors.iter().find(|t| t.name == name);
    for (id, slot) in model.params.arrays_mut() {
        let entry = find(&id.name)
            .ok_or_else(|| Error::ShapeMismatch(format!("missing tensor {}", id.name)))?;
        if entry.shape != id.shape {
            return Err(Error::ShapeMismatch(format!(
                "{}: checkpoint {:?}, model {:?}",
                id.name, entry.shape, id.shape
            )));
        }
        slot.copy_from_slice(&values::<T>(data, entry));
    }
    let mut adam = AdamState::new(&model.params);
    let names: Vec<String> = model
        .params
        .arrays()
        .into_iter()
        .map(|(id, _)| id.name)
        .collect();
    for (prefix, moments) in [("adam.m", &mut adam.m), ("adam.v", &mut adam.v)] {
        for (name, slot) in names.iter().zip(moments.iter_mut()) {
            if let Some(entry) = find(&format!("{prefix}/{name}")) {
                if entry.bytes != slot.len() * T::BYTES {
                    return Err(Error::ShapeMismatch(format!("{prefix}/{name}")));
                }
                *slot = values::<T>(data, entry);
            }
        }
    }
    Ok(TrainState {
        model,
        adam,
        step: manifest.step,
        seed: manifest.seed,
        train: manifest.train.unwrap_or_default(),
    })
}

pub fn save_state<T: Scalar>(path: &Path, state: &TrainState<T>) -> Result<()> {
    let bytes = encode_checkpoint(
        &state.model,
        Some(&state.adam),
        state.step,
        state.seed,
        Some(&state.train),
    );
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_state<T: Scalar>(path: &Path) -> Result<TrainState<T>> {
    decode_checkpoint(&fs::read(path)?)
}

/// Weights only, no optimizer moments.
pub fn save_model<T: Scalar>(path: &Path, model: &TubeVit<T>, seed: u64) -> Result<()> {
    fs::write(path, encode_checkpoint(model, None, 0, seed, None))?;
    Ok(())
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<TubeVit<T>> {
    Ok(load_state(path)?.model)
}
