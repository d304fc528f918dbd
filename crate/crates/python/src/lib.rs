//! Python bindings: tube geometry, position embeddings, kernel resampling and
//! f32 models that can be built from JSON configs, run and checkpointed.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;

use tubekit::cli::plan;
use tubekit::tokenizer::interpolate_kernel as interpolate;
use tubekit::trainer::{evaluate, halved_strides, load_model, presets, save_model, EvalSpec};
use tubekit::tube_config::{validate_bank, Dims};
use tubekit::{ExponentMode, ModelConfig};

fn py_err(e: tubekit::Error) -> PyErr {
    match e {
        tubekit::Error::Io(e) => PyIOError::new_err(e.to_string()),
        tubekit::Error::UnknownHead(h) => PyKeyError::new_err(h),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn mode(name: &str) -> PyResult<ExponentMode> {
    match name {
        "normalized" => Ok(ExponentMode::Normalized),
        "literal" => Ok(ExponentMode::Literal),
        other => Err(PyValueError::new_err(format!(
            "unknown exponent mode {other:?}"
        ))),
    }
}

fn clip_from(values: Vec<f32>, dims: Dims, channels: usize) -> PyResult<tubekit::VideoClip<f32>> {
    let shape = (dims[0], dims[1], dims[2], channels);
    ndarray::Array4::from_shape_vec(shape, values)
        .map(tubekit::VideoClip::new)
        .map_err(|e| PyValueError::new_err(format!("clip of shape {shape:?}: {e}")))
}

#[pyclass(name = "TubeSpec", from_py_object)]
#[derive(Clone)]
struct PyTubeSpec(tubekit::TubeSpec);

#[pymethods]
impl PyTubeSpec {
    #[new]
    #[pyo3(signature = (kernel, stride, offset = [0, 0, 0], s2d_group = [1, 1, 1], image = false))]
    fn new(kernel: Dims, stride: Dims, offset: Dims, s2d_group: Dims, image: bool) -> Self {
        let mut t = tubekit::TubeSpec::new(kernel, stride)
            .with_offset(offset)
            .with_group(s2d_group);
        if image {
            t = t.image();
        }
        Self(t)
    }

    #[getter]
    fn kernel(&self) -> Dims {
        self.0.kernel
    }

    #[getter]
    fn stride(&self) -> Dims {
        self.0.stride
    }

    #[getter]
    fn offset(&self) -> Dims {
        self.0.offset
    }

    #[getter]
    fn s2d_group(&self) -> Dims {
        self.0.s2d_group
    }

    #[getter]
    fn image_applicable(&self) -> bool {
        self.0.image_applicable
    }

    fn reduction(&self) -> usize {
        self.0.reduction()
    }

    fn __repr__(&self) -> String {
        format!(
            "TubeSpec(kernel={:?}, stride={:?}, offset={:?}, s2d_group={:?}, image={})",
            self.0.kernel,
            self.0.stride,
            self.0.offset,
            self.0.s2d_group,
            if self.0.image_applicable {
                "True"
            } else {
                "False"
            }
        )
    }
}

#[pyclass(name = "TubeBank", from_py_object)]
#[derive(Clone)]
struct PyTubeBank(tubekit::TubeBank);

#[pymethods]
impl PyTubeBank {
    #[new]
    #[pyo3(signature = (tubes, hidden_size, tau = 10_000.0))]
    fn new(tubes: Vec<PyTubeSpec>, hidden_size: usize, tau: f64) -> Self {
        let mut bank =
            tubekit::TubeBank::new(tubes.into_iter().map(|t| t.0).collect(), hidden_size);
        bank.tau = tau;
        Self(bank)
    }

    #[pyo3(signature = (dims, is_video = None))]
    fn total_tokens(&self, dims: Dims, is_video: Option<bool>) -> PyResult<usize> {
        tubekit::total_tokens(&self.0, dims, is_video.unwrap_or(dims[0] > 1))
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Every problem with this bank on an input of `dims`; empty when valid.
    fn validate(&self, dims: Dims) -> Vec<String> {
        let report = validate_bank(&self.0, dims);
        report.errors().map(ToString::to_string).collect()
    }

    fn halved_strides(&self) -> Vec<Dims> {
        halved_strides(&self.0)
    }

    fn tube_width(&self, i: usize) -> PyResult<usize> {
        if i >= self.0.tubes.len() {
            return Err(PyValueError::new_err(format!("no tube {i}")));
        }
        Ok(self.0.tube_width(i))
    }

    #[getter]
    fn tubes(&self) -> Vec<PyTubeSpec> {
        self.0.tubes.iter().copied().map(PyTubeSpec).collect()
    }

    #[getter]
    fn hidden_size(&self) -> usize {
        self.0.hidden_size
    }

    fn __len__(&self) -> usize {
        self.0.tubes.len()
    }
}

/// `n x d` sine/cosine embedding of `(t, h, w)` centers.
#[pyfunction]
#[pyo3(signature = (centers, d, tau = 10_000.0, exponent_mode = "normalized"))]
fn embed_positions(
    centers: Vec<[f64; 3]>,
    d: usize,
    tau: f64,
    exponent_mode: &str,
) -> PyResult<Vec<Vec<f64>>> {
    let params = tubekit::EmbeddingParams {
        d,
        tau,
        mode: mode(exponent_mode)?,
    };
    params.check().map_err(py_err)?;
    Ok(tubekit::embed_positions(&centers, &params)
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect())
}

/// Resizes a flattened `(kt, kh, kw, channels, d)` kernel to `target`.
#[pyfunction]
fn interpolate_kernel(
    values: Vec<f64>,
    base_shape: Dims,
    channels: usize,
    d: usize,
    target: Dims,
) -> PyResult<Vec<f64>> {
    let rows = base_shape.iter().product::<usize>() * channels;
    let base = ndarray::Array2::from_shape_vec((rows, d), values)
        .map_err(|e| PyValueError::new_err(format!("kernel of {rows} x {d}: {e}")))?;
    if target.contains(&0) || channels == 0 {
        return Err(PyValueError::new_err(
            "target and channels must be positive",
        ));
    }
    Ok(interpolate(&base, base_shape, channels, target)
        .into_iter()
        .collect())
}

/// JSON plan report for a config (given as JSON text) on `dims`.
#[pyfunction]
#[pyo3(signature = (config_json, dims = None))]
fn plan_json(config_json: &str, dims: Option<Dims>) -> PyResult<String> {
    let cfg = ModelConfig::from_json(config_json).map_err(py_err)?;
    let dims = dims
        .or(cfg.input_dims)
        .ok_or_else(|| PyValueError::new_err("no dims given and the config has no input_dims"))?;
    let report = plan(&cfg, dims).map_err(|v| {
        let msgs: Vec<String> = v.errors().map(ToString::to_string).collect();
        PyValueError::new_err(msgs.join("; "))
    })?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// An f32 model: tube tokenizer, encoder and named heads.
#[pyclass(name = "Model")]
struct PyModel(tubekit::TubeVit<f32>);

#[pymethods]
impl PyModel {
    /// Fresh weights for a JSON config.
    #[new]
    #[pyo3(signature = (config_json, seed = 0))]
    fn new(config_json: &str, seed: u64) -> PyResult<Self> {
        let cfg = ModelConfig::from_json(config_json).map_err(py_err)?;
        tubekit::TubeVit::init(cfg, seed).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_model(&path).map(Self).map_err(py_err)
    }

    #[pyo3(signature = (path, seed = 0))]
    fn save(&self, path: PathBuf, seed: u64) -> PyResult<()> {
        save_model(&path, &self.0, seed).map_err(py_err)
    }

    fn config_json(&self) -> String {
        self.0.config.to_json_pretty()
    }

    fn config_hash(&self) -> String {
        self.0.config.hash()
    }

    fn param_count(&self) -> usize {
        self.0.params.param_count()
    }

    fn bank(&self) -> PyTubeBank {
        PyTubeBank(self.0.bank())
    }

    fn head_names(&self) -> Vec<String> {
        self.0
            .params
            .encoder
            .heads
            .iter()
            .map(|h| h.name.clone())
            .collect()
    }

    /// Position-embedded tokens of a flattened `(T, H, W, C)` clip as
    /// `(tokens, centers, tube_ids)`.
    fn tokens(
        &self,
        values: Vec<f32>,
        dims: Dims,
    ) -> PyResult<(Vec<Vec<f32>>, Vec<[f64; 3]>, Vec<usize>)> {
        let clip = clip_from(values, dims, self.0.config.channels)?;
        let batch = self.0.tokens(&clip).map_err(py_err)?;
        let rows = batch
            .tokens
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect();
        Ok((rows, batch.centers, batch.tube_id))
    }

    /// Logits of `head` for a flattened `(T, H, W, C)` clip.
    fn forward(&self, values: Vec<f32>, dims: Dims, head: &str) -> PyResult<Vec<f32>> {
        let clip = clip_from(values, dims, self.0.config.channels)?;
        self.0
            .forward(&clip, head)
            .map(|l| l.to_vec())
            .map_err(py_err)
    }

    /// Held-out top-1 and top-5 accuracy of a head that has a synthetic task.
    #[pyo3(signature = (head, samples = 512, temporal_crops = 1, spatial_crops = 1))]
    fn evaluate(
        &self,
        head: &str,
        samples: usize,
        temporal_crops: usize,
        spatial_crops: usize,
    ) -> PyResult<(f64, f64)> {
        let task = presets::tasks_of(&self.0.config)
            .into_iter()
            .find(|t| t.head == head)
            .ok_or_else(|| PyKeyError::new_err(format!("head {head:?} has no task")))?;
        let spec = EvalSpec {
            samples,
            ..EvalSpec::crops(temporal_crops, spatial_crops)
        };
        let m = evaluate(&self.0, head, &task.task, &spec).map_err(py_err)?;
        Ok((m.top1, m.top5))
    }
}

#[pymodule]
#[pyo3(name = "tubekit")]
fn py_tubekit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTubeSpec>()?;
    m.add_class::<PyTubeBank>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(embed_positions, m)?)?;
    m.add_function(wrap_pyfunction!(interpolate_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(plan_json, m)?)?;
    Ok(())
}
