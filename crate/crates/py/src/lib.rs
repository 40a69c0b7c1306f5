//! Python bindings for `lowlight_core`.
//!
//! Frames cross the boundary as flat planar lists (`channel`, then row, then
//! column) plus their shape.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use lowlight_core as core;
use lowlight_core::inter::{estimate_flow as core_flow, noise_mask as core_mask};
use lowlight_core::intra::gamma_candidate as core_gamma;
use lowlight_core::pipeline::enhance_sequence;
use lowlight_core::quality::{extract_features, score};
use lowlight_core::solver::x_update as core_x_update;

fn py_err(e: core::Error) -> PyErr {
    match e.exit_code() {
        1 => PyValueError::new_err(e.to_string()),
        2 => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// An image with samples nominally in `[0, 1]`.
#[pyclass(name = "Frame", module = "lowlight_py", from_py_object)]
#[derive(Clone)]
pub struct PyFrame {
    inner: core::Frame,
}

impl From<core::Frame> for PyFrame {
    fn from(inner: core::Frame) -> Self {
        Self { inner }
    }
}

#[pymethods]
impl PyFrame {
    #[new]
    fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> PyResult<Self> {
        Ok(core::Frame::new(width, height, channels, data).py()?.into())
    }

    #[staticmethod]
    fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        core::Frame::filled(width, height, channels, value).into()
    }

    /// Reads an 8-bit PNG, PPM or PGM image.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(core::frameio::read_image(&path).py()?.into())
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    /// `(height, width, channels)`.
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.inner.height(), self.inner.width(), self.inner.channels())
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn get(&self, channel: usize, x: usize, y: usize) -> PyResult<f64> {
        let f = &self.inner;
        if channel >= f.channels() || x >= f.width() || y >= f.height() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(f.get(channel, x, y))
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn luma(&self) -> Self {
        self.inner.luma().into()
    }

    fn clamped(&self) -> Self {
        self.inner.clamped().into()
    }

    fn __repr__(&self) -> String {
        format!("Frame(width={}, height={}, channels={})", self.inner.width(), self.inner.height(), self.inner.channels())
    }
}

/// Dense flow on the source grid: `dst(x + u, y + v)` matches `src(x, y)`.
#[pyclass(name = "FlowField", module = "lowlight_py", skip_from_py_object)]
pub struct PyFlow {
    inner: core::FlowField,
}

#[pymethods]
impl PyFlow {
    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn u(&self) -> Vec<f64> {
        self.inner.u.clone()
    }

    #[getter]
    fn v(&self) -> Vec<f64> {
        self.inner.v.clone()
    }

    fn mean_magnitude(&self) -> f64 {
        self.inner.mean_magnitude()
    }

    /// Mean endpoint error against a constant flow over the central `keep`
    /// fraction of the frame.
    fn endpoint_error_constant(&self, u: f64, v: f64, keep: f64) -> f64 {
        let truth = core::FlowField::constant(self.inner.width, self.inner.height, u, v);
        self.inner.endpoint_error(&truth, keep)
    }
}

fn frames(seq: Vec<PyFrame>) -> PyResult<core::Sequence> {
    core::Sequence::new(seq.into_iter().map(|f| f.inner).collect(), 30.0).py()
}

fn config(toml: Option<&str>) -> PyResult<core::RunConfig> {
    let cfg = match toml {
        Some(t) => core::RunConfig::parse_str(t).py()?,
        None => core::RunConfig::default(),
    };
    cfg.validate().py()?;
    Ok(cfg)
}

#[pyfunction]
fn psnr(a: &PyFrame, b: &PyFrame) -> PyResult<f64> {
    core::metrics::psnr(&a.inner, &b.inner).py()
}

#[pyfunction]
fn ssim(a: &PyFrame, b: &PyFrame) -> PyResult<f64> {
    core::metrics::ssim(&a.inner, &b.inner).py()
}

#[pyfunction]
fn warp_error(seq: Vec<PyFrame>) -> PyResult<f64> {
    core::metrics::warp_error(&frames(seq)?, &core::FlowConfig::default()).py()
}

#[pyfunction]
fn mabd(seq: Vec<PyFrame>) -> PyResult<f64> {
    core::metrics::mabd(&frames(seq)?).py()
}

#[pyfunction]
#[pyo3(signature = (x, gain=0.2, shot_scale=0.005, read_sigma=0.02, quantize=true, seed=0))]
fn degrade(x: &PyFrame, gain: f64, shot_scale: f64, read_sigma: f64, quantize: bool, seed: u64) -> PyResult<PyFrame> {
    let p = core::DegradeParams { gain, shot_scale, read_sigma, quantize, seed };
    Ok(core::degrade_frame(&x.inner, &p).py()?.into())
}

/// Closed-form data-term update with a scalar gain.
#[pyfunction]
fn x_update(y: &PyFrame, gain: f64, xs: &PyFrame, xt: &PyFrame, mu: f64) -> PyResult<PyFrame> {
    Ok(core_x_update(&y.inner, &core::Gain::Scalar(gain), &xs.inner, &xt.inner, mu).py()?.into())
}

/// Per-pixel noise mask as a flat list (one value per pixel).
#[pyfunction]
fn noise_mask(x: &PyFrame, s: &PyFrame, omega: f64) -> PyResult<Vec<f64>> {
    Ok(core_mask(&x.inner, &s.inner, omega).py()?.values)
}

#[pyfunction]
fn gamma_candidate(x: &PyFrame, alpha: f64, beta: f64, gamma: f64) -> PyResult<PyFrame> {
    let p = core::CandidateParams { alpha, beta, gamma };
    Ok(core_gamma(&x.inner, &p).py()?.into())
}

#[pyfunction]
fn features(x: &PyFrame) -> PyResult<Vec<f64>> {
    Ok(extract_features(&x.inner).py()?.values.to_vec())
}

/// No-reference quality score under the bundled model (lower is better).
#[pyfunction]
fn quality_score(x: &PyFrame) -> PyResult<f64> {
    score(&x.inner, &core::QualityModel::bundled()).py()
}

#[pyfunction]
fn estimate_flow(src: &PyFrame, dst: &PyFrame) -> PyResult<PyFlow> {
    Ok(PyFlow { inner: core_flow(&src.inner, &dst.inner, &core::FlowConfig::default()).py()? })
}

/// Enhances a dark sequence. `config` is optional TOML text in the CLI's
/// configuration format.
#[pyfunction]
#[pyo3(signature = (seq, config=None))]
fn enhance(py: Python<'_>, seq: Vec<PyFrame>, config: Option<&str>) -> PyResult<Vec<PyFrame>> {
    let cfg = self::config(config)?;
    let input = frames(seq)?;
    let out = py
        .detach(|| {
            core::pipeline::with_threads(cfg.threads, || {
                enhance_sequence(&input, &cfg, &core::IlluminationProfile::bundled(), &core::QualityModel::bundled())
            })
        })
        .py()?
        .py()?;
    Ok(out.sequence.into_frames().into_iter().map(PyFrame::from).collect())
}

#[pymodule]
fn lowlight_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFrame>()?;
    m.add_class::<PyFlow>()?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(warp_error, m)?)?;
    m.add_function(wrap_pyfunction!(mabd, m)?)?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    m.add_function(wrap_pyfunction!(x_update, m)?)?;
    m.add_function(wrap_pyfunction!(noise_mask, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_candidate, m)?)?;
    m.add_function(wrap_pyfunction!(features, m)?)?;
    m.add_function(wrap_pyfunction!(quality_score, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_flow, m)?)?;
    m.add_function(wrap_pyfunction!(enhance, m)?)?;
    Ok(())
}
