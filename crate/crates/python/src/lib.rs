//! Python bindings for `noisevec`. Feature matrices cross the boundary as
//! lists of rows, labels as `S`/`N` strings.

use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use noisevec::map_model::{self, EmConfig, PriorConfig};
use noisevec::sad::SadConfig;
use noisevec::synth::{Sampler, SynthConfig};
use noisevec::{FeatureMatrix, Label, LabeledUtterance, SadLabels, ScalingFactors};

fn err(e: noisevec::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>, dim: Option<usize>) -> PyResult<FeatureMatrix> {
    let dim = match (dim, rows.first()) {
        (Some(d), _) => d,
        (None, Some(r)) => r.len(),
        (None, None) => return Err(PyValueError::new_err("empty feature list needs an explicit dim")),
    };
    FeatureMatrix::from_rows(&rows, dim).map_err(err)
}

fn to_rows(m: &FeatureMatrix) -> Vec<Vec<f64>> {
    m.frames().map(<[f64]>::to_vec).collect()
}

fn labels(text: &str) -> PyResult<SadLabels> {
    text.parse().map_err(err)
}

fn label(c: char) -> PyResult<Label> {
    match c {
        'S' => Ok(Label::Speech),
        'N' => Ok(Label::Silence),
        other => Err(PyValueError::new_err(format!(
            "label must be 'S' or 'N', got {other:?}"
        ))),
    }
}

fn dmatrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[pyclass(name = "NoiseVector", frozen, from_py_object)]
#[derive(Clone)]
struct PyNoiseVector {
    inner: noisevec::NoiseVector,
}

#[pymethods]
impl PyNoiseVector {
    #[getter]
    fn speech_mean(&self) -> Vec<f64> {
        self.inner.speech_mean.clone()
    }

    #[getter]
    fn silence_mean(&self) -> Vec<f64> {
        self.inner.silence_mean.clone()
    }

    #[getter]
    fn speech_count(&self) -> usize {
        self.inner.speech_count
    }

    #[getter]
    fn silence_count(&self) -> usize {
        self.inner.silence_count
    }

    /// `[speech_mean; silence_mean]`.
    fn to_list(&self) -> Vec<f64> {
        self.inner.to_vec()
    }

    fn distance(&self, other: &PyNoiseVector) -> f64 {
        self.inner.distance(&other.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "NoiseVector(dim={}, speech_count={}, silence_count={})",
            self.inner.dim(),
            self.inner.speech_count,
            self.inner.silence_count
        )
    }
}

impl From<noisevec::NoiseVector> for PyNoiseVector {
    fn from(inner: noisevec::NoiseVector) -> Self {
        Self { inner }
    }
}

#[pyclass(name = "NoisePrior", frozen, from_py_object)]
#[derive(Clone)]
struct PyNoisePrior {
    inner: noisevec::NoisePrior,
}

#[pymethods]
impl PyNoisePrior {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        map_model::read_prior(path).map(|inner| Self { inner }).map_err(err)
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        noisevec::NoisePrior::parse(text, "<python>")
            .map(|inner| Self { inner })
            .map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        map_model::write_prior(&self.inner, path).map_err(err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn mu_n(&self) -> Vec<f64> {
        self.inner.mu_n().iter().copied().collect()
    }

    #[getter]
    fn a(&self) -> Vec<f64> {
        self.inner.a().iter().copied().collect()
    }

    #[getter(B)]
    fn b(&self) -> Vec<Vec<f64>> {
        dmatrix_rows(self.inner.b())
    }

    #[getter]
    fn lambda_s(&self) -> Vec<Vec<f64>> {
        dmatrix_rows(self.inner.lambda_s())
    }

    #[getter]
    fn lambda_n(&self) -> Vec<Vec<f64>> {
        dmatrix_rows(self.inner.lambda_n())
    }

    /// Corpus-level `(r_s, r_n)`.
    #[getter]
    fn global_scaling(&self) -> (f64, f64) {
        let r = self.inner.global_scaling();
        (r.r_s, r.r_n)
    }

    fn joint_mean(&self) -> Vec<f64> {
        self.inner.joint_mean().iter().copied().collect()
    }
}

#[pyclass(name = "StreamingMle", from_py_object)]
#[derive(Clone)]
struct PyStreamingMle {
    inner: noisevec::StreamingMleState,
}

#[pymethods]
impl PyStreamingMle {
    #[new]
    fn new(dim: usize) -> Self {
        Self {
            inner: noisevec::StreamingMleState::new(dim),
        }
    }

    fn push(&mut self, frame: Vec<f64>, label: char) -> PyResult<()> {
        self.inner.push(&frame, self::label(label)?).map_err(err)
    }

    fn estimate(&self) -> PyNoiseVector {
        self.inner.estimate().into()
    }
}

#[pyclass(name = "StreamingMap")]
struct PyStreamingMap {
    inner: noisevec::StreamingMap,
}

#[pymethods]
impl PyStreamingMap {
    /// `r_policy` is `fixed-one`, `global`, `em` or `em:<k>`.
    #[new]
    #[pyo3(signature = (prior, r_policy = "global", solve_every = 1))]
    fn new(prior: &PyNoisePrior, r_policy: &str, solve_every: usize) -> PyResult<Self> {
        let policy = r_policy.parse().map_err(err)?;
        Ok(Self {
            inner: noisevec::StreamingMap::new(prior.inner.clone(), policy).with_solve_every(solve_every),
        })
    }

    fn push(&mut self, frame: Vec<f64>, label: char) -> PyResult<()> {
        self.inner.push(&frame, self::label(label)?).map_err(err)
    }

    fn estimate(&mut self) -> PyResult<PyNoiseVector> {
        self.inner.estimate().map(Into::into).map_err(err)
    }

    #[getter]
    fn scaling(&self) -> (f64, f64) {
        let r = self.inner.scaling();
        (r.r_s, r.r_n)
    }

    #[getter]
    fn frames_seen(&self) -> usize {
        self.inner.frames_seen()
    }
}

#[pyfunction]
fn offline_noise_vector(features: Vec<Vec<f64>>, labels: &str) -> PyResult<PyNoiseVector> {
    let m = matrix(features, None)?;
    noisevec::offline_noise_vector(&m, &self::labels(labels)?)
        .map(Into::into)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (features, quantile = 0.3, window = 5, coefficient = 0))]
fn label_by_energy(features: Vec<Vec<f64>>, quantile: f64, window: usize, coefficient: usize) -> PyResult<String> {
    let config = SadConfig {
        energy_coefficient_index: coefficient,
        speech_quantile: quantile,
        smoothing_window: window,
    };
    let m = matrix(features, None)?;
    noisevec::sad::label_by_energy(&m, &config)
        .map(|l| l.to_line())
        .map_err(err)
}

/// Trains a prior from `(features, labels)` pairs.
#[pyfunction]
#[pyo3(signature = (utterances, min_class_frames = map_model::DEFAULT_MIN_CLASS_FRAMES, ridge = map_model::DEFAULT_RIDGE_SCALE, em_iters = 50))]
fn train_prior(
    utterances: Vec<(Vec<Vec<f64>>, String)>,
    min_class_frames: usize,
    ridge: f64,
    em_iters: usize,
) -> PyResult<PyNoisePrior> {
    let corpus = utterances
        .into_iter()
        .enumerate()
        .map(|(i, (rows, text))| {
            let m = matrix(rows, None)?;
            LabeledUtterance::new(format!("utt{i}"), m, labels(&text)?).map_err(err)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let config = PriorConfig {
        min_class_frames,
        ridge_scale: ridge,
        em: EmConfig {
            max_iters: em_iters,
            ..EmConfig::default()
        },
    };
    map_model::train_prior(&corpus, &config)
        .map(|(_, inner)| PyNoisePrior { inner })
        .map_err(err)
}

/// MAP noise vector for one utterance at fixed `(r_s, r_n)`.
#[pyfunction]
#[pyo3(signature = (features, labels, prior, r_s = 1.0, r_n = 1.0))]
fn map_estimate(
    features: Vec<Vec<f64>>,
    labels: &str,
    prior: &PyNoisePrior,
    r_s: f64,
    r_n: f64,
) -> PyResult<PyNoiseVector> {
    let m = matrix(features, Some(prior.inner.dim()))?;
    let stats = map_model::accumulate_stats(&m, &self::labels(labels)?).map_err(err)?;
    let r = ScalingFactors::new(r_s, r_n).map_err(err)?;
    let post = map_model::map_estimate(&stats, &prior.inner, r).map_err(err)?;
    Ok(post.to_noise_vector(&stats).into())
}

/// Per-utterance EM for the scaling factors; returns `((r_s, r_n), vector, converged)`.
#[pyfunction]
#[pyo3(signature = (features, labels, prior, max_iters = 50, rel_tol = 1e-6))]
fn fit_scaling(
    features: Vec<Vec<f64>>,
    labels: &str,
    prior: &PyNoisePrior,
    max_iters: usize,
    rel_tol: f64,
) -> PyResult<((f64, f64), PyNoiseVector, bool)> {
    let m = matrix(features, Some(prior.inner.dim()))?;
    let stats = map_model::accumulate_stats(&m, &self::labels(labels)?).map_err(err)?;
    let config = EmConfig { max_iters, rel_tol };
    let fit = map_model::fit_scaling(&stats, &prior.inner, ScalingFactors::ONE, &config).map_err(err)?;
    let v = fit.posterior.to_noise_vector(&stats);
    Ok(((fit.factors.r_s, fit.factors.r_n), v.into(), fit.converged))
}

/// Draws utterance `index` of a synthetic corpus; returns
/// `(features, labels, true_means)`.
#[pyfunction]
#[pyo3(signature = (index, prior = None, dim = 4, frames = 300, speech_fraction = 0.6, segment_length = 30.0, r_s = 1.0, r_n = 1.0, seed = 42))]
#[allow(clippy::too_many_arguments)]
fn sample_utterance(
    index: usize,
    prior: Option<&PyNoisePrior>,
    dim: usize,
    frames: usize,
    speech_fraction: f64,
    segment_length: f64,
    r_s: f64,
    r_n: f64,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, String, Vec<f64>)> {
    let prior = match prior {
        Some(p) => p.inner.clone(),
        None => noisevec::synth::default_prior(dim).map_err(err)?,
    };
    let config = SynthConfig {
        prior,
        r: ScalingFactors::new(r_s, r_n).map_err(err)?,
        num_utterances: index + 1,
        frames_per_utterance: frames,
        speech_fraction,
        segment_mean_length: segment_length,
        seed,
    };
    let u = Sampler::new(&config).map_err(err)?.sample(index);
    Ok((
        to_rows(&u.features),
        u.labels.to_line(),
        u.true_means.iter().copied().collect(),
    ))
}

#[pyfunction]
fn read_features(path: &str) -> PyResult<Vec<Vec<f64>>> {
    noisevec::features::read_features_auto(path)
        .map(|m| to_rows(&m))
        .map_err(err)
}

#[pymodule]
fn noisevec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNoiseVector>()?;
    m.add_class::<PyNoisePrior>()?;
    m.add_class::<PyStreamingMle>()?;
    m.add_class::<PyStreamingMap>()?;
    m.add_function(wrap_pyfunction!(offline_noise_vector, m)?)?;
    m.add_function(wrap_pyfunction!(label_by_energy, m)?)?;
    m.add_function(wrap_pyfunction!(train_prior, m)?)?;
    m.add_function(wrap_pyfunction!(map_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_scaling, m)?)?;
    m.add_function(wrap_pyfunction!(sample_utterance, m)?)?;
    m.add_function(wrap_pyfunction!(read_features, m)?)?;
    Ok(())
}
