//! Python bindings: synthetic worlds, models, training, evaluation, the
//! ablation runner and the gradient-check suite.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList, PyTuple};
use sap_core::data::{self, BankDataset, BankDims, Episode, World};
use sap_core::eval::{evaluate, ActionPrior};
use sap_core::harness::{self, GradcheckOptions, ModelFile, RunConfig};
use sap_core::sap::{infer, AblationVariant, ModelDims, SapConfig};
use sap_core::tensor::Fault;
use sap_core::training::{fit, init_params, Labels, TrainConfig};
use std::path::PathBuf;

create_exception!(sap_py, SapException, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    SapException::new_err(e.to_string())
}

fn variant(name: &str) -> PyResult<AblationVariant> {
    name.parse().map_err(err)
}

/// `key=value` keyword arguments applied on top of the default run config.
fn config_from(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(kw) = kwargs {
        for (k, v) in kw.iter() {
            let key: String = k.extract()?;
            let value = if let Ok(b) = v.extract::<bool>() {
                b.to_string()
            } else if v.is_none() {
                "none".to_string()
            } else if v.is_instance_of::<PyList>() || v.is_instance_of::<PyTuple>() {
                let parts: Vec<String> = v.try_iter()?.map(|x| Ok(x?.str()?.to_string())).collect::<PyResult<_>>()?;
                parts.join(",")
            } else {
                v.str()?.to_string()
            };
            cfg.set(&key, &value).map_err(err)?;
        }
    }
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// One labeled clip.
#[pyclass(name = "Episode", module = "sap_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyEpisode {
    inner: Episode,
    carrier_rows: Vec<usize>,
}

#[pymethods]
impl PyEpisode {
    #[getter]
    fn verb(&self) -> usize {
        self.inner.labels.verb
    }

    #[getter]
    fn noun(&self) -> usize {
        self.inner.labels.noun
    }

    #[getter]
    fn verb_feature(&self) -> Vec<f64> {
        self.inner.verb_feature.values.clone()
    }

    #[getter]
    fn noun_feature(&self) -> Vec<f64> {
        self.inner.noun_feature.values.clone()
    }

    /// Bank rows as a list of lists, `N x C`.
    #[getter]
    fn bank(&self) -> Vec<Vec<f64>> {
        let b = &self.inner.bank;
        (0..b.rows()).map(|i| b.row(i).to_vec()).collect()
    }

    #[getter]
    fn confidences(&self) -> Vec<f64> {
        self.inner.bank.confidences().to_vec()
    }

    #[getter]
    fn frame_index(&self) -> Vec<usize> {
        self.inner.bank.frame_index().to_vec()
    }

    /// Rows holding the interacted object; empty for clips read from disk.
    #[getter]
    fn carrier_rows(&self) -> Vec<usize> {
        self.carrier_rows.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Episode(verb={}, noun={}, rows={})",
            self.inner.labels.verb,
            self.inner.labels.noun,
            self.inner.bank.rows()
        )
    }
}

fn unwrap_episodes(eps: &[PyRef<'_, PyEpisode>]) -> Vec<Episode> {
    eps.iter().map(|e| e.inner.clone()).collect()
}

/// Planted-signal generator for one seed. Keyword arguments are generator
/// fields, e.g. `World(seed=1, noise_sigma=0.0)`.
#[pyclass(name = "World", module = "sap_py", frozen)]
struct PyWorld {
    inner: World,
}

#[pymethods]
impl PyWorld {
    #[new]
    #[pyo3(signature = (seed=0, **kwargs))]
    fn new(seed: u64, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let cfg = config_from(kwargs)?;
        Ok(Self {
            inner: World::new(&cfg.spec_for(seed)).map_err(err)?,
        })
    }

    /// `count` clips from stream `stream` (0 for train, 1 for validation).
    #[pyo3(signature = (count, stream=0))]
    fn generate(&self, count: usize, stream: u64) -> PyResult<Vec<PyEpisode>> {
        Ok(data::generate_planted(&self.inner, count, stream)
            .map_err(err)?
            .into_iter()
            .map(|p| PyEpisode {
                inner: p.episode,
                carrier_rows: p.carrier_rows,
            })
            .collect())
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.spec.channels
    }

    #[getter]
    fn verbs(&self) -> usize {
        self.inner.spec.verbs
    }

    #[getter]
    fn nouns(&self) -> usize {
        self.inner.spec.nouns
    }

    /// `verbs x nouns` action distribution, row-major.
    #[getter]
    fn action_distribution(&self) -> Vec<f64> {
        self.inner.action_distribution.clone()
    }

    #[getter]
    fn noun_prototypes(&self) -> Vec<Vec<f64>> {
        self.inner.noun_prototypes.clone()
    }

    fn nearest_noun(&self, x: Vec<f64>) -> usize {
        data::nearest_prototype(&x, &self.inner.noun_prototypes)
    }
}

/// Parameters plus the variant they run under and the training action prior.
#[pyclass(name = "Model", module = "sap_py")]
struct PyModel {
    inner: ModelFile,
}

#[pymethods]
impl PyModel {
    /// Fresh parameters: uniform(-1/sqrt(C), 1/sqrt(C)) weights, zero biases.
    #[new]
    #[pyo3(signature = (channels, verbs, nouns, variant="full", seed=0, attention_scale=None))]
    fn new(
        channels: usize,
        verbs: usize,
        nouns: usize,
        variant: &str,
        seed: u64,
        attention_scale: Option<f64>,
    ) -> PyResult<Self> {
        let dims = ModelDims {
            channels,
            verbs,
            nouns,
        };
        if channels == 0 || verbs == 0 || nouns == 0 {
            return Err(err("channels, verbs and nouns must be positive"));
        }
        Ok(Self {
            inner: ModelFile {
                variant: self::variant(variant)?,
                sap_config: SapConfig { attention_scale },
                params: init_params(dims, seed),
                prior: ActionPrior::flat(verbs, nouns),
            },
        })
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.variant.name()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.params.num_scalars()
    }

    /// SGD with momentum; returns the mean total loss of every epoch. The
    /// action prior is re-estimated from the training labels.
    #[pyo3(signature = (episodes, epochs=20, learning_rate=0.1, momentum=0.9, weight_decay=1e-4, batch_size=32, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        episodes: Vec<PyRef<'_, PyEpisode>>,
        epochs: usize,
        learning_rate: f64,
        momentum: f64,
        weight_decay: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let eps = unwrap_episodes(&episodes);
        let cfg = TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            momentum,
            weight_decay,
            seed,
        };
        let m = &mut self.inner;
        let metrics = fit(&eps, &mut m.params, m.variant, &m.sap_config, &cfg).map_err(err)?;
        let labels: Vec<Labels> = eps.iter().map(|e| e.labels).collect();
        m.prior = ActionPrior::estimate(&labels, m.params.dims.verbs, m.params.dims.nouns).map_err(err)?;
        Ok(metrics.iter().map(|e| e.total_loss).collect())
    }

    /// Forward pass on one clip: logits, per-branch attention weights and gates.
    fn infer<'py>(&self, py: Python<'py>, episode: PyRef<'_, PyEpisode>) -> PyResult<Bound<'py, PyDict>> {
        let m = &self.inner;
        let out = infer(&m.params, episode.inner.inputs(), m.variant, &m.sap_config).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("verb_logits", out.verb_logits)?;
        d.set_item("noun_logits", out.noun_logits)?;
        d.set_item("verb_attention", out.verb.attention_weights)?;
        d.set_item("noun_attention", out.noun.attention_weights)?;
        d.set_item("verb_gate", out.verb.gate)?;
        d.set_item("noun_gate", out.noun.gate)?;
        d.set_item("fallback", out.fallback)?;
        Ok(d)
    }

    /// Top-k accuracies as `{k: {"verb", "noun", "action", "action_raw"}}`.
    #[pyo3(signature = (episodes, ks=vec![1, 5]))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        episodes: Vec<PyRef<'_, PyEpisode>>,
        ks: Vec<usize>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let m = &self.inner;
        let e = evaluate(&m.params, &unwrap_episodes(&episodes), &m.prior, m.variant, &m.sap_config, &ks).map_err(err)?;
        let d = PyDict::new(py);
        for t in &e.topk {
            let row = PyDict::new(py);
            row.set_item("verb", t.verb)?;
            row.set_item("noun", t.noun)?;
            row.set_item("action", t.action)?;
            row.set_item("action_raw", t.action_raw)?;
            d.set_item(t.k, row)?;
        }
        Ok(d)
    }

    /// Per-row attention of the `full` path, most attended noun row first.
    /// Empty when the clip has no detections.
    fn dump_attention<'py>(&self, py: Python<'py>, episode: PyRef<'_, PyEpisode>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let rep = harness::dump_attention(&self.inner.params, &episode.inner, &self.inner.sap_config).map_err(err)?;
        rep.rows
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("row", r.row)?;
                d.set_item("frame_index", r.frame_index)?;
                d.set_item("confidence", r.confidence)?;
                d.set_item("noun_weight", r.noun_weight)?;
                d.set_item("verb_weight", r.verb_weight)?;
                Ok(d)
            })
            .collect()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        harness::save_model(&self.inner, &path).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: harness::load_model(&path).map_err(err)?,
        })
    }

    /// Parameter tensors by name, flattened row-major.
    fn parameters<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (name, t) in sap_core::sap::PARAM_NAMES.iter().zip(self.inner.params.tensors()) {
            d.set_item(*name, t.data().to_vec())?;
        }
        Ok(d)
    }
}

/// Finite-difference check of every primitive and the composed loss.
#[pyfunction]
#[pyo3(signature = (tolerance=1e-4, step=1e-6, seeds=vec![0, 1, 2], inject_sigmoid_fault=false))]
fn gradcheck<'py>(
    py: Python<'py>,
    tolerance: f64,
    step: f64,
    seeds: Vec<u64>,
    inject_sigmoid_fault: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let report = harness::run_gradcheck_suite(&GradcheckOptions {
        tolerance,
        step,
        seeds,
        fault: inject_sigmoid_fault.then_some(Fault::SigmoidDerivative),
    });
    let worst = PyDict::new(py);
    for c in report.components() {
        worst.set_item(c, report.worst(c))?;
    }
    let failures: Vec<(&str, u64)> = report.failures().iter().map(|f| (f.component, f.seed)).collect();
    let d = PyDict::new(py);
    d.set_item("passed", report.passed())?;
    d.set_item("worst", worst)?;
    d.set_item("failures", failures)?;
    d.set_item("report", report.render())?;
    Ok(d)
}

/// Runs the ablation ladder; keyword arguments are run-config keys.
/// Returns `(csv, summary)`.
#[pyfunction]
#[pyo3(signature = (**kwargs))]
fn ablate(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<(String, String)> {
    let cfg = config_from(kwargs)?;
    let report = harness::run_ablation(&cfg).map_err(err)?;
    Ok((report.csv(), report.summary.render()))
}

/// Keys accepted by `World`, `ablate` and config files, in CLI flag spelling.
#[pyfunction]
fn config_keys() -> Vec<&'static str> {
    harness::CONFIG_KEYS.to_vec()
}

#[pyfunction]
fn variants() -> Vec<&'static str> {
    AblationVariant::ALL.iter().map(|v| v.name()).collect()
}

#[pyfunction]
fn write_bank_file(path: PathBuf, episodes: Vec<PyRef<'_, PyEpisode>>, frames: usize, per_frame: usize, verbs: usize, nouns: usize) -> PyResult<()> {
    let eps = unwrap_episodes(&episodes);
    let channels = eps.first().map(|e| e.verb_feature.len()).unwrap_or(0);
    let dims = BankDims {
        channels,
        verbs,
        nouns,
        frames,
        per_frame,
    };
    data::write_bank_file(&path, &BankDataset { dims, episodes: eps }).map_err(err)
}

#[pyfunction]
fn read_bank_file(path: PathBuf) -> PyResult<Vec<PyEpisode>> {
    Ok(data::read_bank_file(&path)
        .map_err(err)?
        .episodes
        .into_iter()
        .map(|e| PyEpisode {
            inner: e,
            carrier_rows: Vec::new(),
        })
        .collect())
}

#[pymodule]
fn sap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SapException", m.py().get_type::<SapException>())?;
    m.add_class::<PyEpisode>()?;
    m.add_class::<PyWorld>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(ablate, m)?)?;
    m.add_function(wrap_pyfunction!(config_keys, m)?)?;
    m.add_function(wrap_pyfunction!(variants, m)?)?;
    m.add_function(wrap_pyfunction!(write_bank_file, m)?)?;
    m.add_function(wrap_pyfunction!(read_bank_file, m)?)?;
    Ok(())
}
