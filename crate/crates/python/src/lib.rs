//! Python bindings for `seglearn`.

use std::path::PathBuf;

use pyo3::exceptions::{PyKeyError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use seglearn::config::{apply, to_config_string};
use seglearn::corpus::{normalize_with, parse_bakeoff_str, score_files};
use seglearn::decoder::segment_tokens;
use seglearn::{NormalizeMode, Segmentation, Sentence};

fn to_py(e: seglearn::Error) -> PyErr {
    match e {
        seglearn::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

/// Training hyperparameters. Keyword arguments use the config-file keys.
#[pyclass(name = "TrainConfig", skip_from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: seglearn::TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = Self {
            inner: seglearn::TrainConfig::default(),
        };
        if let Some(kwargs) = kwargs {
            for (k, v) in kwargs.iter() {
                cfg.set(&k.extract::<String>()?, &v)?;
            }
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let text = if value.is_none() {
            String::new()
        } else {
            value.str()?.to_string()
        };
        apply(&mut self.inner, key, &text).map_err(PyValueError::new_err)?;
        self.inner.validate().map_err(to_py)
    }

    fn __getitem__<'py>(&self, py: Python<'py>, key: &str) -> PyResult<Bound<'py, PyAny>> {
        let v = serde_json::to_value(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))?;
        match v.get(key) {
            Some(item) => json_to_py(py, item),
            None => Err(PyKeyError::new_err(key.to_string())),
        }
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let v = serde_json::to_value(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))?;
        json_to_py(py, &v)
    }

    fn to_config_string(&self) -> String {
        to_config_string(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "TrainConfig(d={}, H={}, alpha={}, mu={}, lambda={}, p={}, w={}, k={}, epochs={}, seed={})",
            self.inner.dim,
            self.inner.hidden,
            self.inner.alpha,
            self.inner.mu,
            self.inner.lambda,
            self.inner.dropout,
            self.inner.max_word_len,
            self.inner.beam,
            self.inner.epochs,
            self.inner.seed
        )
    }
}

/// A trained segmentation model.
#[pyclass(name = "Model", skip_from_py_object)]
struct PyModel {
    inner: seglearn::Model,
}

impl PyModel {
    fn sentence(&self, text: &str) -> Sentence {
        Sentence::from_raw(text, 1, self.inner.config.normalize)
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: seglearn::Model::load(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    /// Splits one sentence into words, keeping the original surface forms.
    #[pyo3(signature = (text, beam = 4, max_word_len = None))]
    fn segment(&self, py: Python<'_>, text: &str, beam: usize, max_word_len: Option<usize>) -> PyResult<Vec<String>> {
        let sentence = self.sentence(text);
        if sentence.is_empty() {
            return Ok(Vec::new());
        }
        let w = max_word_len.unwrap_or(self.inner.config.max_word_len);
        let best = py
            .detach(|| segment_tokens(&self.inner, &sentence.tokens, beam, w))
            .map_err(to_py)?;
        Ok(best
            .segmentation
            .spans()
            .iter()
            .map(|&span| sentence.surface(span))
            .collect())
    }

    /// Sentence score of a given split of `"".join(words)`.
    fn score(&self, words: Vec<String>) -> PyResult<f64> {
        let sentence = Sentence::from_gold(&words.join("  "), 1, self.inner.config.normalize);
        let gold = sentence
            .gold
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("no words given"))?;
        let inputs = self.inner.inputs(&self.inner.vocab.ids(&sentence.tokens));
        self.inner.score(&inputs, gold).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.config.dim
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.inner.config.hidden
    }

    #[getter]
    fn max_word_len(&self) -> usize {
        self.inner.config.max_word_len
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab.len()
    }

    fn __repr__(&self) -> String {
        let c = &self.inner.config;
        format!(
            "Model(d={}, H={}, w={}, composition={}, vocab={})",
            c.dim,
            c.hidden,
            c.max_word_len,
            c.composition.name(),
            self.inner.vocab.len()
        )
    }
}

/// Trains on bakeoff-format text (one sentence per line, words separated by
/// spaces). Returns the model and one dict per epoch.
#[pyfunction]
#[pyo3(signature = (corpus, config = None))]
fn train<'py>(
    py: Python<'py>,
    corpus: &str,
    config: Option<PyRef<'_, PyTrainConfig>>,
) -> PyResult<(PyModel, Bound<'py, PyList>)> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let corpus = parse_bakeoff_str(corpus, true, cfg.normalize);
    let (model, report) = py.detach(|| seglearn::train(&corpus, &cfg)).map_err(to_py)?;
    let epochs = PyList::empty(py);
    for line in report.to_jsonl(false).lines() {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| PyValueError::new_err(e.to_string()))?;
        epochs.append(json_to_py(py, &v)?)?;
    }
    Ok((PyModel { inner: model }, epochs))
}

/// Token strings of `text` after normalization (`split`, `single` or `off`).
#[pyfunction]
#[pyo3(signature = (text, mode = "split"))]
fn normalize(text: &str, mode: &str) -> PyResult<Vec<String>> {
    let mode = NormalizeMode::from_name(mode).ok_or_else(|| PyValueError::new_err(format!("unknown mode {mode:?}")))?;
    Ok(normalize_with(text, mode).tokens.iter().map(|t| t.as_string()).collect())
}

/// Word precision, recall and F1 of segmented lines against gold lines.
#[pyfunction]
fn score_prf(gold: Vec<String>, pred: Vec<String>) -> PyResult<(f64, f64, f64)> {
    let g = parse_bakeoff_str(&gold.join("\n"), true, NormalizeMode::Off);
    let p = parse_bakeoff_str(&pred.join("\n"), true, NormalizeMode::Off);
    let r = score_files(&g, &p).map_err(to_py)?;
    Ok((r.precision, r.recall, r.f1))
}

/// `mu` times the number of characters whose word differs, given word lengths.
#[pyfunction]
fn margin_loss(gold: Vec<usize>, pred: Vec<usize>, mu: f64) -> PyResult<f64> {
    let g = Segmentation::from_word_lengths(&gold).map_err(to_py)?;
    let p = Segmentation::from_word_lengths(&pred).map_err(to_py)?;
    seglearn::margin_loss(&g, &p, mu).map_err(to_py)
}

#[pymodule]
fn pyseglearn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(score_prf, m)?)?;
    m.add_function(wrap_pyfunction!(margin_loss, m)?)?;
    Ok(())
}
