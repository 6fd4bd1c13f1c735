//! Python bindings: vocabularies, encoders, prompt datasets, training,
//! zero-shot evaluation and the synthetic benchmark.
//!
//! Structured values (configs, reports) cross the boundary as plain Python
//! dicts and lists.

use std::collections::BTreeMap;
use std::path::PathBuf;

use protext_core as core;
use protext_core::numerics::Tensor;
use protext_core::prompt_data::{
    assemble_dataset, assemble_handcrafted, ClassRecord, GeneratedOutputs, PairSource, PromptDataset,
    ATTRIBUTE_TEMPLATES, CLIP_80_TEMPLATES, DEFAULT_INPUT_TEMPLATE,
};
use protext_core::synthetic::{default_train_config, run_transfer, SyntheticWorld, SyntheticWorldConfig};
use protext_core::text_encoder::{encode, encode_prompted, nearest_vocab_words, tokenize, EncoderConfig, EncoderWeights, Vocabulary};
use protext_core::trainer::{train, PromptCheckpoint, TrainConfig};
use protext_core::zeroshot_eval::{
    build_head, build_head_ensemble, classify, evaluate, plain_template_head, ClassifierHead, ImageFeatureSet,
};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: core::Error) -> PyErr {
    match e {
        core::Error::NonFinite(_) => PyArithmeticError::new_err(e.to_string()),
        core::Error::Io { .. } | core::Error::Llm(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

/// Serializable value -> Python object via JSON.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

/// Python object -> deserializable value via JSON.
fn decode<T: DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = PyModule::import(py, "json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Like [`decode`], but `None` (or no argument) gives the default.
fn from_py<T: DeserializeOwned + Default>(py: Python<'_>, obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    match obj {
        Some(o) if !o.is_none() => decode(py, o),
        _ => Ok(T::default()),
    }
}

/// `(word, distance)` pairs for one prompt vector.
type NeighborList = Vec<(String, f64)>;

fn class_records(names: &[String]) -> Vec<ClassRecord> {
    names.iter().enumerate().map(|(i, n)| ClassRecord::new(i as u32, n.as_str())).collect()
}

#[pyclass(name = "Vocabulary", module = "protext", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyVocabulary(Vocabulary);

#[pymethods]
impl PyVocabulary {
    /// Special tokens first, then `words` in order.
    #[staticmethod]
    #[pyo3(signature = (words, version = "py"))]
    fn from_words(words: Vec<String>, version: &str) -> PyResult<Self> {
        Vocabulary::from_words(version, &words).py().map(Self)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Vocabulary::load(&path).py().map(Self)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).py()
    }

    fn id(&self, word: &str) -> Option<u32> {
        self.0.id(word)
    }

    #[getter]
    fn tokens(&self) -> Vec<String> {
        self.0.tokens().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "EncoderWeights", module = "protext", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyEncoderWeights(EncoderWeights);

#[pymethods]
impl PyEncoderWeights {
    /// Seeded random weights; `config` is a dict of encoder settings (defaults to the toy encoder).
    #[staticmethod]
    #[pyo3(signature = (vocab_size, seed = 0, config = None))]
    fn random(py: Python<'_>, vocab_size: usize, seed: u64, config: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let cfg: EncoderConfig = match config {
            Some(c) if !c.is_none() => decode(py, c)?,
            _ => EncoderConfig::toy(),
        };
        EncoderWeights::random(&cfg, vocab_size, seed).py().map(Self)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        EncoderWeights::load(&path).py().map(Self)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).py()
    }

    fn fingerprint(&self) -> String {
        self.0.fingerprint()
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.config)
    }

    /// Unit-norm text feature of `text`, optionally through learned prompts.
    #[pyo3(signature = (text, vocab, checkpoint = None))]
    fn encode(&self, text: &str, vocab: &PyVocabulary, checkpoint: Option<&PyPromptCheckpoint>) -> PyResult<Vec<f64>> {
        let tokens = tokenize(text, &vocab.0, &self.0.config).py()?;
        let feature = match checkpoint {
            Some(c) => {
                c.0.verify(&self.0).py()?;
                encode_prompted(&tokens, &c.0.prompts, &self.0).py()?
            }
            None => encode(&tokens, &self.0).py()?,
        };
        Ok(feature.data().to_vec())
    }
}

#[pyclass(name = "PromptDataset", module = "protext", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPromptDataset(PromptDataset);

#[pymethods]
impl PyPromptDataset {
    /// `outputs` maps each class name to its descriptions.
    #[staticmethod]
    #[pyo3(signature = (outputs, template = DEFAULT_INPUT_TEMPLATE))]
    fn from_outputs(outputs: BTreeMap<String, Vec<String>>, template: &str) -> PyResult<Self> {
        let names: Vec<String> = outputs.keys().cloned().collect();
        let classes = class_records(&names);
        let widest = outputs.values().map(Vec::len).max().unwrap_or(0);
        let generated = GeneratedOutputs {
            per_class: outputs.into_values().enumerate().map(|(i, v)| (i as u32, v)).collect(),
            outputs_per_query: widest,
            query_count: 1,
            dropped: 0,
            source: PairSource::Llm,
        };
        assemble_dataset(&classes, template, generated, "python").py().map(Self)
    }

    /// Handcrafted templates: `kind` is "clip80" or "attribute".
    #[staticmethod]
    #[pyo3(signature = (class_names, kind = "clip80", template = DEFAULT_INPUT_TEMPLATE))]
    fn handcrafted(class_names: Vec<String>, kind: &str, template: &str) -> PyResult<Self> {
        let (templates, source): (&[&str], _) = match kind {
            "clip80" => (&CLIP_80_TEMPLATES, PairSource::Handcrafted80),
            "attribute" => (&ATTRIBUTE_TEMPLATES, PairSource::HandcraftedAttribute),
            other => return Err(PyValueError::new_err(format!("unknown template set {other:?}"))),
        };
        assemble_handcrafted(&class_records(&class_names), template, templates, source).py().map(Self)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        PromptDataset::load(&path).py().map(Self)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).py()
    }

    /// `(class_id, input, output)` triples.
    #[getter]
    fn pairs(&self) -> Vec<(u32, String, String)> {
        self.0.pairs.iter().map(|p| (p.class_id, p.input_text.clone(), p.output_text.clone())).collect()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.0.classes.iter().map(|c| c.name.clone()).collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "PromptCheckpoint", module = "protext", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPromptCheckpoint(PromptCheckpoint);

#[pymethods]
impl PyPromptCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        PromptCheckpoint::load(&path).py().map(Self)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).py()
    }

    #[getter]
    fn prompt_length(&self) -> usize {
        self.0.prompts.length
    }

    #[getter]
    fn prompt_depth(&self) -> usize {
        self.0.prompts.depth
    }

    #[getter]
    fn final_loss(&self) -> Option<f64> {
        self.0.final_loss
    }

    #[getter]
    fn encoder_fingerprint(&self) -> String {
        self.0.encoder_fingerprint.clone()
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.config)
    }

    /// Prompt vectors as nested lists, `[layer][row][column]`.
    #[getter]
    fn prompts(&self) -> Vec<Vec<Vec<f64>>> {
        self.0.prompts.layers.iter().map(|l| (0..l.rows()).map(|r| l.row(r).to_vec()).collect()).collect()
    }

    /// `k` nearest vocabulary words per prompt vector: `[layer][row]` lists of `(word, distance)`.
    #[pyo3(signature = (vocab, weights, k = 5))]
    fn nearest_words(
        &self,
        vocab: &PyVocabulary,
        weights: &PyEncoderWeights,
        k: usize,
    ) -> PyResult<Vec<Vec<NeighborList>>> {
        let table = nearest_vocab_words(&self.0.prompts, &weights.0, &vocab.0, k).py()?;
        Ok(table
            .into_iter()
            .map(|layer| layer.into_iter().map(|row| row.into_iter().map(|w| (w.word, w.distance)).collect()).collect())
            .collect())
    }
}

#[pyclass(name = "ImageFeatureSet", module = "protext", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyImageFeatureSet(ImageFeatureSet);

#[pymethods]
impl PyImageFeatureSet {
    #[new]
    #[pyo3(signature = (features, labels, class_names, normalized = false))]
    fn new(features: Vec<Vec<f64>>, labels: Vec<u32>, class_names: Vec<String>, normalized: bool) -> PyResult<Self> {
        let t = Tensor::from_rows(&features).py()?;
        ImageFeatureSet::new(t, labels, class_names, normalized).py().map(Self)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ImageFeatureSet::load(&path).py().map(Self)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).py()
    }

    #[getter]
    fn labels(&self) -> Vec<u32> {
        self.0.labels.clone()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.0.class_names.clone()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "SyntheticWorld", module = "protext", frozen, skip_from_py_object)]
struct PySyntheticWorld(SyntheticWorld);

#[pymethods]
impl PySyntheticWorld {
    /// `config` overrides world settings; `seed` derives the encoder and world seeds.
    #[new]
    #[pyo3(signature = (config = None, seed = 0))]
    fn new(py: Python<'_>, config: Option<&Bound<'_, PyAny>>, seed: u64) -> PyResult<Self> {
        let cfg: SyntheticWorldConfig = from_py(py, config)?;
        SyntheticWorld::build(&cfg.reseeded(seed)).py().map(Self)
    }

    #[getter]
    fn vocab(&self) -> PyVocabulary {
        PyVocabulary(self.0.vocab.clone())
    }

    #[getter]
    fn weights(&self) -> PyEncoderWeights {
        PyEncoderWeights(self.0.weights.clone())
    }

    #[getter]
    fn dataset(&self) -> PyPromptDataset {
        PyPromptDataset(self.0.dataset.clone())
    }

    #[getter]
    fn images(&self) -> PyImageFeatureSet {
        PyImageFeatureSet(self.0.images.clone())
    }

    /// Trains prompts on base classes; returns `(report dict, checkpoint)`.
    #[pyo3(signature = (train_config = None, seed = 0))]
    fn run_transfer<'py>(
        &self,
        py: Python<'py>,
        train_config: Option<&Bound<'py, PyAny>>,
        seed: u64,
    ) -> PyResult<(Bound<'py, PyAny>, PyPromptCheckpoint)> {
        let cfg = train_config_or(py, train_config, default_train_config(seed))?;
        let run = py.detach(|| run_transfer(&self.0, &cfg)).py()?;
        Ok((to_py(py, &run.report)?, PyPromptCheckpoint(run.checkpoint)))
    }
}

fn train_config_or(py: Python<'_>, obj: Option<&Bound<'_, PyAny>>, fallback: TrainConfig) -> PyResult<TrainConfig> {
    match obj {
        Some(o) if !o.is_none() => {
            // Keys absent from the dict keep the fallback's values.
            let mut merged = serde_json::to_value(&fallback).map_err(|e| PyValueError::new_err(e.to_string()))?;
            let given: serde_json::Value = decode(py, o)?;
            let (Some(m), Some(g)) = (merged.as_object_mut(), given.as_object()) else {
                return Err(PyValueError::new_err("train config must be a dict"));
            };
            for (k, v) in g {
                m.insert(k.clone(), v.clone());
            }
            serde_json::from_value(merged).map_err(|e| PyValueError::new_err(e.to_string()))
        }
        _ => Ok(fallback),
    }
}

/// Trains prompts; returns `(checkpoint, per-step losses)`.
#[pyfunction]
#[pyo3(name = "train", signature = (dataset, vocab, weights, config = None))]
fn py_train(
    py: Python<'_>,
    dataset: &PyPromptDataset,
    vocab: &PyVocabulary,
    weights: &PyEncoderWeights,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<(PyPromptCheckpoint, Vec<f64>)> {
    let cfg = train_config_or(py, config, TrainConfig::default())?;
    let run = py.detach(|| train(&dataset.0, &vocab.0, &weights.0, &cfg)).py()?;
    Ok((PyPromptCheckpoint(run.checkpoint), run.trace.losses()))
}

fn head_for(
    kind: &str,
    images: &ImageFeatureSet,
    vocab: &Vocabulary,
    weights: &EncoderWeights,
    checkpoint: Option<&PyPromptCheckpoint>,
    dataset: Option<&PyPromptDataset>,
    temperature: f64,
) -> PyResult<ClassifierHead> {
    let classes = class_records(&images.class_names);
    let head = match (kind, checkpoint, dataset) {
        ("prompted", Some(c), _) => build_head(&classes, &c.0, vocab, weights, DEFAULT_INPUT_TEMPLATE).py()?,
        ("plain", _, _) => plain_template_head(&classes, vocab, weights, DEFAULT_INPUT_TEMPLATE).py()?,
        ("ensembled", _, Some(d)) => {
            if d.0.classes.iter().map(|c| &c.name).ne(images.class_names.iter()) {
                return Err(PyValueError::new_err("dataset classes must match the image class names in order"));
            }
            build_head_ensemble(&d.0, vocab, weights).py()?
        }
        ("prompted", None, _) => return Err(PyValueError::new_err("the prompted head needs a checkpoint")),
        ("ensembled", _, None) => return Err(PyValueError::new_err("the ensembled head needs a dataset")),
        (other, _, _) => {
            return Err(PyValueError::new_err(format!("unknown head {other:?}, expected prompted, plain or ensembled")))
        }
    };
    head.with_temperature(temperature).py()
}

/// Zero-shot report dict for `images` under the chosen head.
#[pyfunction]
#[pyo3(name = "evaluate", signature = (images, vocab, weights, head = "prompted", checkpoint = None, dataset = None, temperature = 100.0))]
#[allow(clippy::too_many_arguments)]
fn py_evaluate<'py>(
    py: Python<'py>,
    images: &PyImageFeatureSet,
    vocab: &PyVocabulary,
    weights: &PyEncoderWeights,
    head: &str,
    checkpoint: Option<&PyPromptCheckpoint>,
    dataset: Option<&PyPromptDataset>,
    temperature: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let h = head_for(head, &images.0, &vocab.0, &weights.0, checkpoint, dataset, temperature)?;
    let (report, _) = evaluate(&images.0, &h, head).py()?;
    to_py(py, &report)
}

/// `(probabilities, predictions)` for `images` under the chosen head.
#[pyfunction]
#[pyo3(name = "classify", signature = (images, vocab, weights, head = "prompted", checkpoint = None, dataset = None, temperature = 100.0))]
#[allow(clippy::too_many_arguments)]
fn py_classify(
    images: &PyImageFeatureSet,
    vocab: &PyVocabulary,
    weights: &PyEncoderWeights,
    head: &str,
    checkpoint: Option<&PyPromptCheckpoint>,
    dataset: Option<&PyPromptDataset>,
    temperature: f64,
) -> PyResult<(Vec<Vec<f64>>, Vec<u32>)> {
    let h = head_for(head, &images.0, &vocab.0, &weights.0, checkpoint, dataset, temperature)?;
    let c = classify(&images.0, &h).py()?;
    let p = &c.probabilities;
    Ok(((0..p.rows()).map(|i| p.row(i).to_vec()).collect(), c.predictions))
}

#[pyfunction]
fn harmonic_mean(base: f64, novel: f64) -> PyResult<f64> {
    core::zeroshot_eval::harmonic_mean(base, novel).py()
}

#[pyfunction]
fn aggregate(accuracies: Vec<f64>) -> PyResult<f64> {
    core::zeroshot_eval::aggregate(&accuracies).py()
}

#[pymodule]
#[pyo3(name = "protext")]
fn protext(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVocabulary>()?;
    m.add_class::<PyEncoderWeights>()?;
    m.add_class::<PyPromptDataset>()?;
    m.add_class::<PyPromptCheckpoint>()?;
    m.add_class::<PyImageFeatureSet>()?;
    m.add_class::<PySyntheticWorld>()?;
    m.add_function(wrap_pyfunction!(py_train, m)?)?;
    m.add_function(wrap_pyfunction!(py_evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(py_classify, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_mean, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add("DEFAULT_INPUT_TEMPLATE", DEFAULT_INPUT_TEMPLATE)?;
    Ok(())
}
