//! Python bindings for the ialcpg reading-comprehension model.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use ialcpg::corpus::{self, Split, Stopwords};
use ialcpg::metrics;
use ialcpg::model;
use ialcpg::synthetic;
use ialcpg::trainer::{self, Ablation, TrainError};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn train_err(e: TrainError) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        4 => PyArithmeticError::new_err(e.to_string()),
        _ => PyIOError::new_err(e.to_string()),
    }
}

/// Serializes `value` to JSON and hands it to Python's `json.loads`.
fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn split_tokens(texts: &[String]) -> Vec<Vec<String>> {
    texts.iter().map(|t| metrics::answer_tokens(t)).collect()
}

fn split_refs(refs: &[Vec<String>]) -> Vec<Vec<Vec<String>>> {
    refs.iter().map(|r| split_tokens(r)).collect()
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    corpus::tokenize(text)
}

#[pyfunction]
fn normalize_answer(text: &str) -> String {
    metrics::normalize_answer(text)
}

/// Corpus-level BLEU-n over answer strings; each hypothesis has a list of references.
#[pyfunction]
#[pyo3(signature = (hypotheses, references, max_n = 4))]
fn bleu(hypotheses: Vec<String>, references: Vec<Vec<String>>, max_n: usize) -> PyResult<f64> {
    metrics::bleu(&split_tokens(&hypotheses), &split_refs(&references), max_n).map_err(value_err)
}

#[pyfunction]
fn rouge_l(hypotheses: Vec<String>, references: Vec<Vec<String>>) -> PyResult<f64> {
    metrics::rouge_l(&split_tokens(&hypotheses), &split_refs(&references)).map_err(value_err)
}

/// Returns a dict with bleu1, bleu4 and rouge_l.
#[pyfunction]
fn score<'py>(py: Python<'py>, hypotheses: Vec<String>, references: Vec<Vec<String>>) -> PyResult<Bound<'py, PyAny>> {
    let report = metrics::MetricReport::from_text(&hypotheses, &references).map_err(value_err)?;
    to_py(py, &report)
}

#[pyclass(module = "ialcpg_py", skip_from_py_object)]
#[derive(Clone)]
struct Vocab {
    inner: corpus::Vocab,
}

#[pymethods]
impl Vocab {
    #[new]
    fn new(tokens: Vec<String>) -> PyResult<Self> {
        Ok(Vocab {
            inner: corpus::Vocab::from_ordered(tokens).map_err(value_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.size()
    }

    fn __contains__(&self, token: &str) -> bool {
        self.inner.contains(token)
    }

    fn id(&self, token: &str) -> Option<usize> {
        self.inner.id(token)
    }

    fn token(&self, id: usize) -> Option<String> {
        self.inner.token(id).map(str::to_string)
    }

    fn tokens(&self) -> Vec<String> {
        self.inner.tokens().to_vec()
    }

    fn encode(&self, tokens: Vec<String>) -> Vec<usize> {
        self.inner.encode(&tokens)
    }
}

#[pyclass(module = "ialcpg_py", skip_from_py_object)]
#[derive(Clone)]
struct Dataset {
    inner: corpus::Dataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Dataset {
            inner: corpus::Dataset::load(path).map_err(value_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let file = std::fs::File::create(path)?;
        self.inner.write(std::io::BufWriter::new(file))?;
        Ok(())
    }

    fn __len__(&self) -> usize {
        self.inner.examples.len()
    }

    fn story_ids(&self) -> Vec<String> {
        self.inner.stories.iter().map(|s| s.story_id.clone()).collect()
    }

    /// Example ids of one split: "train", "dev" or "test".
    fn example_ids(&self, split: &str) -> PyResult<Vec<String>> {
        let split: Split = split.parse().map_err(value_err)?;
        Ok(self.inner.split(split).map(|e| e.example_id.clone()).collect())
    }

    /// `(question tokens, [answer 1, answer 2])` for one example.
    fn example(&self, example_id: &str) -> PyResult<(Vec<String>, Vec<String>)> {
        let ex = self
            .inner
            .example(example_id)
            .ok_or_else(|| PyKeyError::new_err(example_id.to_string()))?;
        Ok((ex.question_tokens.clone(), ex.answers.iter().map(|a| a.join(" ")).collect()))
    }

    fn input_vocab(&self) -> PyResult<Vocab> {
        Ok(Vocab {
            inner: self.inner.input_vocab().map_err(value_err)?,
        })
    }
}

#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn copy_corpus(seed: u64) -> Dataset {
    Dataset {
        inner: synthetic::copy_corpus(seed),
    }
}

#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn generate_corpus(seed: u64) -> Dataset {
    Dataset {
        inner: synthetic::generate_corpus(seed),
    }
}

#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn mixed_corpus(seed: u64) -> Dataset {
    Dataset {
        inner: synthetic::mixed_corpus(seed),
    }
}

#[pyclass(module = "ialcpg_py", skip_from_py_object)]
#[derive(Clone)]
struct TrainConfig {
    inner: trainer::TrainConfig,
}

#[pymethods]
impl TrainConfig {
    /// Defaults, optionally overridden by a TOML document.
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(text) => trainer::TrainConfig::from_toml(text).map_err(train_err)?,
            None => trainer::TrainConfig::default(),
        };
        Ok(TrainConfig { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn with_ablation(&self, name: &str) -> PyResult<Self> {
        let ablation: Ablation = name.parse().map_err(value_err)?;
        Ok(TrainConfig {
            inner: self.inner.clone().with_ablation(ablation),
        })
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    #[setter]
    fn set_epochs(&mut self, epochs: usize) {
        self.inner.epochs = epochs;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }
}

#[pyfunction]
fn ablations() -> Vec<&'static str> {
    Ablation::ALL.iter().map(|a| a.name()).collect()
}

#[pyclass(module = "ialcpg_py")]
struct Model {
    inner: model::Model,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: model::Model::load(&dir).map_err(value_err)?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(&dir).map_err(value_err)
    }

    /// Greedy answer for a tokenized context and question, with the
    /// per-step copy probability.
    #[pyo3(signature = (context, question, max_len = 8))]
    fn decode(&self, context: Vec<String>, question: Vec<String>, max_len: usize) -> PyResult<(Vec<String>, Vec<f64>)> {
        let d = self.inner.greedy_decode(&context, &question, max_len).map_err(value_err)?;
        Ok((d.tokens, d.steps.iter().map(|s| s.switch).collect()))
    }
}

#[pyclass(module = "ialcpg_py")]
struct Trainer {
    inner: trainer::Trainer,
}

#[pymethods]
impl Trainer {
    #[new]
    #[pyo3(signature = (config, dataset, stopwords = None))]
    fn new(config: &TrainConfig, dataset: &Dataset, stopwords: Option<Vec<String>>) -> PyResult<Self> {
        let stopwords = match stopwords {
            Some(words) => Stopwords::parse(&words.join("\n")),
            None => Stopwords::default(),
        };
        Ok(Trainer {
            inner: trainer::Trainer::new(config.inner.clone(), &dataset.inner, stopwords).map_err(train_err)?,
        })
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }

    /// One epoch of training followed by dev evaluation; returns the epoch log.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let (log, _) = self.inner.step().map_err(train_err)?;
        to_py(py, &log)
    }

    /// Runs the remaining configured epochs, writing checkpoints under `out` if given.
    #[pyo3(signature = (out = None))]
    fn run<'py>(&mut self, py: Python<'py>, out: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
        let logs = self.inner.run(out.as_deref()).map_err(train_err)?;
        to_py(py, &logs)
    }

    /// Dev metrics and predictions as `(report, {example_id: answer})`.
    fn evaluate<'py>(&mut self, py: Python<'py>) -> PyResult<(Bound<'py, PyAny>, HashMap<String, String>)> {
        let eval = self.inner.evaluate_dev().map_err(train_err)?;
        let preds = eval.predictions.into_iter().map(|p| (p.example_id, p.answer)).collect();
        Ok((to_py(py, &eval.report)?, preds))
    }

    fn checkpoint(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.checkpoint(&dir).map_err(train_err)
    }

    fn model(&self) -> Model {
        Model {
            inner: self.inner.model.clone(),
        }
    }
}

/// Finite-difference check of the composed micro model; returns
/// `(passed, max relative error, entries checked)`.
#[pyfunction]
#[pyo3(signature = (epsilon = 1e-5, tolerance = 1e-4))]
fn gradcheck(epsilon: f64, tolerance: f64) -> PyResult<(bool, f64, usize)> {
    let report = model::micro_grad_check(epsilon, tolerance).map_err(value_err)?;
    let checked = report.params.iter().map(|p| p.checked).sum();
    Ok((report.passed(), report.max_rel_error(), checked))
}

#[pymodule]
fn ialcpg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_answer, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(copy_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(mixed_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(ablations, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_class::<Vocab>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<TrainConfig>()?;
    m.add_class::<Model>()?;
    m.add_class::<Trainer>()?;
    Ok(())
}
