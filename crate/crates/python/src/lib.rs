//! Python bindings for ctxprobe.

use ctxprobe::corpus::{self, PhrasePair, ScanOptions};
use ctxprobe::info_metrics::{self as im, AnswerDistribution, ConditionalTable, JointDistribution, PriorMode};
use ctxprobe::kg::{KnowledgeGraph, Triple};
use ctxprobe::pipeline::{self, ApplicationConfig, ConfigOverrides, ExperimentConfig, ProviderKind, ScoreOutput, SuiteOptions};
use ctxprobe::stats::{self, AgreementLabel, Tail};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

create_exception!(ctxprobe, CtxprobeError, PyException);

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pipeline_err(e: pipeline::PipelineError) -> PyErr {
    CtxprobeError::new_err((e.to_string(), e.exit_code()))
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any()
            } else if let Some(u) = n.as_u64() {
                u.into_pyobject(py)?.into_any()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any()
            }
        }
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for it in items {
                list.append(json_to_py(py, it)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let d = PyDict::new(py);
            for (k, it) in map {
                d.set_item(k, json_to_py(py, it)?)?;
            }
            d.into_any()
        }
    })
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    json_to_py(py, &serde_json::to_value(v).map_err(value_err)?)
}

fn dist(p: Vec<f64>) -> PyResult<AnswerDistribution> {
    AnswerDistribution::new(p).map_err(value_err)
}

fn parse_tail(s: &str) -> PyResult<Tail> {
    match s {
        "greater" => Ok(Tail::Greater),
        "two_sided" | "two-sided" => Ok(Tail::TwoSided),
        other => Err(value_err(format!("unknown tail `{other}`"))),
    }
}

/// A normalized distribution over a fixed answer vocabulary.
#[pyclass(name = "Distribution", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyDistribution {
    inner: AnswerDistribution,
}

#[pymethods]
impl PyDistribution {
    #[new]
    fn new(weights: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: dist(weights)? })
    }

    #[staticmethod]
    fn from_logprobs(logprobs: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: AnswerDistribution::from_logprobs(&logprobs).map_err(value_err)? })
    }

    #[getter]
    fn probs(&self) -> Vec<f64> {
        self.inner.probs().to_vec()
    }

    fn entropy(&self) -> f64 {
        im::entropy(&self.inner)
    }

    fn argmax(&self) -> usize {
        self.inner.argmax()
    }

    fn kl(&self, other: &PyDistribution) -> PyResult<f64> {
        im::kl_divergence(&self.inner, &other.inner).map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.inner.vocab_size()
    }

    fn __repr__(&self) -> String {
        format!("Distribution({:?})", self.inner.probs())
    }
}

#[pyfunction]
fn entropy(p: Vec<f64>) -> PyResult<f64> {
    Ok(im::entropy(&dist(p)?))
}

#[pyfunction]
fn kl_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    im::kl_divergence(&dist(p)?, &dist(q)?).map_err(value_err)
}

#[pyfunction]
fn persuasion_score(cond: Vec<f64>, prior: Vec<f64>) -> PyResult<f64> {
    im::persuasion_score(&dist(cond)?, &dist(prior)?).map_err(value_err)
}

fn table(rows: Vec<Vec<f64>>, weights: Option<Vec<f64>>) -> PyResult<ConditionalTable> {
    let rows = rows.into_iter().enumerate().map(|(i, r)| Ok((format!("c{i}"), dist(r)?))).collect::<PyResult<Vec<_>>>()?;
    match weights {
        Some(w) => ConditionalTable::with_weights(rows, w),
        None => ConditionalTable::uniform(rows),
    }
    .map_err(value_err)
}

/// Mutual information between context and answer for one query; each row
/// is p(A | c, q).
#[pyfunction]
#[pyo3(signature = (rows, weights=None))]
fn susceptibility_score(rows: Vec<Vec<f64>>, weights: Option<Vec<f64>>) -> PyResult<f64> {
    Ok(im::susceptibility_score(&table(rows, weights)?))
}

#[pyfunction]
#[pyo3(signature = (rows, weights=None))]
fn marginal(rows: Vec<Vec<f64>>, weights: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(table(rows, weights)?.marginal().probs().to_vec())
}

#[pyfunction]
fn hpmi<'py>(py: Python<'py>, joint: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
    let j = JointDistribution::new(&joint).map_err(value_err)?;
    let rep = im::hpmi_decompositions(&j);
    let d = PyDict::new(py);
    let rows = PyList::empty(py);
    for r in &rep.rows {
        let row = PyDict::new(py);
        row.set_item("x", r.x)?;
        row.set_item("p_x", r.p_x)?;
        row.set_item("hpmi", r.hpmi)?;
        row.set_item("via_x_entropies", r.via_x_entropies)?;
        row.set_item("via_y_entropies", r.via_y_entropies)?;
        rows.append(row)?;
    }
    d.set_item("rows", rows)?;
    d.set_item("expected_hpmi", rep.expected_hpmi)?;
    d.set_item("excluded_x", rep.excluded_x)?;
    d.set_item("excluded_y", rep.excluded_y)?;
    d.set_item("max_residual_x", rep.max_residual_x)?;
    d.set_item("max_residual_y", rep.max_residual_y)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (a, b, tail="greater", k=10_000, seed=0))]
fn permutation_test<'py>(py: Python<'py>, a: Vec<f64>, b: Vec<f64>, tail: &str, k: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let r = stats::permutation_test(&a, &b, parse_tail(tail)?, k, seed).map_err(value_err)?;
    to_py(py, &r)
}

/// Benjamini-Hochberg adjusted p-values and reject flags.
#[pyfunction]
#[pyo3(signature = (p_values, alpha=0.05))]
fn bh_correct(p_values: Vec<f64>, alpha: f64) -> PyResult<(Vec<f64>, Vec<bool>)> {
    stats::bh_correct(&p_values, alpha).map_err(value_err)
}

#[pyfunction]
fn effect_size(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    stats::effect_size(&a, &b).map_err(value_err)
}

#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    stats::spearman(&x, &y).map_err(value_err)
}

#[pyfunction]
fn classify_answer(generated: &str, context_answer: &str, original_answer: &str) -> &'static str {
    stats::classify_answer(generated, context_answer, original_answer).as_str()
}

#[pyfunction]
fn memorization_ratio(labels: Vec<String>) -> PyResult<f64> {
    let labels = labels
        .iter()
        .map(|l| match l.as_str() {
            "context" => Ok(AgreementLabel::Context),
            "original" => Ok(AgreementLabel::Original),
            "other" => Ok(AgreementLabel::Other),
            other => Err(value_err(format!("unknown label `{other}`"))),
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(stats::memorization_ratio(&labels).map_err(value_err)?.value)
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    corpus::tokenize(text)
}

/// Windowed co-occurrence counts of (entity, answer) phrase pairs over a
/// list of documents.
#[pyfunction]
#[pyo3(signature = (docs, pairs, window=corpus::DEFAULT_WINDOW, case_insensitive=false))]
fn count_cooccurrences<'py>(
    py: Python<'py>,
    docs: Vec<String>,
    pairs: Vec<(String, String)>,
    window: usize,
    case_insensitive: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let docs: Vec<_> = docs.iter().enumerate().map(|(i, t)| corpus::tokenize_doc(i as u64, t)).collect();
    let pairs: Vec<PhrasePair> = pairs.into_iter().map(|(entity, answer)| PhrasePair { entity, answer }).collect();
    let counts = corpus::count_cooccurrences(&docs, &pairs, ScanOptions { window, case_insensitive }).map_err(value_err)?;
    to_py(py, &counts)
}

/// Distinct neighbours of each entity under `relation`.
#[pyfunction]
fn kg_degrees(triples: Vec<(String, String, String)>, entities: Vec<String>, relation: &str) -> Vec<(String, u64)> {
    let triples: Vec<Triple> = triples.into_iter().map(|(s, p, o)| Triple::new(s, p, o)).collect();
    let kg = KnowledgeGraph::from_triples(&triples);
    kg.degrees(&entities, relation).into_iter().map(|d| (d.entity, d.degree)).collect()
}

/// Results of a scored experiment.
#[pyclass(name = "RunResult", frozen)]
pub struct PyRunResult {
    out: ScoreOutput,
}

#[pymethods]
impl PyRunResult {
    fn records<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.out.records)
    }

    fn memorization<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.out.mr)
    }

    fn meta<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.out.meta)
    }

    #[pyo3(signature = (permutations=10_000, alpha=0.05, seed=0))]
    fn tests<'py>(&self, py: Python<'py>, permutations: usize, alpha: f64, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let opts = SuiteOptions { permutations, alpha, master_seed: seed };
        let rows = py.detach(|| pipeline::hypothesis_suite(&self.out.records, opts)).map_err(value_err)?;
        to_py(py, &rows)
    }

    fn reliability<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let rep = pipeline::reliability_report(&self.out.records);
        let d = PyDict::new(py);
        d.set_item("rows", to_py(py, &rep.rows)?)?;
        d.set_item("skipped", to_py(py, &rep.skipped)?)?;
        Ok(d.into_any())
    }

    fn __len__(&self) -> usize {
        self.out.records.len()
    }
}

/// Loads an experiment config, applies overrides and scores it. With
/// `write=True` the usual output files land in the config's out_dir.
#[pyfunction]
#[pyo3(signature = (config, seed=None, provider=None, endpoint=None, prior=None, out=None, write=false))]
#[allow(clippy::too_many_arguments)]
fn run_experiment(
    py: Python<'_>,
    config: &str,
    seed: Option<u64>,
    provider: Option<&str>,
    endpoint: Option<String>,
    prior: Option<&str>,
    out: Option<String>,
    write: bool,
) -> PyResult<PyRunResult> {
    let mut cfg = ExperimentConfig::load(config).map_err(pipeline_err)?;
    let provider = provider.map(|p| p.parse::<ProviderKind>()).transpose().map_err(value_err)?;
    let prior = prior
        .map(|p| match p {
            "marginal" => Ok(PriorMode::Marginal),
            "no-context" | "no_context" => Ok(PriorMode::NoContext),
            other => Err(value_err(format!("unknown prior `{other}`"))),
        })
        .transpose()?;
    cfg.apply(&ConfigOverrides { seed, provider, endpoint, prior, out: out.map(Into::into) }).map_err(pipeline_err)?;
    let out = py
        .detach(|| if write { pipeline::score_to_dir(&cfg) } else { pipeline::run_experiment(&cfg) })
        .map_err(pipeline_err)?;
    Ok(PyRunResult { out })
}

/// Runs an application config (group comparisons of susceptibility).
#[pyfunction]
#[pyo3(signature = (config, write=false))]
fn run_application<'py>(py: Python<'py>, config: &str, write: bool) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ApplicationConfig::load(config).map_err(pipeline_err)?;
    let out = py
        .detach(|| if write { pipeline::application::run_application_to_dir(&cfg) } else { pipeline::run_application(&cfg) })
        .map_err(pipeline_err)?;
    let d = PyDict::new(py);
    d.set_item("scores", to_py(py, &out.scores)?)?;
    d.set_item("tests", to_py(py, &out.tests)?)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "ctxprobe")]
fn ctxprobe_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CtxprobeError", m.py().get_type::<CtxprobeError>())?;
    m.add_class::<PyDistribution>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(persuasion_score, m)?)?;
    m.add_function(wrap_pyfunction!(susceptibility_score, m)?)?;
    m.add_function(wrap_pyfunction!(marginal, m)?)?;
    m.add_function(wrap_pyfunction!(hpmi, m)?)?;
    m.add_function(wrap_pyfunction!(permutation_test, m)?)?;
    m.add_function(wrap_pyfunction!(bh_correct, m)?)?;
    m.add_function(wrap_pyfunction!(effect_size, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(classify_answer, m)?)?;
    m.add_function(wrap_pyfunction!(memorization_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(count_cooccurrences, m)?)?;
    m.add_function(wrap_pyfunction!(kg_degrees, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_application, m)?)?;
    Ok(())
}
