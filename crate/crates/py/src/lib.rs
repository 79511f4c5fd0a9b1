//! Python bindings: catalog queries, the leak lint, image metrics, VIE
//! aggregation and prompt clustering. Heavy pipeline stages stay in the CLI.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use vicl_core::catalog::{Relation, TaskCatalog};
use vicl_core::diversity::{self, EmbeddedRecord};
use vicl_core::image::ImageBuffer;
use vicl_core::metrics::{self, ChannelPolicy};
use vicl_core::prompt::{lint_implicitness, Lint, PromptGenerator, PromptRecord};
use vicl_core::vie::{self, SubScores};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn catalog() -> &'static TaskCatalog {
    TaskCatalog::builtin()
}

#[pyclass(frozen, skip_from_py_object, module = "vicl")]
#[derive(Clone)]
pub struct Task {
    #[pyo3(get)]
    id: String,
    #[pyo3(get)]
    display_name: String,
    #[pyo3(get)]
    category: String,
    #[pyo3(get)]
    lexemes: Vec<String>,
}

#[pymethods]
impl Task {
    fn __repr__(&self) -> String {
        format!("Task({:?}, {:?})", self.id, self.category)
    }
}

#[pyclass(frozen, skip_from_py_object, module = "vicl")]
#[derive(Clone)]
pub struct TaskPair {
    #[pyo3(get)]
    source: String,
    #[pyo3(get)]
    target: String,
    #[pyo3(get)]
    relation: String,
}

#[pymethods]
impl TaskPair {
    fn key(&self) -> String {
        format!("{}:{}", self.source, self.target)
    }

    fn __repr__(&self) -> String {
        format!("TaskPair({}, {})", self.key(), self.relation)
    }
}

impl From<&vicl_core::catalog::TaskPair> for TaskPair {
    fn from(p: &vicl_core::catalog::TaskPair) -> Self {
        TaskPair {
            source: p.source.clone(),
            target: p.target.clone(),
            relation: p.relation.to_string(),
        }
    }
}

/// The twelve built-in tasks.
#[pyfunction]
fn tasks() -> Vec<Task> {
    catalog()
        .list_tasks()
        .iter()
        .map(|t| Task {
            id: t.id.clone(),
            display_name: t.display_name.clone(),
            category: format!("{:?}", t.category),
            lexemes: t.lexemes.clone(),
        })
        .collect()
}

/// Ordered pairs; `relation` is "intra", "inter" or None for all.
#[pyfunction]
#[pyo3(signature = (relation=None))]
fn pairs(relation: Option<&str>) -> PyResult<Vec<TaskPair>> {
    let filter = match relation {
        None => None,
        Some("intra") => Some(Relation::IntraCategory),
        Some("inter") => Some(Relation::InterCategory),
        Some(other) => return Err(err(format!("unknown relation `{other}`"))),
    };
    Ok(catalog().enumerate_pairs(filter).iter().map(TaskPair::from).collect())
}

#[pyfunction]
fn pair(source: &str, target: &str) -> PyResult<TaskPair> {
    catalog().pair(source, target).map(|p| TaskPair::from(&p)).map_err(err)
}

/// Returns the leaked lexemes; empty means clean.
#[pyfunction]
fn lint(text: &str, pair: &str) -> PyResult<Vec<String>> {
    let p = catalog().parse_pair(pair).map_err(err)?;
    let l: Lint = lint_implicitness(text, &p, catalog()).map_err(err)?;
    Ok(l.lexemes())
}

fn open(path: PathBuf) -> PyResult<ImageBuffer> {
    ImageBuffer::open(&path).map_err(err)
}

/// PSNR in dB between two image files; identical images give inf.
#[pyfunction]
fn psnr(reference: PathBuf, candidate: PathBuf) -> PyResult<f64> {
    metrics::psnr(&open(reference)?, &open(candidate)?)
        .map(|p| p.as_f64())
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (reference, candidate, rgb=false))]
fn ssim(reference: PathBuf, candidate: PathBuf, rgb: bool) -> PyResult<f64> {
    let policy = if rgb {
        ChannelPolicy::MeanOverRgb
    } else {
        ChannelPolicy::LuminanceOnly
    };
    metrics::ssim_with(&open(reference)?, &open(candidate)?, policy).map_err(err)
}

#[pyclass(frozen, module = "vicl")]
pub struct VieScore {
    #[pyo3(get)]
    sc: f64,
    #[pyo3(get)]
    pq: f64,
    #[pyo3(get)]
    overall: f64,
    #[pyo3(get)]
    overall_0_10: f64,
    #[pyo3(get)]
    rationale: String,
}

#[pymethods]
impl VieScore {
    fn __repr__(&self) -> String {
        format!("VieScore(sc={}, pq={}, overall={})", self.sc, self.pq, self.overall)
    }
}

impl From<vie::VieResult> for VieScore {
    fn from(r: vie::VieResult) -> Self {
        VieScore {
            sc: r.sc,
            pq: r.pq,
            overall: r.overall,
            overall_0_10: r.overall_0_10,
            rationale: r.rationale,
        }
    }
}

/// Aggregate raw 0–10 sub-scores.
#[pyfunction]
fn vie_aggregate(sc: Vec<f64>, pq: Vec<f64>) -> VieScore {
    vie::aggregate(&SubScores::from_values(&sc, &pq, "")).into()
}

/// Parse an evaluator answer holding both `sc` and `pq` lists.
#[pyfunction]
fn vie_parse(raw: &str) -> PyResult<VieScore> {
    Ok(vie::aggregate(&vie::parse_evaluator_output(raw).map_err(err)?).into())
}

#[pyfunction]
fn cosine(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    diversity::cosine_similarity(&u, &v).map_err(err)
}

/// Greedy-leader clustering of unit vectors. Returns `(members, representative)`
/// per cluster, as indices into the inputs.
#[pyfunction]
#[pyo3(signature = (texts, vectors, pair, threshold=diversity::DEFAULT_THRESHOLD))]
fn cluster(texts: Vec<String>, vectors: Vec<Vec<f64>>, pair: &str, threshold: f64) -> PyResult<Vec<(Vec<usize>, usize)>> {
    if texts.len() != vectors.len() {
        return Err(err("texts and vectors differ in length"));
    }
    let p = catalog().parse_pair(pair).map_err(err)?;
    let mut index = HashMap::new();
    let mut records = Vec::with_capacity(texts.len());
    for (i, (t, v)) in texts.into_iter().zip(vectors).enumerate() {
        let rec = PromptRecord::new(t, p.clone(), format!("py{i}"), PromptGenerator::Human, catalog()).map_err(err)?;
        index.insert(rec.id.clone(), i);
        records.push(EmbeddedRecord::new(rec, v).map_err(err)?);
    }
    let clusters = diversity::cluster(&records, threshold).map_err(err)?;
    Ok(clusters
        .into_iter()
        .map(|c| (c.members.iter().map(|m| index[m]).collect(), index[&c.representative]))
        .collect())
}

#[pymodule]
fn vicl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Task>()?;
    m.add_class::<TaskPair>()?;
    m.add_class::<VieScore>()?;
    m.add_function(wrap_pyfunction!(tasks, m)?)?;
    m.add_function(wrap_pyfunction!(pairs, m)?)?;
    m.add_function(wrap_pyfunction!(pair, m)?)?;
    m.add_function(wrap_pyfunction!(lint, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(vie_aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(vie_parse, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    Ok(())
}
