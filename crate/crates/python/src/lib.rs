//! Python bindings. Structured values cross the boundary as plain dicts and
//! lists with the same shape as the JSON files the CLI writes.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use reqbench_core::bench::{
    self, build_gateway, build_runner, emit_report, load_dataset, Pipeline, RunConfig,
};
use reqbench_core::model::{GeneratedTest, Mode, Problem, Verdict};
use reqbench_core::parse;
use reqbench_core::prompt::{self, IclExample, PromptPlan, Stage};
use reqbench_core::rank::{self, Normalization};
use reqbench_core::Category;

create_exception!(reqbench, ReqbenchError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    ReqbenchError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>, what: &str) -> PyResult<T> {
    let text: String = obj
        .py()
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("invalid {what}: {e}")))
}

fn parse_enum<T: DeserializeOwned>(value: &str, what: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} {value:?}")))
}

/// Category weights used to rank candidates by generated-test compliance.
#[pyclass(
    name = "WeightProfile",
    module = "reqbench",
    frozen,
    skip_from_py_object
)]
#[derive(Clone)]
pub struct PyWeightProfile {
    inner: rank::WeightProfile,
}

#[pymethods]
impl PyWeightProfile {
    /// `weights` maps category names to non-negative weights; missing
    /// categories default to 1.0.
    #[new]
    #[pyo3(signature = (weights=None, normalization="per_category"))]
    fn new(weights: Option<BTreeMap<String, f64>>, normalization: &str) -> PyResult<Self> {
        let mut w = BTreeMap::new();
        for (label, value) in weights.unwrap_or_default() {
            let c = reqbench_core::normalize_category(&label)
                .map_err(|e| PyValueError::new_err(e.to_string()))?;
            w.insert(c, value);
        }
        let norm: Normalization = parse_enum(normalization, "normalization")?;
        let inner =
            rank::WeightProfile::new(w, norm).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyWeightProfile { inner })
    }

    /// Only `targets` get weight 1.
    #[staticmethod]
    fn only(targets: Vec<String>) -> PyResult<Self> {
        let cats = targets
            .iter()
            .map(|t| reqbench_core::normalize_category(t))
            .collect::<Result<Vec<Category>, _>>()
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        let inner =
            rank::WeightProfile::only(&cats).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyWeightProfile { inner })
    }

    fn scaled(&self, factor: f64) -> PyResult<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(PyValueError::new_err("factor must be positive"));
        }
        Ok(PyWeightProfile {
            inner: self.inner.scaled(factor),
        })
    }

    fn weight(&self, category: &str) -> PyResult<f64> {
        let c = reqbench_core::normalize_category(category)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(self.inner.weight(c))
    }

    #[getter]
    fn normalization(&self) -> &'static str {
        match self.inner.normalization {
            Normalization::PerTest => "per_test",
            Normalization::PerCategory => "per_category",
        }
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        let w: Vec<String> = self
            .inner
            .weights()
            .iter()
            .map(|(c, w)| format!("{c}={w}"))
            .collect();
        format!("WeightProfile({}, {})", w.join(", "), self.normalization())
    }
}

/// One benchmark task.
#[pyclass(name = "Problem", module = "reqbench", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyProblem {
    inner: Problem,
}

#[pymethods]
impl PyProblem {
    /// Builds a problem from a dataset record (a dict or a JSON line).
    #[staticmethod]
    fn from_record(record: &Bound<'_, PyAny>) -> PyResult<Self> {
        let text = match record.extract::<String>() {
            Ok(s) => s,
            Err(_) => record
                .py()
                .import("json")?
                .call_method1("dumps", (record,))?
                .extract()?,
        };
        let mut problems = bench::parse_dataset(&text).map_err(err)?;
        match problems.len() {
            1 => Ok(PyProblem {
                inner: problems.remove(0),
            }),
            n => Err(PyValueError::new_err(format!(
                "expected one record, got {n}"
            ))),
        }
    }

    #[getter]
    fn task_id(&self) -> &str {
        &self.inner.task_id
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.as_str()
    }

    #[getter]
    fn description(&self) -> &str {
        &self.inner.description
    }

    #[getter]
    fn entry_point(&self) -> Option<&str> {
        self.inner.entry_point.as_deref()
    }

    /// Ground-truth test count per category.
    fn gt_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut out = BTreeMap::new();
        for t in &self.inner.gt_tests {
            *out.entry(t.category.as_str()).or_insert(0) += 1;
        }
        out
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem({:?}, mode={})",
            self.inner.task_id, self.inner.mode
        )
    }
}

/// Unbiased Pass@k for `c` correct samples out of `n`.
#[pyfunction]
fn pass_at_k(n: usize, c: usize, k: usize) -> PyResult<f64> {
    rank::pass_at_k(n, c, k).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Canonical name of a category label such as "Time Performance".
#[pyfunction]
fn normalize_category(label: &str) -> PyResult<&'static str> {
    reqbench_core::normalize_category(label)
        .map(Category::as_str)
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn extract_code_block(completion: &str) -> PyResult<String> {
    parse::extract_code_block(completion).map_err(err)
}

/// Requirement buckets plus a `warnings` list.
#[pyfunction]
fn parse_requirements(py: Python<'_>, doc: &str) -> PyResult<Py<PyAny>> {
    let (set, warnings) = parse::parse_requirements_doc_with_warnings(doc);
    let mut value = serde_json::to_value(&set).map_err(err)?;
    value["warnings"] = serde_json::to_value(warnings).map_err(err)?;
    to_py(py, &value)
}

/// `{"tests": [...], "warnings": [...]}` for a generated test document.
#[pyfunction]
#[pyo3(signature = (doc, mode="function"))]
fn parse_tests(py: Python<'_>, doc: &str, mode: &str) -> PyResult<Py<PyAny>> {
    let mode: Mode = parse_enum(mode, "mode")?;
    to_py(py, &parse::parse_test_doc(doc, mode))
}

/// Renders tests back into the sectioned document layout.
#[pyfunction]
#[pyo3(signature = (tests, mode="function"))]
fn serialize_tests(tests: &Bound<'_, PyAny>, mode: &str) -> PyResult<String> {
    let mode: Mode = parse_enum(mode, "mode")?;
    let tests: Vec<GeneratedTest> = from_py(tests, "tests")?;
    Ok(parse::serialize_test_doc(&tests, mode))
}

/// Renders a stage prompt with the built-in templates and example.
#[pyfunction]
#[pyo3(signature = (stage, problem, requirements=None, tests=None, nfr_block=false, zero_shot=false))]
fn build_prompt(
    stage: &str,
    problem: &PyProblem,
    requirements: Option<String>,
    tests: Option<String>,
    nfr_block: bool,
    zero_shot: bool,
) -> PyResult<String> {
    let stage: Stage = stage
        .parse()
        .map_err(|e: prompt::PromptError| PyValueError::new_err(e.to_string()))?;
    let examples = if zero_shot {
        vec![]
    } else {
        vec![IclExample::builtin()]
    };
    let mut plan = PromptPlan::new(stage, examples).with_nfr_block(nfr_block);
    if let Some(r) = requirements {
        plan = plan.with_requirements(r);
    }
    if let Some(t) = tests {
        plan = plan.with_tests(t);
    }
    prompt::build_prompt(&plan, &problem.inner).map_err(err)
}

/// Weighted compliance of one candidate's verdict row with `tests`.
#[pyfunction]
#[pyo3(signature = (row, tests, weights=None))]
fn score_candidate(
    row: &Bound<'_, PyAny>,
    tests: &Bound<'_, PyAny>,
    weights: Option<&PyWeightProfile>,
) -> PyResult<f64> {
    let row: Vec<Verdict> = from_py(row, "verdicts")?;
    let tests: Vec<GeneratedTest> = from_py(tests, "tests")?;
    let w = weights.map(|w| w.inner.clone()).unwrap_or_default();
    Ok(rank::score_candidate(&row, &tests, &w))
}

/// Indices of the `k` best `(index, score)` pairs, ties by lower index.
#[pyfunction]
fn filter_top_k(scores: Vec<(usize, f64)>, k: usize) -> PyResult<Vec<usize>> {
    rank::filter_top_k(&scores, k).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn load_problems(path: PathBuf) -> PyResult<Vec<PyProblem>> {
    let problems = load_dataset(&path).map_err(err)?;
    Ok(problems
        .into_iter()
        .map(|inner| PyProblem { inner })
        .collect())
}

/// Runs generation, execution and reporting for a config file and returns
/// the report. Writes the same files as `reqbench run`.
#[pyfunction]
#[pyo3(signature = (config, output_dir=None, api_key=None))]
fn run(
    py: Python<'_>,
    config: PathBuf,
    output_dir: Option<PathBuf>,
    api_key: Option<String>,
) -> PyResult<Py<PyAny>> {
    let report = py
        .detach(move || -> Result<bench::Report, bench::BenchError> {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            cfg.validate()?;
            let gateway = build_gateway(&cfg, api_key, None)?;
            let runner = build_runner(&cfg.runner)?;
            let problems = load_dataset(&cfg.dataset)?;
            let record = Pipeline::new(&cfg, &gateway, Some(runner.as_ref()))?.run(&problems)?;
            record.save(&cfg.output_dir.join("record.json"))?;
            emit_report(&record, &cfg.output_dir)
        })
        .map_err(err)?;
    to_py(py, &report)
}

/// Text rendering of a report dict returned by `run`.
#[pyfunction]
fn render_report(report: &Bound<'_, PyAny>) -> PyResult<String> {
    let report: bench::Report = from_py(report, "report")?;
    Ok(bench::render_text(&report))
}

#[pymodule]
pub fn reqbench(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ReqbenchError", m.py().get_type::<ReqbenchError>())?;
    m.add_class::<PyWeightProfile>()?;
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(pass_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_category, m)?)?;
    m.add_function(wrap_pyfunction!(extract_code_block, m)?)?;
    m.add_function(wrap_pyfunction!(parse_requirements, m)?)?;
    m.add_function(wrap_pyfunction!(parse_tests, m)?)?;
    m.add_function(wrap_pyfunction!(serialize_tests, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(score_candidate, m)?)?;
    m.add_function(wrap_pyfunction!(filter_top_k, m)?)?;
    m.add_function(wrap_pyfunction!(load_problems, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(render_report, m)?)?;
    Ok(())
}
