//! Python bindings. Structured results (reports, histories, parse output)
//! cross the boundary as JSON and come back as plain dicts and lists.

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use hybrid_ssd::config::{Param, ParamBounds, ParamValue};
use hybrid_ssd::harness::{self, ReplayOptions};
use hybrid_ssd::trace::{self as tr, IoKind, SynthSpec, TraceRecord};
use hybrid_ssd::tuner::backend::ScriptedBackend;
use hybrid_ssd::tuner::{self, parse, AutoTuner, TuningRecord};
use hybrid_ssd::verify::EpochSchedule;
use hybrid_ssd::PlacementPolicy;

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn param(key: &str) -> PyResult<Param> {
    Param::from_name(key).ok_or_else(|| PyKeyError::new_err(key.to_string()))
}

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "ConfigProfile", from_py_object)]
#[derive(Clone, Default)]
struct PyConfigProfile(hybrid_ssd::ConfigProfile);

#[pymethods]
impl PyConfigProfile {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    #[staticmethod]
    fn keys() -> Vec<&'static str> {
        Param::ALL.iter().map(|p| p.key()).collect()
    }

    fn get<'py>(&self, py: Python<'py>, key: &str) -> PyResult<Bound<'py, PyAny>> {
        let v = match self.0.get(param(key)?) {
            ParamValue::Int(x) => x.into_pyobject(py)?.into_any(),
            ParamValue::Real(x) => x.into_pyobject(py)?.into_any(),
            ParamValue::Placement(PlacementPolicy::SlcFirst) => "slc_first".into_pyobject(py)?.into_any(),
            ParamValue::Placement(PlacementPolicy::HotnessBased) => "hotness_based".into_pyobject(py)?.into_any(),
        };
        Ok(v)
    }

    /// Sets one parameter from a number or a placement name, then checks
    /// the whole profile against the bounds for 16 KiB pages.
    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let p = param(key)?;
        let v = match self.0.get(p) {
            ParamValue::Int(_) => ParamValue::Int(value.extract()?),
            ParamValue::Real(_) => ParamValue::Real(value.extract()?),
            ParamValue::Placement(_) => {
                let s: String = value.extract()?;
                match s.to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
                    "slc_first" => ParamValue::Placement(PlacementPolicy::SlcFirst),
                    "hotness_based" | "hotness" => ParamValue::Placement(PlacementPolicy::HotnessBased),
                    _ => return Err(value_err(format!("unknown placement {s}"))),
                }
            }
        };
        let mut next = self.0.clone();
        next.set(p, v);
        let bad = ParamBounds::for_page_size(16 * 1024).violations(&next);
        if !bad.is_empty() {
            return Err(value_err(bad.join("; ")));
        }
        self.0 = next;
        Ok(())
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        let parts: Vec<String> = Param::ALL.iter().map(|&p| format!("{}={}", p.key(), self.0.display_value(p))).collect();
        format!("ConfigProfile({})", parts.join(", "))
    }
}

#[pyclass(name = "SimSetup", from_py_object)]
#[derive(Clone)]
struct PySimSetup(hybrid_ssd::SimSetup);

#[pymethods]
impl PySimSetup {
    #[staticmethod]
    fn desk() -> Self {
        PySimSetup(hybrid_ssd::SimSetup::desk())
    }

    #[getter]
    fn logical_bytes(&self) -> u64 {
        let g = &self.0.geometry;
        g.logical_pages(self.0.initial_mode_split) * g.page_size
    }

    #[getter]
    fn page_size(&self) -> u64 {
        self.0.geometry.page_size
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.0.seed = seed;
    }

    #[getter]
    fn kmeans_tol(&self) -> f64 {
        self.0.kmeans_tol
    }

    #[setter]
    fn set_kmeans_tol(&mut self, tol: f64) -> PyResult<()> {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(value_err("kmeans_tol must be positive"));
        }
        self.0.kmeans_tol = tol;
        Ok(())
    }
}

/// Trace requests as `(timestamp_us, "read" | "write", offset, size)`.
type PyRecord = (u64, String, u64, u64);

fn record(r: &PyRecord, line: u64) -> PyResult<TraceRecord> {
    let kind = match r.1.to_ascii_lowercase().as_str() {
        "read" | "r" => IoKind::Read,
        "write" | "w" => IoKind::Write,
        other => return Err(value_err(format!("request {line}: unknown kind {other}"))),
    };
    if r.3 == 0 {
        return Err(value_err(format!("request {line}: zero size")));
    }
    Ok(TraceRecord { timestamp: r.0, kind, offset: r.2, size: r.3, line })
}

fn records(trace: &[PyRecord]) -> PyResult<Vec<TraceRecord>> {
    trace.iter().enumerate().map(|(i, r)| record(r, i as u64 + 1)).collect()
}

#[pyclass(name = "Simulator", unsendable)]
struct PySimulator(hybrid_ssd::Simulator);

#[pymethods]
impl PySimulator {
    #[new]
    fn new(setup: PySimSetup, config: PyConfigProfile) -> PyResult<Self> {
        hybrid_ssd::Simulator::new(setup.0, config.0).map(PySimulator).map_err(value_err)
    }

    fn prefill(&mut self, fraction: f64) -> PyResult<()> {
        self.0.prefill(fraction).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Services one request and returns its latency in microseconds.
    fn step(&mut self, timestamp: u64, kind: String, offset: u64, size: u64) -> PyResult<u64> {
        let rec = record(&(timestamp, kind, offset, size), 0)?;
        let out = self.0.step(&rec).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(out.latency.0)
    }

    #[getter]
    fn requests(&self) -> u64 {
        self.0.marker().requests
    }

    #[getter]
    fn total_latency(&self) -> u64 {
        self.0.marker().latency
    }

    #[getter]
    fn wa(&self) -> Option<f64> {
        let m = self.0.marker();
        (m.host_pages > 0).then(|| m.device_pages as f64 / m.host_pages as f64)
    }

    #[getter]
    fn config(&self) -> PyConfigProfile {
        PyConfigProfile(self.0.config().clone())
    }
}

#[pyfunction]
#[pyo3(signature = (ops, span_bytes, seed=1, hot_fraction=0.9, hot_region_fraction=0.1, write_ratio=0.7, request_bytes=16384, interarrival_us=100))]
#[allow(clippy::too_many_arguments)]
fn synth_trace(
    ops: u64,
    span_bytes: u64,
    seed: u64,
    hot_fraction: f64,
    hot_region_fraction: f64,
    write_ratio: f64,
    request_bytes: u64,
    interarrival_us: u64,
) -> PyResult<Vec<PyRecord>> {
    let spec = SynthSpec { ops, hot_fraction, hot_region_fraction, write_ratio, seed, span_bytes, request_bytes, interarrival_us };
    spec.validate().map_err(value_err)?;
    Ok(tr::synth_trace(&spec)
        .into_iter()
        .map(|r| (r.timestamp, if r.kind == IoKind::Read { "read" } else { "write" }.to_string(), r.offset, r.size))
        .collect())
}

/// Replays `trace` and returns `{"report": ..., "history": [...]}`. With
/// `responses` the run is tuned by a scripted backend answering in order.
#[pyfunction]
#[pyo3(signature = (trace, setup, config, prefill=0.0, responses=None, tuning_interval=10000, investigation_period=10000, max_iterations=10))]
#[allow(clippy::too_many_arguments)]
fn replay<'py>(
    py: Python<'py>,
    trace: Vec<PyRecord>,
    setup: PySimSetup,
    config: PyConfigProfile,
    prefill: f64,
    responses: Option<Vec<String>>,
    tuning_interval: u64,
    investigation_period: u64,
    max_iterations: u32,
) -> PyResult<Bound<'py, PyAny>> {
    let trace = records(&trace)?;
    let page = setup.0.geometry.page_size;
    let mut opts = ReplayOptions::new(setup.0, config.0);
    opts.prefill = prefill;
    opts.schedule = EpochSchedule { tuning_interval, investigation_period, max_iterations, ..EpochSchedule::default() };
    opts.schedule.validate().map_err(value_err)?;
    let mut tuner = responses.map(|r| AutoTuner::new(Box::new(ScriptedBackend::new(r)), ParamBounds::for_page_size(page)));
    let out = harness::replay(&trace, &opts, tuner.as_mut()).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &serde_json::json!({ "report": out.report, "history": out.history }))
}

/// Returns `{"reason", "candidates": {key: value}, "unknown"}`.
#[pyfunction]
fn parse_config<'py>(py: Python<'py>, raw: &str) -> PyResult<Bound<'py, PyAny>> {
    let parsed = parse::parse_config(raw).map_err(value_err)?;
    let candidates: serde_json::Map<String, serde_json::Value> = parsed
        .candidates
        .iter()
        .map(|(p, v)| (p.key().to_string(), serde_json::to_value(v).unwrap_or_default()))
        .collect();
    to_py(py, &serde_json::json!({ "reason": parsed.reason, "candidates": candidates, "unknown": parsed.unknown }))
}

/// Parses `raw`, repairs its values against `current` and returns the new
/// profile with the correction log.
#[pyfunction]
fn correct_mistakes<'py>(
    py: Python<'py>,
    raw: &str,
    current: PyConfigProfile,
) -> PyResult<(PyConfigProfile, Bound<'py, PyAny>)> {
    let parsed = parse::parse_config(raw).map_err(value_err)?;
    let fixed = parse::correct_mistakes(&parsed.candidates, &ParamBounds::for_page_size(16 * 1024), &current.0)
        .map_err(value_err)?;
    Ok((PyConfigProfile(fixed.profile), to_py(py, &fixed.log)?))
}

/// Accuracy over a tuning history as returned by `replay`.
#[pyfunction]
fn accuracy(py: Python<'_>, history: &Bound<'_, PyAny>) -> PyResult<Option<f64>> {
    let text: String = py.import("json")?.call_method1("dumps", (history,))?.extract()?;
    let records: Vec<TuningRecord> = serde_json::from_str(&text).map_err(value_err)?;
    Ok(tuner::accuracy(&records))
}

#[pymodule]
fn hybrid_ssd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfigProfile>()?;
    m.add_class::<PySimSetup>()?;
    m.add_class::<PySimulator>()?;
    m.add_function(wrap_pyfunction!(synth_trace, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(parse_config, m)?)?;
    m.add_function(wrap_pyfunction!(correct_mistakes, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    Ok(())
}
