//! Python bindings. Results come back as plain dicts and lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;
use serde_json::json;

use pqvflex::caseio::{self, BenchmarkConfig, CaseDocument, FitConfig};
use pqvflex::cases;
use pqvflex::coordination::{fit_bundle, run_benchmark, solve_coordination, CoordinationOptions, DsModelBundle};
use pqvflex::evaluation::{validate_cost, validate_for};
use pqvflex::fitting::{eval_cost, eval_for};
use pqvflex::netmodel::{attach_pcc, Network, PccLink, PccNetwork};
use pqvflex::nlopt::{assemble_opf, feasibility_verdict, solve_fixed_pcc, CouplingPoint, FixedPccOptions, OpfObjective, SolveOptions};
use pqvflex::sampling::{bbps, compute_bounding_box, fds, sample_cost_interior, BoundingBox};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (value,))?.extract()?;
    caseio::from_json(&text).map_err(err)
}

/// A network case: bundled name (`ts9`, `ds33`) or a JSON case file.
#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
struct Case {
    doc: CaseDocument,
}

#[pymethods]
impl Case {
    #[staticmethod]
    fn load(spec: &str) -> PyResult<Self> {
        Ok(Case { doc: cases::load(spec).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Case { doc: caseio::parse_case(text).map_err(err)? })
    }

    fn to_json(&self) -> String {
        caseio::serialize_case(&self.doc)
    }

    #[getter]
    fn name(&self) -> String {
        self.doc.network.name().to_string()
    }

    #[getter]
    fn n_buses(&self) -> usize {
        self.doc.network.n_buses()
    }

    #[getter]
    fn pcc_links<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.doc.pcc_links)
    }

    fn __repr__(&self) -> String {
        format!("Case({:?}, {} buses, {} pcc links)", self.doc.network.name(), self.n_buses(), self.doc.pcc_links.len())
    }
}

impl Case {
    fn distribution(&self, pcc: usize) -> PyResult<PccNetwork> {
        let link = self
            .doc
            .pcc_links
            .get(pcc)
            .ok_or_else(|| err(format!("case has {} pcc links, no index {pcc}", self.doc.pcc_links.len())))?;
        attach_pcc(&self.doc.network, link).map_err(err)
    }
}

/// Region and cost surrogate of one distribution system, bound to a coupling link.
#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
struct Bundle {
    inner: DsModelBundle,
}

#[pymethods]
impl Bundle {
    /// Fit both models. `boundary` and `features` are `[p_MW, q_MVAr, v_pu]` rows.
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (case, boundary, features, targets, bounds, pcc = 0, config = None))]
    fn fit(
        py: Python<'_>,
        case: &Case,
        boundary: Vec<[f64; 3]>,
        features: Vec<[f64; 3]>,
        targets: Vec<f64>,
        bounds: &Bound<'_, PyAny>,
        pcc: usize,
        config: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<Self> {
        let link = case.distribution(pcc)?.link;
        let bx: BoundingBox = from_py(py, bounds)?;
        let cfg: FitConfig = match config {
            Some(c) => from_py(py, c)?,
            None => case.doc.fit.clone().unwrap_or_default(),
        };
        let (inner, _, _) = py.detach(|| fit_bundle(link, &boundary, &features, &targets, bx, &cfg)).map_err(err)?;
        Ok(Bundle { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: DsModelBundle = caseio::from_json(text).map_err(err)?;
        inner.check().map_err(err)?;
        Ok(Bundle { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner).expect("bundle serializes")
    }

    /// Region model value, gradient and whether the point lies outside the training domain.
    fn region(&self, p: f64, q: f64, v: f64) -> (f64, [f64; 3], bool) {
        let r = eval_for(&self.inner.for_model, CouplingPoint { p, q, v });
        (r.value, r.gradient, r.extrapolated)
    }

    /// Cost model value ($/h) and gradient.
    fn cost(&self, p: f64, q: f64, v: f64) -> (f64, [f64; 3]) {
        eval_cost(&self.inner.cost_model, CouplingPoint { p, q, v })
    }

    #[getter]
    fn bounds<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.bounds)
    }

    #[getter]
    fn degree(&self) -> usize {
        self.inner.for_model.map.degree()
    }
}

/// Minimum-cost OPF of a case's network.
#[pyfunction]
fn opf<'py>(py: Python<'py>, case: &Case) -> PyResult<Bound<'py, PyAny>> {
    let net = &case.doc.network;
    let problem = assemble_opf(net, OpfObjective::TotalCost, None).map_err(err)?;
    let sol = py.detach(|| problem.solve(&SolveOptions::default()));
    let base = net.base_mva();
    let gen_p: Vec<f64> = problem.layout.gen_p(&sol.x).iter().map(|p| p * base).collect();
    to_py(py, &json!({ "status": sol.status, "objective": sol.objective, "gen_p_mw": gen_p }))
}

#[pyfunction]
#[pyo3(signature = (case, pcc = 0))]
fn bounding_box<'py>(py: Python<'py>, case: &Case, pcc: usize) -> PyResult<Bound<'py, PyAny>> {
    let ds = case.distribution(pcc)?;
    let bx = py.detach(|| compute_bounding_box(&ds, &FixedPccOptions::default())).map_err(err)?;
    to_py(py, &bx)
}

/// Elastic feasibility verdict of a distribution case at one coupling point.
#[pyfunction]
#[pyo3(signature = (case, p, q, v, pcc = 0))]
fn verdict<'py>(py: Python<'py>, case: &Case, p: f64, q: f64, v: f64, pcc: usize) -> PyResult<Bound<'py, PyAny>> {
    let ds = case.distribution(pcc)?;
    let r = py.detach(|| feasibility_verdict(&ds, CouplingPoint { p, q, v }, &FixedPccOptions::default()));
    to_py(py, &json!({ "feasible": r.feasible, "conclusive": r.conclusive(), "violation": r.violation, "status": r.status }))
}

/// Minimum internal cost of a distribution case with the coupling point held fixed.
#[pyfunction]
#[pyo3(signature = (case, p, q, v, pcc = 0))]
fn fixed_pcc<'py>(py: Python<'py>, case: &Case, p: f64, q: f64, v: f64, pcc: usize) -> PyResult<Bound<'py, PyAny>> {
    let ds = case.distribution(pcc)?;
    let r = py.detach(|| solve_fixed_pcc(&ds, CouplingPoint { p, q, v }, &FixedPccOptions::default()));
    let cost = r.cost.is_finite().then_some(r.cost);
    to_py(py, &json!({ "status": r.status, "cost": cost, "violation": r.violation }))
}

/// Boundary (BBPS then FDS) and interior cost samples, with the bounding box used.
#[pyfunction]
#[pyo3(signature = (case, pcc = 0, n_bbps = None, n_fds = None, n_cost = None, seed = None))]
fn sample<'py>(
    py: Python<'py>,
    case: &Case,
    pcc: usize,
    n_bbps: Option<usize>,
    n_fds: Option<usize>,
    n_cost: Option<usize>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let ds = case.distribution(pcc)?;
    let cfg = case.doc.sampling.clone().unwrap_or_default();
    let seed = seed.unwrap_or(cfg.seed);
    let opts = FixedPccOptions::default();
    let out = py.detach(|| -> Result<serde_json::Value, String> {
        let bx = compute_bounding_box(&ds, &opts).map_err(|e| e.to_string())?;
        let mut boundary = bbps(&ds, &bx, n_bbps.unwrap_or(cfg.n_bbps), seed, &opts).data;
        boundary.extend(fds(&ds, &bx, n_fds.unwrap_or(cfg.n_fds), seed, &opts).run.data);
        let cost = sample_cost_interior(&ds, &bx, n_cost.unwrap_or(cfg.n_cost), seed, &opts).map_err(|e| e.to_string())?.data;
        let rows = |pts: &[CouplingPoint]| pts.iter().map(|x| x.to_array()).collect::<Vec<_>>();
        Ok(json!({
            "box": bx,
            "boundary": rows(&boundary.points),
            "sources": boundary.sources,
            "cost_features": rows(&cost.features),
            "cost_targets": cost.targets,
        }))
    });
    to_py(py, &out.map_err(err)?)
}

/// Confusion metrics of the region model and error metrics of the cost model.
#[pyfunction]
#[pyo3(signature = (bundle, case, n = 10_000, n_cost = 100, seed = 1, pcc = 0))]
fn validate<'py>(
    py: Python<'py>,
    bundle: &Bundle,
    case: &Case,
    n: usize,
    n_cost: usize,
    seed: u64,
    pcc: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let ds = case.distribution(pcc)?;
    let b = &bundle.inner;
    let opts = FixedPccOptions::default();
    let out = py.detach(|| -> Result<serde_json::Value, String> {
        let region = validate_for(&b.for_model, &ds, &b.bounds, n, seed, &opts).metrics;
        let cost = if n_cost > 0 {
            Some(validate_cost(&b.cost_model, &ds, &b.bounds, n_cost, seed, &opts).map_err(|e| e.to_string())?.metrics)
        } else {
            None
        };
        Ok(json!({ "region": region, "cost": cost }))
    });
    to_py(py, &out.map_err(err)?)
}

type System = (Vec<DsModelBundle>, Vec<(PccLink, Network)>);

/// Pair each coupling link of `ts` with a bundle and a distribution network.
/// A single bundle or case is reused for every link.
fn system(ts: &Case, bundles: &[Bundle], ds: &[Case]) -> PyResult<System> {
    let links = &ts.doc.pcc_links;
    let pick = |len: usize, k: usize, what: &str| match len {
        1 => Ok(0),
        n if n == links.len() => Ok(k),
        n => Err(err(format!("{n} {what} for {} pcc links", links.len()))),
    };
    let mut out_b = Vec::new();
    let mut out_d = Vec::new();
    for (k, link) in links.iter().enumerate() {
        out_b.push(DsModelBundle { pcc: link.clone(), ..bundles[pick(bundles.len(), k, "bundles")?].inner.clone() });
        out_d.push((link.clone(), ds[pick(ds.len(), k, "cases")?].doc.network.clone()));
    }
    Ok((out_b, out_d))
}

/// Single-round coordination: TS OPF over the surrogates, then each DS solves
/// its own dispatch at the assigned coupling point.
#[pyfunction]
#[pyo3(signature = (ts, bundles, ds, multistart = 1))]
fn coordinate<'py>(
    py: Python<'py>,
    ts: &Case,
    bundles: Vec<Bundle>,
    ds: Vec<Case>,
    multistart: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let (bundles, attachments) = system(ts, &bundles, &ds)?;
    let nets = attachments.iter().map(|(l, n)| attach_pcc(n, l)).collect::<Result<Vec<_>, _>>().map_err(err)?;
    let opts = CoordinationOptions { multistart, ..Default::default() };
    let report = py.detach(|| solve_coordination(&ts.doc.network, &bundles, &nets, &opts)).map_err(err)?;
    let summary = report.summary(&ts.doc.network, &bundles);
    to_py(
        py,
        &json!({ "summary": summary, "phase1_s": report.phase1_time, "phase2_s": report.phase2_time }),
    )
}

/// Proposed coordination against the merged OPF over jittered TS cost trials.
#[pyfunction]
#[pyo3(signature = (ts, bundles, ds, trials = None, seed = None))]
fn benchmark<'py>(
    py: Python<'py>,
    ts: &Case,
    bundles: Vec<Bundle>,
    ds: Vec<Case>,
    trials: Option<usize>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let (bundles, attachments) = system(ts, &bundles, &ds)?;
    let base = ts.doc.benchmark.clone().unwrap_or_default();
    let cfg = BenchmarkConfig {
        n_trials: trials.unwrap_or(base.n_trials),
        seed: seed.unwrap_or(base.seed),
        ..base
    };
    let report = py
        .detach(|| run_benchmark(&ts.doc.network, &attachments, &bundles, &cfg, &CoordinationOptions::default()))
        .map_err(err)?;
    to_py(py, &json!({ "summary": report.summary, "trials": report.trials }))
}

#[pymodule]
#[pyo3(name = "pqvflex")]
fn pqvflex_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Case>()?;
    m.add_class::<Bundle>()?;
    m.add_function(wrap_pyfunction!(opf, m)?)?;
    m.add_function(wrap_pyfunction!(bounding_box, m)?)?;
    m.add_function(wrap_pyfunction!(verdict, m)?)?;
    m.add_function(wrap_pyfunction!(fixed_pcc, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(coordinate, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark, m)?)?;
    Ok(())
}
