//! Python bindings for `pumpnet`.
//!
//! Channels are plain integers on the Python side. Problems, plans and
//! reports cross the boundary as JSON text in the same format the
//! command-line tool reads and writes.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use pumpnet::calibrate::Defaults;
use pumpnet::network::induced_topology;
use pumpnet::planner::{self, PlanDocument, PlanError, ProblemFile};
use pumpnet::qkd::{self, LinearPenalty, QuditEntropy, YieldModel};
use pumpnet::sfwm::{self, Pump};
use pumpnet::stats::{self, JsiMode};
use pumpnet::{Channel, ChannelGrid, UserAllocation};

create_exception!(pumpnet_py, InfeasibleError, PyException);

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn channels(v: &[i32]) -> Vec<Channel> {
    v.iter().copied().map(Channel).collect()
}

fn mode(name: &str, seed: Option<u64>) -> PyResult<(JsiMode, u64)> {
    let m: JsiMode = name.parse().map_err(value_err)?;
    match (m, seed) {
        (JsiMode::MonteCarlo, None) => Err(PyValueError::new_err("Monte Carlo mode needs a seed")),
        (_, s) => Ok((m, s.unwrap_or(0))),
    }
}

/// Contiguous range of ITU channels.
#[pyclass(name = "Grid", frozen, from_py_object, module = "pumpnet_py")]
#[derive(Clone)]
struct PyGrid(ChannelGrid);

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (min_index = 1, max_index = 72, anchor_thz = 190.0))]
    fn new(min_index: i32, max_index: i32, anchor_thz: f64) -> PyResult<Self> {
        ChannelGrid::with_anchor(min_index, max_index, anchor_thz).map(PyGrid).map_err(value_err)
    }

    #[getter]
    fn min_index(&self) -> i32 {
        self.0.min_index
    }

    #[getter]
    fn max_index(&self) -> i32 {
        self.0.max_index
    }

    fn frequency_thz(&self, channel: i32) -> PyResult<f64> {
        self.0.channel_frequency(Channel(channel)).map_err(value_err)
    }

    fn channels(&self) -> Vec<i32> {
        self.0.channels().map(|c| c.0).collect()
    }

    fn __contains__(&self, channel: i32) -> bool {
        self.0.contains(Channel(channel))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Grid(C{}..C{})", self.0.min_index, self.0.max_index)
    }
}

/// A set of one to three pump lasers.
#[pyclass(name = "PumpConfig", frozen, skip_from_py_object, module = "pumpnet_py")]
#[derive(Clone)]
struct PyPumpConfig(sfwm::PumpConfig);

#[pymethods]
impl PyPumpConfig {
    /// `powers` in mW, one per pump; 2 mW each when omitted.
    #[new]
    #[pyo3(signature = (pumps, powers = None, label = "P1"))]
    fn new(pumps: Vec<i32>, powers: Option<Vec<f64>>, label: &str) -> PyResult<Self> {
        let powers = powers.unwrap_or_else(|| vec![sfwm::REFERENCE_POWER_MW; pumps.len()]);
        if powers.len() != pumps.len() {
            return Err(PyValueError::new_err("one power per pump"));
        }
        let pumps = pumps.iter().zip(powers).map(|(&c, p)| Pump::new(Channel(c), p)).collect();
        sfwm::PumpConfig::new(label, pumps).map(PyPumpConfig).map_err(value_err)
    }

    #[getter]
    fn pumps(&self) -> Vec<i32> {
        self.0.channels().map(|c| c.0).collect()
    }

    #[getter]
    fn label(&self) -> &str {
        &self.0.label
    }

    /// Index sums of the coincidence lines.
    fn distinct_sums(&self) -> Vec<i32> {
        sfwm::distinct_sums(&self.0)
    }

    /// Channels carrying pump light or stimulated/Bragg products.
    #[pyo3(signature = (grid = None))]
    fn forbidden(&self, grid: Option<PyGrid>) -> Vec<i32> {
        let grid = grid.map_or_else(ChannelGrid::default, |g| g.0);
        sfwm::forbidden_channels(&self.0, &grid).channels().map(|c| c.0).collect()
    }

    /// Correlated pairs as `(signal, idler, strength)`.
    #[pyo3(signature = (grid = None, exclude_forbidden = true))]
    fn correlated_pairs(&self, grid: Option<PyGrid>, exclude_forbidden: bool) -> Vec<(i32, i32, f64)> {
        let grid = grid.map_or_else(ChannelGrid::default, |g| g.0);
        sfwm::correlation_graph(&self.0, &grid, exclude_forbidden)
            .edges
            .iter()
            .map(|e| (e.signal.0, e.idler.0, e.strength))
            .collect()
    }

    fn __repr__(&self) -> String {
        let p: Vec<String> = self.0.channels().map(|c| c.to_string()).collect();
        format!("PumpConfig({}, [{}])", self.0.label, p.join(", "))
    }
}

/// Edges `(user, user)` of the topology induced by `pumps` on `users`, a
/// list of `(name, channel)`.
#[pyfunction]
#[pyo3(signature = (users, pumps, grid = None, guard_band = 1))]
fn topology(
    users: Vec<(String, i32)>,
    pumps: &PyPumpConfig,
    grid: Option<PyGrid>,
    guard_band: i32,
) -> PyResult<Vec<(String, String)>> {
    let alloc = UserAllocation::new(users.into_iter().map(|(u, c)| (u, Channel(c)))).map_err(value_err)?;
    let grid = grid.map_or_else(ChannelGrid::default, |g| g.0);
    let t = induced_topology(&alloc, &pumps.0, &grid, guard_band).map_err(value_err)?;
    Ok(t.edge_names().map(|(a, b)| (a.to_string(), b.to_string())).collect())
}

/// Detection statistics of one link.
#[pyclass(name = "LinkStats", frozen, get_all, skip_from_py_object, module = "pumpnet_py")]
#[derive(Clone)]
struct PyLinkStats {
    coincidence_rate: f64,
    accidental_rate: f64,
    singles_a: f64,
    singles_b: f64,
    car: f64,
    integration_time: f64,
}

impl From<stats::LinkStats> for PyLinkStats {
    fn from(s: stats::LinkStats) -> Self {
        PyLinkStats {
            coincidence_rate: s.coincidence_rate,
            accidental_rate: s.accidental_rate,
            singles_a: s.singles_a,
            singles_b: s.singles_b,
            car: s.car,
            integration_time: s.integration_time,
        }
    }
}

#[pymethods]
impl PyLinkStats {
    fn __repr__(&self) -> String {
        format!(
            "LinkStats(cc={:.3}/s, ac={:.4}/s, car={:.1})",
            self.coincidence_rate, self.accidental_rate, self.car
        )
    }
}

/// Statistics of channel pair `(a, b)` with the default JSI setup. In
/// Monte Carlo mode the pair is simulated for `integration` seconds.
#[pyfunction]
#[pyo3(signature = (pumps, a, b, integration = 1.0, mode = "analytic", seed = None))]
fn link_stats(
    pumps: &PyPumpConfig,
    a: i32,
    b: i32,
    integration: f64,
    mode: &str,
    seed: Option<u64>,
) -> PyResult<PyLinkStats> {
    let (m, seed) = self::mode(mode, seed)?;
    let setup = Defaults::embedded().jsi.setup;
    let graph = sfwm::correlation_graph(&pumps.0, &setup.grid, false);
    let (a, b) = (Channel(a), Channel(b));
    let s = match m {
        JsiMode::Analytic => stats::pair_stats_analytic(
            &graph,
            a,
            b,
            &setup.source,
            &setup.arm,
            &setup.arm,
            setup.window_ps as f64,
            integration,
        ),
        JsiMode::MonteCarlo => {
            let sim = stats::TagSimulation::for_pair(&graph, a, b, &setup.source, &setup.arm, &setup.arm, integration);
            stats::simulate_pair_counts(&sim, setup.window_ps, setup.offset_ps, seed)
                .map_err(value_err)?
                .to_link_stats(integration)
        }
    };
    Ok(s.into())
}

/// Coincidence matrix over `channels`, accidental-subtracted.
#[pyfunction]
#[pyo3(signature = (pumps, channels, mode = "analytic", seed = None, integration = None))]
fn measure_jsi(
    pumps: &PyPumpConfig,
    channels: Vec<i32>,
    mode: &str,
    seed: Option<u64>,
    integration: Option<f64>,
) -> PyResult<Vec<Vec<u64>>> {
    let (m, seed) = self::mode(mode, seed)?;
    let d = Defaults::embedded();
    let t = integration.unwrap_or(d.jsi.integration_s);
    let chans = self::channels(&channels);
    let matrix = stats::measure_jsi(&pumps.0, &chans, &d.jsi.setup, m, t, seed).map_err(value_err)?;
    Ok(matrix.counts)
}

/// A verified pump schedule.
#[pyclass(name = "Plan", frozen, module = "pumpnet_py")]
struct PyPlan {
    doc: PlanDocument,
}

#[pymethods]
impl PyPlan {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let doc: PlanDocument = serde_json::from_str(text).map_err(value_err)?;
        Ok(PyPlan { doc })
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("plan serializes")
    }

    /// Pump channels of each configuration.
    #[getter]
    fn configs(&self) -> Vec<Vec<i32>> {
        self.doc.plan.configs().map(|c| c.channels().map(|c| c.0).collect()).collect()
    }

    #[getter]
    fn allocation(&self) -> Vec<(String, i32)> {
        let a = &self.doc.plan.alloc;
        a.users().iter().cloned().zip(a.channels().iter().map(|c| c.0)).collect()
    }

    /// Recheck the plan against its problem; returns `(passed, problems)`.
    fn verify(&self) -> PyResult<(bool, Vec<String>)> {
        let problem = self.doc.problem.clone().into_problem().map_err(value_err)?;
        let r = planner::verify_plan(&problem, &self.doc.plan);
        let mut issues = r.problems.clone();
        issues.extend(r.missing_edges.iter().map(|(a, b)| format!("edge {a}-{b} not covered")));
        issues.extend(r.guard_violations.iter().map(|g| format!("{}: pump {} next to {}", g.config, g.pump, g.user)));
        issues.extend(r.forbidden_collisions.iter().map(|f| format!("{}: {} on bright {}", f.config, f.user, f.channel)));
        Ok((r.passed, issues))
    }

    /// Link statistics and key rates; returns the report as JSON text.
    #[pyo3(signature = (mode = "analytic", seed = None, yield_curve = "linear"))]
    fn evaluate(&self, py: Python<'_>, mode: &str, seed: Option<u64>, yield_curve: &str) -> PyResult<String> {
        let (m, _) = self::mode(mode, seed)?;
        let problem = self.doc.problem.clone().into_problem().map_err(value_err)?;
        let d = Defaults::embedded();
        let mut setup = d.network.setup;
        setup.grid = problem.grid;
        setup.guard_band = problem.guard_band;
        let linear: LinearPenalty = d.qkd.linear_penalty();
        let model: &dyn YieldModel = match yield_curve {
            "linear" => &linear,
            "qudit" => &QuditEntropy,
            other => return Err(PyValueError::new_err(format!("unknown yield curve {other:?}"))),
        };
        let plan = &self.doc.plan;
        let eval = py
            .detach(|| pumpnet::pipeline::evaluate_schedule(&plan.schedule, &plan.alloc, &setup, &d.qkd, model, m, seed))
            .map_err(value_err)?;
        Ok(serde_json::to_string_pretty(&eval.report).expect("report serializes"))
    }

    fn __len__(&self) -> usize {
        self.doc.plan.schedule.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Plan({} users, {} configurations)",
            self.doc.plan.alloc.len(),
            self.doc.plan.schedule.len()
        )
    }
}

/// Plan a schedule for a problem given as JSON text. Raises
/// `InfeasibleError` with the stuck-edge report when no plan exists.
#[pyfunction]
fn plan(py: Python<'_>, problem_json: &str) -> PyResult<PyPlan> {
    let file: ProblemFile = serde_json::from_str(problem_json).map_err(value_err)?;
    let problem = file.into_problem().map_err(value_err)?;
    match py.detach(|| planner::plan_schedule(&problem)) {
        Ok(plan) => Ok(PyPlan {
            doc: PlanDocument {
                problem: ProblemFile::from_problem(&problem),
                plan,
            },
        }),
        Err(PlanError::Invalid(e)) => Err(value_err(e)),
        Err(PlanError::Infeasible(r)) => Err(InfeasibleError::new_err(r.to_string())),
    }
}

/// Secure key rate of one link from its coincidence rate and CAR, with the
/// default key parameters. Returns `(skr, dimension)`.
#[pyfunction]
#[pyo3(signature = (coincidence_rate, car, yield_curve = "linear"))]
fn skr_estimate(coincidence_rate: f64, car: f64, yield_curve: &str) -> PyResult<(f64, u32)> {
    let params = qkd::QkdParams::default();
    let linear = params.linear_penalty();
    let model: &dyn YieldModel = match yield_curve {
        "linear" => &linear,
        "qudit" => &QuditEntropy,
        other => return Err(PyValueError::new_err(format!("unknown yield curve {other:?}"))),
    };
    let s = stats::LinkStats {
        coincidence_rate,
        singles_a: 0.0,
        singles_b: 0.0,
        accidental_rate: if car.is_finite() && car > 0.0 { coincidence_rate / car } else { 0.0 },
        car,
        integration_time: 1.0,
    };
    let e = qkd::skr_estimate(&s, &params, model);
    Ok((e.skr, e.dimension))
}

#[pymodule]
fn pumpnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyPumpConfig>()?;
    m.add_class::<PyLinkStats>()?;
    m.add_class::<PyPlan>()?;
    m.add_function(wrap_pyfunction!(topology, m)?)?;
    m.add_function(wrap_pyfunction!(link_stats, m)?)?;
    m.add_function(wrap_pyfunction!(measure_jsi, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(skr_estimate, m)?)?;
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    Ok(())
}
