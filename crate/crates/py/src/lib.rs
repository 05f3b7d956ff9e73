//! Python bindings: the gridworld, demonstrations, MaxEnt IRL, the one-class
//! SVM, segmentation, and the pipeline stages.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use skillopt::cli::{self, PipelineConfig};
use skillopt::demo::{self, QLearningParams, Trajectory};
use skillopt::gridworld::value_iteration as vi;
use skillopt::irl::{self, FeatureMap, IrlParams, StatePath};
use skillopt::ocsvm::{self, OcSvmFit};
use skillopt::segmenter::{Sampler, SegmenterConfig};
use skillopt::smdp::LearningCurve;
use skillopt::{options, Action, Error, GridWorld, RewardFunction};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::MapParse { .. }
        | Error::NotFourRooms(_)
        | Error::InvalidParameter(_)
        | Error::EmptyInput(_)
        | Error::InvalidTrajectory { .. }
        | Error::Json(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_config(config: Option<&str>) -> PyResult<PipelineConfig> {
    match config {
        None => Ok(PipelineConfig::default()),
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(format!("bad config: {e}"))),
    }
}

/// A 4-connected gridworld. States are floor cells in row-major order;
/// actions are 0 up, 1 down, 2 left, 3 right.
#[pyclass(name = "GridWorld", module = "skillopt", frozen)]
struct PyGridWorld {
    inner: GridWorld,
}

#[pymethods]
impl PyGridWorld {
    #[staticmethod]
    fn four_rooms() -> Self {
        Self {
            inner: GridWorld::four_rooms(),
        }
    }

    /// Parses a map with `#` walls, `.` floor and `H` hallways.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: GridWorld::parse(text).map_err(py_err)?,
        })
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn hallways(&self) -> Vec<usize> {
        self.inner.hallways()
    }

    fn hallway_zone_states(&self) -> Vec<usize> {
        self.inner.hallway_zone_states()
    }

    fn coords(&self, s: usize) -> PyResult<(usize, usize)> {
        self.check_state(s)?;
        Ok(self.inner.coords(s))
    }

    fn state_at(&self, row: usize, col: usize) -> Option<usize> {
        self.inner.state_at(row, col)
    }

    fn step(&self, s: usize, action: usize) -> PyResult<usize> {
        self.check_state(s)?;
        let a = Action::from_index(action).ok_or_else(|| PyValueError::new_err(format!("action {action} not in 0..4")))?;
        Ok(self.inner.step(s, a))
    }

    fn bfs_distances(&self, target: usize) -> PyResult<Vec<usize>> {
        self.check_state(target)?;
        Ok(self.inner.bfs_distances(target))
    }

    fn __repr__(&self) -> String {
        format!(
            "GridWorld({}x{}, {} states)",
            self.inner.height(),
            self.inner.width(),
            self.inner.n_states()
        )
    }
}

impl PyGridWorld {
    fn check_state(&self, s: usize) -> PyResult<()> {
        if s < self.inner.n_states() {
            Ok(())
        } else {
            Err(PyValueError::new_err(format!("state {s} out of range")))
        }
    }
}

#[pyclass(name = "Trajectory", module = "skillopt", frozen)]
struct PyTrajectory {
    inner: Trajectory,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn id(&self) -> usize {
        self.inner.id
    }

    #[getter]
    fn goal(&self) -> usize {
        self.inner.goal
    }

    #[getter]
    fn final_state(&self) -> usize {
        self.inner.final_state
    }

    #[getter]
    fn states(&self) -> Vec<usize> {
        self.inner.steps.iter().map(|&(s, _)| s).collect()
    }

    #[getter]
    fn actions(&self) -> Vec<usize> {
        self.inner.steps.iter().map(|&(_, a)| a.index()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Trajectory(id={}, {} steps, goal={})",
            self.inner.id,
            self.inner.len(),
            self.inner.goal
        )
    }
}

/// `n` demonstrations between random start/goal pairs, each the greedy
/// rollout of a Q-learned policy for its goal.
#[pyfunction]
#[pyo3(signature = (gw, n, seed=0, episodes=20_000))]
fn generate_demos(py: Python<'_>, gw: &PyGridWorld, n: usize, seed: u64, episodes: usize) -> PyResult<Vec<PyTrajectory>> {
    let params = QLearningParams {
        episodes,
        ..QLearningParams::default()
    };
    let demos = py
        .detach(|| demo::generate_demos(&gw.inner, n, seed, &params))
        .map_err(py_err)?;
    Ok(demos.into_iter().map(|inner| PyTrajectory { inner }).collect())
}

/// Optimal action-values for the +10 goal / -1 step reward, one row of four
/// per state.
#[pyfunction]
#[pyo3(signature = (gw, goal, discount=0.9, tol=1e-10))]
fn value_iteration(gw: &PyGridWorld, goal: usize, discount: f64, tol: f64) -> PyResult<Vec<[f64; 4]>> {
    gw.check_state(goal)?;
    let q = vi(&gw.inner, &RewardFunction::goal(&gw.inner, goal), discount, tol).map_err(py_err)?;
    Ok((0..gw.inner.n_states())
        .map(|s| Action::ALL.map(|a| q.get(s, a)))
        .collect())
}

/// MaxEnt IRL with one-hot state features. Each path is `(start, visited)`.
/// Returns `(theta, iterations, gradient_inf_norm)`.
#[pyfunction]
#[pyo3(signature = (gw, paths, lr=0.1, iters=500, tol=1e-2))]
fn maxent_irl(
    py: Python<'_>,
    gw: &PyGridWorld,
    paths: Vec<(usize, Vec<usize>)>,
    lr: f64,
    iters: usize,
    tol: f64,
) -> PyResult<(Vec<f64>, usize, f64)> {
    let n = gw.inner.n_states();
    if let Some(bad) = paths.iter().flat_map(|(s, v)| std::iter::once(s).chain(v)).find(|&&s| s >= n) {
        return Err(PyValueError::new_err(format!("state {bad} out of range")));
    }
    let paths: Vec<StatePath> = paths.into_iter().map(|(s, v)| StatePath::new(s, v)).collect();
    let params = IrlParams { lr, iters, tol };
    let fit = py
        .detach(|| irl::maxent_irl(&gw.inner, &paths, &FeatureMap::one_hot(n), &params))
        .map_err(py_err)?;
    Ok((fit.weights.theta, fit.iterations, fit.gradient_inf_norm))
}

/// A one-class SVM with an RBF kernel on 2-D points.
#[pyclass(name = "OneClassSvm", module = "skillopt", frozen)]
struct PyOneClassSvm {
    fit: OcSvmFit,
}

#[pymethods]
impl PyOneClassSvm {
    #[new]
    #[pyo3(signature = (points, nu=0.1, kernel_gamma=0.5, tol=1e-9))]
    fn new(points: Vec<[f64; 2]>, nu: f64, kernel_gamma: f64, tol: f64) -> PyResult<Self> {
        Ok(Self {
            fit: ocsvm::fit(&points, nu, kernel_gamma, tol).map_err(py_err)?,
        })
    }

    /// Dual coefficients in training order.
    #[getter]
    fn alphas(&self) -> Vec<f64> {
        self.fit.alphas.clone()
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.fit.model.rho
    }

    #[getter]
    fn kkt_gap(&self) -> f64 {
        self.fit.kkt_gap
    }

    fn decision(&self, x: [f64; 2]) -> f64 {
        self.fit.model.decision(&x)
    }

    fn contains(&self, x: [f64; 2]) -> bool {
        self.fit.model.contains(&x)
    }
}

#[pyclass(name = "Segmentation", module = "skillopt", frozen, get_all)]
struct PySegmentation {
    /// Skill ids in ascending order.
    skills: Vec<usize>,
    /// Skill id at every step of every demonstration.
    modes: Vec<Vec<usize>>,
    joint_log_likelihood: f64,
    best_sweep: usize,
}

/// Runs the segmentation sampler. `config` is a JSON object of segmenter
/// settings; missing keys take their defaults.
#[pyfunction]
#[pyo3(signature = (gw, demos, config=None))]
fn segment(
    py: Python<'_>,
    gw: &PyGridWorld,
    demos: Vec<PyRef<'_, PyTrajectory>>,
    config: Option<&str>,
) -> PyResult<PySegmentation> {
    let config: SegmenterConfig = match config {
        None => SegmenterConfig::default(),
        Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(format!("bad config: {e}")))?,
    };
    let demos: Vec<Trajectory> = demos.iter().map(|d| d.inner.clone()).collect();
    let run = py
        .detach(|| Sampler::new(&gw.inner, &demos, config)?.run())
        .map_err(py_err)?;
    Ok(PySegmentation {
        skills: run.best.skills.iter().map(|k| k.id).collect(),
        modes: run.best.modes,
        joint_log_likelihood: run.best.joint_log_likelihood,
        best_sweep: run.best_sweep,
    })
}

/// The eight hallway options of the four-rooms map, as JSON.
#[pyfunction]
fn handcrafted_options(gw: &PyGridWorld) -> PyResult<String> {
    let opts = options::handcrafted_options(&gw.inner).map_err(py_err)?;
    serde_json::to_string(&opts).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pyclass(name = "LearningCurve", module = "skillopt", frozen, get_all)]
struct PyLearningCurve {
    goal: usize,
    condition: String,
    mean_steps: Vec<f64>,
    stderr: Vec<f64>,
    runs: usize,
}

impl From<LearningCurve> for PyLearningCurve {
    fn from(c: LearningCurve) -> Self {
        Self {
            goal: c.goal,
            condition: c.condition,
            mean_steps: c.mean_steps,
            stderr: c.stderr,
            runs: c.runs,
        }
    }
}

#[pymethods]
impl PyLearningCurve {
    fn __repr__(&self) -> String {
        format!(
            "LearningCurve(goal={}, condition={:?}, episodes={}, runs={})",
            self.goal,
            self.condition,
            self.mean_steps.len(),
            self.runs
        )
    }
}

/// Writes the demonstrations file for a pipeline config (flat JSON) and
/// returns its path.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn gen_demos(py: Python<'_>, config: Option<&str>) -> PyResult<PathBuf> {
    let cfg = parse_config(config)?;
    py.detach(|| cli::cmd_gen_demos(&cfg)).map_err(py_err)
}

/// Segments a demonstrations file; returns the number of skills found.
#[pyfunction]
#[pyo3(signature = (demos, config=None))]
fn segment_file(py: Python<'_>, demos: PathBuf, config: Option<&str>) -> PyResult<usize> {
    let cfg = parse_config(config)?;
    let art = py.detach(|| cli::cmd_segment(&cfg, &demos)).map_err(py_err)?;
    Ok(art.skills.len())
}

/// Builds learned (or handcrafted) options; returns how many were built.
#[pyfunction]
#[pyo3(signature = (segmentation, demos, handcrafted=false, config=None))]
fn build_options(
    py: Python<'_>,
    segmentation: PathBuf,
    demos: PathBuf,
    handcrafted: bool,
    config: Option<&str>,
) -> PyResult<usize> {
    let cfg = parse_config(config)?;
    let art = py
        .detach(|| cli::cmd_build_options(&cfg, &segmentation, &demos, handcrafted))
        .map_err(py_err)?;
    Ok(art.options.len())
}

/// Learning curves for no options, the given options, and the handcrafted
/// options.
#[pyfunction]
#[pyo3(signature = (options, config=None))]
fn evaluate(py: Python<'_>, options: PathBuf, config: Option<&str>) -> PyResult<Vec<PyLearningCurve>> {
    let cfg = parse_config(config)?;
    let curves = py.detach(|| cli::cmd_evaluate(&cfg, Path::new(&options))).map_err(py_err)?;
    Ok(curves.into_iter().map(Into::into).collect())
}

/// Every stage in order, writing artifacts to the config's `out_dir`.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn run_pipeline(py: Python<'_>, config: Option<&str>) -> PyResult<Vec<PyLearningCurve>> {
    let cfg = parse_config(config)?;
    let curves = py.detach(|| cli::run_pipeline(&cfg)).map_err(py_err)?;
    Ok(curves.into_iter().map(Into::into).collect())
}

#[pymodule]
#[pyo3(name = "skillopt")]
fn skillopt_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGridWorld>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyOneClassSvm>()?;
    m.add_class::<PySegmentation>()?;
    m.add_class::<PyLearningCurve>()?;
    m.add_function(wrap_pyfunction!(generate_demos, m)?)?;
    m.add_function(wrap_pyfunction!(value_iteration, m)?)?;
    m.add_function(wrap_pyfunction!(maxent_irl, m)?)?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(handcrafted_options, m)?)?;
    m.add_function(wrap_pyfunction!(gen_demos, m)?)?;
    m.add_function(wrap_pyfunction!(segment_file, m)?)?;
    m.add_function(wrap_pyfunction!(build_options, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
