//! Python bindings for the reachlab core.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use reachlab::bench::{self, GridSpec, HeatMapGrid, Pose, SweepOptions};
use reachlab::config::RunConfig;
use reachlab::env::{self, EnvConfig};
use reachlab::kinematics::{self, ArmGeometry, JointVector, NUM_JOINTS};
use reachlab::net::{self, forward_frame, LstmState, NetParams};
use reachlab::render::{FrameRGB, FRAME_HEIGHT, FRAME_WIDTH};
use reachlab::trainer::{self, EvalMode, TrainOptions, TrainingCurvePoint};
use reachlab::{seed, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Aborted(_) | Error::Worker { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_mode(mode: &str) -> PyResult<EvalMode> {
    match mode {
        "greedy" => Ok(EvalMode::Greedy),
        "sampled" => Ok(EvalMode::Sampled),
        other => Err(PyValueError::new_err(format!(
            "unknown eval mode {other:?} (expected greedy or sampled)"
        ))),
    }
}

fn joints_from(q: Vec<f64>) -> PyResult<JointVector> {
    let arr: [f64; NUM_JOINTS] = q
        .try_into()
        .map_err(|v: Vec<f64>| PyValueError::new_err(format!("expected {NUM_JOINTS} joint angles, got {}", v.len())))?;
    Ok(JointVector(arr))
}

fn point_dict<'py>(py: Python<'py>, p: &TrainingCurvePoint) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("global_step", p.global_step)?;
    d.set_item("mean_dist", p.mean_dist)?;
    d.set_item("max_dist", p.max_dist)?;
    d.set_item("min_dist", p.min_dist)?;
    d.set_item("mean_reward", p.mean_reward)?;
    d.set_item("mean_initial_dist", p.mean_initial_dist)?;
    d.set_item("success_rate", p.success_rate)?;
    d.set_item("episodes", p.episodes)?;
    Ok(d)
}

/// Gripper position in meters for six joint angles in degrees.
#[pyfunction]
fn forward_kinematics(joints: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let p = kinematics::forward_kinematics(&joints_from(joints)?, &ArmGeometry::default());
    Ok((p.x, p.y, p.z))
}

/// Discounted n-step returns for a reward segment.
#[pyfunction]
#[pyo3(signature = (rewards, bootstrap, gamma=0.99))]
fn n_step_return(rewards: Vec<f64>, bootstrap: f64, gamma: f64) -> Vec<f64> {
    trainer::n_step_return(&rewards, bootstrap, gamma)
}

/// Success percentage for a cell.
#[pyfunction]
fn accuracy(successes: usize, failures: usize) -> PyResult<f64> {
    bench::accuracy(successes, failures).map_err(to_py)
}

#[pyclass(name = "RunConfig", module = "reachlab_py", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[staticmethod]
    fn baseline() -> Self {
        PyRunConfig { inner: RunConfig::baseline() }
    }

    #[staticmethod]
    fn domain_randomized() -> Self {
        PyRunConfig { inner: RunConfig::domain_randomized() }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner = RunConfig::from_toml_str(text).map_err(PyValueError::new_err)?;
        inner.validate().map_err(to_py)?;
        Ok(PyRunConfig { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyRunConfig { inner: RunConfig::load(&path).map_err(to_py)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn model_id(&self) -> String {
        self.inner.model_id.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn total_steps(&self) -> u64 {
        self.inner.a3c_trainer.total_steps
    }

    #[setter]
    fn set_total_steps(&mut self, steps: u64) {
        self.inner.a3c_trainer.total_steps = steps;
    }

    #[getter]
    fn workers(&self) -> usize {
        self.inner.a3c_trainer.workers
    }

    #[setter]
    fn set_workers(&mut self, workers: usize) {
        self.inner.a3c_trainer.workers = workers;
    }

    #[getter]
    fn eval_interval(&self) -> u64 {
        self.inner.a3c_trainer.eval_interval
    }

    #[setter]
    fn set_eval_interval(&mut self, interval: u64) {
        self.inner.a3c_trainer.eval_interval = interval;
    }

    #[getter]
    fn eval_episodes(&self) -> usize {
        self.inner.a3c_trainer.eval_episodes
    }

    #[setter]
    fn set_eval_episodes(&mut self, episodes: usize) {
        self.inner.a3c_trainer.eval_episodes = episodes;
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(model_id={:?}, seed={})", self.inner.model_id, self.inner.seed)
    }
}

/// One reaching environment producing 64×64 RGB frames as raw bytes.
#[pyclass(name = "ReachEnv", module = "reachlab_py")]
struct PyReachEnv {
    inner: env::ReachEnv,
}

#[pymethods]
impl PyReachEnv {
    #[new]
    #[pyo3(signature = (config=None, seed=0))]
    fn new(config: Option<PyRunConfig>, seed: u64) -> PyResult<Self> {
        let env_config: EnvConfig = config
            .map(|c| c.inner.env_config())
            .unwrap_or_else(|| RunConfig::baseline().env_config());
        let inner = env::ReachEnv::new(env_config, seed::rng(seed, &[0])).map_err(to_py)?;
        Ok(PyReachEnv { inner })
    }

    #[getter]
    fn actions_per_joint(&self) -> usize {
        self.inner.actions_per_joint()
    }

    #[getter]
    fn frame_shape(&self) -> (usize, usize, usize) {
        (FRAME_HEIGHT, FRAME_WIDTH, 3)
    }

    /// Starts an episode; returns the first frame.
    fn reset<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let (_, frame) = self.inner.reset().map_err(to_py)?;
        Ok(PyBytes::new(py, frame.as_bytes()))
    }

    /// Applies one action index per joint; returns (frame, reward, done, distance, success).
    fn step<'py>(
        &mut self,
        py: Python<'py>,
        actions: Vec<usize>,
    ) -> PyResult<(Bound<'py, PyBytes>, f64, bool, f64, bool)> {
        let actions: [usize; NUM_JOINTS] = actions
            .try_into()
            .map_err(|_| PyValueError::new_err(format!("expected {NUM_JOINTS} action indices")))?;
        let t = self.inner.step(&actions).map_err(to_py)?;
        Ok((PyBytes::new(py, t.frame.as_bytes()), t.reward, t.done, t.distance, t.success))
    }

    #[getter]
    fn joints(&self) -> Option<Vec<f64>> {
        self.inner.state().map(|s| s.joints.0.to_vec())
    }

    #[getter]
    fn target(&self) -> Option<(f64, f64)> {
        self.inner.state().map(|s| (s.target_xy[0], s.target_xy[1]))
    }

    #[getter]
    fn distance(&self) -> Option<f64> {
        self.inner.state().map(|s| s.last_distance)
    }
}

/// Network weights with a recurrent state for stepwise acting.
#[pyclass(name = "Policy", module = "reachlab_py")]
struct PyPolicy {
    params: NetParams<f32>,
    state: LstmState<f32>,
}

#[pymethods]
impl PyPolicy {
    /// Freshly initialized weights for `actions` increments per joint.
    #[staticmethod]
    #[pyo3(signature = (actions=7, seed=0))]
    fn init(actions: usize, seed: u64) -> PyResult<Self> {
        let params = NetParams::init(&mut seed::rng(seed, &[1]), actions).map_err(to_py)?;
        Ok(PyPolicy { params, state: LstmState::zeros() })
    }

    #[staticmethod]
    #[pyo3(signature = (path, actions=None))]
    fn load(path: PathBuf, actions: Option<usize>) -> PyResult<Self> {
        let params = net::load_params(&path, actions).map_err(to_py)?;
        Ok(PyPolicy { params, state: LstmState::zeros() })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        net::save_params(&self.params, &path).map_err(to_py)
    }

    #[getter]
    fn actions(&self) -> usize {
        self.params.actions()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn fingerprint(&self) -> u64 {
        self.params.fingerprint()
    }

    fn reset_state(&mut self) {
        self.state = LstmState::zeros();
    }

    /// Greedy action per joint for a frame; returns (actions, value).
    fn act(&mut self, frame: &[u8]) -> PyResult<(Vec<usize>, f64)> {
        let frame = FrameRGB::from_bytes(frame.to_vec()).map_err(to_py)?;
        let out = forward_frame(&self.params, &frame, &self.state).map_err(to_py)?;
        let actions = out.argmax_actions().to_vec();
        let value = out.value as f64;
        self.state = out.state;
        Ok((actions, value))
    }

    /// Per-joint action probabilities for a frame, without advancing the state.
    fn probabilities(&self, frame: &[u8]) -> PyResult<Vec<Vec<f64>>> {
        let frame = FrameRGB::from_bytes(frame.to_vec()).map_err(to_py)?;
        let out = forward_frame(&self.params, &frame, &self.state).map_err(to_py)?;
        Ok((0..NUM_JOINTS)
            .map(|j| out.policy(j).iter().map(|&p| p as f64).collect())
            .collect())
    }

    /// Evaluation summary over `episodes` episodes under the config's camera range.
    #[pyo3(signature = (config, episodes=40, seed=0, mode="greedy"))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        config: &PyRunConfig,
        episodes: usize,
        seed: u64,
        mode: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mode = parse_mode(mode)?;
        let env_config = config.inner.env_config();
        let params = &self.params;
        let point = py
            .detach(|| trainer::evaluate_checkpoint(params, &env_config, episodes, mode, seed))
            .map_err(to_py)?;
        point_dict(py, &point)
    }

    /// Accuracy at one fixed camera pose; returns (successes, failures, accuracy_pct).
    #[pyo3(signature = (config, azimuth, elevation, episodes=100, tolerance=None, seed=0))]
    fn evaluate_pose(
        &self,
        py: Python<'_>,
        config: &PyRunConfig,
        azimuth: f64,
        elevation: f64,
        episodes: usize,
        tolerance: Option<f64>,
        seed: u64,
    ) -> PyResult<(usize, usize, f64)> {
        let env_config = config.inner.env_config();
        let tolerance = tolerance.unwrap_or(config.inner.robustness_bench.success_tolerance);
        let params = &self.params;
        let cell = py
            .detach(|| {
                bench::run_cell(
                    params,
                    Pose { azimuth, elevation },
                    &env_config,
                    episodes,
                    tolerance,
                    seed,
                    EvalMode::Greedy,
                )
            })
            .map_err(to_py)?;
        Ok((cell.successes, cell.failures, cell.accuracy_pct))
    }

    /// Sweeps the config's camera grid; returns the heat map.
    #[pyo3(signature = (config, episodes=None, seed=0))]
    fn sweep(&self, py: Python<'_>, config: &PyRunConfig, episodes: Option<usize>, seed: u64) -> PyResult<PyHeatMap> {
        let mut grid: GridSpec = config.inner.robustness_bench.clone();
        if let Some(n) = episodes {
            grid.episodes_per_cell = n;
        }
        let env_config = config.inner.env_config();
        let options = SweepOptions {
            model_id: config.inner.model_id.clone(),
            region: config.inner.dr_spec(),
            ..SweepOptions::default()
        };
        let params = &self.params;
        let inner = py
            .detach(|| bench::sweep(params, &grid, &env_config, seed, &options))
            .map_err(to_py)?;
        Ok(PyHeatMap { inner })
    }
}

/// Accuracy over a grid of camera poses.
#[pyclass(name = "HeatMap", module = "reachlab_py")]
struct PyHeatMap {
    inner: HeatMapGrid,
}

#[pymethods]
impl PyHeatMap {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PyHeatMap { inner: HeatMapGrid::read(&path).map_err(to_py)? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).map_err(to_py)
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    /// Rows of (azimuth, elevation, accuracy_pct).
    fn cells(&self) -> Vec<(f64, f64, f64)> {
        self.inner
            .cells
            .iter()
            .map(|c| (c.pose.azimuth, c.pose.elevation, c.accuracy_pct))
            .collect()
    }

    /// Mean accuracy over all cells, or only those outside the training region.
    #[pyo3(signature = (outside_region_only=false))]
    fn mean_accuracy(&self, outside_region_only: bool) -> Option<f64> {
        self.inner
            .mean_accuracy(|c| !outside_region_only || !c.in_training_region)
    }

    /// Cell-wise difference self − other as (azimuth, elevation, delta) rows.
    fn compare(&self, other: &PyHeatMap) -> PyResult<Vec<(f64, f64, f64)>> {
        let inc = bench::compare(&self.inner, &other.inner).map_err(to_py)?;
        Ok(inc
            .cells
            .iter()
            .map(|c| (c.pose.azimuth, c.pose.elevation, c.delta_pct))
            .collect())
    }
}

/// Trains an agent; returns the learning curve as a list of dicts.
#[pyfunction]
#[pyo3(signature = (config, out_dir=None, force=false, verbose=false))]
fn train<'py>(
    py: Python<'py>,
    config: &PyRunConfig,
    out_dir: Option<PathBuf>,
    force: bool,
    verbose: bool,
) -> PyResult<(PyPolicy, Vec<Bound<'py, PyDict>>)> {
    config.inner.validate().map_err(to_py)?;
    let env_config = config.inner.env_config();
    let train_config = config.inner.train_config();
    let options = TrainOptions { resume: false, force, verbose };
    let outcome = py
        .detach(|| trainer::train(&env_config, &train_config, out_dir.as_deref(), &options))
        .map_err(to_py)?;
    let curve = outcome
        .curve
        .iter()
        .map(|p| point_dict(py, p))
        .collect::<PyResult<Vec<_>>>()?;
    Ok((PyPolicy { params: outcome.params, state: LstmState::zeros() }, curve))
}

#[pymodule]
fn reachlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NUM_JOINTS", NUM_JOINTS)?;
    m.add("FRAME_HEIGHT", FRAME_HEIGHT)?;
    m.add("FRAME_WIDTH", FRAME_WIDTH)?;
    m.add("EVAL_SUCCESS_DISTANCE_M", env::EVAL_SUCCESS_DISTANCE_M)?;
    m.add_function(wrap_pyfunction!(forward_kinematics, m)?)?;
    m.add_function(wrap_pyfunction!(n_step_return, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyReachEnv>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyHeatMap>()?;
    Ok(())
}
