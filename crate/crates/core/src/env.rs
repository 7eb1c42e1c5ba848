//! The reaching MDP: action sets and rewards for variants M0–M6, episode
//! lifecycle, target sampling and camera-pose randomization.

use std::fmt;
use std::str::FromStr;

use nalgebra::Point3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    apply_increment, distance, forward_kinematics, sample_initial_joints, ArmGeometry, JointVector,
    DEFAULT_MPI_DEG, INITIAL_SHRINK, NUM_JOINTS,
};
use crate::render::{
    CameraPose, FrameRGB, RenderOptions, Renderer, SceneState, CAMERA_RADIUS_M, DEFAULT_ANCHOR,
    TARGET_EDGE_M,
};

pub const MAX_EPISODE_STEPS: u32 = 50;
pub const TRAIN_SUCCESS_DISTANCE_M: f64 = 0.05;
pub const EVAL_SUCCESS_DISTANCE_M: f64 = 0.10;
pub const FAILURE_SCALE: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    M0,
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::M0,
        Variant::M1,
        Variant::M2,
        Variant::M3,
        Variant::M4,
        Variant::M5,
        Variant::M6,
    ];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown MDP variant {s:?} (expected M0..M6)")))
    }
}

/// How a variant chooses its increments, as fractions of the MPI.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionRule {
    Static(Vec<f64>),
    /// `coarse` while the distance exceeds `factor` × the rewarding
    /// distance, `fine` otherwise.
    Gated {
        factor: f64,
        coarse: Vec<f64>,
        fine: Vec<f64>,
    },
}

fn symmetric(divisors: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0];
    for d in divisors {
        out.push(1.0 / d);
        out.push(-1.0 / d);
    }
    out
}

/// Success reward bands as `(inclusive upper episode length, reward)`; the
/// first band starts at 0 inclusive and each later one is left-open.
pub type RewardBands = Vec<(u32, f64)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdpSpec {
    pub variant: Variant,
    /// Maximum position increment per axis, degrees.
    pub mpi: [f64; NUM_JOINTS],
    pub success_distance: f64,
    pub max_steps: u32,
}

impl Default for MdpSpec {
    fn default() -> Self {
        MdpSpec {
            variant: Variant::M1,
            mpi: [DEFAULT_MPI_DEG; NUM_JOINTS],
            success_distance: TRAIN_SUCCESS_DISTANCE_M,
            max_steps: MAX_EPISODE_STEPS,
        }
    }
}

impl MdpSpec {
    pub fn new(variant: Variant) -> Self {
        MdpSpec {
            variant,
            ..MdpSpec::default()
        }
    }

    pub fn action_rule(&self) -> ActionRule {
        use Variant::*;
        match self.variant {
            M0 => ActionRule::Static(symmetric(&[1.0, 2.0])),
            M1 | M2 | M3 => ActionRule::Static(symmetric(&[1.0, 10.0, 100.0])),
            M4 => ActionRule::Static(symmetric(&[1.0, 2.0, 4.0, 16.0, 64.0, 128.0])),
            M5 => ActionRule::Gated {
                factor: 1.5,
                coarse: symmetric(&[1.0, 2.0, 4.0]),
                fine: symmetric(&[10.0, 50.0, 100.0]),
            },
            M6 => ActionRule::Gated {
                factor: 1.3,
                coarse: symmetric(&[1.0, 2.0, 4.0]),
                fine: symmetric(&[4.0, 10.0, 25.0]),
            },
        }
    }

    pub fn success_bands(&self) -> RewardBands {
        use Variant::*;
        match self.variant {
            M2 | M6 => vec![(30, 90.0), (35, 70.0), (40, 50.0), (50, 30.0)],
            M3 => vec![(30, 100.0), (35, 50.0), (40, 30.0), (50, 20.0)],
            M0 | M1 | M4 | M5 => vec![(MAX_EPISODE_STEPS, 70.0)],
        }
    }

    /// Actions per joint; constant across the gate for M5/M6.
    pub fn actions_per_joint(&self) -> usize {
        match self.action_rule() {
            ActionRule::Static(v) => v.len(),
            ActionRule::Gated { coarse, .. } => coarse.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mpi.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidConfig("mpi must be positive".into()));
        }
        if !(self.success_distance > 0.0) {
            return Err(Error::InvalidConfig("success_distance must be positive".into()));
        }
        if self.max_steps == 0 || self.max_steps > MAX_EPISODE_STEPS {
            return Err(Error::InvalidConfig(format!(
                "max_steps must be in 1..={MAX_EPISODE_STEPS}"
            )));
        }
        Ok(())
    }
}

/// Per-joint increments, degrees, indexed `[joint][action]`.
pub type ActionSet = Vec<Vec<f64>>;

pub fn action_set(spec: &MdpSpec, dist: f64) -> ActionSet {
    let fractions = match spec.action_rule() {
        ActionRule::Static(v) => v,
        ActionRule::Gated {
            factor,
            coarse,
            fine,
        } => {
            if dist > factor * spec.success_distance {
                coarse
            } else {
                fine
            }
        }
    };
    spec.mpi
        .iter()
        .map(|m| fractions.iter().map(|f| f * m).collect())
        .collect()
}

/// Success reward for the variant's bands, or the distance penalty.
pub fn reward_fn(spec: &MdpSpec, dist: f64, episode_length: u32, success: bool) -> f64 {
    if success {
        let bands = spec.success_bands();
        bands
            .iter()
            .find(|(upper, _)| episode_length <= *upper)
            .or(bands.last())
            .map(|(_, r)| *r)
            .unwrap_or(0.0)
    } else {
        -(FAILURE_SCALE * dist).powi(2)
    }
}

/// A closed interval in degrees; `lo == hi` pins the value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleRange(pub f64, pub f64);

impl AngleRange {
    pub fn fixed(v: f64) -> Self {
        AngleRange(v, v)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.0 == self.1 {
            self.0
        } else {
            rng.gen_range(self.0..=self.1)
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.0 && v <= self.1
    }
}

/// Camera-pose randomization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrSpec {
    pub azimuth: AngleRange,
    pub elevation: AngleRange,
}

impl Default for DrSpec {
    fn default() -> Self {
        DrSpec::baseline()
    }
}

impl DrSpec {
    pub fn baseline() -> Self {
        DrSpec {
            azimuth: AngleRange::fixed(180.0),
            elevation: AngleRange::fixed(-30.0),
        }
    }

    pub fn randomized() -> Self {
        DrSpec {
            azimuth: AngleRange(160.0, 200.0),
            elevation: AngleRange(-40.0, -20.0),
        }
    }

    pub fn fixed(azimuth: f64, elevation: f64) -> Self {
        DrSpec {
            azimuth: AngleRange::fixed(azimuth),
            elevation: AngleRange::fixed(elevation),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("azimuth", self.azimuth), ("elevation", self.elevation)] {
            if !(r.0.is_finite() && r.1.is_finite()) || r.0 > r.1 {
                return Err(Error::InvalidConfig(format!(
                    "dr.{name} must be an ordered pair of finite angles"
                )));
            }
        }
        if self.elevation.0 <= -90.0 || self.elevation.1 >= 90.0 {
            return Err(Error::InvalidConfig("dr.elevation must stay within (-90, 90)".into()));
        }
        Ok(())
    }
}

/// Fields needed to build a camera beyond its two angles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRig {
    pub radius: f64,
    pub anchor: [f64; 3],
}

impl Default for CameraRig {
    fn default() -> Self {
        CameraRig {
            radius: CAMERA_RADIUS_M,
            anchor: DEFAULT_ANCHOR,
        }
    }
}

pub fn sample_camera<R: Rng + ?Sized>(dr: &DrSpec, rig: &CameraRig, rng: &mut R) -> Result<CameraPose> {
    let az = dr.azimuth.sample(rng);
    let el = dr.elevation.sample(rng);
    CameraPose::look_at(az, el, rig.radius, Point3::from(rig.anchor))
}

/// Target and initial-configuration distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub target_x: [f64; 2],
    pub target_y: [f64; 2],
    /// Fraction by which each joint limit is pulled toward zero for
    /// initial configurations.
    pub initial_shrink: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            target_x: [0.2, 0.4],
            target_y: [-0.3, 0.3],
            initial_shrink: INITIAL_SHRINK,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("target_x", self.target_x), ("target_y", self.target_y)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(Error::InvalidConfig(format!("task.{name} must be ordered")));
            }
        }
        if !(0.0..1.0).contains(&self.initial_shrink) {
            return Err(Error::InvalidConfig("task.initial_shrink must be in [0, 1)".into()));
        }
        Ok(())
    }
}

pub fn sample_target<R: Rng + ?Sized>(task: &TaskSpec, rng: &mut R) -> [f64; 2] {
    let x = rng.gen_range(task.target_x[0]..=task.target_x[1]);
    let y = rng.gen_range(task.target_y[0]..=task.target_y[1]);
    [x, y]
}

pub fn sample_joints<R: Rng + ?Sized>(task: &TaskSpec, rng: &mut R) -> JointVector {
    sample_initial_joints(rng, task.initial_shrink)
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub mdp: MdpSpec,
    pub dr: DrSpec,
    pub task: TaskSpec,
    pub camera: CameraRig,
    pub arm: ArmGeometry,
    pub render: RenderOptions,
    pub shadow: ShadowFlag,
}

/// Newtype so the shadow toggle defaults to on under serde.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShadowFlag(pub bool);

impl Default for ShadowFlag {
    fn default() -> Self {
        ShadowFlag(true)
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.mdp.validate()?;
        self.dr.validate()?;
        self.task.validate()?;
        self.arm.validate()?;
        self.render.validate()?;
        if !(self.camera.radius > 0.0) {
            return Err(Error::InvalidRadius(self.camera.radius));
        }
        Ok(())
    }

    /// Same configuration with the camera pinned to one pose.
    pub fn with_fixed_camera(&self, azimuth: f64, elevation: f64) -> EnvConfig {
        EnvConfig {
            dr: DrSpec::fixed(azimuth, elevation),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeState {
    pub joints: JointVector,
    pub target_xy: [f64; 2],
    pub camera: CameraPose,
    pub step_count: u32,
    pub done: bool,
    pub last_distance: f64,
    pub initial_distance: f64,
    pub success: bool,
}

#[derive(Clone, Debug)]
pub struct Transition {
    pub frame: FrameRGB,
    pub reward: f64,
    pub done: bool,
    pub distance: f64,
    pub success: bool,
}

/// One environment instance; all randomness comes from its own rng.
pub struct ReachEnv {
    config: EnvConfig,
    renderer: Renderer,
    rng: ChaCha8Rng,
    state: Option<EpisodeState>,
}

impl ReachEnv {
    pub fn new(config: EnvConfig, rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let renderer = Renderer::new(config.arm.clone(), config.render.clone());
        Ok(ReachEnv {
            config,
            renderer,
            rng,
            state: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&EpisodeState> {
        self.state.as_ref()
    }

    pub fn renderer(&self) -> &Renderer {
        &self.renderer
    }

    pub fn actions_per_joint(&self) -> usize {
        self.config.mdp.actions_per_joint()
    }

    fn target_point(&self, target_xy: [f64; 2]) -> Point3<f64> {
        Point3::new(target_xy[0], target_xy[1], TARGET_EDGE_M / 2.0)
    }

    pub fn gripper_distance(&self, joints: &JointVector, target_xy: [f64; 2]) -> f64 {
        distance(
            &forward_kinematics(joints, &self.config.arm),
            &self.target_point(target_xy),
        )
    }

    pub fn reset(&mut self) -> Result<(EpisodeState, FrameRGB)> {
        let joints = sample_joints(&self.config.task, &mut self.rng);
        let target_xy = sample_target(&self.config.task, &mut self.rng);
        let camera = sample_camera(&self.config.dr, &self.config.camera, &mut self.rng)?;
        let d = self.gripper_distance(&joints, target_xy);
        let state = EpisodeState {
            joints,
            target_xy,
            camera,
            step_count: 0,
            done: false,
            last_distance: d,
            initial_distance: d,
            success: false,
        };
        let frame = self.render_state(&state);
        self.state = Some(state.clone());
        Ok((state, frame))
    }

    fn render_state(&self, s: &EpisodeState) -> FrameRGB {
        let mut scene = SceneState::new(s.joints, s.target_xy);
        scene.shadow_enabled = self.config.shadow.0;
        self.renderer.render(&scene, &s.camera)
    }

    /// The increments available from the current state.
    pub fn current_action_set(&self) -> Option<ActionSet> {
        self.state
            .as_ref()
            .map(|s| action_set(&self.config.mdp, s.last_distance))
    }

    pub fn step(&mut self, actions: &[usize; NUM_JOINTS]) -> Result<Transition> {
        let mdp = &self.config.mdp;
        let state = self.state.as_ref().ok_or(Error::EpisodeDone)?;
        if state.done {
            return Err(Error::EpisodeDone);
        }
        let set = action_set(mdp, state.last_distance);
        let mut delta = [0.0; NUM_JOINTS];
        for (joint, &index) in actions.iter().enumerate() {
            delta[joint] = *set[joint].get(index).ok_or(Error::InvalidAction {
                joint,
                index,
                available: set[joint].len(),
            })?;
        }
        let joints = apply_increment(state.joints, JointVector(delta), &mdp.mpi)?;
        let dist = self.gripper_distance(&joints, state.target_xy);
        let step_count = state.step_count + 1;
        let success = dist <= mdp.success_distance;
        let done = success || step_count >= mdp.max_steps;
        let reward = reward_fn(mdp, dist, step_count, success);

        let state = self.state.as_mut().expect("checked above");
        state.joints = joints;
        state.step_count = step_count;
        state.last_distance = dist;
        state.done = done;
        state.success = success;
        let snapshot = state.clone();
        let frame = self.render_state(&snapshot);
        Ok(Transition {
            frame,
            reward,
            done,
            distance: dist,
            success,
        })
    }

    /// Places the episode in a chosen configuration; for tests and tools.
    pub fn set_state(&mut self, joints: JointVector, target_xy: [f64; 2], camera: CameraPose) -> FrameRGB {
        let d = self.gripper_distance(&joints, target_xy);
        let state = EpisodeState {
            joints,
            target_xy,
            camera,
            step_count: 0,
            done: false,
            last_distance: d,
            initial_distance: d,
            success: false,
        };
        let frame = self.render_state(&state);
        self.state = Some(state);
        frame
    }
}
