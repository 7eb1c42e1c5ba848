//! Run configuration files.
//!
//! TOML with one section per module:
//!
//! ```toml
//! model_id = "bm"
//! seed = 7
//!
//! [reach_env]
//! variant = "M1"
//! azimuth = [180.0, 180.0]
//! elevation = [-30.0, -30.0]
//!
//! [a3c_trainer]
//! total_steps = 3_000_000
//! ```
//!
//! Missing keys take their defaults, which reproduce the baseline model.
//! The top-level `seed` is the master seed of the run and overrides
//! `a3c_trainer.seed`. Environment variables of the form
//! `REACHLAB_<SECTION>__<KEY>=<toml value>` (or `REACHLAB_<KEY>` for
//! top-level keys) override file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::GridSpec;
use crate::env::{
    AngleRange, CameraRig, DrSpec, EnvConfig, MdpSpec, ShadowFlag, TaskSpec, Variant,
    MAX_EPISODE_STEPS, TRAIN_SUCCESS_DISTANCE_M,
};
use crate::error::{Error, Result};
use crate::kinematics::{ArmGeometry, DEFAULT_MPI_DEG, INITIAL_SHRINK, NUM_JOINTS};
use crate::render::{RenderOptions, CAMERA_RADIUS_M, DEFAULT_ANCHOR};
use crate::trainer::TrainConfig;

pub const ENV_PREFIX: &str = "REACHLAB_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub variant: Variant,
    pub success_distance: f64,
    pub max_steps: u32,
    pub mpi_deg: [f64; NUM_JOINTS],
    /// Camera azimuth range in degrees; equal bounds fix the camera.
    pub azimuth: [f64; 2],
    pub elevation: [f64; 2],
    pub camera_radius: f64,
    pub camera_anchor: [f64; 3],
    pub target_x: [f64; 2],
    pub target_y: [f64; 2],
    pub initial_shrink: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            variant: Variant::M1,
            success_distance: TRAIN_SUCCESS_DISTANCE_M,
            max_steps: MAX_EPISODE_STEPS,
            mpi_deg: [DEFAULT_MPI_DEG; NUM_JOINTS],
            azimuth: [180.0, 180.0],
            elevation: [-30.0, -30.0],
            camera_radius: CAMERA_RADIUS_M,
            camera_anchor: DEFAULT_ANCHOR,
            target_x: [0.2, 0.4],
            target_y: [-0.3, 0.3],
            initial_shrink: INITIAL_SHRINK,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RendererSection {
    pub fov_y_deg: f64,
    pub target_min_px: f64,
    pub light_dir: [f64; 3],
    pub shadow: bool,
}

impl Default for RendererSection {
    fn default() -> Self {
        let r = RenderOptions::default();
        RendererSection {
            fov_y_deg: r.fov_y_deg,
            target_min_px: r.target_min_px,
            light_dir: r.light_dir,
            shadow: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model_id: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub arm_kinematics: ArmGeometry,
    pub scene_renderer: RendererSection,
    pub reach_env: EnvSection,
    pub a3c_trainer: TrainConfig,
    pub robustness_bench: GridSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::baseline()
    }
}

impl RunConfig {
    /// Fixed camera at azimuth 180°, elevation −30°.
    pub fn baseline() -> Self {
        RunConfig {
            model_id: "baseline".into(),
            seed: 0,
            output_dir: PathBuf::from("runs/baseline"),
            arm_kinematics: ArmGeometry::default(),
            scene_renderer: RendererSection::default(),
            reach_env: EnvSection::default(),
            a3c_trainer: TrainConfig::default(),
            robustness_bench: GridSpec::default(),
        }
    }

    /// Camera azimuth U(160°, 200°), elevation U(−40°, −20°) per episode.
    pub fn domain_randomized() -> Self {
        let dr = DrSpec::randomized();
        let mut c = RunConfig::baseline();
        c.model_id = "dr".into();
        c.output_dir = PathBuf::from("runs/dr");
        c.reach_env.azimuth = [dr.azimuth.0, dr.azimuth.1];
        c.reach_env.elevation = [dr.elevation.0, dr.elevation.1];
        c
    }

    pub fn dr_spec(&self) -> DrSpec {
        DrSpec {
            azimuth: AngleRange(self.reach_env.azimuth[0], self.reach_env.azimuth[1]),
            elevation: AngleRange(self.reach_env.elevation[0], self.reach_env.elevation[1]),
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        let e = &self.reach_env;
        let mut mdp = MdpSpec::new(e.variant);
        mdp.mpi = e.mpi_deg;
        mdp.success_distance = e.success_distance;
        mdp.max_steps = e.max_steps;
        EnvConfig {
            mdp,
            dr: self.dr_spec(),
            task: TaskSpec {
                target_x: e.target_x,
                target_y: e.target_y,
                initial_shrink: e.initial_shrink,
            },
            camera: CameraRig {
                radius: e.camera_radius,
                anchor: e.camera_anchor,
            },
            arm: self.arm_kinematics.clone(),
            render: RenderOptions {
                fov_y_deg: self.scene_renderer.fov_y_deg,
                target_min_px: self.scene_renderer.target_min_px,
                light_dir: self.scene_renderer.light_dir,
            },
            shadow: ShadowFlag(self.scene_renderer.shadow),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.a3c_trainer.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env_config().validate()?;
        self.train_config().validate()?;
        self.robustness_bench.validate()
    }

    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        Self::from_toml_with_overrides(text, std::iter::empty())
    }

    /// Parses `text`, then applies `(variable, value)` overrides.
    pub fn from_toml_with_overrides(
        text: &str,
        overrides: impl IntoIterator<Item = (String, String)>,
    ) -> std::result::Result<Self, String> {
        let overrides: Vec<(String, String)> = overrides
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        // direct parsing keeps source spans in diagnostics
        let direct: std::result::Result<RunConfig, _> = toml::from_str(text);
        match direct {
            Ok(c) if overrides.is_empty() => return Ok(c),
            Err(e) => return Err(e.to_string()),
            Ok(_) => {}
        }
        let mut table: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        for (var, value) in overrides {
            apply_override(&mut table, &var, &value)?;
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| e.to_string())?;
        Ok(config)
    }

    /// Loads a file and applies `REACHLAB_*` variables from the process
    /// environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: format!("cannot read: {e}"),
        })?;
        let vars = std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX));
        let config = Self::from_toml_with_overrides(&text, vars).map_err(|message| Error::Config {
            path: path.to_path_buf(),
            message,
        })?;
        config.validate().map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn apply_override(table: &mut toml::Table, var: &str, value: &str) -> std::result::Result<(), String> {
    let Some(rest) = var.strip_prefix(ENV_PREFIX) else {
        return Ok(());
    };
    let path: Vec<String> = rest.split("__").map(|s| s.to_ascii_lowercase()).collect();
    if path.iter().any(String::is_empty) {
        return Err(format!("{var}: malformed override name"));
    }
    // parse as a TOML value, falling back to a bare string
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let (last, parents) = path.split_last().expect("non-empty");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| format!("{var}: {p} is not a section"))?;
    }
    cur.insert(last.clone(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_baseline_model() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::baseline());
        let env = c.env_config();
        assert_eq!(env.dr, DrSpec::baseline());
        assert_eq!(env.mdp.success_distance, 0.05);
        assert_eq!(env.mdp.actions_per_joint(), 7);
        assert_eq!(env.task.target_x, [0.2, 0.4]);
        assert_eq!(env.task.target_y, [-0.3, 0.3]);
        assert_eq!(env.task.initial_shrink, 0.15);
        assert_eq!(c.a3c_trainer.total_steps, 70_000_000);
        assert_eq!(c.a3c_trainer.eval_interval, 50_000);
        assert_eq!(c.a3c_trainer.eval_episodes, 40);
    }

    #[test]
    fn dr_preset_differs_only_in_camera() {
        let (bm, dr) = (RunConfig::baseline(), RunConfig::domain_randomized());
        assert_eq!(dr.dr_spec(), DrSpec::randomized());
        let mut dr_env = dr.env_config();
        dr_env.dr = DrSpec::baseline();
        assert_eq!(dr_env, bm.env_config());
        assert_eq!(dr.a3c_trainer, bm.a3c_trainer);
    }

    #[test]
    fn round_trip_through_toml() {
        let c = RunConfig::domain_randomized();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "seed = 3\n\n[reach_env]\nvariant = \"M9\"\n";
        let err = RunConfig::from_toml_str(text).unwrap_err();
        assert!(err.contains("line 4"), "{err}");
        let err = RunConfig::from_toml_str("[a3c_trainer]\nbogus = 1\n").unwrap_err();
        assert!(err.contains("line 2") && err.contains("bogus"), "{err}");
    }

    #[test]
    fn environment_overrides() {
        let c = RunConfig::from_toml_with_overrides(
            "[a3c_trainer]\ntotal_steps = 100\n",
            vec![
                ("REACHLAB_A3C_TRAINER__TOTAL_STEPS".to_string(), "200000".to_string()),
                ("REACHLAB_REACH_ENV__VARIANT".to_string(), "M4".to_string()),
                ("REACHLAB_SEED".to_string(), "9".to_string()),
                ("OTHER".to_string(), "x".to_string()),
            ],
        )
        .unwrap();
        assert_eq!(c.a3c_trainer.total_steps, 200_000);
        assert_eq!(c.reach_env.variant, Variant::M4);
        assert_eq!(c.seed, 9);
        assert_eq!(c.train_config().seed, 9);
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = RunConfig::load(Path::new("/nonexistent/run.toml")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/run.toml"));
    }
}
