//! Camera-pose robustness bench: grid sweeps, heat maps and model
//! comparison.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{AngleRange, DrSpec, EnvConfig, ReachEnv, EVAL_SUCCESS_DISTANCE_M, MAX_EPISODE_STEPS};
use crate::error::{Error, Result};
use crate::net::NetParams;
use crate::seed;
use crate::trainer::{run_episode, EvalMode};

pub const HEATMAP_HEADER: &str =
    "azimuth_deg,elevation_deg,accuracy_pct,episodes,max_failure_dist_m,mean_failure_dist_m,in_training_region";

const ALIGN_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub azimuth_min: f64,
    pub azimuth_max: f64,
    pub azimuth_step: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub elevation_step: f64,
    pub episodes_per_cell: usize,
    pub success_tolerance: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            azimuth_min: 140.0,
            azimuth_max: 220.0,
            azimuth_step: 5.0,
            elevation_min: -50.0,
            elevation_max: -10.0,
            elevation_step: 5.0,
            episodes_per_cell: 100,
            success_tolerance: EVAL_SUCCESS_DISTANCE_M,
        }
    }
}

fn axis(name: &str, min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(min.is_finite() && max.is_finite() && step.is_finite()) || max < min {
        return Err(Error::InvalidGrid(format!("{name}: range {min}..{max} is empty")));
    }
    if min == max {
        return Ok(vec![min]);
    }
    if step <= 0.0 {
        return Err(Error::InvalidGrid(format!("{name}: step must be positive, got {step}")));
    }
    let n = (max - min) / step;
    if (n - n.round()).abs() > ALIGN_EPS * n.max(1.0) {
        return Err(Error::InvalidGrid(format!(
            "{name}: step {step} does not divide {min}..{max}"
        )));
    }
    let n = n.round() as usize;
    Ok((0..=n).map(|i| min + step * i as f64).collect())
}

impl GridSpec {
    /// Paper-scale settings: 1,000 episodes per cell.
    pub fn paper() -> Self {
        GridSpec {
            episodes_per_cell: 1000,
            ..Default::default()
        }
    }

    pub fn azimuths(&self) -> Result<Vec<f64>> {
        axis("azimuth", self.azimuth_min, self.azimuth_max, self.azimuth_step)
    }

    pub fn elevations(&self) -> Result<Vec<f64>> {
        axis("elevation", self.elevation_min, self.elevation_max, self.elevation_step)
    }

    pub fn validate(&self) -> Result<()> {
        let el = self.elevations()?;
        self.azimuths()?;
        if el.iter().any(|e| e.abs() >= 90.0) {
            return Err(Error::InvalidGrid("elevations must lie strictly inside ±90°".into()));
        }
        if self.episodes_per_cell == 0 {
            return Err(Error::InvalidGrid("episodes_per_cell must be positive".into()));
        }
        if !(self.success_tolerance > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "success tolerance must be positive, got {}",
                self.success_tolerance
            )));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> Result<usize> {
        Ok(self.azimuths()?.len() * self.elevations()?.len())
    }

    fn same_axes(&self, other: &GridSpec) -> bool {
        self.azimuths().ok() == other.azimuths().ok() && self.elevations().ok() == other.elevations().ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub azimuth: f64,
    pub elevation: f64,
}

/// Poses in row-major order: elevation rows, azimuth columns.
pub fn build_grid(spec: &GridSpec) -> Result<Vec<Pose>> {
    let az = spec.azimuths()?;
    let el = spec.elevations()?;
    Ok(el
        .iter()
        .flat_map(|&e| az.iter().map(move |&a| Pose { azimuth: a, elevation: e }))
        .collect())
}

pub fn in_training_region(pose: &Pose, region: &DrSpec) -> bool {
    let within = |r: &AngleRange, v: f64| v >= r.0 - ALIGN_EPS && v <= r.1 + ALIGN_EPS;
    within(&region.azimuth, pose.azimuth) && within(&region.elevation, pose.elevation)
}

/// `successes / (successes + failures) · 100`
pub fn accuracy(successes: usize, failures: usize) -> Result<f64> {
    let n = successes + failures;
    if n == 0 {
        return Err(Error::EmptyCell);
    }
    Ok(100.0 * successes as f64 / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub pose: Pose,
    pub successes: usize,
    pub failures: usize,
    pub accuracy_pct: f64,
    /// Defined only when at least one episode failed.
    pub max_failure_dist: Option<f64>,
    pub mean_failure_dist: Option<f64>,
    pub episode_seeds: Vec<u64>,
    pub in_training_region: bool,
}

impl CellResult {
    pub fn episodes(&self) -> usize {
        self.successes + self.failures
    }
}

/// Runs `episodes` seeded episodes from a fixed camera pose.
#[allow(clippy::too_many_arguments)]
pub fn run_cell(
    params: &NetParams<f32>,
    pose: Pose,
    env_config: &EnvConfig,
    episodes: usize,
    tolerance: f64,
    seed: u64,
    mode: EvalMode,
) -> Result<CellResult> {
    if episodes == 0 {
        return Err(Error::EmptyCell);
    }
    let mut config = env_config.with_fixed_camera(pose.azimuth, pose.elevation);
    config.mdp.success_distance = tolerance;
    let mut failures = Vec::new();
    let mut seeds = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let ep_seed = seed::derive(seed, &[i as u64]);
        seeds.push(ep_seed);
        let mut env = ReachEnv::new(config.clone(), seed::rng(ep_seed, &[0]))?;
        let outcome = run_episode(&mut env, params, mode, &mut seed::rng(ep_seed, &[1]))?;
        if outcome.final_distance > tolerance {
            failures.push(outcome.final_distance);
        }
    }
    let successes = episodes - failures.len();
    let (max_f, mean_f) = if failures.is_empty() {
        (None, None)
    } else {
        (
            Some(failures.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            Some(failures.iter().sum::<f64>() / failures.len() as f64),
        )
    };
    Ok(CellResult {
        pose,
        successes,
        failures: failures.len(),
        accuracy_pct: accuracy(successes, failures.len())?,
        max_failure_dist: max_f,
        mean_failure_dist: mean_f,
        episode_seeds: seeds,
        in_training_region: false,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_id: String,
    /// Fingerprint of the evaluated parameters, hex.
    pub checkpoint_hash: String,
    pub seed: u64,
    pub eval_mode: EvalMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatMapGrid {
    pub spec: GridSpec,
    /// Row-major, see [`build_grid`].
    pub cells: Vec<CellResult>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub parallel: bool,
    pub mode: EvalMode,
    pub model_id: String,
    /// Camera range used to tag cells as inside the training region.
    pub region: DrSpec,
    /// Where completed cells are written if some cell fails.
    pub partial_path: Option<PathBuf>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            parallel: true,
            mode: EvalMode::Greedy,
            model_id: String::new(),
            region: DrSpec::randomized(),
            partial_path: None,
        }
    }
}

pub fn cell_seed(master: u64, az_index: usize, el_index: usize) -> u64 {
    seed::derive(master, &[az_index as u64, el_index as u64])
}

pub fn sweep(
    params: &NetParams<f32>,
    grid: &GridSpec,
    env_config: &EnvConfig,
    seed: u64,
    options: &SweepOptions,
) -> Result<HeatMapGrid> {
    grid.validate()?;
    let naz = grid.azimuths()?.len();
    let poses = build_grid(grid)?;
    let job = |(i, pose): (usize, &Pose)| {
        let mut cell = run_cell(
            params,
            *pose,
            env_config,
            grid.episodes_per_cell,
            grid.success_tolerance,
            cell_seed(seed, i % naz, i / naz),
            options.mode,
        )?;
        cell.in_training_region = in_training_region(pose, &options.region);
        Ok(cell)
    };
    let results: Vec<Result<CellResult>> = if options.parallel {
        poses.par_iter().enumerate().map(job).collect()
    } else {
        poses.iter().enumerate().map(job).collect()
    };
    let provenance = Provenance {
        model_id: options.model_id.clone(),
        checkpoint_hash: format!("{:016x}", params.fingerprint()),
        seed,
        eval_mode: options.mode,
    };
    let mut cells = Vec::with_capacity(results.len());
    let mut first_error = None;
    for r in results {
        match r {
            Ok(c) => cells.push(c),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        if let Some(path) = &options.partial_path {
            let partial = HeatMapGrid {
                spec: grid.clone(),
                cells,
                provenance,
            };
            std::fs::write(path, serde_json::to_string_pretty(&partial)?)
                .map_err(|err| Error::io(path, err))?;
        }
        return Err(e);
    }
    Ok(HeatMapGrid {
        spec: grid.clone(),
        cells,
        provenance,
    })
}

/// Episode accounting for a sweep without running it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SweepPlan {
    pub cells: usize,
    pub episodes_per_cell: usize,
    pub total_episodes: usize,
    /// Upper bound on environment steps.
    pub max_env_steps: usize,
}

pub fn plan(grid: &GridSpec) -> Result<SweepPlan> {
    grid.validate()?;
    let cells = grid.cell_count()?;
    let total = cells * grid.episodes_per_cell;
    Ok(SweepPlan {
        cells,
        episodes_per_cell: grid.episodes_per_cell,
        total_episodes: total,
        max_env_steps: total * MAX_EPISODE_STEPS as usize,
    })
}

impl HeatMapGrid {
    pub fn validate(&self) -> Result<()> {
        let poses = build_grid(&self.spec)?;
        if poses.len() != self.cells.len() {
            return Err(Error::GridMismatch(format!(
                "{} cells for a {}-pose grid",
                self.cells.len(),
                poses.len()
            )));
        }
        for (p, c) in poses.iter().zip(&self.cells) {
            if (p.azimuth - c.pose.azimuth).abs() > ALIGN_EPS
                || (p.elevation - c.pose.elevation).abs() > ALIGN_EPS
            {
                return Err(Error::GridMismatch(format!(
                    "cell ({}, {}) out of order",
                    c.pose.azimuth, c.pose.elevation
                )));
            }
        }
        Ok(())
    }

    /// Mean accuracy over cells selected by `filter`.
    pub fn mean_accuracy(&self, filter: impl Fn(&CellResult) -> bool) -> Option<f64> {
        let sel: Vec<f64> = self.cells.iter().filter(|c| filter(c)).map(|c| c.accuracy_pct).collect();
        (!sel.is_empty()).then(|| sel.iter().sum::<f64>() / sel.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(HEATMAP_HEADER);
        s.push('\n');
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                c.pose.azimuth,
                c.pose.elevation,
                c.accuracy_pct,
                c.episodes(),
                opt(c.max_failure_dist),
                opt(c.mean_failure_dist),
                c.in_training_region
            );
        }
        s
    }

    /// Writes the CSV and a JSON sidecar (`<path>.json`) with the grid spec
    /// and provenance.
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let meta = Sidecar {
            spec: self.spec.clone(),
            provenance: self.provenance.clone(),
        };
        std::fs::write(&side, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&side, e))
    }

    /// Reads a heat-map CSV; grid axes are inferred from the rows unless a
    /// sidecar is present.
    pub fn read(path: &Path) -> Result<HeatMapGrid> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let meta: Option<Sidecar> = match std::fs::read_to_string(&side) {
            Ok(t) => Some(serde_json::from_str(&t)?),
            Err(_) => None,
        };
        let grid = Self::from_csv(&text, meta.as_ref().map(|m| m.spec.clone()))
            .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
        Ok(HeatMapGrid {
            provenance: meta.map(|m| m.provenance).unwrap_or_default(),
            ..grid
        })
    }

    pub fn from_csv(text: &str, spec: Option<GridSpec>) -> std::result::Result<HeatMapGrid, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == HEATMAP_HEADER => {}
            other => return Err(format!("unexpected header {other:?}")),
        }
        let mut cells = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let lineno = i + 2;
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 7 {
                return Err(format!("line {lineno}: expected 7 fields, got {}", f.len()));
            }
            let num = |s: &str, what: &str| {
                s.parse::<f64>()
                    .map_err(|_| format!("line {lineno}: bad {what} {s:?}"))
            };
            let opt = |s: &str, what: &str| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    num(s, what).map(Some)
                }
            };
            let acc = num(f[2], "accuracy")?;
            if !(0.0..=100.0).contains(&acc) {
                return Err(format!("line {lineno}: accuracy {acc} outside [0, 100]"));
            }
            let episodes: usize = f[3]
                .parse()
                .map_err(|_| format!("line {lineno}: bad episode count {:?}", f[3]))?;
            let successes = (acc / 100.0 * episodes as f64).round() as usize;
            cells.push(CellResult {
                pose: Pose {
                    azimuth: num(f[0], "azimuth")?,
                    elevation: num(f[1], "elevation")?,
                },
                successes,
                failures: episodes - successes.min(episodes),
                accuracy_pct: acc,
                max_failure_dist: opt(f[4], "failure distance")?,
                mean_failure_dist: opt(f[5], "failure distance")?,
                episode_seeds: Vec::new(),
                in_training_region: f[6]
                    .parse()
                    .map_err(|_| format!("line {lineno}: bad region flag {:?}", f[6]))?,
            });
        }
        let spec = match spec {
            Some(s) => s,
            None => infer_spec(&cells)?,
        };
        let grid = HeatMapGrid {
            spec,
            cells,
            provenance: Provenance::default(),
        };
        grid.validate().map_err(|e| e.to_string())?;
        Ok(grid)
    }

    /// Grayscale image, one `scale`×`scale` block per cell, highest
    /// elevation on top; white is 100%.
    pub fn to_pgm(&self, scale: usize) -> Result<Vec<u8>> {
        let naz = self.spec.azimuths()?.len();
        let nel = self.spec.elevations()?.len();
        let (w, h) = (naz * scale, nel * scale);
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        for y in 0..h {
            let row = nel - 1 - y / scale;
            for x in 0..w {
                let c = &self.cells[row * naz + x / scale];
                out.push((c.accuracy_pct / 100.0 * 255.0).round() as u8);
            }
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    spec: GridSpec,
    provenance: Provenance,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn infer_spec(cells: &[CellResult]) -> std::result::Result<GridSpec, String> {
    let mut az: Vec<f64> = cells.iter().map(|c| c.pose.azimuth).collect();
    let mut el: Vec<f64> = cells.iter().map(|c| c.pose.elevation).collect();
    for v in [&mut az, &mut el] {
        v.sort_by(|a, b| a.total_cmp(b));
        v.dedup();
    }
    let step = |v: &[f64]| if v.len() > 1 { v[1] - v[0] } else { 1.0 };
    let first = cells.first().ok_or("no rows")?;
    Ok(GridSpec {
        azimuth_min: az[0],
        azimuth_max: *az.last().unwrap(),
        azimuth_step: step(&az),
        elevation_min: el[0],
        elevation_max: *el.last().unwrap(),
        elevation_step: step(&el),
        episodes_per_cell: first.episodes(),
        ..Default::default()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IncrementCell {
    pub pose: Pose,
    /// Accuracy of the first grid minus the second, percentage points.
    pub delta_pct: f64,
    pub in_training_region: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IncrementGrid {
    pub cells: Vec<IncrementCell>,
    pub grand_mean: f64,
}

pub const INCREMENT_HEADER: &str = "azimuth_deg,elevation_deg,delta_accuracy_pct,in_training_region";

impl IncrementGrid {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(INCREMENT_HEADER);
        s.push('\n');
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                c.pose.azimuth, c.pose.elevation, c.delta_pct, c.in_training_region
            );
        }
        s
    }
}

/// Per-cell `a − b` accuracy.
pub fn compare(a: &HeatMapGrid, b: &HeatMapGrid) -> Result<IncrementGrid> {
    a.validate()?;
    b.validate()?;
    if !a.spec.same_axes(&b.spec) {
        return Err(Error::GridMismatch("the grids cover different camera poses".into()));
    }
    let cells: Vec<IncrementCell> = a
        .cells
        .iter()
        .zip(&b.cells)
        .map(|(x, y)| IncrementCell {
            pose: x.pose,
            delta_pct: x.accuracy_pct - y.accuracy_pct,
            in_training_region: x.in_training_region,
        })
        .collect();
    let grand_mean = cells.iter().map(|c| c.delta_pct).sum::<f64>() / cells.len() as f64;
    Ok(IncrementGrid { cells, grand_mean })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SliceAxis {
    /// Fix the azimuth, vary the elevation.
    Azimuth,
    /// Fix the elevation, vary the azimuth.
    Elevation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SlicePoint {
    /// The varying angle.
    pub angle: f64,
    pub accuracy_pct: f64,
    /// One standard deviation of the accuracy estimate, percentage points.
    pub std_pct: f64,
}

pub fn bernoulli_std_pct(accuracy_pct: f64, episodes: usize) -> f64 {
    let p = accuracy_pct / 100.0;
    100.0 * (p * (1.0 - p) / episodes as f64).sqrt()
}

pub fn project_slice(grid: &HeatMapGrid, fixed: SliceAxis, value: f64) -> Result<Vec<SlicePoint>> {
    grid.validate()?;
    let on_axis = |axis: Vec<f64>| {
        if axis.iter().any(|v| (v - value).abs() <= ALIGN_EPS) {
            Ok(())
        } else {
            Err(Error::OffGrid { value })
        }
    };
    match fixed {
        SliceAxis::Azimuth => on_axis(grid.spec.azimuths()?)?,
        SliceAxis::Elevation => on_axis(grid.spec.elevations()?)?,
    }
    Ok(grid
        .cells
        .iter()
        .filter_map(|c| {
            let (fixed_v, angle) = match fixed {
                SliceAxis::Azimuth => (c.pose.azimuth, c.pose.elevation),
                SliceAxis::Elevation => (c.pose.elevation, c.pose.azimuth),
            };
            ((fixed_v - value).abs() <= ALIGN_EPS).then(|| SlicePoint {
                angle,
                accuracy_pct: c.accuracy_pct,
                std_pct: bernoulli_std_pct(c.accuracy_pct, c.episodes()),
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::tensor;
    use crate::net::NUM_HEADS;
    use proptest::prelude::*;

    #[test]
    fn default_grid_has_153_poses() {
        let spec = GridSpec::default();
        let poses = build_grid(&spec).unwrap();
        assert_eq!(poses.len(), 153);
        assert_eq!(spec.azimuths().unwrap().len(), 17);
        assert_eq!(spec.elevations().unwrap().len(), 9);
        assert_eq!(poses[0], Pose { azimuth: 140.0, elevation: -50.0 });
        assert_eq!(poses[1].elevation, -50.0);
        assert_eq!(poses[152], Pose { azimuth: 220.0, elevation: -10.0 });
        let region = DrSpec::randomized();
        assert_eq!(poses.iter().filter(|p| in_training_region(p, &region)).count(), 45);
    }

    #[test]
    fn degenerate_and_misaligned_grids() {
        let spec = GridSpec {
            azimuth_min: 180.0,
            azimuth_max: 180.0,
            elevation_min: -30.0,
            elevation_max: -30.0,
            ..Default::default()
        };
        assert_eq!(build_grid(&spec).unwrap().len(), 1);
        let bad = GridSpec {
            azimuth_step: 7.0,
            ..Default::default()
        };
        assert!(matches!(build_grid(&bad), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn accuracy_formula() {
        assert_eq!(accuracy(900, 100).unwrap(), 90.0);
        assert_eq!(accuracy(40, 0).unwrap(), 100.0);
        assert_eq!(accuracy(0, 1000).unwrap(), 0.0);
        assert!(matches!(accuracy(0, 0), Err(Error::EmptyCell)));
    }

    #[test]
    fn paper_plan_counts_153k_episodes() {
        let p = plan(&GridSpec::paper()).unwrap();
        assert_eq!(p.cells, 153);
        assert_eq!(p.total_episodes, 153_000);
        assert_eq!(plan(&GridSpec::default()).unwrap().total_episodes, 15_300);
    }

    fn frozen(k: usize) -> NetParams<f32> {
        let mut p = NetParams::<f32>::zeros(k).unwrap();
        for j in 0..NUM_HEADS {
            p.tensor_mut(tensor::head_b(j))[0] = 50.0;
        }
        p
    }

    #[test]
    fn frozen_arm_fails_every_distant_target() {
        // targets beyond the arm's reach, so every start is at least 0.2 m away
        let mut env = EnvConfig::default();
        env.task.target_x = [-0.95, -0.9];
        let p = frozen(env.mdp.actions_per_joint());
        let pose = Pose { azimuth: 180.0, elevation: -30.0 };
        let cell = run_cell(&p, pose, &env, 6, 0.10, 1, EvalMode::Greedy).unwrap();
        assert_eq!(cell.accuracy_pct, 0.0);
        assert_eq!(cell.failures, 6);
        let initial: Vec<f64> = cell
            .episode_seeds
            .iter()
            .map(|s| {
                let mut e = ReachEnv::new(env.with_fixed_camera(180.0, -30.0), seed::rng(*s, &[0])).unwrap();
                e.reset().unwrap().0.initial_distance
            })
            .collect();
        assert!(initial.iter().all(|d| *d >= 0.2));
        let max = initial.iter().copied().fold(0.0, f64::max);
        let mean = initial.iter().sum::<f64>() / 6.0;
        assert!((cell.max_failure_dist.unwrap() - max).abs() < 1e-12);
        assert!((cell.mean_failure_dist.unwrap() - mean).abs() < 1e-12);
    }

    fn toy_grid(acc: &[f64]) -> HeatMapGrid {
        let spec = GridSpec {
            azimuth_min: 170.0,
            azimuth_max: 190.0,
            azimuth_step: 10.0,
            elevation_min: -30.0,
            elevation_max: -30.0,
            episodes_per_cell: 20,
            ..Default::default()
        };
        let cells = build_grid(&spec)
            .unwrap()
            .into_iter()
            .zip(acc)
            .map(|(pose, a)| {
                let s = (a / 100.0 * 20.0).round() as usize;
                CellResult {
                    pose,
                    successes: s,
                    failures: 20 - s,
                    accuracy_pct: *a,
                    max_failure_dist: (s < 20).then_some(0.3),
                    mean_failure_dist: (s < 20).then_some(0.2),
                    episode_seeds: vec![],
                    in_training_region: true,
                }
            })
            .collect();
        HeatMapGrid {
            spec,
            cells,
            provenance: Provenance::default(),
        }
    }

    #[test]
    fn compare_examples() {
        let drm = toy_grid(&[95.0, 100.0, 50.0]);
        let bm = toy_grid(&[70.0, 100.0, 60.0]);
        let inc = compare(&drm, &bm).unwrap();
        let d: Vec<f64> = inc.cells.iter().map(|c| c.delta_pct).collect();
        assert_eq!(d, vec![25.0, 0.0, -10.0]);
        assert!((inc.grand_mean - 5.0).abs() < 1e-12);
        assert!(compare(&drm, &drm).unwrap().cells.iter().all(|c| c.delta_pct == 0.0));
        let other = HeatMapGrid {
            spec: GridSpec::default(),
            ..drm.clone()
        };
        assert!(compare(&drm, &other).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let g = toy_grid(&[95.0, 100.0, 50.0]);
        let text = g.to_csv();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], HEATMAP_HEADER);
        assert_eq!(lines[2], "180,-30,100,20,,,true");
        let back = HeatMapGrid::from_csv(&text, None).unwrap();
        assert_eq!(back.cells.len(), 3);
        assert_eq!(back.cells[0].successes, 19);
        assert!(back.spec.same_axes(&g.spec));
        assert!(HeatMapGrid::from_csv("a,b\n", None).is_err());
        let pgm = g.to_pgm(2).unwrap();
        assert!(pgm.starts_with(b"P5\n6 2\n255\n"));
    }

    #[test]
    fn slices_and_deviation() {
        let g = toy_grid(&[100.0, 100.0, 50.0]);
        let s = project_slice(&g, SliceAxis::Elevation, -30.0).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].std_pct, 0.0);
        assert!((s[2].std_pct - 100.0 * (0.25f64 / 20.0).sqrt()).abs() < 1e-12);
        assert!(matches!(
            project_slice(&g, SliceAxis::Elevation, -25.0),
            Err(Error::OffGrid { .. })
        ));
    }

    #[test]
    fn deviation_agrees_with_bootstrap() {
        // resample n Bernoulli outcomes and compare the spread of the mean
        use rand::Rng;
        let (n, p) = (100usize, 0.8);
        let mut rng = seed::rng(3, &[]);
        let reps = 4000;
        let accs: Vec<f64> = (0..reps)
            .map(|_| 100.0 * (0..n).filter(|_| rng.gen_bool(p)).count() as f64 / n as f64)
            .collect();
        let mean = accs.iter().sum::<f64>() / reps as f64;
        let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let formula = bernoulli_std_pct(80.0, n);
        assert!((var.sqrt() - formula).abs() / formula < 0.05, "{} vs {formula}", var.sqrt());
    }

    proptest! {
        #[test]
        fn compare_is_antisymmetric(a in proptest::collection::vec(0.0f64..=100.0, 3), b in proptest::collection::vec(0.0f64..=100.0, 3)) {
            let (ga, gb) = (toy_grid(&a), toy_grid(&b));
            let ab = compare(&ga, &gb).unwrap();
            let ba = compare(&gb, &ga).unwrap();
            for (x, y) in ab.cells.iter().zip(&ba.cells) {
                prop_assert_eq!(x.delta_pct, -y.delta_pct);
                prop_assert!((-100.0..=100.0).contains(&x.delta_pct));
            }
        }

        #[test]
        fn grid_counts_match_formula(n_az in 1usize..20, n_el in 1usize..12, step in 1u32..6) {
            let step = step as f64;
            let spec = GridSpec {
                azimuth_min: 100.0,
                azimuth_max: 100.0 + step * (n_az - 1) as f64,
                azimuth_step: step,
                elevation_min: -60.0,
                elevation_max: -60.0 + step * (n_el - 1) as f64,
                elevation_step: step,
                ..Default::default()
            };
            prop_assert_eq!(build_grid(&spec).unwrap().len(), n_az * n_el);
        }
    }
}
