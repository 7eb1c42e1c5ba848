//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{self, GridSpec, HeatMapGrid, SweepOptions};
use crate::config::RunConfig;
use crate::env::{ReachEnv, Variant};
use crate::error::Error;
use crate::net::load_params;
use crate::seed;
use crate::trainer::{self, TrainOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const RUN_CONFIG_FILE: &str = "run_config.toml";

#[derive(Parser, Debug)]
#[command(name = "reachlab", version, about = "Vision-based reaching: training and camera-robustness bench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (TOML). Defaults to the baseline model.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Action-set variant, overrides the config.
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Master seed, overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a policy and write its curve and weights.
    Train {
        #[command(flatten)]
        common: Common,
        /// Output directory; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace an existing run.
        #[arg(long)]
        force: bool,
        /// Continue an interrupted run from its checkpoint.
        #[arg(long, conflicts_with = "force")]
        resume: bool,
        /// Total global steps, overrides the config.
        #[arg(long)]
        steps: Option<u64>,
        /// Worker threads, overrides the config.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        quiet: bool,
    },
    /// Run evaluation episodes with a trained policy.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        /// Fixed camera `azimuth,elevation` in degrees instead of the
        /// training distribution.
        #[arg(long, value_parser = parse_pose)]
        pose: Option<(f64, f64)>,
        /// Success tolerance in meters.
        #[arg(long, default_value_t = crate::env::EVAL_SUCCESS_DISTANCE_M)]
        tolerance: f64,
    },
    /// Evaluate a policy over a grid of camera poses.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "dry_run")]
        checkpoint: Option<PathBuf>,
        /// `az_min:az_max:step,el_min:el_max:step`
        #[arg(long, value_parser = parse_grid)]
        grid: Option<[f64; 6]>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Output directory for the heat map.
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
        /// Also write a grayscale image of the accuracy matrix.
        #[arg(long)]
        image: bool,
        /// Run cells one after another.
        #[arg(long)]
        sequential: bool,
        /// Print the episode accounting and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Per-cell accuracy difference `a − b` of two heat maps.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Where to write the incremental CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one reset frame as a PPM image.
    RenderPreview {
        #[command(flatten)]
        common: Common,
        /// Camera `azimuth,elevation` in degrees.
        #[arg(long, value_parser = parse_pose, default_value = "180,-30")]
        pose: (f64, f64),
        #[arg(long, value_enum, default_value = "on")]
        shadow: Toggle,
        #[arg(long, default_value = "preview.ppm")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

fn parse_pose(s: &str) -> Result<(f64, f64), String> {
    let (a, e) = s
        .split_once(',')
        .ok_or_else(|| format!("expected azimuth,elevation, got {s:?}"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("bad angle {v:?}"));
    Ok((num(a)?, num(e)?))
}

pub fn parse_grid(s: &str) -> Result<[f64; 6], String> {
    let err = || format!("expected az_min:az_max:step,el_min:el_max:step, got {s:?}");
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(err());
    }
    let mut out = [0.0; 6];
    let mut i = 0;
    for p in parts {
        let fields: Vec<&str> = p.split(':').collect();
        if fields.len() != 3 {
            return Err(err());
        }
        for f in fields {
            out[i] = f.trim().parse().map_err(|_| err())?;
            i += 1;
        }
    }
    Ok(out)
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::InvalidConfig(_) | Error::OutputExists(_) | Error::InvalidGrid(_) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::baseline(),
    };
    if let Some(v) = common.variant {
        config.reach_env.variant = v;
    }
    if let Some(s) = common.seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

/// Parses arguments and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            EXIT_RUNTIME
        }
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train {
            common,
            out,
            force,
            resume,
            steps,
            workers,
            quiet,
        } => {
            let mut config = load_config(&common)?;
            if let Some(s) = steps {
                config.a3c_trainer.total_steps = s;
            }
            if let Some(w) = workers {
                config.a3c_trainer.workers = w;
            }
            config.validate()?;
            let dir = out.unwrap_or_else(|| config.output_dir.clone());
            let options = TrainOptions {
                resume,
                force,
                verbose: !quiet,
            };
            let env = config.env_config();
            let train = config.train_config();
            let outcome = trainer::train(&env, &train, Some(&dir), &options)?;
            write_file(&dir.join(RUN_CONFIG_FILE), config.to_toml().as_bytes())?;
            let last = outcome.curve.last();
            println!(
                "trained {} steps; final mean distance {}; artifacts in {}",
                outcome.global_step,
                last.map_or("n/a".into(), |p| format!("{:.4} m", p.mean_dist)),
                dir.display()
            );
            Ok(())
        }
        Command::Eval {
            common,
            checkpoint,
            episodes,
            pose,
            tolerance,
        } => {
            let config = load_config(&common)?;
            let mut env = config.env_config();
            let params = load_params(&checkpoint, Some(env.mdp.actions_per_joint()))?;
            if let Some((az, el)) = pose {
                env = env.with_fixed_camera(az, el);
            } else if let Some(dr) = &config.a3c_trainer.eval_dr {
                env.dr = dr.clone();
            }
            env.mdp.success_distance = tolerance;
            let n = episodes.unwrap_or(config.a3c_trainer.eval_episodes);
            let point = trainer::evaluate_checkpoint(
                &params,
                &env,
                n,
                config.a3c_trainer.eval_mode,
                seed::derive(config.seed, &[0xE7A1]),
            )?;
            println!("{}", serde_json::to_string_pretty(&point).map_err(Error::from)?);
            Ok(())
        }
        Command::Sweep {
            common,
            checkpoint,
            grid,
            episodes,
            out,
            image,
            sequential,
            dry_run,
        } => {
            let config = load_config(&common)?;
            let mut spec: GridSpec = config.robustness_bench.clone();
            if let Some(g) = grid {
                spec.azimuth_min = g[0];
                spec.azimuth_max = g[1];
                spec.azimuth_step = g[2];
                spec.elevation_min = g[3];
                spec.elevation_max = g[4];
                spec.elevation_step = g[5];
            }
            if let Some(n) = episodes {
                spec.episodes_per_cell = n;
            }
            let plan = bench::plan(&spec)?;
            if dry_run {
                println!(
                    "{} cells × {} episodes = {} episodes (at most {} environment steps)",
                    plan.cells, plan.episodes_per_cell, plan.total_episodes, plan.max_env_steps
                );
                return Ok(());
            }
            let checkpoint = checkpoint.expect("clap enforces --checkpoint");
            let env = config.env_config();
            let params = load_params(&checkpoint, Some(env.mdp.actions_per_joint()))?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let options = SweepOptions {
                parallel: !sequential,
                mode: config.a3c_trainer.eval_mode,
                model_id: config.model_id.clone(),
                partial_path: Some(out.join("partial.json")),
                ..Default::default()
            };
            let grid = bench::sweep(&params, &spec, &env, config.seed, &options)?;
            let csv = out.join("heatmap.csv");
            grid.write(&csv)?;
            write_file(&out.join(RUN_CONFIG_FILE), config.to_toml().as_bytes())?;
            if image {
                write_file(&out.join("heatmap.pgm"), &grid.to_pgm(8)?)?;
            }
            let region = options.region.clone();
            let inside = grid.mean_accuracy(|c| bench::in_training_region(&c.pose, &region));
            let outside = grid.mean_accuracy(|c| !bench::in_training_region(&c.pose, &region));
            println!(
                "{} cells; mean accuracy {:.2}% (training region {}, elsewhere {}); wrote {}",
                grid.cells.len(),
                grid.mean_accuracy(|_| true).unwrap_or(0.0),
                inside.map_or("n/a".into(), |v| format!("{v:.2}%")),
                outside.map_or("n/a".into(), |v| format!("{v:.2}%")),
                csv.display()
            );
            Ok(())
        }
        Command::Compare { a, b, out } => {
            let ga = HeatMapGrid::read(&a)?;
            let gb = HeatMapGrid::read(&b)?;
            let inc = bench::compare(&ga, &gb)?;
            if let Some(path) = out {
                write_file(&path, inc.to_csv().as_bytes())?;
            }
            println!("grand mean increment {:+.2} points over {} cells", inc.grand_mean, inc.cells.len());
            Ok(())
        }
        Command::RenderPreview {
            common,
            pose,
            shadow,
            out,
        } => {
            let config = load_config(&common)?;
            let mut env = config.env_config().with_fixed_camera(pose.0, pose.1);
            env.shadow.0 = shadow == Toggle::On;
            let mut env = ReachEnv::new(env, seed::rng(config.seed, &[0x9E7]))?;
            let (_, frame) = env.reset()?;
            write_file(&out, &frame.to_ppm())?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}
