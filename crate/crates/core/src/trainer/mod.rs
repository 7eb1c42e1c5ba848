//! Asynchronous advantage actor-critic training.
//!
//! Workers share one parameter store guarded by a mutex. Each worker copies
//! the parameters, rolls out up to `n_step` steps in its own environment,
//! backpropagates the actor-critic loss through the recurrent steps and
//! applies the clipped gradient to the store under the lock. Every
//! `eval_interval` global steps the worker that crosses the boundary runs
//! the evaluation protocol on a frozen snapshot.

pub mod optim;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{DrSpec, EnvConfig, ReachEnv};
use crate::error::{Error, Result};
use crate::kinematics::NUM_JOINTS;
use crate::net::{
    backward, forward_frame, load_params, save_params, LossSpec, LstmState, NetParams, Trajectory,
    NUM_HEADS,
};
use crate::render::FrameRGB;
use crate::seed;

pub use optim::{clip_global_norm, Adam};

pub const CURVE_HEADER: &str = "global_step,mean_dist,max_dist,min_dist,mean_reward";
pub const CURVE_FILE: &str = "curve.csv";
pub const FINAL_PARAMS_FILE: &str = "final.bin";
pub const BEST_PARAMS_FILE: &str = "best.bin";
pub const TRAIN_CONFIG_FILE: &str = "train_config.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";

const STREAM_INIT: u64 = 1;
const STREAM_ENV: u64 = 2;
const STREAM_ACTIONS: u64 = 3;
const STREAM_EVAL: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Most probable action of every head.
    #[default]
    Greedy,
    /// Actions drawn from the policy.
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub gamma: f64,
    pub n_step: usize,
    pub workers: usize,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Multiplies rewards before returns are formed for the loss; the value
    /// head learns returns in these units. Curves keep raw rewards.
    pub reward_scale: f64,
    /// Global-norm gradient clip; 0 disables clipping.
    pub grad_clip: f64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub eval_mode: EvalMode,
    /// Camera distribution for evaluation episodes; `None` reuses the
    /// training distribution.
    pub eval_dr: Option<DrSpec>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 70_000_000,
            gamma: 0.99,
            n_step: 20,
            workers: 8,
            learning_rate: 1e-4,
            entropy_coef: 0.01,
            value_coef: 0.5,
            reward_scale: 1.0,
            grad_clip: 40.0,
            eval_interval: 50_000,
            eval_episodes: 40,
            eval_mode: EvalMode::Greedy,
            eval_dr: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if self.n_step == 0 || self.workers == 0 || self.eval_episodes == 0 {
            return bad("n_step, workers and eval_episodes must be positive".into());
        }
        if self.eval_interval == 0 || self.total_steps % self.eval_interval != 0 {
            return bad(format!(
                "eval_interval {} must be positive and divide total_steps {}",
                self.eval_interval, self.total_steps
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, v) in [
            ("entropy_coef", self.entropy_coef),
            ("value_coef", self.value_coef),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad(format!("reward_scale must be positive, got {}", self.reward_scale));
        }
        if let Some(dr) = &self.eval_dr {
            dr.validate()?;
        }
        Ok(())
    }

    /// Number of evaluation points a complete run produces.
    pub fn eval_points(&self) -> u64 {
        self.total_steps / self.eval_interval
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurvePoint {
    pub global_step: u64,
    pub mean_dist: f64,
    pub max_dist: f64,
    pub min_dist: f64,
    pub mean_reward: f64,
    pub mean_initial_dist: f64,
    /// Fraction of evaluation episodes ending within the success distance.
    pub success_rate: f64,
    pub episodes: usize,
}

impl TrainingCurvePoint {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.global_step, self.mean_dist, self.max_dist, self.min_dist, self.mean_reward
        )
    }
}

/// `G_t = r_t + γ G_{t+1}`, seeded with `bootstrap`.
pub fn n_step_return(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = bootstrap;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        g = r + gamma * g;
        *o = g;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub policy: f64,
    pub value: f64,
    /// Summed Shannon entropy of all heads over all steps.
    pub entropy: f64,
    pub total: f64,
}

/// Evaluates the actor-critic loss from the activations recorded in the
/// trajectory.
pub fn compute_loss(
    traj: &Trajectory<f32>,
    returns: &[f64],
    value_coef: f64,
    entropy_coef: f64,
) -> Result<LossBreakdown> {
    if returns.len() != traj.len() {
        return Err(Error::Shape(format!(
            "{} returns for a trajectory of {} steps",
            returns.len(),
            traj.len()
        )));
    }
    let (mut policy, mut value, mut entropy) = (0.0, 0.0, 0.0);
    for (step, g) in traj.steps.iter().zip(returns) {
        let v = step.cache.value() as f64;
        let adv = g - v;
        value += adv * adv;
        let lp = step.cache.log_probs();
        let k = lp.len() / NUM_HEADS;
        for (j, &a) in step.actions.iter().enumerate() {
            let head = &lp[j * k..(j + 1) * k];
            policy -= head[a] as f64 * adv;
            entropy -= head
                .iter()
                .map(|l| {
                    let l = *l as f64;
                    l.exp() * l
                })
                .sum::<f64>();
        }
    }
    Ok(LossBreakdown {
        policy,
        value,
        entropy,
        total: policy + value_coef * value - entropy_coef * entropy,
    })
}

/// Draws an index from a discrete distribution.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f32], rng: &mut R) -> usize {
    let u: f32 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

fn choose_actions<R: Rng + ?Sized>(
    probs: &[f32],
    mode: EvalMode,
    rng: &mut R,
) -> [usize; NUM_JOINTS] {
    let k = probs.len() / NUM_HEADS;
    let mut out = [0; NUM_JOINTS];
    for (j, a) in out.iter_mut().enumerate() {
        let p = &probs[j * k..(j + 1) * k];
        *a = match mode {
            EvalMode::Sampled => sample_categorical(p, rng),
            EvalMode::Greedy => {
                let mut best = 0;
                for (i, v) in p.iter().enumerate() {
                    if *v > p[best] {
                        best = i;
                    }
                }
                best
            }
        };
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub initial_distance: f64,
    pub final_distance: f64,
    pub total_reward: f64,
    pub steps: u32,
    pub success: bool,
}

/// Runs one full episode with frozen parameters.
pub fn run_episode<R: Rng + ?Sized>(
    env: &mut ReachEnv,
    params: &NetParams<f32>,
    mode: EvalMode,
    rng: &mut R,
) -> Result<EpisodeOutcome> {
    let (state, mut frame) = env.reset()?;
    let mut lstm = LstmState::zeros();
    let mut total_reward = 0.0;
    let mut steps = 0;
    loop {
        let out = forward_frame(params, &frame, &lstm)?;
        let actions = choose_actions(&out.probs, mode, rng);
        let tr = env.step(&actions)?;
        total_reward += tr.reward;
        steps += 1;
        if tr.done {
            return Ok(EpisodeOutcome {
                initial_distance: state.initial_distance,
                final_distance: tr.distance,
                total_reward,
                steps,
                success: tr.success,
            });
        }
        frame = tr.frame;
        lstm = out.state;
    }
}

/// Runs `episodes` evaluation episodes; `global_step` of the result is 0
/// and is set by the caller.
pub fn evaluate_checkpoint(
    params: &NetParams<f32>,
    env_config: &EnvConfig,
    episodes: usize,
    mode: EvalMode,
    seed: u64,
) -> Result<TrainingCurvePoint> {
    if episodes == 0 {
        return Err(Error::InvalidConfig("evaluation needs at least one episode".into()));
    }
    let mut env = ReachEnv::new(env_config.clone(), seed::rng(seed, &[0]))?;
    let mut rng = seed::rng(seed, &[1]);
    let mut outcomes = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        outcomes.push(run_episode(&mut env, params, mode, &mut rng)?);
    }
    Ok(summarize(&outcomes))
}

pub fn summarize(outcomes: &[EpisodeOutcome]) -> TrainingCurvePoint {
    let n = outcomes.len() as f64;
    let dists = outcomes.iter().map(|o| o.final_distance);
    TrainingCurvePoint {
        global_step: 0,
        mean_dist: dists.clone().sum::<f64>() / n,
        max_dist: dists.clone().fold(f64::NEG_INFINITY, f64::max),
        min_dist: dists.fold(f64::INFINITY, f64::min),
        mean_reward: outcomes.iter().map(|o| o.total_reward).sum::<f64>() / n,
        mean_initial_dist: outcomes.iter().map(|o| o.initial_distance).sum::<f64>() / n,
        success_rate: outcomes.iter().filter(|o| o.success).count() as f64 / n,
        episodes: outcomes.len(),
    }
}

/// A rollout segment ready for the loss.
pub struct Segment {
    pub trajectory: Trajectory<f32>,
    /// Value estimate of the state after the last step; 0 at termination.
    pub bootstrap: f32,
    pub finished: Option<EpisodeOutcome>,
}

/// A worker's private environment and recurrent state carried across
/// segments.
pub struct Rollout {
    env: ReachEnv,
    rng: ChaCha8Rng,
    frame: FrameRGB,
    lstm: LstmState<f32>,
    initial_distance: f64,
    episode_reward: f64,
    episode_steps: u32,
}

impl Rollout {
    pub fn new(mut env: ReachEnv, rng: ChaCha8Rng) -> Result<Self> {
        let (state, frame) = env.reset()?;
        Ok(Rollout {
            env,
            rng,
            frame,
            lstm: LstmState::zeros(),
            initial_distance: state.initial_distance,
            episode_reward: 0.0,
            episode_steps: 0,
        })
    }

    pub fn env(&self) -> &ReachEnv {
        &self.env
    }

    /// Collects up to `n` steps with sampled actions, stopping early at the
    /// end of an episode.
    pub fn segment(&mut self, params: &NetParams<f32>, n: usize) -> Result<Segment> {
        let mut traj = Trajectory::new(params, self.lstm.clone());
        let mut finished = None;
        for _ in 0..n {
            let out = forward_frame(params, &self.frame, &self.lstm)?;
            let actions = choose_actions(&out.probs, EvalMode::Sampled, &mut self.rng);
            let tr = self.env.step(&actions)?;
            self.lstm = out.state.clone();
            traj.push(out, actions, tr.reward as f32, tr.done);
            self.episode_reward += tr.reward;
            self.episode_steps += 1;
            self.frame = tr.frame;
            if tr.done {
                finished = Some(EpisodeOutcome {
                    initial_distance: self.initial_distance,
                    final_distance: tr.distance,
                    total_reward: self.episode_reward,
                    steps: self.episode_steps,
                    success: tr.success,
                });
                let (state, frame) = self.env.reset()?;
                self.frame = frame;
                self.lstm = LstmState::zeros();
                self.initial_distance = state.initial_distance;
                self.episode_reward = 0.0;
                self.episode_steps = 0;
                break;
            }
        }
        let bootstrap = if finished.is_some() {
            0.0
        } else {
            forward_frame(params, &self.frame, &self.lstm)?.value
        };
        Ok(Segment {
            trajectory: traj,
            bootstrap,
            finished,
        })
    }
}

/// Gradient of the loss over one segment, clipped by global norm.
pub fn segment_gradients(
    params: &NetParams<f32>,
    segment: &Segment,
    config: &TrainConfig,
) -> Result<(NetParams<f32>, f64)> {
    let rewards: Vec<f64> = segment
        .trajectory
        .rewards()
        .iter()
        .map(|r| *r as f64 * config.reward_scale)
        .collect();
    let returns = n_step_return(&rewards, segment.bootstrap as f64, config.gamma);
    let spec = LossSpec {
        returns: returns.iter().map(|g| *g as f32).collect(),
        value_coef: config.value_coef as f32,
        entropy_coef: config.entropy_coef as f32,
    };
    let mut grads = backward(params, &segment.trajectory, &spec)?;
    let norm = clip_global_norm(&mut grads, config.grad_clip);
    Ok((grads, norm))
}

struct StoreInner {
    params: NetParams<f32>,
    adam: Adam,
    global_step: u64,
}

/// Snapshot taken right after an update crossed an evaluation boundary.
pub struct EvalTicket {
    pub boundary: u64,
    pub global_step: u64,
    pub params: NetParams<f32>,
    adam: Adam,
}

/// Parameters and optimizer state shared by all workers.
pub struct SharedStore {
    inner: Mutex<StoreInner>,
    eval_interval: u64,
    total_steps: u64,
    stop: AtomicBool,
}

impl SharedStore {
    pub fn new(params: NetParams<f32>, adam: Adam, global_step: u64, config: &TrainConfig) -> Self {
        SharedStore {
            inner: Mutex::new(StoreInner {
                params,
                adam,
                global_step,
            }),
            eval_interval: config.eval_interval,
            total_steps: config.total_steps,
            stop: AtomicBool::new(false),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, StoreInner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn snapshot(&self) -> (NetParams<f32>, u64) {
        let g = self.lock();
        (g.params.clone(), g.global_step)
    }

    pub fn global_step(&self) -> u64 {
        self.lock().global_step
    }

    pub fn finished(&self) -> bool {
        self.stop.load(Ordering::Relaxed) || self.global_step() >= self.total_steps
    }

    pub fn request_stop(&self) {
        self.stop.store(true, Ordering::Relaxed);
    }

    /// Applies one update and advances the step counter by `steps`. Returns
    /// snapshots for every evaluation boundary the update crossed.
    pub fn apply(&self, grads: &NetParams<f32>, steps: u64) -> Vec<EvalTicket> {
        let mut g = self.lock();
        let inner = &mut *g;
        inner.adam.apply(&mut inner.params, grads);
        let before = inner.global_step;
        inner.global_step += steps;
        let after = inner.global_step;
        let mut tickets = Vec::new();
        let mut b = (before / self.eval_interval + 1) * self.eval_interval;
        while b <= after && b <= self.total_steps {
            tickets.push(EvalTicket {
                boundary: b,
                global_step: after,
                params: inner.params.clone(),
                adam: inner.adam.clone(),
            });
            b += self.eval_interval;
        }
        tickets
    }

    pub fn into_parts(self) -> (NetParams<f32>, Adam, u64) {
        let g = self.inner.into_inner().unwrap_or_else(|p| p.into_inner());
        (g.params, g.adam, g.global_step)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WorkerReport {
    pub worker_id: usize,
    pub steps: u64,
    pub updates: u64,
    pub episodes: u64,
}

/// Per-run state persisted next to the checkpoint.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub global_step: u64,
    /// Number of times the run has been started; separates random streams
    /// of resumed runs.
    pub generation: u64,
    pub best_mean_dist: Option<f64>,
    pub curve: Vec<TrainingCurvePoint>,
}

/// Collects evaluation points and writes artifacts in boundary order.
struct Recorder {
    out: Option<PathBuf>,
    curve_writer: Option<BufWriter<File>>,
    pending: BTreeMap<u64, (TrainingCurvePoint, EvalTicket)>,
    next_boundary: u64,
    interval: u64,
    state: RunState,
    verbose: bool,
}

impl Recorder {
    fn submit(&mut self, point: TrainingCurvePoint, ticket: EvalTicket) -> Result<()> {
        self.pending.insert(ticket.boundary, (point, ticket));
        while let Some((point, ticket)) = self.pending.remove(&self.next_boundary) {
            self.next_boundary += self.interval;
            self.commit(point, ticket)?;
        }
        Ok(())
    }

    fn commit(&mut self, point: TrainingCurvePoint, ticket: EvalTicket) -> Result<()> {
        if self.verbose {
            eprintln!(
                "step {:>10}  mean_dist {:.4} (initial {:.4})  min {:.4}  max {:.4}  reward {:.3}  success {:.0}%",
                point.global_step,
                point.mean_dist,
                point.mean_initial_dist,
                point.min_dist,
                point.max_dist,
                point.mean_reward,
                100.0 * point.success_rate
            );
        }
        let improved = self
            .state
            .best_mean_dist
            .map_or(true, |best| point.mean_dist < best);
        self.state.global_step = ticket.global_step;
        self.state.curve.push(point.clone());
        let Some(dir) = self.out.clone() else {
            if improved {
                self.state.best_mean_dist = Some(point.mean_dist);
            }
            return Ok(());
        };
        if let Some(w) = self.curve_writer.as_mut() {
            writeln!(w, "{}", point.csv_row())
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(dir.join(CURVE_FILE), e))?;
        }
        if improved {
            self.state.best_mean_dist = Some(point.mean_dist);
            save_params(&ticket.params, &dir.join(BEST_PARAMS_FILE))?;
        }
        write_checkpoint(&dir.join(CHECKPOINT_DIR), &ticket.params, &ticket.adam, &self.state)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_checkpoint(dir: &Path, params: &NetParams<f32>, adam: &Adam, state: &RunState) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_params(params, &dir.join("params.bin"))?;
    write_atomic(&dir.join("optimizer.bin"), &adam.to_bytes())?;
    write_atomic(&dir.join("state.json"), serde_json::to_string_pretty(state)?.as_bytes())
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Continue from the checkpoint in the output directory.
    pub resume: bool,
    /// Replace an existing run in the output directory.
    pub force: bool,
    /// Print evaluation points to stderr.
    pub verbose: bool,
}

pub struct TrainOutcome {
    pub params: NetParams<f32>,
    pub curve: Vec<TrainingCurvePoint>,
    pub global_step: u64,
    pub workers: Vec<WorkerReport>,
}

/// Everything a worker reads while training.
pub struct WorkerContext<'a> {
    pub store: &'a SharedStore,
    recorder: &'a Mutex<Recorder>,
    pub env: &'a EnvConfig,
    pub eval_env: EnvConfig,
    pub config: &'a TrainConfig,
    pub generation: u64,
}

fn eval_ticket(ctx: &WorkerContext<'_>, ticket: EvalTicket) -> Result<()> {
    let mut point = evaluate_checkpoint(
        &ticket.params,
        &ctx.eval_env,
        ctx.config.eval_episodes,
        ctx.config.eval_mode,
        seed::derive(ctx.config.seed, &[STREAM_EVAL, ticket.boundary]),
    )?;
    point.global_step = ticket.boundary;
    ctx.recorder
        .lock()
        .unwrap_or_else(|p| p.into_inner())
        .submit(point, ticket)
}

/// One asynchronous worker; returns once the global budget is spent.
pub fn worker_loop(worker_id: usize, ctx: &WorkerContext<'_>) -> Result<WorkerReport> {
    let path = [worker_id as u64, ctx.generation];
    let env = ReachEnv::new(
        ctx.env.clone(),
        seed::rng(ctx.config.seed, &[STREAM_ENV, path[0], path[1]]),
    )?;
    let mut rollout = Rollout::new(env, seed::rng(ctx.config.seed, &[STREAM_ACTIONS, path[0], path[1]]))?;
    let mut report = WorkerReport {
        worker_id,
        ..Default::default()
    };
    while !ctx.store.finished() {
        let (params, _) = ctx.store.snapshot();
        let segment = rollout.segment(&params, ctx.config.n_step)?;
        let (grads, _) = segment_gradients(&params, &segment, ctx.config)?;
        if !grads.is_finite() {
            return Err(Error::Aborted(format!("worker {worker_id} produced non-finite gradients")));
        }
        let steps = segment.trajectory.len() as u64;
        report.steps += steps;
        report.updates += 1;
        report.episodes += segment.finished.is_some() as u64;
        for ticket in ctx.store.apply(&grads, steps) {
            if let Err(e) = eval_ticket(ctx, ticket) {
                ctx.store.request_stop();
                return Err(e);
            }
        }
    }
    Ok(report)
}

fn curve_csv(points: &[TrainingCurvePoint]) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for p in points {
        s.push_str(&p.csv_row());
        s.push('\n');
    }
    s
}

/// Trains from scratch or resumes. With `out = None` nothing is written.
pub fn train(
    env: &EnvConfig,
    config: &TrainConfig,
    out: Option<&Path>,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    env.validate()?;
    config.validate()?;
    let k = env.mdp.actions_per_joint();
    let mut params = NetParams::<f32>::init(&mut seed::rng(config.seed, &[STREAM_INIT]), k)?;
    let mut adam = Adam::new(params.len(), config.learning_rate as f32);
    let mut state = RunState::default();

    let mut curve_writer = None;
    if let Some(dir) = out {
        let ckpt = dir.join(CHECKPOINT_DIR);
        let existing = dir.join(CURVE_FILE).exists() || ckpt.exists();
        if options.resume && ckpt.join("state.json").exists() {
            let text = std::fs::read_to_string(ckpt.join("state.json"))
                .map_err(|e| Error::io(ckpt.join("state.json"), e))?;
            state = serde_json::from_str(&text)?;
            params = load_params(&ckpt.join("params.bin"), Some(k))?;
            let path = ckpt.join("optimizer.bin");
            adam.restore(&std::fs::read(&path).map_err(|e| Error::io(&path, e))?)?;
            adam.lr = config.learning_rate as f32;
            state.generation += 1;
        } else if existing && !options.force && !options.resume {
            return Err(Error::OutputExists(dir.to_path_buf()));
        } else if existing {
            for f in [CURVE_FILE, FINAL_PARAMS_FILE, BEST_PARAMS_FILE] {
                let _ = std::fs::remove_file(dir.join(f));
            }
            let _ = std::fs::remove_dir_all(&ckpt);
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(
            &dir.join(TRAIN_CONFIG_FILE),
            serde_json::to_string_pretty(config)?.as_bytes(),
        )?;
        let path = dir.join(CURVE_FILE);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        w.write_all(curve_csv(&state.curve).as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))?;
        curve_writer = Some(w);
    }

    let start_step = state.global_step;
    let generation = state.generation;
    let next_boundary = state.curve.last().map_or(0, |p| p.global_step) + config.eval_interval;
    let store = SharedStore::new(params, adam, start_step, config);
    let recorder = Mutex::new(Recorder {
        out: out.map(Path::to_path_buf),
        curve_writer,
        pending: BTreeMap::new(),
        next_boundary,
        interval: config.eval_interval,
        state,
        verbose: options.verbose,
    });
    let mut eval_env = env.clone();
    if let Some(dr) = &config.eval_dr {
        eval_env.dr = dr.clone();
    }
    let ctx = WorkerContext {
        store: &store,
        recorder: &recorder,
        env,
        eval_env,
        config,
        generation,
    };

    let results: Vec<Result<WorkerReport>> = if config.workers == 1 {
        vec![worker_loop(0, &ctx)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..config.workers)
                .map(|id| {
                    let ctx = &ctx;
                    s.spawn(move || worker_loop(id, ctx))
                })
                .collect();
            handles
                .into_iter()
                .enumerate()
                .map(|(id, h)| {
                    h.join().unwrap_or_else(|_| {
                        Err(Error::Worker {
                            worker: id,
                            message: "panicked".into(),
                        })
                    })
                })
                .collect()
        })
    };

    let mut reports = Vec::new();
    let mut first_error = None;
    for (id, r) in results.into_iter().enumerate() {
        match r {
            Ok(rep) => reports.push(rep),
            Err(e) => {
                eprintln!("worker {id} stopped: {e}");
                first_error.get_or_insert(Error::Worker {
                    worker: id,
                    message: e.to_string(),
                });
            }
        }
    }
    let recorder = recorder.into_inner().unwrap_or_else(|p| p.into_inner());
    let (params, adam, global_step) = store.into_parts();
    let complete = global_step >= config.total_steps
        && recorder.state.curve.len() as u64 == config.eval_points();
    if !complete {
        return Err(first_error.unwrap_or_else(|| Error::Aborted("run ended early".into())));
    }
    if let Some(dir) = out {
        save_params(&params, &dir.join(FINAL_PARAMS_FILE))?;
        let mut state = recorder.state.clone();
        state.global_step = global_step;
        write_checkpoint(&dir.join(CHECKPOINT_DIR), &params, &adam, &state)?;
    }
    Ok(TrainOutcome {
        params,
        curve: recorder.state.curve,
        global_step,
        workers: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{MdpSpec, Variant};
    use crate::net::tensor;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn return_of_three_unit_rewards() {
        let g = n_step_return(&[1.0, 1.0, 1.0], 0.0, 0.99);
        // 1 + 0.99 + 0.99²
        assert!((g[0] - 2.9701).abs() < 1e-12);
        assert!((g[2] - 1.0).abs() < 1e-12);
        assert_eq!(n_step_return(&[0.5, -2.0], 7.0, 0.0), vec![0.5, -2.0]);
        assert!(n_step_return(&[], 3.0, 0.9).is_empty());
    }

    proptest! {
        #[test]
        fn return_recursion_holds(
            rewards in proptest::collection::vec(-100.0f64..100.0, 1..60),
            boot in -50.0f64..50.0,
            gamma in 0.0f64..=1.0,
        ) {
            let g = n_step_return(&rewards, boot, gamma);
            let n = g.len();
            prop_assert_eq!(g[n - 1], rewards[n - 1] + gamma * boot);
            for t in 0..n - 1 {
                prop_assert_eq!(g[t], rewards[t] + gamma * g[t + 1]);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert_eq!(TrainConfig::default().eval_points(), 1400);
        let c = TrainConfig { gamma: 1.5, ..Default::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { total_steps: 120_000, ..Default::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { reward_scale: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    fn bandit_free_env() -> EnvConfig {
        EnvConfig {
            dr: DrSpec::baseline(),
            ..EnvConfig::default()
        }
    }

    /// Parameters whose heads always pick the zero increment.
    fn frozen_params(k: usize) -> NetParams<f32> {
        let mut p = NetParams::<f32>::zeros(k).unwrap();
        for j in 0..NUM_HEADS {
            p.tensor_mut(tensor::head_b(j))[0] = 50.0;
        }
        p
    }

    #[test]
    fn frozen_arm_keeps_initial_distance() {
        let env = bandit_free_env();
        let p = frozen_params(env.mdp.actions_per_joint());
        let point = evaluate_checkpoint(&p, &env, 40, EvalMode::Greedy, 3).unwrap();
        assert_eq!(point.episodes, 40);
        assert!((point.mean_dist - point.mean_initial_dist).abs() < 1e-12);
        assert!(point.min_dist <= point.mean_dist && point.mean_dist <= point.max_dist);
    }

    #[test]
    fn segments_of_a_fifty_step_episode() {
        let env_cfg = bandit_free_env();
        let k = env_cfg.mdp.actions_per_joint();
        let p = frozen_params(k);
        let mut rollout = Rollout::new(
            ReachEnv::new(env_cfg, seed::rng(1, &[0])).unwrap(),
            seed::rng(1, &[1]),
        )
        .unwrap();
        let start = rollout.env().state().unwrap().initial_distance;
        assert!(start > 0.05, "initial distance {start}");
        let mut lens = Vec::new();
        loop {
            let seg = rollout.segment(&p, 20).unwrap();
            lens.push(seg.trajectory.len());
            if let Some(done) = seg.finished {
                assert_eq!(seg.bootstrap, 0.0);
                assert!(seg.trajectory.ends_episode());
                assert_eq!(done.steps, 50);
                break;
            }
            assert!(!seg.trajectory.ends_episode());
        }
        assert_eq!(lens, vec![20, 20, 10]);
    }

    #[test]
    fn uniform_heads_have_maximal_entropy_and_zero_advantage_loss() {
        let env_cfg = bandit_free_env();
        let k = env_cfg.mdp.actions_per_joint();
        assert_eq!(k, 7);
        let p = NetParams::<f32>::zeros(k).unwrap();
        let mut rollout = Rollout::new(
            ReachEnv::new(env_cfg, seed::rng(2, &[0])).unwrap(),
            seed::rng(2, &[1]),
        )
        .unwrap();
        let seg = rollout.segment(&p, 3).unwrap();
        // value head is zero, so returns of zero give zero advantage
        let loss = compute_loss(&seg.trajectory, &[0.0; 3], 0.5, 0.01).unwrap();
        assert_eq!(loss.policy, 0.0);
        assert_eq!(loss.value, 0.0);
        let per_head = loss.entropy / (3 * NUM_HEADS) as f64;
        assert!((per_head - 7f64.ln()).abs() < 1e-5);
        assert!((loss.total + 0.01 * loss.entropy).abs() < 1e-9);
    }

    #[test]
    fn single_step_loss_matches_hand_calculation() {
        let env_cfg = bandit_free_env();
        let k = env_cfg.mdp.actions_per_joint();
        let mut p = NetParams::<f32>::zeros(k).unwrap();
        p.tensor_mut(tensor::VALUE_B)[0] = 0.5;
        for j in 0..NUM_HEADS {
            p.tensor_mut(tensor::head_b(j))[1] = 1.0;
        }
        let mut rollout = Rollout::new(
            ReachEnv::new(env_cfg, seed::rng(4, &[0])).unwrap(),
            seed::rng(4, &[1]),
        )
        .unwrap();
        let seg = rollout.segment(&p, 1).unwrap();
        let g = 2.0;
        let loss = compute_loss(&seg.trajectory, &[g], 0.5, 0.01).unwrap();
        // each head: logits (0, 1, 0, 0, 0, 0, 0)
        let z = 6.0 + 1f64.exp();
        let lp = |a: usize| if a == 1 { 1.0 - z.ln() } else { -z.ln() };
        let adv = g - 0.5;
        let policy: f64 = -seg.trajectory.steps[0].actions.iter().map(|&a| lp(a) * adv).sum::<f64>();
        let h = -(6.0 * (1.0 / z) * lp(0) + (1f64.exp() / z) * lp(1));
        let total = policy + 0.5 * adv * adv - 0.01 * 6.0 * h;
        assert!((loss.policy - policy).abs() < 1e-5);
        assert!((loss.value - 2.25).abs() < 1e-6);
        assert!((loss.entropy - 6.0 * h).abs() < 1e-5);
        assert!((loss.total - total).abs() < 1e-5);
    }

    #[test]
    fn sampling_follows_probabilities() {
        let mut rng = seed::rng(9, &[]);
        let probs = [0.1f32, 0.0, 0.6, 0.3];
        let mut counts = [0usize; 4];
        for _ in 0..20_000 {
            counts[sample_categorical(&probs, &mut rng)] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((counts[2] as f64 / 20_000.0 - 0.6).abs() < 0.02);
        assert_eq!(sample_categorical(&[0.0, 1.0, 0.0], &mut rng), 1);
    }

    #[test]
    fn concurrent_updates_are_atomic() {
        let config = TrainConfig {
            total_steps: 1_000_000,
            eval_interval: 1_000_000,
            ..Default::default()
        };
        let mut p = NetParams::<f32>::zeros(5).unwrap();
        p.as_mut_slice().iter_mut().for_each(|v| *v = 1.0);
        let adam = Adam::new(p.len(), 1e-3);
        let store = SharedStore::new(p.clone(), adam.clone(), 0, &config);
        let mut g = NetParams::<f32>::zeros(5).unwrap();
        g.as_mut_slice().iter_mut().for_each(|v| *v = 0.25);
        std::thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| {
                    for _ in 0..25 {
                        store.apply(&g, 3);
                        let (snap, _) = store.snapshot();
                        let first = snap.as_slice()[0];
                        assert!(snap.as_slice().iter().all(|v| *v == first), "torn write");
                    }
                });
            }
        });
        let (got, _, step) = store.into_parts();
        assert_eq!(step, 300);
        let mut expect = p;
        let mut adam = adam;
        for _ in 0..100 {
            adam.apply(&mut expect, &g);
        }
        assert_eq!(got.fingerprint(), expect.fingerprint());
    }

    #[test]
    fn boundaries_produce_tickets() {
        let config = TrainConfig {
            total_steps: 200_000,
            eval_interval: 50_000,
            ..Default::default()
        };
        let p = NetParams::<f32>::zeros(5).unwrap();
        let store = SharedStore::new(p.clone(), Adam::new(p.len(), 1e-4), 49_990, &config);
        let g = NetParams::<f32>::zeros(5).unwrap();
        assert_eq!(store.apply(&g, 5).len(), 0);
        let t = store.apply(&g, 20);
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].boundary, t[0].global_step), (50_000, 50_015));
        assert_eq!(store.apply(&g, 200_000).len(), 3);
    }

    /// Single-step episodes where only action 1 of joint 0 earns a reward.
    #[test]
    fn bandit_probability_rises_monotonically() {
        let k = 7;
        let mut params = NetParams::<f32>::zeros(k).unwrap();
        let mut adam = Adam::new(params.len(), 0.02);
        let config = TrainConfig {
            entropy_coef: 0.0,
            value_coef: 0.0,
            ..Default::default()
        };
        let frame = FrameRGB::from_bytes(vec![90; crate::render::FRAME_BYTES]).unwrap();
        let mut rng = seed::rng(5, &[]);
        let mut last = 1.0 / k as f32;
        for _ in 0..200 {
            let out = forward_frame(&params, &frame, &LstmState::zeros()).unwrap();
            let mut actions = choose_actions(&out.probs, EvalMode::Sampled, &mut rng);
            // alternate rewarded and unrewarded pulls
            actions[0] = if rng.gen_bool(0.5) { 1 } else { 3 };
            let reward = if actions[0] == 1 { 1.0 } else { 0.0 };
            let mut traj = Trajectory::new(&params, LstmState::zeros());
            traj.push(out, actions, reward, true);
            let seg = Segment {
                trajectory: traj,
                bootstrap: 0.0,
                finished: None,
            };
            let (grads, _) = segment_gradients(&params, &seg, &config).unwrap();
            adam.apply(&mut params, &grads);
            let p = forward_frame(&params, &frame, &LstmState::zeros()).unwrap().policy(0)[1];
            assert!(p >= last, "{p} < {last}");
            last = p;
        }
        assert!(last > 0.5, "{last}");
    }

    #[test]
    fn schedule_yields_one_point_per_interval() {
        let env = EnvConfig {
            mdp: MdpSpec::new(Variant::M1),
            dr: DrSpec::baseline(),
            ..EnvConfig::default()
        };
        let config = TrainConfig {
            total_steps: 600,
            eval_interval: 150,
            eval_episodes: 2,
            workers: 1,
            ..Default::default()
        };
        let outcome = train(&env, &config, None, &TrainOptions::default()).unwrap();
        let steps: Vec<u64> = outcome.curve.iter().map(|p| p.global_step).collect();
        assert_eq!(steps, vec![150, 300, 450, 600]);
        assert_eq!(outcome.global_step, outcome.workers[0].steps);
        for p in &outcome.curve {
            assert_eq!(p.episodes, 2);
        }
    }
}
