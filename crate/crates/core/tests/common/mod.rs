//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng;
use reachlab::net::{backward, forward, LayerKind, LossSpec, LstmState, NetParams, Trajectory, HIDDEN, NUM_HEADS};
use reachlab::render::FRAME_BYTES;
use reachlab::seed;

pub const VALUE_COEF: f64 = 0.5;
pub const ENTROPY_COEF: f64 = 0.01;

#[derive(Clone, Debug, Default)]
pub struct LayerCheck {
    pub checked: usize,
    pub required: usize,
    pub kinks_skipped: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub layers: HashMap<LayerKind, LayerCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.layers.values().map(|l| l.max_rel_error).fold(0.0, f64::max)
    }
}

struct Problem {
    frames: Vec<Vec<f64>>,
    start: LstmState<f64>,
    actions: Vec<[usize; 6]>,
    returns: Vec<f64>,
    advantages: Vec<f64>,
}

/// Loss with the advantages held fixed, plus every rectifier sign.
fn oracle_loss(params: &NetParams<f64>, p: &Problem) -> (f64, Vec<bool>) {
    let mut state = p.start.clone();
    let mut loss = 0.0;
    let mut pattern = Vec::new();
    for t in 0..p.frames.len() {
        let out = forward(params, &p.frames[t], &state).unwrap();
        let lp = out.cache.log_probs();
        let k = lp.len() / NUM_HEADS;
        for j in 0..NUM_HEADS {
            let head = &lp[j * k..(j + 1) * k];
            loss -= head[p.actions[t][j]] * p.advantages[t];
            let entropy: f64 = -head.iter().map(|l| l.exp() * l).sum::<f64>();
            loss -= ENTROPY_COEF * entropy;
        }
        loss += VALUE_COEF * (p.returns[t] - out.value).powi(2);
        pattern.extend(out.cache.relu_pattern());
        state = out.state;
    }
    (loss, pattern)
}

/// Compares `backward` with central differences on a random three-step
/// trajectory, sampling up to `per_layer` coordinates of each layer.
pub fn grad_check(actions: usize, per_layer: usize, eps: f64, master: u64) -> GradCheckReport {
    let mut rng = seed::rng(master, &[]);
    let mut params = NetParams::<f32>::init(&mut rng, actions).unwrap().cast::<f64>();
    let frames: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..FRAME_BYTES).map(|_| rng.gen::<f64>()).collect())
        .collect();
    let start = LstmState {
        hidden: (0..HIDDEN).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        cell: (0..HIDDEN).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    };
    let acts: Vec<[usize; 6]> = (0..3)
        .map(|_| std::array::from_fn(|_| rng.gen_range(0..actions)))
        .collect();
    let returns: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();

    let mut traj = Trajectory::new(&params, start.clone());
    let mut state = start.clone();
    let mut advantages = Vec::new();
    for t in 0..3 {
        let out = forward(&params, &frames[t], &state).unwrap();
        advantages.push(returns[t] - out.value);
        state = out.state.clone();
        traj.push(out, acts[t], 0.0, false);
    }
    let spec = LossSpec {
        returns: returns.clone(),
        value_coef: VALUE_COEF,
        entropy_coef: ENTROPY_COEF,
    };
    let grads = backward(&params, &traj, &spec).unwrap();
    let problem = Problem {
        frames,
        start,
        actions: acts,
        returns,
        advantages,
    };
    let (_, base_pattern) = oracle_loss(&params, &problem);

    let layout = params.layout().clone();
    let mut report = GradCheckReport::default();
    for kind in [
        LayerKind::Conv1,
        LayerKind::Conv2,
        LayerKind::Fc,
        LayerKind::Lstm,
        LayerKind::PolicyHeads,
        LayerKind::Value,
    ] {
        let indices: Vec<usize> = layout
            .tensors
            .iter()
            .filter(|t| t.layer == kind)
            .flat_map(|t| t.offset..t.offset + t.len)
            .collect();
        let required = per_layer.min(indices.len());
        let mut order = sample(&mut rng, indices.len(), indices.len()).into_vec().into_iter();
        let mut check = LayerCheck {
            required,
            ..Default::default()
        };
        while check.checked < required {
            let Some(pick) = order.next() else { break };
            let i = indices[pick];
            let orig = params.as_slice()[i];
            params.as_mut_slice()[i] = orig + eps;
            let (plus, pat_plus) = oracle_loss(&params, &problem);
            params.as_mut_slice()[i] = orig - eps;
            let (minus, pat_minus) = oracle_loss(&params, &problem);
            params.as_mut_slice()[i] = orig;
            if pat_plus != base_pattern || pat_minus != base_pattern {
                check.kinks_skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.as_slice()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst_index = i;
            }
            check.checked += 1;
        }
        report.layers.insert(kind, check);
    }
    report
}
