use crate::error::{Error, Result};
use crate::kinematics::NUM_JOINTS;
use crate::render::{FrameRGB, FRAME_BYTES, FRAME_CHANNELS};

use super::ops::{
    affine, affine_backward_input, affine_backward_params, axpy, col2im, dot, gemm, im2col,
    log_softmax, sigmoid, Scalar,
};
use super::tensor as t;
use super::{
    Gradients, LstmState, NetParams, CONV1_KERNEL, CONV1_OUT, CONV1_SIZE, CONV1_STRIDE,
    CONV2_KERNEL, CONV2_OUT, CONV2_SIZE, CONV2_STRIDE, FLAT_SIZE, HIDDEN, INPUT_SIZE, NUM_HEADS,
};

const COL1_ROWS: usize = FRAME_CHANNELS * CONV1_KERNEL * CONV1_KERNEL;
const COL1_COLS: usize = CONV1_SIZE * CONV1_SIZE;
const COL2_ROWS: usize = CONV1_OUT * CONV2_KERNEL * CONV2_KERNEL;
const COL2_COLS: usize = CONV2_SIZE * CONV2_SIZE;

/// Activations of one forward step, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct StepCache<T> {
    col1: Vec<T>,
    act1: Vec<T>,
    col2: Vec<T>,
    act2: Vec<T>,
    fc: Vec<T>,
    h_prev: Vec<T>,
    c_prev: Vec<T>,
    /// Activated gates, `[input, forget, candidate, output]`.
    gates: Vec<T>,
    tanh_cell: Vec<T>,
    hidden: Vec<T>,
    log_probs: Vec<T>,
    value: T,
}

impl<T: Scalar> StepCache<T> {
    pub fn value(&self) -> T {
        self.value
    }

    pub fn log_probs(&self) -> &[T] {
        &self.log_probs
    }

    /// Flattened convolution output fed to the fully connected layer.
    pub fn flat_features(&self) -> &[T] {
        &self.act2
    }

    /// Pre-activation signs of every rectifier, in a fixed order.
    pub fn relu_pattern(&self) -> impl Iterator<Item = bool> + '_ {
        self.act1
            .iter()
            .chain(&self.act2)
            .chain(&self.fc)
            .map(|v| *v > T::zero())
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    /// Six concatenated action distributions, `K` entries each.
    pub probs: Vec<T>,
    pub value: T,
    pub state: LstmState<T>,
    pub cache: StepCache<T>,
}

impl<T: Scalar> ForwardOutput<T> {
    pub fn policy(&self, head: usize) -> &[T] {
        let k = self.probs.len() / NUM_HEADS;
        &self.probs[head * k..(head + 1) * k]
    }

    pub fn argmax_actions(&self) -> [usize; NUM_JOINTS] {
        let mut out = [0; NUM_JOINTS];
        for (j, a) in out.iter_mut().enumerate() {
            let p = self.policy(j);
            let mut best = 0;
            for (i, v) in p.iter().enumerate() {
                if *v > p[best] {
                    best = i;
                }
            }
            *a = best;
        }
        out
    }
}

fn relu_in_place<T: Scalar>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

fn add_row_bias<T: Scalar>(m: &mut [T], bias: &[T], cols: usize) {
    for (row, b) in m.chunks_exact_mut(cols).zip(bias) {
        for v in row {
            *v = *v + *b;
        }
    }
}

/// One step of the network on a channel-major input scaled to [0, 1].
pub fn forward<T: Scalar>(
    params: &NetParams<T>,
    input: &[T],
    state: &LstmState<T>,
) -> Result<ForwardOutput<T>> {
    if input.len() != FRAME_BYTES {
        return Err(Error::Shape(format!(
            "network input must be {FRAME_CHANNELS}×{INPUT_SIZE}×{INPUT_SIZE} = {FRAME_BYTES} values, got {}",
            input.len()
        )));
    }
    if state.hidden.len() != HIDDEN || state.cell.len() != HIDDEN {
        return Err(Error::Shape(format!("LSTM state must have {HIDDEN} units")));
    }
    let k = params.actions();

    let mut col1 = vec![T::zero(); COL1_ROWS * COL1_COLS];
    im2col(input, FRAME_CHANNELS, INPUT_SIZE, CONV1_KERNEL, CONV1_STRIDE, CONV1_SIZE, &mut col1);
    let mut act1 = vec![T::zero(); CONV1_OUT * COL1_COLS];
    gemm(CONV1_OUT, COL1_ROWS, COL1_COLS, params.tensor(t::CONV1_W), false, &col1, false, T::zero(), &mut act1);
    add_row_bias(&mut act1, params.tensor(t::CONV1_B), COL1_COLS);
    relu_in_place(&mut act1);

    let mut col2 = vec![T::zero(); COL2_ROWS * COL2_COLS];
    im2col(&act1, CONV1_OUT, CONV1_SIZE, CONV2_KERNEL, CONV2_STRIDE, CONV2_SIZE, &mut col2);
    let mut act2 = vec![T::zero(); FLAT_SIZE];
    gemm(CONV2_OUT, COL2_ROWS, COL2_COLS, params.tensor(t::CONV2_W), false, &col2, false, T::zero(), &mut act2);
    add_row_bias(&mut act2, params.tensor(t::CONV2_B), COL2_COLS);
    relu_in_place(&mut act2);

    let mut fc = vec![T::zero(); HIDDEN];
    affine(params.tensor(t::FC_W), params.tensor(t::FC_B), &act2, &mut fc);
    relu_in_place(&mut fc);

    let mut gates = vec![T::zero(); 4 * HIDDEN];
    affine(params.tensor(t::LSTM_WIH), params.tensor(t::LSTM_B), &fc, &mut gates);
    for (g, row) in gates
        .iter_mut()
        .zip(params.tensor(t::LSTM_WHH).chunks_exact(HIDDEN))
    {
        *g = *g + dot(row, &state.hidden);
    }
    for (idx, g) in gates.iter_mut().enumerate() {
        *g = if (2 * HIDDEN..3 * HIDDEN).contains(&idx) {
            g.tanh()
        } else {
            sigmoid(*g)
        };
    }
    let mut cell = vec![T::zero(); HIDDEN];
    let mut tanh_cell = vec![T::zero(); HIDDEN];
    let mut hidden = vec![T::zero(); HIDDEN];
    for u in 0..HIDDEN {
        let (i, f, g, o) = (gates[u], gates[HIDDEN + u], gates[2 * HIDDEN + u], gates[3 * HIDDEN + u]);
        cell[u] = f * state.cell[u] + i * g;
        tanh_cell[u] = cell[u].tanh();
        hidden[u] = o * tanh_cell[u];
    }

    let value = dot(params.tensor(t::VALUE_W), &hidden) + params.tensor(t::VALUE_B)[0];
    let mut log_probs = vec![T::zero(); NUM_HEADS * k];
    let mut logits = vec![T::zero(); k];
    for j in 0..NUM_HEADS {
        affine(params.tensor(t::head_w(j)), params.tensor(t::head_b(j)), &hidden, &mut logits);
        log_softmax(&logits, &mut log_probs[j * k..(j + 1) * k]);
    }
    let probs = log_probs.iter().map(|v| v.exp()).collect();

    Ok(ForwardOutput {
        probs,
        value,
        state: LstmState {
            hidden: hidden.clone(),
            cell,
        },
        cache: StepCache {
            col1,
            act1,
            col2,
            act2,
            fc,
            h_prev: state.hidden.clone(),
            c_prev: state.cell.clone(),
            gates,
            tanh_cell,
            hidden,
            log_probs,
            value,
        },
    })
}

/// Convenience wrapper taking a rendered frame.
pub fn forward_frame<T: Scalar>(
    params: &NetParams<T>,
    frame: &FrameRGB,
    state: &LstmState<T>,
) -> Result<ForwardOutput<T>> {
    forward(params, &frame.to_chw::<T>(), state)
}

#[derive(Clone, Debug)]
pub struct TrajectoryStep<T> {
    pub actions: [usize; NUM_JOINTS],
    pub reward: T,
    pub done: bool,
    pub cache: StepCache<T>,
}

/// Consecutive steps of one episode produced with a single parameter
/// snapshot.
#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub fingerprint: u64,
    pub start_state: LstmState<T>,
    pub steps: Vec<TrajectoryStep<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn new(params: &NetParams<T>, start_state: LstmState<T>) -> Self {
        Trajectory {
            fingerprint: params.fingerprint(),
            start_state,
            steps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, out: ForwardOutput<T>, actions: [usize; NUM_JOINTS], reward: T, done: bool) {
        self.steps.push(TrajectoryStep {
            actions,
            reward,
            done,
            cache: out.cache,
        });
    }

    pub fn rewards(&self) -> Vec<T> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn values(&self) -> Vec<T> {
        self.steps.iter().map(|s| s.cache.value).collect()
    }

    pub fn ends_episode(&self) -> bool {
        self.steps.last().map(|s| s.done).unwrap_or(false)
    }
}

/// Targets and weights of the actor-critic loss
/// `policy + value_coef · value − entropy_coef · entropy`.
#[derive(Clone, Debug)]
pub struct LossSpec<T> {
    pub returns: Vec<T>,
    pub value_coef: T,
    pub entropy_coef: T,
}

/// Exact gradients of the actor-critic loss over a trajectory, with
/// backpropagation through time across its LSTM steps.
pub fn backward<T: Scalar>(
    params: &NetParams<T>,
    traj: &Trajectory<T>,
    loss: &LossSpec<T>,
) -> Result<Gradients<T>> {
    let current = params.fingerprint();
    if current != traj.fingerprint {
        return Err(Error::StaleTrajectory {
            recorded: traj.fingerprint,
            current,
        });
    }
    let n = traj.len();
    if loss.returns.len() != n {
        return Err(Error::Shape(format!(
            "{} returns for a trajectory of {n} steps",
            loss.returns.len()
        )));
    }
    let k = params.actions();
    for (i, s) in traj.steps.iter().enumerate() {
        if s.done && i + 1 != n {
            return Err(Error::Shape("trajectory crosses an episode boundary".into()));
        }
        if s.cache.log_probs.len() != NUM_HEADS * k {
            return Err(Error::Shape("cached policy width does not match parameters".into()));
        }
        if let Some((joint, &index)) = s.actions.iter().enumerate().find(|(_, a)| **a >= k) {
            return Err(Error::InvalidAction {
                joint,
                index,
                available: k,
            });
        }
    }

    let mut g = NetParams::<T>::zeros(k)?;
    let two = T::lit(2.0);
    let mut dh_next = vec![T::zero(); HIDDEN];
    let mut dc_next = vec![T::zero(); HIDDEN];
    let mut dfc_steps = vec![vec![T::zero(); HIDDEN]; n];
    let mut dlogits = vec![T::zero(); k];
    let mut dz = vec![T::zero(); 4 * HIDDEN];

    // Recurrent part, newest step first.
    for step_idx in (0..n).rev() {
        let step = &traj.steps[step_idx];
        let c = &step.cache;
        let ret = loss.returns[step_idx];
        let advantage = ret - c.value;

        let mut dh = dh_next.clone();
        let dv = -two * loss.value_coef * advantage;
        affine_backward_params(&[dv], &c.hidden, g.tensor_mut(t::VALUE_W), &mut [T::zero()]);
        g.tensor_mut(t::VALUE_B)[0] = g.tensor(t::VALUE_B)[0] + dv;
        axpy(dv, params.tensor(t::VALUE_W), &mut dh);

        for j in 0..NUM_HEADS {
            let lp = &c.log_probs[j * k..(j + 1) * k];
            let entropy = lp.iter().fold(T::zero(), |s, l| s - l.exp() * *l);
            for (a, (d, l)) in dlogits.iter_mut().zip(lp).enumerate() {
                let p = l.exp();
                let onehot = if a == step.actions[j] { T::one() } else { T::zero() };
                *d = advantage * (p - onehot) + loss.entropy_coef * p * (*l + entropy);
            }
            let r_w = params.layout().range(t::head_w(j));
            let r_b = params.layout().range(t::head_b(j));
            {
                let data = g.as_mut_slice();
                let (lo, hi) = data.split_at_mut(r_b.start);
                affine_backward_params(&dlogits, &c.hidden, &mut lo[r_w], &mut hi[..r_b.len()]);
            }
            affine_backward_input(params.tensor(t::head_w(j)), &dlogits, &mut dh);
        }

        for u in 0..HIDDEN {
            let (i, f, gg, o) = (
                c.gates[u],
                c.gates[HIDDEN + u],
                c.gates[2 * HIDDEN + u],
                c.gates[3 * HIDDEN + u],
            );
            let tc = c.tanh_cell[u];
            let d_o = dh[u] * tc;
            let dc = dh[u] * o * (T::one() - tc * tc) + dc_next[u];
            dz[u] = dc * gg * i * (T::one() - i);
            dz[HIDDEN + u] = dc * c.c_prev[u] * f * (T::one() - f);
            dz[2 * HIDDEN + u] = dc * i * (T::one() - gg * gg);
            dz[3 * HIDDEN + u] = d_o * o * (T::one() - o);
            dc_next[u] = dc * f;
        }
        {
            let r_ih = params.layout().range(t::LSTM_WIH);
            let r_hh = params.layout().range(t::LSTM_WHH);
            let r_b = params.layout().range(t::LSTM_B);
            let data = g.as_mut_slice();
            let (ih, rest) = data[r_ih.start..r_b.end].split_at_mut(r_ih.len());
            let (hh, b) = rest.split_at_mut(r_hh.len());
            affine_backward_params(&dz, &c.fc, ih, b);
            let mut unused = vec![T::zero(); 4 * HIDDEN];
            affine_backward_params(&dz, &c.h_prev, hh, &mut unused);
        }
        let dfc = &mut dfc_steps[step_idx];
        affine_backward_input(params.tensor(t::LSTM_WIH), &dz, dfc);
        for (d, a) in dfc.iter_mut().zip(&c.fc) {
            if *a <= T::zero() {
                *d = T::zero();
            }
        }
        dh_next.iter_mut().for_each(|v| *v = T::zero());
        affine_backward_input(params.tensor(t::LSTM_WHH), &dz, &mut dh_next);
    }

    // Feed-forward part, independent per step.
    let mut da2 = vec![T::zero(); FLAT_SIZE];
    let mut dcol2 = vec![T::zero(); COL2_ROWS * COL2_COLS];
    let mut da1 = vec![T::zero(); CONV1_OUT * COL1_COLS];
    for (step, dfc) in traj.steps.iter().zip(&dfc_steps) {
        let c = &step.cache;
        {
            let r_w = params.layout().range(t::FC_W);
            let r_b = params.layout().range(t::FC_B);
            let data = g.as_mut_slice();
            let (w, b) = data[r_w.start..r_b.end].split_at_mut(r_w.len());
            affine_backward_params(dfc, &c.act2, w, b);
        }
        da2.iter_mut().for_each(|v| *v = T::zero());
        affine_backward_input(params.tensor(t::FC_W), dfc, &mut da2);
        for (d, a) in da2.iter_mut().zip(&c.act2) {
            if *a <= T::zero() {
                *d = T::zero();
            }
        }
        gemm(CONV2_OUT, COL2_COLS, COL2_ROWS, &da2, false, &c.col2, true, T::one(), g.tensor_mut(t::CONV2_W));
        for (b, row) in g.tensor_mut(t::CONV2_B).iter_mut().zip(da2.chunks_exact(COL2_COLS)) {
            *b = row.iter().fold(*b, |s, v| s + *v);
        }
        gemm(COL2_ROWS, CONV2_OUT, COL2_COLS, params.tensor(t::CONV2_W), true, &da2, false, T::zero(), &mut dcol2);
        da1.iter_mut().for_each(|v| *v = T::zero());
        col2im(&dcol2, CONV1_OUT, CONV1_SIZE, CONV2_KERNEL, CONV2_STRIDE, CONV2_SIZE, &mut da1);
        for (d, a) in da1.iter_mut().zip(&c.act1) {
            if *a <= T::zero() {
                *d = T::zero();
            }
        }
        gemm(CONV1_OUT, COL1_COLS, COL1_ROWS, &da1, false, &c.col1, true, T::one(), g.tensor_mut(t::CONV1_W));
        for (b, row) in g.tensor_mut(t::CONV1_B).iter_mut().zip(da1.chunks_exact(COL1_COLS)) {
            *b = row.iter().fold(*b, |s, v| s + *v);
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(rng: &mut ChaCha8Rng) -> Vec<f32> {
        (0..FRAME_BYTES).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    #[test]
    fn distributions_are_normalized_and_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = NetParams::<f32>::init(&mut rng, 7).unwrap();
        let mut state = LstmState::zeros();
        for _ in 0..5 {
            let out = forward(&p, &random_input(&mut rng), &state).unwrap();
            for j in 0..NUM_HEADS {
                let pol = out.policy(j);
                assert_eq!(pol.len(), 7);
                assert!(pol.iter().all(|v| *v > 0.0));
                let s: f32 = pol.iter().sum();
                assert!((s - 1.0).abs() <= 1e-6, "{s}");
            }
            state = out.state;
        }
    }

    #[test]
    fn zero_heads_give_uniform_policies() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = NetParams::<f32>::init(&mut rng, 7).unwrap();
        for j in 0..NUM_HEADS {
            p.tensor_mut(t::head_w(j)).fill(0.0);
        }
        let out = forward(&p, &random_input(&mut rng), &LstmState::zeros()).unwrap();
        for v in &out.probs {
            assert!((v - 1.0 / 7.0).abs() < 1e-7);
        }
        let zero = NetParams::<f32>::zeros(5).unwrap();
        let out = forward(&zero, &random_input(&mut rng), &LstmState::zeros()).unwrap();
        assert!(out.probs.iter().all(|v| (*v - 0.2).abs() < 1e-7));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = NetParams::<f32>::init(&mut rng, 7).unwrap();
        let x = random_input(&mut rng);
        let s = LstmState::zeros();
        let a = forward(&p, &x, &s).unwrap();
        let b = forward(&p, &x, &s).unwrap();
        assert_eq!(a.probs, b.probs);
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.state, b.state);
        assert_eq!(a.cache.flat_features().len(), 1152);
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let p = NetParams::<f32>::zeros(7).unwrap();
        assert!(matches!(
            forward(&p, &[0.0; 100], &LstmState::zeros()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_advantage_and_entropy_weight_zero_head_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = NetParams::<f64>::init(&mut rng, 7).unwrap();
        let mut traj = Trajectory::new(&p, LstmState::zeros());
        let mut state = LstmState::zeros();
        let mut returns = Vec::new();
        for _ in 0..3 {
            let x: Vec<f64> = (0..FRAME_BYTES).map(|_| rng.gen_range(0.0..1.0)).collect();
            let out = forward(&p, &x, &state).unwrap();
            state = out.state.clone();
            returns.push(out.value);
            traj.push(out, [1, 2, 3, 4, 5, 6], 0.0, false);
        }
        let loss = LossSpec {
            returns,
            value_coef: 0.5,
            entropy_coef: 0.0,
        };
        let g = backward(&p, &traj, &loss).unwrap();
        for j in 0..NUM_HEADS {
            assert!(g.tensor(t::head_w(j)).iter().all(|v| *v == 0.0));
            assert!(g.tensor(t::head_b(j)).iter().all(|v| *v == 0.0));
        }
        assert!(g.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stale_trajectory_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = NetParams::<f32>::init(&mut rng, 7).unwrap();
        let mut traj = Trajectory::new(&p, LstmState::zeros());
        let out = forward(&p, &random_input(&mut rng), &LstmState::zeros()).unwrap();
        traj.push(out, [0; 6], 1.0, true);
        let mut q = p.clone();
        q.as_mut_slice()[0] += 1.0;
        let loss = LossSpec {
            returns: vec![1.0],
            value_coef: 0.5,
            entropy_coef: 0.01,
        };
        assert!(matches!(
            backward(&q, &traj, &loss),
            Err(Error::StaleTrajectory { .. })
        ));
        assert!(backward(&p, &traj, &loss).is_ok());
    }
}
