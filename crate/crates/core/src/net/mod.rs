//! Policy/value network: two convolutions, a fully connected layer, an
//! LSTM cell and seven heads (six joint policies plus the value).
//!
//! All parameters of one network live in a single flat buffer; [`Layout`]
//! maps tensor ids to their slice. Gradients share the same layout, so the
//! optimizer and the parameter store only ever deal with flat vectors.

mod io;
mod model;
pub mod ops;

use rand::Rng;

pub use io::{
    decode_params, encode_params, load_params, save_params, WEIGHT_FILE_MAGIC, WEIGHT_FILE_VERSION,
};
pub use model::{
    backward, forward, forward_frame, ForwardOutput, LossSpec, StepCache, Trajectory,
    TrajectoryStep,
};
pub use ops::Scalar;

use crate::error::{Error, Result};
use crate::kinematics::NUM_JOINTS;
use crate::render::{FRAME_CHANNELS, FRAME_HEIGHT};

pub const INPUT_SIZE: usize = FRAME_HEIGHT;
pub const CONV1_OUT: usize = 16;
pub const CONV1_KERNEL: usize = 3;
pub const CONV1_STRIDE: usize = 4;
pub const CONV2_OUT: usize = 32;
pub const CONV2_KERNEL: usize = 5;
pub const CONV2_STRIDE: usize = 2;
pub const HIDDEN: usize = 128;
pub const NUM_HEADS: usize = NUM_JOINTS;

pub const fn conv_out(size: usize, kernel: usize, stride: usize) -> usize {
    (size - kernel) / stride + 1
}

/// 16 for a 64-pixel input.
pub const CONV1_SIZE: usize = conv_out(INPUT_SIZE, CONV1_KERNEL, CONV1_STRIDE);
/// 6 for a 64-pixel input.
pub const CONV2_SIZE: usize = conv_out(CONV1_SIZE, CONV2_KERNEL, CONV2_STRIDE);
/// 1152 for a 64-pixel input.
pub const FLAT_SIZE: usize = CONV2_OUT * CONV2_SIZE * CONV2_SIZE;

/// Tensor ids in buffer order.
pub mod tensor {
    pub const CONV1_W: usize = 0;
    pub const CONV1_B: usize = 1;
    pub const CONV2_W: usize = 2;
    pub const CONV2_B: usize = 3;
    pub const FC_W: usize = 4;
    pub const FC_B: usize = 5;
    pub const LSTM_WIH: usize = 6;
    pub const LSTM_WHH: usize = 7;
    pub const LSTM_B: usize = 8;
    pub const VALUE_W: usize = 9;
    pub const VALUE_B: usize = 10;
    pub const HEADS: usize = 11;

    pub const fn head_w(j: usize) -> usize {
        HEADS + 2 * j
    }
    pub const fn head_b(j: usize) -> usize {
        HEADS + 2 * j + 1
    }
}

/// Layer groups, for per-layer reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv1,
    Conv2,
    Fc,
    Lstm,
    PolicyHeads,
    Value,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    pub layer: LayerKind,
    /// Input width used for fan-in scaled initialization; 0 for biases.
    pub fan_in: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub actions: usize,
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
}

impl Layout {
    pub fn new(actions: usize) -> Self {
        use LayerKind::*;
        let c1_in = FRAME_CHANNELS * CONV1_KERNEL * CONV1_KERNEL;
        let c2_in = CONV1_OUT * CONV2_KERNEL * CONV2_KERNEL;
        let mut specs: Vec<(String, Vec<usize>, LayerKind, usize)> = vec![
            ("conv1.weight".into(), vec![CONV1_OUT, FRAME_CHANNELS, CONV1_KERNEL, CONV1_KERNEL], Conv1, c1_in),
            ("conv1.bias".into(), vec![CONV1_OUT], Conv1, 0),
            ("conv2.weight".into(), vec![CONV2_OUT, CONV1_OUT, CONV2_KERNEL, CONV2_KERNEL], Conv2, c2_in),
            ("conv2.bias".into(), vec![CONV2_OUT], Conv2, 0),
            ("fc.weight".into(), vec![HIDDEN, FLAT_SIZE], Fc, FLAT_SIZE),
            ("fc.bias".into(), vec![HIDDEN], Fc, 0),
            ("lstm.weight_ih".into(), vec![4 * HIDDEN, HIDDEN], Lstm, HIDDEN),
            ("lstm.weight_hh".into(), vec![4 * HIDDEN, HIDDEN], Lstm, HIDDEN),
            ("lstm.bias".into(), vec![4 * HIDDEN], Lstm, 0),
            ("value.weight".into(), vec![1, HIDDEN], Value, HIDDEN),
            ("value.bias".into(), vec![1], Value, 0),
        ];
        for j in 0..NUM_HEADS {
            specs.push((format!("policy{j}.weight"), vec![actions, HIDDEN], PolicyHeads, HIDDEN));
            specs.push((format!("policy{j}.bias"), vec![actions], PolicyHeads, 0));
        }
        let mut offset = 0;
        let tensors = specs
            .into_iter()
            .map(|(name, shape, layer, fan_in)| {
                let len = shape.iter().product();
                let info = TensorInfo {
                    name,
                    shape,
                    offset,
                    len,
                    layer,
                    fan_in,
                };
                offset += len;
                info
            })
            .collect();
        Layout {
            actions,
            tensors,
            total: offset,
        }
    }

    pub fn range(&self, id: usize) -> std::ops::Range<usize> {
        let t = &self.tensors[id];
        t.offset..t.offset + t.len
    }
}

/// Flat parameter (or gradient) buffer with its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams<T = f32> {
    layout: Layout,
    data: Vec<T>,
}

/// Gradients share the parameter layout.
pub type Gradients<T = f32> = NetParams<T>;

impl<T: Scalar> NetParams<T> {
    pub fn zeros(actions: usize) -> Result<Self> {
        if actions == 0 {
            return Err(Error::Shape("a policy head needs at least one action".into()));
        }
        let layout = Layout::new(actions);
        let data = vec![T::zero(); layout.total];
        Ok(NetParams { layout, data })
    }

    /// Fan-in scaled uniform weights, zero biases, deterministic per rng
    /// state. The policy heads start near-uniform.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, actions: usize) -> Result<Self> {
        let mut p = Self::zeros(actions)?;
        for id in 0..p.layout.tensors.len() {
            let info = p.layout.tensors[id].clone();
            if info.fan_in == 0 {
                continue;
            }
            let mut bound = (1.0 / info.fan_in as f64).sqrt();
            match info.layer {
                LayerKind::Conv1 | LayerKind::Conv2 | LayerKind::Fc => bound *= 6f64.sqrt(),
                LayerKind::PolicyHeads => bound *= 0.1,
                _ => {}
            }
            for v in p.tensor_mut(id) {
                *v = T::lit(rng.gen_range(-bound..bound));
            }
        }
        Ok(p)
    }

    pub fn from_vec(actions: usize, data: Vec<T>) -> Result<Self> {
        let layout = Layout::new(actions);
        if data.len() != layout.total {
            return Err(Error::Shape(format!(
                "expected {} parameters for {actions} actions, got {}",
                layout.total,
                data.len()
            )));
        }
        Ok(NetParams { layout, data })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn actions(&self) -> usize {
        self.layout.actions
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn tensor(&self, id: usize) -> &[T] {
        &self.data[self.layout.range(id)]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut [T] {
        let r = self.layout.range(id);
        &mut self.data[r]
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> NetParams<U> {
        NetParams {
            layout: self.layout.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let x = v.to_f64().unwrap();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v = *v * s);
    }

    pub fn add_assign(&mut self, other: &NetParams<T>) {
        assert_eq!(self.layout, other.layout);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Hash of the exact bit patterns; identifies a parameter snapshot.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.layout.actions as u64;
        for v in &self.data {
            let bits = v.to_f64().unwrap().to_bits();
            h = (h ^ bits).wrapping_mul(0x0000_0100_0000_01b3);
            h ^= h >> 29;
        }
        h
    }
}

/// Recurrent state carried between steps of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T = f32> {
    pub hidden: Vec<T>,
    pub cell: Vec<T>,
}

impl<T: Scalar> Default for LstmState<T> {
    fn default() -> Self {
        Self::zeros()
    }
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros() -> Self {
        LstmState {
            hidden: vec![T::zero(); HIDDEN],
            cell: vec![T::zero(); HIDDEN],
        }
    }

    pub fn cast<U: Scalar>(&self) -> LstmState<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::from_f64(x.to_f64().unwrap()).unwrap()).collect();
        LstmState {
            hidden: c(&self.hidden),
            cell: c(&self.cell),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flatten_size_matches_stride_arithmetic() {
        assert_eq!(CONV1_SIZE, 16);
        assert_eq!(CONV2_SIZE, 6);
        assert_eq!(FLAT_SIZE, 1152);
    }

    #[test]
    fn head_shapes_follow_action_count() {
        let p = NetParams::<f32>::init(&mut ChaCha8Rng::seed_from_u64(0), 7).unwrap();
        let l = p.layout();
        for j in 0..NUM_HEADS {
            assert_eq!(l.tensors[tensor::head_w(j)].shape, vec![7, HIDDEN]);
            assert_eq!(l.tensors[tensor::head_b(j)].shape, vec![7]);
        }
        assert_eq!(l.tensors[tensor::VALUE_W].shape, vec![1, HIDDEN]);
        assert_eq!(l.tensors[tensor::FC_W].shape, vec![HIDDEN, FLAT_SIZE]);
        assert_eq!(l.tensors.len(), 11 + 2 * NUM_HEADS);
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let a = NetParams::<f32>::init(&mut ChaCha8Rng::seed_from_u64(3), 7).unwrap();
        let b = NetParams::<f32>::init(&mut ChaCha8Rng::seed_from_u64(3), 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        for (id, info) in a.layout().tensors.iter().enumerate() {
            if info.fan_in == 0 {
                assert!(a.tensor(id).iter().all(|v| *v == 0.0), "{}", info.name);
            }
        }
        let c = NetParams::<f32>::init(&mut ChaCha8Rng::seed_from_u64(4), 7).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn zero_actions_rejected() {
        assert!(NetParams::<f32>::zeros(0).is_err());
    }
}
