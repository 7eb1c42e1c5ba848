use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::NetParams;

/// Adam with moment estimates shared by every worker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub step: u64,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    pub fn new(len: usize, lr: f32) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn apply(&mut self, params: &mut NetParams<f32>, grads: &NetParams<f32>) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let step_size = self.lr * c2.sqrt() / c1;
        let eps = self.eps * c2.sqrt();
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, g), m), v) in params
            .as_mut_slice()
            .iter_mut()
            .zip(grads.as_slice())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step_size * *m / (v.sqrt() + eps);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.m.len());
        out.extend_from_slice(b"ADAMSTAT");
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.m.len() as u64).to_le_bytes());
        for x in self.m.iter().chain(&self.v) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn restore(&mut self, bytes: &[u8]) -> Result<()> {
        let bad = |why: &str| Error::Shape(format!("optimizer state: {why}"));
        if bytes.len() < 24 || &bytes[..8] != b"ADAMSTAT" {
            return Err(bad("bad header"));
        }
        let step = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let len = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        if len != self.m.len() || bytes.len() != 24 + 8 * len {
            return Err(bad("size mismatch"));
        }
        let vals: Vec<f32> = bytes[24..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.m.copy_from_slice(&vals[..len]);
        self.v.copy_from_slice(&vals[len..]);
        self.step = step;
        Ok(())
    }
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut NetParams<f32>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale((max_norm / norm) as f32);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = NetParams::<f32>::zeros(3).unwrap();
        let mut g = NetParams::<f32>::zeros(3).unwrap();
        g.as_mut_slice()[0] = 2.0;
        g.as_mut_slice()[1] = -0.5;
        let mut adam = Adam::new(p.len(), 0.01);
        adam.apply(&mut p, &g);
        assert!((p.as_slice()[0] + 0.01).abs() < 1e-6);
        assert!((p.as_slice()[1] - 0.01).abs() < 1e-6);
        assert_eq!(p.as_slice()[2], 0.0);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = NetParams::<f32>::zeros(3).unwrap();
        g.as_mut_slice()[0] = 30.0;
        g.as_mut_slice()[1] = 40.0;
        let before = clip_global_norm(&mut g, 40.0);
        assert!((before - 50.0).abs() < 1e-9);
        assert!((g.global_norm() - 40.0).abs() < 1e-4);
    }

    #[test]
    fn state_round_trip() {
        let mut p = NetParams::<f32>::zeros(3).unwrap();
        let mut g = NetParams::<f32>::zeros(3).unwrap();
        g.as_mut_slice().iter_mut().enumerate().for_each(|(i, v)| *v = (i % 7) as f32 - 3.0);
        let mut a = Adam::new(p.len(), 1e-3);
        a.apply(&mut p, &g);
        let mut b = Adam::new(p.len(), 1e-3);
        b.restore(&a.to_bytes()).unwrap();
        assert_eq!(a, b);
        assert!(b.restore(&a.to_bytes()[..100]).is_err());
    }
}
