//! Adaptive-moment optimizer with decoupled weight decay.

use super::tensor::{Mat, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(params: &[Mat<T>], lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Decay scales the weights directly by `1 − lr·wd`
    /// before the moment step; it never enters the gradient.
    pub fn step(&mut self, params: &mut [Mat<T>], grads: &[Mat<T>]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::of(1.0 - self.beta1.powi(t));
        let bc2 = T::of(1.0 - self.beta2.powi(t));
        let lr = T::of(self.lr);
        let eps = T::of(self.eps);
        let decay = T::of(1.0 - self.lr * self.weight_decay);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.len(), g.len(), "gradient shape");
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = g.data[i];
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let w = p.data[i] * decay;
                p.data[i] = w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
