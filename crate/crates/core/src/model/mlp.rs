//! Residual MLP with a Student's-t head.
//!
//! ```text
//! h₀ = x·W_in + b_in
//! hᵢ = LN(hᵢ₋₁ + W₂·drop(relu(W₁·hᵢ₋₁ + b₁)) + b₂)·γ + β      (post-norm)
//! (m, s, v) = h·W_head + b_head
//! μ = m,  σ = softplus(s) + 1e-6,  ν = 2 + softplus(v)
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tdist::StudentTParams;

use super::autodiff::{Graph, Var};
use super::tensor::{Mat, Real};

pub const HEAD_DIM: usize = 3;
pub const SIGMA_FLOOR: f64 = 1e-6;
pub const NU_FLOOR: f64 = 2.0;
pub const LN_EPS: f64 = 1e-5;
const HALF_LN_PI: f64 = 0.572_364_942_924_700_1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub dropout: f64,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: usize, blocks: usize, dropout: f64) -> Self {
        Self {
            input_dim,
            hidden,
            blocks,
            dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("mlp dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    /// Tensor names and shapes in storage order.
    pub fn tensor_shapes(&self) -> Vec<(String, usize, usize)> {
        let h = self.hidden;
        let mut v = vec![("input.weight".into(), self.input_dim, h), ("input.bias".into(), 1, h)];
        for b in 0..self.blocks {
            v.extend([
                (format!("block{b}.fc1.weight"), h, h),
                (format!("block{b}.fc1.bias"), 1, h),
                (format!("block{b}.fc2.weight"), h, h),
                (format!("block{b}.fc2.bias"), 1, h),
                (format!("block{b}.norm.gain"), 1, h),
                (format!("block{b}.norm.bias"), 1, h),
            ]);
        }
        v.extend([("head.weight".into(), h, HEAD_DIM), ("head.bias".into(), 1, HEAD_DIM)]);
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensor_shapes().iter().map(|(_, r, c)| r * c).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub spec: MlpSpec,
    pub params: Vec<Mat<T>>,
}

/// Inverse softplus, for bias initialization.
fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl<T: Real> Mlp<T> {
    /// Uniform(±1/√fan_in) weights and biases, unit norm gains; the head
    /// bias starts the mean at 0, the scale near 1 and the degrees of freedom near 6.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for (name, r, c) in spec.tensor_shapes() {
            let m = if name.ends_with("norm.gain") {
                Mat::filled(r, c, T::one())
            } else if name.ends_with("norm.bias") {
                Mat::zeros(r, c)
            } else {
                let fan_in = if name.ends_with("weight") { r } else { spec.hidden_fan_in(&name) };
                let bound = 1.0 / (fan_in as f64).sqrt();
                Mat::from_vec(r, c, (0..r * c).map(|_| T::of(rng.random_range(-bound..bound))).collect())
            };
            params.push(m);
        }
        let head_b = params.last_mut().expect("head bias");
        head_b.data[0] = T::zero();
        head_b.data[1] = T::of(softplus_inv(1.0 - SIGMA_FLOOR));
        head_b.data[2] = T::of(softplus_inv(6.0 - NU_FLOOR));
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let params = spec.tensor_shapes().into_iter().map(|(_, r, c)| Mat::zeros(r, c)).collect();
        Self { spec, params }
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            spec: self.spec.clone(),
            params: self.params.iter().map(Mat::cast).collect(),
        }
    }

    /// Records parameters as graph leaves, in storage order.
    pub fn leaves(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    /// Builds the forward pass for a batch `x` (rows = samples). With
    /// `masks`, one dropout mask per block is applied after the rectifier.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], x: Var, masks: Option<Vec<Mat<T>>>) -> Result<Head> {
        let mut h = g.matmul(x, p[0])?;
        h = g.add_row(h, p[1])?;
        let mut masks = masks.map(|m| m.into_iter());
        for b in 0..self.spec.blocks {
            let q = &p[2 + 6 * b..8 + 6 * b];
            let mut u = g.matmul(h, q[0])?;
            u = g.add_row(u, q[1])?;
            u = g.relu(u);
            if let Some(ms) = masks.as_mut() {
                let m = ms
                    .next()
                    .ok_or_else(|| Error::Contract("one dropout mask per block is required".into()))?;
                u = g.dropout(u, m)?;
            }
            let mut r = g.matmul(u, q[2])?;
            r = g.add_row(r, q[3])?;
            let s = g.add(h, r)?;
            let n = g.layer_norm(s, LN_EPS);
            let n = g.mul_row(n, q[4])?;
            h = g.add_row(n, q[5])?;
        }
        let k = p.len();
        let mut o = g.matmul(h, p[k - 2])?;
        o = g.add_row(o, p[k - 1])?;
        let mu = g.column(o, 0)?;
        let s = g.column(o, 1)?;
        let v = g.column(o, 2)?;
        let sp = g.softplus(s);
        let sigma = g.add_scalar(sp, SIGMA_FLOOR);
        let vp = g.softplus(v);
        let nu = g.add_scalar(vp, NU_FLOOR);
        Ok(Head { mu, sigma, nu })
    }

    /// Evaluation-mode predictions for `rows` samples stored row-major in `x`.
    pub fn predict(&self, x: &[T], rows: usize) -> Result<Vec<StudentTParams>> {
        let mut g = Graph::new();
        let p: Vec<Var> = self.params.iter().map(|m| g.constant(m.clone())).collect();
        let xv = g.constant(Mat::from_vec(rows, self.spec.input_dim, x.to_vec()));
        let head = self.forward(&mut g, &p, xv, None)?;
        let (mu, sigma, nu) = (g.value(head.mu), g.value(head.sigma), g.value(head.nu));
        Ok((0..rows)
            .map(|i| StudentTParams {
                mu: mu.data[i].f64(),
                sigma: sigma.data[i].f64(),
                nu: nu.data[i].f64(),
            })
            .collect())
    }
}

impl MlpSpec {
    fn hidden_fan_in(&self, bias_name: &str) -> usize {
        if bias_name.starts_with("input") {
            self.input_dim
        } else {
            self.hidden
        }
    }
}

/// Graph handles of the three n×1 head outputs.
#[derive(Clone, Copy, Debug)]
pub struct Head {
    pub mu: Var,
    pub sigma: Var,
    pub nu: Var,
}

/// Mean Student's-t negative log-likelihood of `y` (n×1) under `head`,
/// composed from differentiable primitives.
pub fn t_nll<T: Real>(g: &mut Graph<T>, head: Head, y: Var) -> Result<Var> {
    let Head { mu, sigma, nu } = head;
    let d = g.sub(y, mu)?;
    let z = g.div(d, sigma)?;
    let z2 = g.square(z);
    let q = g.div(z2, nu)?;
    let l1q = g.log1p(q);
    let nu1 = g.add_scalar(nu, 1.0);
    let half_nu1 = g.scale(nu1, 0.5);
    let tail = g.mul(half_nu1, l1q)?;
    let lg_a = g.log_gamma(half_nu1);
    let half_nu = g.scale(nu, 0.5);
    let lg_b = g.log_gamma(half_nu);
    let ln_nu = g.log(nu);
    let half_ln_nu = g.scale(ln_nu, 0.5);
    let ln_sigma = g.log(sigma);
    // −log p = lnΓ(ν/2) − lnΓ((ν+1)/2) + ½ln ν + ½ln π + ln σ + (ν+1)/2·ln(1 + z²/ν)
    let mut acc = g.sub(lg_b, lg_a)?;
    acc = g.add(acc, half_ln_nu)?;
    acc = g.add(acc, ln_sigma)?;
    acc = g.add(acc, tail)?;
    let m = g.mean(acc);
    Ok(g.add_scalar(m, HALF_LN_PI))
}
