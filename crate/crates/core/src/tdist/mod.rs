//! Location-scale Student's t and Gaussian numerics for the forecaster head
//! and the evaluation metrics.

pub mod special;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use special::{digamma_unchecked, log_gamma_unchecked, reg_inc_beta_complement};

const LN_PI: f64 = 1.144_729_885_849_400_2;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Predicted distribution for one sample. `nu > 2` so the variance exists.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentTParams {
    pub mu: f64,
    pub sigma: f64,
    pub nu: f64,
}

impl StudentTParams {
    pub fn new(mu: f64, sigma: f64, nu: f64) -> Result<Self> {
        let p = Self { mu, sigma, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::Domain(format!("t location must be finite, got {}", self.mu)));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Domain(format!("t scale must be > 0, got {}", self.sigma)));
        }
        if !(self.nu > 2.0) {
            return Err(Error::Domain(format!("t degrees of freedom must be > 2, got {}", self.nu)));
        }
        Ok(())
    }

    /// Variance σ²ν/(ν−2).
    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma * self.nu / (self.nu - 2.0)
    }

    /// Gaussian with the same mean and variance.
    pub fn matched_gaussian(&self) -> GaussianParams {
        GaussianParams {
            mu: self.mu,
            var: self.variance(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu: f64,
    pub var: f64,
}

impl GaussianParams {
    pub fn new(mu: f64, var: f64) -> Result<Self> {
        let g = Self { mu, var };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.var > 0.0) || !self.var.is_finite() || !self.mu.is_finite() {
            return Err(Error::Domain(format!(
                "gaussian requires finite mean and var > 0, got ({}, {})",
                self.mu, self.var
            )));
        }
        Ok(())
    }
}

pub fn t_logpdf(p: &StudentTParams, y: f64) -> Result<f64> {
    p.validate()?;
    Ok(t_logpdf_raw(p.mu, p.sigma, p.nu, y))
}

/// Log density for any ν > 0 (no variance requirement). Used directly for
/// limit checks such as the Cauchy case ν = 1.
pub fn t_logpdf_raw(mu: f64, sigma: f64, nu: f64, y: f64) -> f64 {
    let z = (y - mu) / sigma;
    log_gamma_unchecked(0.5 * (nu + 1.0)) - log_gamma_unchecked(0.5 * nu)
        - 0.5 * (nu.ln() + LN_PI)
        - sigma.ln()
        - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()
}

pub fn t_cdf(p: &StudentTParams, y: f64) -> Result<f64> {
    p.validate()?;
    Ok(t_cdf_raw(p.mu, p.sigma, p.nu, y))
}

/// CDF via the regularized incomplete beta, for any ν > 0.
pub fn t_cdf_raw(mu: f64, sigma: f64, nu: f64, y: f64) -> f64 {
    let z = (y - mu) / sigma;
    if z == 0.0 {
        return 0.5;
    }
    if z.is_infinite() {
        return if z > 0.0 { 1.0 } else { 0.0 };
    }
    let z2 = z * z;
    let x = nu / (nu + z2);
    let x_c = z2 / (nu + z2);
    let tail = 0.5 * reg_inc_beta_complement(0.5 * nu, 0.5, x, x_c);
    if z > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Inverse CDF by safeguarded Newton iteration on [`t_cdf`].
pub fn t_quantile(p: &StudentTParams, q: f64) -> Result<f64> {
    p.validate()?;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {q}")));
    }
    if q == 0.5 {
        return Ok(p.mu);
    }
    // bracket in standardized units
    let (mut lo, mut hi) = (-1.0, 1.0);
    while t_cdf_raw(0.0, 1.0, p.nu, lo) > q {
        lo *= 2.0;
    }
    while t_cdf_raw(0.0, 1.0, p.nu, hi) < q {
        hi *= 2.0;
    }
    let mut z = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = t_cdf_raw(0.0, 1.0, p.nu, z) - q;
        if f == 0.0 {
            break;
        }
        if f > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let dens = t_logpdf_raw(0.0, 1.0, p.nu, z).exp();
        let mut next = z - f / dens;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let done = (next - z).abs() <= 1e-15 * (1.0 + z.abs());
        z = next;
        if done {
            break;
        }
    }
    Ok(p.mu + p.sigma * z)
}

pub fn t_mean_var(p: &StudentTParams) -> Result<(f64, f64)> {
    p.validate()?;
    Ok((p.mu, p.variance()))
}

/// Partial derivatives of the log density with respect to (μ, σ, ν).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TGrad {
    pub mu: f64,
    pub sigma: f64,
    pub nu: f64,
}

pub fn t_logpdf_grad(p: &StudentTParams, y: f64) -> Result<TGrad> {
    p.validate()?;
    let StudentTParams { mu, sigma, nu } = *p;
    let z = (y - mu) / sigma;
    let z2 = z * z;
    let q = z2 / nu;
    let w = (nu + 1.0) / (nu + z2);
    Ok(TGrad {
        mu: w * z / sigma,
        sigma: (w * z2 - 1.0) / sigma,
        nu: 0.5 * (digamma_unchecked(0.5 * (nu + 1.0)) - digamma_unchecked(0.5 * nu))
            - 0.5 / nu
            - 0.5 * q.ln_1p()
            + 0.5 * (nu + 1.0) * q / (nu * (1.0 + q)),
    })
}

pub fn gauss_logpdf(g: &GaussianParams, y: f64) -> Result<f64> {
    g.validate()?;
    let d = y - g.mu;
    Ok(-0.5 * (LN_2PI + g.var.ln() + d * d / g.var))
}

pub fn gauss_cdf(g: &GaussianParams, y: f64) -> Result<f64> {
    g.validate()?;
    let z = (y - g.mu) / g.var.sqrt();
    Ok(0.5 * special::erfc(-z / std::f64::consts::SQRT_2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tp(mu: f64, sigma: f64, nu: f64) -> StudentTParams {
        StudentTParams::new(mu, sigma, nu).unwrap()
    }

    #[test]
    fn logpdf_symmetric_about_location() {
        let p = tp(0.3, 1.7, 3.5);
        for &a in &[0.0, 0.1, 2.0, 50.0] {
            let l = t_logpdf(&p, p.mu + a).unwrap();
            let r = t_logpdf(&p, p.mu - a).unwrap();
            assert!((l - r).abs() < 1e-14);
        }
    }

    #[test]
    fn normal_limit_logpdf() {
        let p = tp(0.0, 1.0, 1e6);
        let v = t_logpdf(&p, 0.0).unwrap();
        assert!((v + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-4, "{v}");
    }

    #[test]
    fn domain_errors() {
        assert!(StudentTParams::new(0.0, 0.0, 5.0).is_err());
        assert!(StudentTParams::new(0.0, 1.0, 2.0).is_err());
        let bad = StudentTParams {
            mu: 0.0,
            sigma: -1.0,
            nu: 3.0,
        };
        assert!(t_logpdf(&bad, 0.0).is_err());
        assert!(t_cdf(&bad, 0.0).is_err());
        assert!(t_logpdf_grad(&bad, 0.0).is_err());
        assert!(GaussianParams::new(0.0, 0.0).is_err());
    }

    #[test]
    fn cdf_center_and_normal_limit() {
        let p = tp(1.25, 0.4, 4.0);
        assert_eq!(t_cdf(&p, 1.25).unwrap(), 0.5);
        let n = tp(0.0, 1.0, 1e6);
        assert!((t_cdf(&n, 1.959_964).unwrap() - 0.975).abs() < 1e-4);
    }

    #[test]
    fn cauchy_closed_forms() {
        for &y in &[-30.0, -1.0, 0.0, 0.5, 4.0] {
            let lp = t_logpdf_raw(0.0, 1.0, 1.0, y);
            let exact = -(std::f64::consts::PI * (1.0 + y * y)).ln();
            assert!((lp - exact).abs() < 1e-12);
            let c = t_cdf_raw(0.0, 1.0, 1.0, y);
            let exact = 0.5 + y.atan() / std::f64::consts::PI;
            assert!((c - exact).abs() < 1e-12, "y={y}: {c} vs {exact}");
        }
    }

    #[test]
    fn variance_formula() {
        assert_eq!(t_mean_var(&tp(0.0, 1.0, 4.0)).unwrap(), (0.0, 2.0));
        let (_, v) = t_mean_var(&tp(0.0, 2.0, 1e6)).unwrap();
        assert!((v - 4.000_008).abs() < 1e-6);
    }

    #[test]
    fn gradient_at_mode_is_flat_in_location() {
        let g = t_logpdf_grad(&tp(0.7, 2.0, 6.0), 0.7).unwrap();
        assert_eq!(g.mu, 0.0);
    }

    #[test]
    fn gaussian_basics() {
        let g = GaussianParams::new(0.0, 1.0).unwrap();
        assert!((gauss_logpdf(&g, 0.0).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-15);
        assert_eq!(gauss_cdf(&g, 0.0).unwrap(), 0.5);
        assert!((gauss_cdf(&g, 1.959_964).unwrap() - 0.975).abs() < 1e-7);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let p = tp(-0.2, 0.9, 2.5);
        for i in 1..100 {
            let q = i as f64 / 100.0;
            let x = t_quantile(&p, q).unwrap();
            assert!((t_cdf(&p, x).unwrap() - q).abs() < 1e-12);
        }
    }
}
