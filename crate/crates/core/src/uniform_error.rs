//! Uniform bound on the regression error `|f(x) - mu_N(x)|` over a box.
//!
//! With probability at least `1 - delta`, for all `x` in the box,
//! `|f(x) - mu_N(x)| <= sqrt(beta) sigma_N(x) + gamma` where
//!
//! ```text
//! beta  = 2 log(M(tau) / delta)
//! gamma = (L_mu + L_f) tau + sqrt(beta L_sigma2 tau)
//! ```
//!
//! `M(tau)` bounds the `tau`-covering number of the box, and `L_mu`,
//! `L_sigma2` are Lipschitz constants of the posterior mean and variance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::DomainBox;
use crate::error::{Error, Result};
use crate::gp::Posterior;

/// `log` of the covering bound `(theta sqrt(d) / (2 tau))^d`, floored at zero
/// so the bound itself is at least one.
pub fn log_covering_number_bound(dom: &DomainBox, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be > 0, got {tau}")));
    }
    let d = dom.dim() as f64;
    Ok((d * (dom.edge_length() * d.sqrt() / (2.0 * tau)).ln()).max(0.0))
}

pub fn covering_number_bound(dom: &DomainBox, tau: f64) -> Result<f64> {
    Ok(log_covering_number_bound(dom, tau)?.exp())
}

/// `L_k sqrt(N) ||alpha||`.
pub fn lipschitz_mean(post: &Posterior, dom: &DomainBox) -> f64 {
    if post.is_empty() {
        return 0.0;
    }
    let lk = post.kernel().lipschitz_const(dom).upper();
    lk * (post.len() as f64).sqrt() * post.alpha().norm()
}

/// `2 L_k (1 + N ||A^{-1}|| max k)`.
pub fn lipschitz_var(post: &Posterior, dom: &DomainBox) -> f64 {
    let lk = post.kernel().lipschitz_const(dom).upper();
    let max_k = post.kernel().max_value(dom);
    2.0 * lk * (1.0 + post.len() as f64 * post.inverse_norm() * max_k)
}

/// Constituents of the uniform error bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundCert {
    pub tau: f64,
    pub delta: f64,
    #[serde(rename = "L_f")]
    pub l_f: f64,
    #[serde(rename = "L_mu")]
    pub l_mu: f64,
    #[serde(rename = "L_sigma2")]
    pub l_sigma2: f64,
    #[serde(rename = "M_bound")]
    pub m_bound: f64,
    pub beta: f64,
    pub gamma: f64,
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")))
    }
}

impl ErrorBoundCert {
    /// Assemble a certificate from its Lipschitz constants.
    pub fn from_constants(
        dom: &DomainBox,
        tau: f64,
        delta: f64,
        l_f: f64,
        l_mu: f64,
        l_sigma2: f64,
    ) -> Result<Self> {
        check_delta(delta)?;
        if !(l_f >= 0.0 && l_mu >= 0.0 && l_sigma2 >= 0.0) {
            return Err(Error::invalid("Lipschitz constants must be >= 0"));
        }
        let log_m = log_covering_number_bound(dom, tau)?;
        let beta = 2.0 * (log_m - delta.ln());
        Ok(Self {
            tau,
            delta,
            l_f,
            l_mu,
            l_sigma2,
            m_bound: log_m.exp(),
            beta,
            gamma: gamma(tau, beta, l_f, l_mu, l_sigma2),
        })
    }

    /// The same certificate at another confidence level.
    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        let beta = 2.0 * (self.m_bound.ln() - delta.ln());
        Ok(Self {
            delta,
            beta,
            gamma: gamma(self.tau, beta, self.l_f, self.l_mu, self.l_sigma2),
            ..self.clone()
        })
    }

    /// `sqrt(beta) sigma + gamma` for a posterior variance `var`.
    pub fn bound_from_var(&self, var: f64) -> f64 {
        self.beta.sqrt() * var.max(0.0).sqrt() + self.gamma
    }

    pub fn bound_at(&self, post: &Posterior, x: &[f64]) -> Result<f64> {
        Ok(self.bound_from_var(post.predict_var(x)?))
    }
}

fn gamma(tau: f64, beta: f64, l_f: f64, l_mu: f64, l_sigma2: f64) -> f64 {
    (l_mu + l_f) * tau + (beta * l_sigma2 * tau).sqrt()
}

pub fn make_cert(
    post: &Posterior,
    dom: &DomainBox,
    tau: f64,
    delta: f64,
    l_f: f64,
) -> Result<ErrorBoundCert> {
    if !(l_f > 0.0) {
        return Err(Error::invalid(format!("L_f must be > 0, got {l_f}")));
    }
    ErrorBoundCert::from_constants(
        dom,
        tau,
        delta,
        l_f,
        lipschitz_mean(post, dom),
        lipschitz_var(post, dom),
    )
}

/// Largest `tau <= tau_max` whose `gamma` stays below `fraction * sqrt(beta) * min_std`,
/// found by bisection in `log tau`.
pub fn auto_tau(
    post: &Posterior,
    dom: &DomainBox,
    delta: f64,
    l_f: f64,
    min_std: f64,
    fraction: f64,
    tau_max: f64,
) -> Result<f64> {
    let l_mu = lipschitz_mean(post, dom);
    let l_sigma2 = lipschitz_var(post, dom);
    let ok = |tau: f64| -> Result<bool> {
        let c = ErrorBoundCert::from_constants(dom, tau, delta, l_f, l_mu, l_sigma2)?;
        Ok(c.gamma <= fraction * c.beta.sqrt() * min_std)
    };
    if ok(tau_max)? {
        return Ok(tau_max);
    }
    let (mut lo, mut hi) = (1e-300f64.ln(), tau_max.ln());
    if !ok(lo.exp())? {
        return Ok(lo.exp());
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid.exp())? {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-6 {
            break;
        }
    }
    Ok(lo.exp())
}

/// Fraction of `grid` points where `|truth(x) - mu_N(x)|` exceeds the bound.
pub fn violation_fraction<F>(
    cert: &ErrorBoundCert,
    post: &Posterior,
    truth: F,
    grid: &[Vec<f64>],
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if grid.is_empty() {
        return Err(Error::invalid("empty evaluation grid"));
    }
    let flags: Vec<bool> = grid
        .par_iter()
        .map(|x| {
            let (mean, var) = post.predict(x)?;
            Ok((truth(x) - mean).abs() > cert.bound_from_var(var))
        })
        .collect::<Result<_>>()?;
    Ok(flags.iter().filter(|v| **v).count() as f64 / grid.len() as f64)
}

/// Per-output certificates at level `delta_total / m` (union bound).
pub fn multi_output_cert(certs: &[ErrorBoundCert], delta_total: f64) -> Result<Vec<ErrorBoundCert>> {
    if certs.is_empty() {
        return Err(Error::invalid("no certificates given"));
    }
    let share = delta_total / certs.len() as f64;
    certs.iter().map(|c| c.with_delta(share)).collect()
}
