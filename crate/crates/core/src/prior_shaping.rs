//! Probabilistic bounds on the maximum of GP sample functions and their
//! partial derivatives, and hyperparameter selection constrained by prior
//! knowledge of those maxima.

use std::f64::consts::{E, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::DomainBox;
use crate::error::{Error, Result};
use crate::gp::{log_marginal_likelihood, Dataset};
use crate::kernels::KernelSpec;
use crate::optimize::NelderMead;

/// Lower limit of a fitted noise variance.
pub const MIN_NOISE_VAR: f64 = 1e-6;
/// Consecutive rejections after which random hyperparameter search gives up.
pub const MAX_REJECTIONS: usize = 100_000;

fn check_prob(name: &str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in (0, 1), got {p}")))
    }
}

/// `(sqrt(2 log(1/delta)) + 12 sqrt(2 d log(sqrt(4 theta L) (1 + sqrt 2) e / m))) m`,
/// with the logarithm floored at zero.
fn sup_bound(delta: f64, dim: usize, theta: f64, lipschitz: f64, max_std: f64) -> f64 {
    let arg = (4.0 * theta * lipschitz).sqrt() * (1.0 + SQRT_2) * E / max_std;
    let log_term = arg.ln().max(0.0);
    ((2.0 * (1.0 / delta).ln()).sqrt() + 12.0 * (2.0 * dim as f64 * log_term).sqrt()) * max_std
}

fn require_smooth(kernel: &KernelSpec) -> Result<()> {
    if kernel.family().is_differentiable() {
        Ok(())
    } else {
        Err(Error::unsupported(format!(
            "{} sample functions are not differentiable",
            kernel.family().name()
        )))
    }
}

/// Value exceeding `max_x f(x)` of a sample function with probability at
/// least `1 - delta_f`.
pub fn f_max_bound(kernel: &KernelSpec, dom: &DomainBox, delta_f: f64) -> Result<f64> {
    check_prob("delta_f", delta_f)?;
    require_smooth(kernel)?;
    kernel.check_dim(dom.dim())?;
    let lk = kernel.lipschitz_const(dom).upper();
    Ok(sup_bound(
        delta_f,
        dom.dim(),
        dom.diameter(),
        lk,
        kernel.max_std(dom),
    ))
}

/// Value exceeding `max_x df/dx_i` of a sample function with probability at
/// least `1 - delta_l`. `axis` is zero-based.
pub fn f_max_partial_bound(
    kernel: &KernelSpec,
    dom: &DomainBox,
    axis: usize,
    delta_l: f64,
) -> Result<f64> {
    check_prob("delta_L", delta_l)?;
    require_smooth(kernel)?;
    let lk = kernel.derivative_lipschitz(axis, dom)?.upper();
    Ok(sup_bound(
        delta_l,
        dom.dim(),
        dom.diameter(),
        lk,
        kernel.max_derivative_std(axis, dom)?,
    ))
}

/// Probabilistic Lipschitz constant of sample functions: the Euclidean norm
/// of the per-axis derivative bounds, each at level `delta_l / d`.
pub fn probabilistic_lipschitz(kernel: &KernelSpec, dom: &DomainBox, delta_l: f64) -> Result<f64> {
    check_prob("delta_L", delta_l)?;
    let d = dom.dim();
    let mut sq = 0.0;
    for axis in 0..d {
        let b = f_max_partial_bound(kernel, dom, axis, delta_l / d as f64)?;
        sq += b * b;
    }
    Ok(sq.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBounds {
    pub f_max: f64,
    pub f_max_partial: Vec<f64>,
    pub delta_f: f64,
    pub delta_l: f64,
}

pub fn sample_bounds(
    kernel: &KernelSpec,
    dom: &DomainBox,
    delta_f: f64,
    delta_l: f64,
) -> Result<SampleBounds> {
    Ok(SampleBounds {
        f_max: f_max_bound(kernel, dom, delta_f)?,
        f_max_partial: (0..dom.dim())
            .map(|i| f_max_partial_bound(kernel, dom, i, delta_l))
            .collect::<Result<_>>()?,
        delta_f,
        delta_l,
    })
}

/// Rough knowledge of the extreme values of the unknown function and its
/// partial derivatives. Missing lower values leave only the upper one active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKnowledge", into = "RawKnowledge")]
pub struct PriorKnowledge {
    pub f_hi: f64,
    pub f_lo: Option<f64>,
    pub df_hi: Vec<f64>,
    pub df_lo: Option<Vec<f64>>,
    pub delta_f: f64,
    pub delta_l: f64,
}

#[derive(Serialize, Deserialize)]
struct RawKnowledge {
    f_hi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    f_lo: Option<f64>,
    df_hi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    df_lo: Option<Vec<f64>>,
    delta_f: f64,
    delta_l: f64,
}

impl TryFrom<RawKnowledge> for PriorKnowledge {
    type Error = Error;

    fn try_from(r: RawKnowledge) -> Result<Self> {
        PriorKnowledge::new(r.f_hi, r.f_lo, r.df_hi, r.df_lo, r.delta_f, r.delta_l)
    }
}

impl From<PriorKnowledge> for RawKnowledge {
    fn from(p: PriorKnowledge) -> Self {
        RawKnowledge {
            f_hi: p.f_hi,
            f_lo: p.f_lo,
            df_hi: p.df_hi,
            df_lo: p.df_lo,
            delta_f: p.delta_f,
            delta_l: p.delta_l,
        }
    }
}

impl PriorKnowledge {
    pub fn new(
        f_hi: f64,
        f_lo: Option<f64>,
        df_hi: Vec<f64>,
        df_lo: Option<Vec<f64>>,
        delta_f: f64,
        delta_l: f64,
    ) -> Result<Self> {
        check_prob("delta_f", delta_f)?;
        check_prob("delta_L", delta_l)?;
        if f_lo.is_some_and(|lo| lo > f_hi) {
            return Err(Error::invalid("f_lo must not exceed f_hi"));
        }
        if let Some(lo) = &df_lo {
            if lo.len() != df_hi.len() {
                return Err(Error::invalid("df_lo and df_hi differ in length"));
            }
            if lo.iter().zip(&df_hi).any(|(l, h)| l > h) {
                return Err(Error::invalid("df_lo must not exceed df_hi"));
            }
        }
        Ok(Self {
            f_hi,
            f_lo,
            df_hi,
            df_lo,
            delta_f,
            delta_l,
        })
    }

    /// `max{-f_lo, f_hi}`.
    pub fn value_requirement(&self) -> f64 {
        self.f_lo.map_or(self.f_hi, |lo| self.f_hi.max(-lo))
    }

    /// `max{-df_lo_i, df_hi_i}`.
    pub fn derivative_requirement(&self, axis: usize) -> f64 {
        let hi = self.df_hi[axis];
        self.df_lo.as_ref().map_or(hi, |lo| hi.max(-lo[axis]))
    }
}

/// Whether the sample-function bounds of `kernel` reach the known extremes.
pub fn constraints_satisfied(
    kernel: &KernelSpec,
    dom: &DomainBox,
    pk: &PriorKnowledge,
) -> Result<bool> {
    if pk.df_hi.len() != dom.dim() {
        return Err(Error::invalid(format!(
            "prior knowledge has {} derivative bounds for dimension {}",
            pk.df_hi.len(),
            dom.dim()
        )));
    }
    if pk.value_requirement() > f_max_bound(kernel, dom, pk.delta_f)? {
        return Ok(false);
    }
    for axis in 0..dom.dim() {
        if pk.derivative_requirement(axis) > f_max_partial_bound(kernel, dom, axis, pk.delta_l)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Isotropic squared-exponential hyperparameters with `sigma_f` and `1/l`
/// drawn from an exponential distribution with the given mean, redrawn
/// until the constraints hold.
pub fn constrained_random_hyperparameters<R: Rng + ?Sized>(
    pk: Option<&PriorKnowledge>,
    dom: &DomainBox,
    rng: &mut R,
    mean: f64,
) -> Result<KernelSpec> {
    let exp = Exp::new(1.0 / mean).map_err(|e| Error::invalid(format!("exponential mean: {e}")))?;
    for _ in 0..MAX_REJECTIONS {
        let sf: f64 = rng.sample(exp);
        let inv_l: f64 = rng.sample(exp);
        if !(sf > 0.0 && inv_l > 0.0) {
            continue;
        }
        let k = KernelSpec::se_iso(sf, 1.0 / inv_l)?;
        match pk {
            None => return Ok(k),
            Some(pk) if constraints_satisfied(&k, dom, pk)? => return Ok(k),
            Some(_) => {}
        }
    }
    Err(Error::InfeasibleConstraints(format!(
        "no hyperparameter draw satisfied the constraints in {MAX_REJECTIONS} attempts"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    /// Noise variance optimized together with the kernel, bounded below by
    /// [`MIN_NOISE_VAR`].
    Fitted,
    /// Noise variance kept at the dataset's value.
    Fixed,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub starts: usize,
    /// Starting values are drawn log-uniformly from this range.
    pub init_range: (f64, f64),
    /// Tries per start to find a feasible initial point.
    pub init_tries: usize,
    pub noise: NoiseModel,
    pub seed: u64,
    pub optimizer: NelderMead,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: 16,
            init_range: (1e-2, 1e2),
            init_tries: 200,
            noise: NoiseModel::Fitted,
            seed: 0,
            optimizer: NelderMead::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub kernel: KernelSpec,
    pub noise_var: f64,
    pub log_likelihood: f64,
}

/// Maximum-likelihood hyperparameters of the template's kernel family,
/// optionally subject to [`constraints_satisfied`].
///
/// Each start runs Nelder-Mead in log-parameter space on its own RNG stream;
/// infeasible or numerically failing points score `+inf`. The best start
/// wins, ties going to the lowest start index.
pub fn constrained_ml_fit(
    data: &Dataset,
    template: &KernelSpec,
    pk: Option<&PriorKnowledge>,
    dom: &DomainBox,
    options: &FitOptions,
) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::invalid("cannot fit hyperparameters without data"));
    }
    let n_ls = template.lengthscales().len();
    let fit_noise = options.noise == NoiseModel::Fitted;
    let n_params = 1 + n_ls + usize::from(fit_noise);

    let decode = |p: &[f64]| -> Result<(KernelSpec, f64)> {
        let sf = p[0].exp();
        let ls: Vec<f64> = p[1..1 + n_ls].iter().map(|v| v.exp()).collect();
        let noise = if fit_noise {
            MIN_NOISE_VAR + p[1 + n_ls].exp()
        } else {
            data.noise_var()
        };
        Ok((template.with_hyperparameters(sf, ls)?, noise))
    };
    let objective = |p: &[f64]| -> f64 {
        if p.iter().any(|v| !v.is_finite() || v.abs() > 30.0) {
            return f64::INFINITY;
        }
        let Ok((k, noise)) = decode(p) else {
            return f64::INFINITY;
        };
        if let Some(pk) = pk {
            if !matches!(constraints_satisfied(&k, dom, pk), Ok(true)) {
                return f64::INFINITY;
            }
        }
        let Ok(d) = data.with_noise_var(noise) else {
            return f64::INFINITY;
        };
        match log_marginal_likelihood(&k, &d) {
            Ok(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        }
    };

    let (lo, hi) = (options.init_range.0.ln(), options.init_range.1.ln());
    let results: Vec<Option<(Vec<f64>, f64)>> = (0..options.starts)
        .into_par_iter()
        .map(|start| {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(start as u64);
            let init = (0..options.init_tries).find_map(|_| {
                let p: Vec<f64> = (0..n_params).map(|_| rng.random_range(lo..=hi)).collect();
                let v = objective(&p);
                v.is_finite().then_some(p)
            })?;
            let m = options.optimizer.minimize(objective, &init);
            m.value.is_finite().then_some((m.x, m.value))
        })
        .collect();

    let mut best: Option<(Vec<f64>, f64)> = None;
    for (p, v) in results.into_iter().flatten() {
        if best.as_ref().is_none_or(|(_, b)| v < *b) {
            best = Some((p, v));
        }
    }
    let (p, v) = best.ok_or_else(|| {
        Error::InfeasibleConstraints(format!(
            "no feasible starting point among {} starts",
            options.starts
        ))
    })?;
    let (kernel, noise_var) = decode(&p)?;
    Ok(FitResult {
        kernel,
        noise_var,
        log_likelihood: -v,
    })
}
