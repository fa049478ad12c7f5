//! Covariance kernels, their derivative kernels and Lipschitz constants.
//!
//! Squared-exponential kernels have closed forms for every constant used by
//! the bounds. The remaining families fall back to grid suprema (see
//! [`crate::numeric`]), each reported with the slack of its grid.

use std::f64::consts::{E, FRAC_2_PI};
use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::{linspace, DomainBox};
use crate::error::{Error, Result};
use crate::numeric::{gradient_norm_sup, sampled_sup, GridEstimate};

/// `sqrt(6 (3 - sqrt 6)) * exp(sqrt(3/2) - 3/2)`: Lipschitz constant of the
/// unit squared-exponential derivative kernel.
pub fn omega() -> f64 {
    (6.0 * (3.0 - 6f64.sqrt())).sqrt() * ((1.5f64).sqrt() - 1.5).exp()
}

/// Grid budget for suprema over `dom x dom` of non-stationary kernels.
const PAIR_GRID_BUDGET: f64 = 40_000.0;
/// Points used by radial scans of isotropic kernels.
const RADIAL_POINTS: usize = 200;
/// Step of the mixed finite difference used for the neural-network kernel.
const NN_FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    SquaredExpIso,
    SquaredExpArd,
    Matern12,
    Matern32,
    Polynomial,
    NeuralNetwork,
}

impl KernelFamily {
    pub fn is_stationary(self) -> bool {
        !matches!(self, KernelFamily::Polynomial | KernelFamily::NeuralNetwork)
    }

    /// Isotropic and non-increasing in distance.
    pub fn is_isotropic(self) -> bool {
        matches!(
            self,
            KernelFamily::SquaredExpIso | KernelFamily::Matern12 | KernelFamily::Matern32
        )
    }

    /// Whether partial derivative kernels exist.
    pub fn is_differentiable(self) -> bool {
        self != KernelFamily::Matern12
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::SquaredExpIso => "squared-exp-iso",
            KernelFamily::SquaredExpArd => "squared-exp-ard",
            KernelFamily::Matern12 => "matern12",
            KernelFamily::Matern32 => "matern32",
            KernelFamily::Polynomial => "polynomial",
            KernelFamily::NeuralNetwork => "neural-network",
        }
    }
}

fn default_lengthscales() -> Vec<f64> {
    vec![1.0]
}

fn default_degree() -> u32 {
    3
}

fn default_signal_std() -> f64 {
    1.0
}

/// Kernel family together with its hyperparameters.
///
/// `lengthscales` holds one entry for isotropic families and one per input
/// dimension for `SquaredExpArd`. `nn_weights` is the diagonal of the weight
/// matrix acting on the augmented input `(1, x)`; when empty every weight is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernel", into = "RawKernel")]
pub struct KernelSpec {
    family: KernelFamily,
    signal_std: f64,
    lengthscales: Vec<f64>,
    degree: u32,
    nn_weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawKernel {
    family: KernelFamily,
    #[serde(default = "default_signal_std")]
    signal_std: f64,
    #[serde(default = "default_lengthscales")]
    lengthscales: Vec<f64>,
    #[serde(default = "default_degree")]
    degree: u32,
    #[serde(default)]
    nn_weights: Vec<f64>,
}

impl TryFrom<RawKernel> for KernelSpec {
    type Error = Error;

    fn try_from(r: RawKernel) -> Result<Self> {
        KernelSpec::new(r.family, r.signal_std, r.lengthscales, r.degree, r.nn_weights)
    }
}

impl From<KernelSpec> for RawKernel {
    fn from(k: KernelSpec) -> Self {
        RawKernel {
            family: k.family,
            signal_std: k.signal_std,
            lengthscales: k.lengthscales,
            degree: k.degree,
            nn_weights: k.nn_weights,
        }
    }
}

impl KernelSpec {
    pub fn new(
        family: KernelFamily,
        signal_std: f64,
        lengthscales: Vec<f64>,
        degree: u32,
        nn_weights: Vec<f64>,
    ) -> Result<Self> {
        if !(signal_std.is_finite() && signal_std > 0.0) {
            return Err(Error::invalid(format!("signal_std must be > 0, got {signal_std}")));
        }
        if lengthscales.is_empty() || lengthscales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::invalid("lengthscales must be nonempty and > 0"));
        }
        if family != KernelFamily::SquaredExpArd && lengthscales.len() != 1 {
            return Err(Error::invalid(format!(
                "{} takes a single lengthscale, got {}",
                family.name(),
                lengthscales.len()
            )));
        }
        if degree < 1 {
            return Err(Error::invalid("polynomial degree must be >= 1"));
        }
        if nn_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("neural-network weights must be > 0"));
        }
        Ok(Self {
            family,
            signal_std,
            lengthscales,
            degree,
            nn_weights,
        })
    }

    pub fn se_iso(signal_std: f64, lengthscale: f64) -> Result<Self> {
        Self::new(KernelFamily::SquaredExpIso, signal_std, vec![lengthscale], 3, vec![])
    }

    pub fn se_ard(signal_std: f64, lengthscales: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::SquaredExpArd, signal_std, lengthscales, 3, vec![])
    }

    pub fn matern12(signal_std: f64, lengthscale: f64) -> Result<Self> {
        Self::new(KernelFamily::Matern12, signal_std, vec![lengthscale], 3, vec![])
    }

    pub fn matern32(signal_std: f64, lengthscale: f64) -> Result<Self> {
        Self::new(KernelFamily::Matern32, signal_std, vec![lengthscale], 3, vec![])
    }

    pub fn polynomial(signal_std: f64, degree: u32) -> Result<Self> {
        Self::new(KernelFamily::Polynomial, signal_std, vec![1.0], degree, vec![])
    }

    pub fn neural_network(signal_std: f64, weights: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::NeuralNetwork, signal_std, vec![1.0], 3, weights)
    }

    /// Same family with new signal deviation and lengthscales.
    pub fn with_hyperparameters(&self, signal_std: f64, lengthscales: Vec<f64>) -> Result<Self> {
        Self::new(
            self.family,
            signal_std,
            lengthscales,
            self.degree,
            self.nn_weights.clone(),
        )
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn signal_std(&self) -> f64 {
        self.signal_std
    }

    pub fn signal_var(&self) -> f64 {
        self.signal_std * self.signal_std
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    /// Lengthscale along `axis` (the shared one for isotropic families).
    pub fn lengthscale(&self, axis: usize) -> f64 {
        if self.family == KernelFamily::SquaredExpArd {
            self.lengthscales[axis]
        } else {
            self.lengthscales[0]
        }
    }

    fn min_lengthscale(&self) -> f64 {
        self.lengthscales.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// Input dimension fixed by the hyperparameters, if any.
    pub fn input_dim(&self) -> Option<usize> {
        match self.family {
            KernelFamily::SquaredExpArd => Some(self.lengthscales.len()),
            KernelFamily::NeuralNetwork if !self.nn_weights.is_empty() => {
                Some(self.nn_weights.len() - 1)
            }
            _ => None,
        }
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        if d == 0 {
            return Err(Error::invalid("points must have at least one coordinate"));
        }
        match self.input_dim() {
            Some(expected) if expected != d => Err(Error::invalid(format!(
                "{} kernel expects dimension {expected}, got {d}",
                self.family.name()
            ))),
            _ => Ok(()),
        }
    }

    /// `k(x, x')`.
    pub fn eval(&self, x: &[f64], xp: &[f64]) -> Result<f64> {
        if x.len() != xp.len() {
            return Err(Error::invalid(format!(
                "dimension mismatch: {} vs {}",
                x.len(),
                xp.len()
            )));
        }
        self.check_dim(x.len())?;
        Ok(self.eval_unchecked(x, xp))
    }

    /// `k(x, x')` without dimension checks; callers guarantee `x.len() == xp.len()`
    /// matches the kernel.
    pub fn eval_unchecked(&self, x: &[f64], xp: &[f64]) -> f64 {
        let s2 = self.signal_var();
        match self.family {
            KernelFamily::SquaredExpIso | KernelFamily::Matern12 | KernelFamily::Matern32 => {
                self.profile(sq_dist(x, xp).sqrt())
            }
            KernelFamily::SquaredExpArd => {
                let q: f64 = x
                    .iter()
                    .zip(xp)
                    .zip(&self.lengthscales)
                    .map(|((a, b), l)| ((a - b) / l).powi(2))
                    .sum();
                s2 * (-0.5 * q).exp()
            }
            KernelFamily::Polynomial => {
                let dot: f64 = x.iter().zip(xp).map(|(a, b)| a * b).sum();
                s2 * (dot + 1.0).powi(self.degree as i32)
            }
            KernelFamily::NeuralNetwork => {
                let num = 2.0 * self.nn_inner(x, xp);
                let den = ((1.0 + 2.0 * self.nn_inner(x, x)) * (1.0 + 2.0 * self.nn_inner(xp, xp)))
                    .sqrt();
                s2 * FRAC_2_PI * (num / den).clamp(-1.0, 1.0).asin()
            }
        }
    }

    fn nn_weight(&self, i: usize) -> f64 {
        self.nn_weights.get(i).copied().unwrap_or(1.0)
    }

    /// `(1, x)^T diag(w) (1, x')`.
    fn nn_inner(&self, x: &[f64], xp: &[f64]) -> f64 {
        self.nn_weight(0)
            + x.iter()
                .zip(xp)
                .enumerate()
                .map(|(i, (a, b))| self.nn_weight(i + 1) * a * b)
                .sum::<f64>()
    }

    /// Kernel value as a function of distance for stationary families. For
    /// `SquaredExpArd` the distance is measured in lengthscale units.
    /// Non-stationary families return `NaN`.
    pub fn profile(&self, r: f64) -> f64 {
        let s2 = self.signal_var();
        match self.family {
            KernelFamily::SquaredExpIso => {
                let l = self.lengthscales[0];
                s2 * (-0.5 * (r / l).powi(2)).exp()
            }
            KernelFamily::SquaredExpArd => s2 * (-0.5 * r * r).exp(),
            KernelFamily::Matern12 => s2 * (-r / self.lengthscales[0]).exp(),
            KernelFamily::Matern32 => {
                let a = 3f64.sqrt() * r / self.lengthscales[0];
                s2 * (1.0 + a) * (-a).exp()
            }
            KernelFamily::Polynomial | KernelFamily::NeuralNetwork => f64::NAN,
        }
    }

    /// `d k / d r` for isotropic families.
    fn profile_slope(&self, r: f64) -> f64 {
        let s2 = self.signal_var();
        let l = self.lengthscales[0];
        match self.family {
            KernelFamily::SquaredExpIso => -s2 * r / (l * l) * (-0.5 * (r / l).powi(2)).exp(),
            KernelFamily::Matern12 => -s2 / l * (-r / l).exp(),
            KernelFamily::Matern32 => {
                let a = 3f64.sqrt() / l;
                -s2 * a * a * r * (-a * r).exp()
            }
            _ => f64::NAN,
        }
    }

    pub fn gram(&self, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let n = points.len();
        if n == 0 {
            return Ok(DMatrix::zeros(0, 0));
        }
        let d = points[0].len();
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::invalid("inconsistent point dimensions"));
        }
        self.check_dim(d)?;
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval_unchecked(&points[i], &points[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }

    /// Lipschitz constant `L_k` of `k(., x')` over `dom`, uniformly in `x'`.
    pub fn lipschitz_const(&self, dom: &DomainBox) -> GridEstimate {
        let s2 = self.signal_var();
        match self.family {
            KernelFamily::SquaredExpIso => {
                GridEstimate::exact(s2 / (self.lengthscales[0] * E.sqrt()))
            }
            // Rescaling each axis by its lengthscale reduces to the isotropic
            // case; the shortest lengthscale gives the steepest direction.
            KernelFamily::SquaredExpArd => {
                GridEstimate::exact(s2 / (self.min_lengthscale() * E.sqrt()))
            }
            KernelFamily::Matern12 | KernelFamily::Matern32 => {
                let axes = vec![linspace(0.0, dom.diameter(), RADIAL_POINTS)];
                sampled_sup(|p| self.profile_slope(p[0]).abs(), &axes)
            }
            KernelFamily::Polynomial | KernelFamily::NeuralNetwork => {
                let d = dom.dim();
                let axes = pair_axes(dom);
                let diff: Vec<usize> = (0..d).collect();
                gradient_norm_sup(|p| self.eval_unchecked(&p[..d], &p[d..]), &axes, &diff)
            }
        }
    }

    /// Partial derivative kernel `d^2 k / (dx_i dx'_i)` with a zero-based axis.
    pub fn derivative_kernel_eval(&self, axis: usize, x: &[f64], xp: &[f64]) -> Result<f64> {
        if !self.family.is_differentiable() {
            return Err(Error::unsupported(format!(
                "{} kernel has no derivative kernel",
                self.family.name()
            )));
        }
        if x.len() != xp.len() {
            return Err(Error::invalid("dimension mismatch"));
        }
        self.check_dim(x.len())?;
        if axis >= x.len() {
            return Err(Error::invalid(format!(
                "axis {axis} out of range for dimension {}",
                x.len()
            )));
        }
        Ok(self.derivative_kernel_unchecked(axis, x, xp))
    }

    fn derivative_kernel_unchecked(&self, axis: usize, x: &[f64], xp: &[f64]) -> f64 {
        let s2 = self.signal_var();
        match self.family {
            KernelFamily::SquaredExpIso | KernelFamily::SquaredExpArd => {
                let l = self.lengthscale(axis);
                let di = x[axis] - xp[axis];
                self.eval_unchecked(x, xp) * (1.0 / (l * l) - di * di / l.powi(4))
            }
            KernelFamily::Matern32 => {
                let l = self.lengthscales[0];
                let r = sq_dist(x, xp).sqrt();
                let di = x[axis] - xp[axis];
                s2 / (l * l) * matern32_unit_derivative(di / l, r / l)
            }
            KernelFamily::Polynomial => {
                let p = self.degree as i32;
                let s: f64 = x.iter().zip(xp).map(|(a, b)| a * b).sum::<f64>() + 1.0;
                let pf = p as f64;
                let mut v = pf * s.powi(p - 1);
                if p >= 2 {
                    v += pf * (pf - 1.0) * s.powi(p - 2) * x[axis] * xp[axis];
                }
                s2 * v
            }
            KernelFamily::NeuralNetwork => {
                let h = NN_FD_STEP;
                let shift = |v: &[f64], delta: f64| {
                    let mut w = v.to_vec();
                    w[axis] += delta;
                    w
                };
                let (xa, xb) = (shift(x, h), shift(x, -h));
                let (ya, yb) = (shift(xp, h), shift(xp, -h));
                (self.eval_unchecked(&xa, &ya) - self.eval_unchecked(&xa, &yb)
                    - self.eval_unchecked(&xb, &ya)
                    + self.eval_unchecked(&xb, &yb))
                    / (4.0 * h * h)
            }
            KernelFamily::Matern12 => f64::NAN,
        }
    }

    /// Lipschitz constant `L_k^{di}` of the derivative kernel along `axis`.
    pub fn derivative_lipschitz(&self, axis: usize, dom: &DomainBox) -> Result<GridEstimate> {
        if !self.family.is_differentiable() {
            return Err(Error::unsupported(format!(
                "{} kernel has no derivative kernel",
                self.family.name()
            )));
        }
        self.check_dim(dom.dim())?;
        if axis >= dom.dim() {
            return Err(Error::invalid(format!("axis {axis} out of range")));
        }
        let s2 = self.signal_var();
        Ok(match self.family {
            KernelFamily::SquaredExpIso => {
                GridEstimate::exact(omega() * s2 / self.lengthscales[0].powi(3))
            }
            KernelFamily::SquaredExpArd => {
                let li = self.lengthscales[axis];
                GridEstimate::exact(omega() * s2 / (li * li * self.min_lengthscale()))
            }
            KernelFamily::Matern32 => {
                let unit = matern32_derivative_lipschitz_unit(dom.dim() > 1);
                unit.scaled(s2 / self.lengthscales[0].powi(3))
            }
            KernelFamily::Polynomial | KernelFamily::NeuralNetwork => {
                let d = dom.dim();
                let axes = pair_axes(dom);
                let diff: Vec<usize> = (0..d).collect();
                gradient_norm_sup(
                    |p| self.derivative_kernel_unchecked(axis, &p[..d], &p[d..]),
                    &axes,
                    &diff,
                )
            }
            KernelFamily::Matern12 => unreachable!(),
        })
    }

    /// `max_x sqrt(k(x, x))` over `dom`.
    pub fn max_std(&self, dom: &DomainBox) -> f64 {
        if self.family.is_stationary() {
            self.signal_std
        } else {
            let axes = diag_axes(dom);
            sampled_sup(|p| self.eval_unchecked(p, p), &axes).value.sqrt()
        }
    }

    /// `max_x sqrt(k^{di}(x, x))` over `dom`.
    pub fn max_derivative_std(&self, axis: usize, dom: &DomainBox) -> Result<f64> {
        if !self.family.is_differentiable() {
            return Err(Error::unsupported(format!(
                "{} kernel has no derivative kernel",
                self.family.name()
            )));
        }
        Ok(match self.family {
            KernelFamily::SquaredExpIso | KernelFamily::SquaredExpArd => {
                self.signal_std / self.lengthscale(axis)
            }
            KernelFamily::Matern32 => 3f64.sqrt() * self.signal_std / self.lengthscales[0],
            _ => {
                let axes = diag_axes(dom);
                sampled_sup(|p| self.derivative_kernel_unchecked(axis, p, p), &axes)
                    .value
                    .max(0.0)
                    .sqrt()
            }
        })
    }

    /// `max_{x, x'} k(x, x')` over `dom`, bounded through the diagonal.
    pub fn max_value(&self, dom: &DomainBox) -> f64 {
        let s = self.max_std(dom);
        s * s
    }
}

/// Unit Matérn-3/2 derivative kernel in lengthscale units: `u` is the
/// difference along the axis and `r` the full distance.
fn matern32_unit_derivative(u: f64, r: f64) -> f64 {
    let s3 = 3f64.sqrt();
    let ratio = if r > 0.0 { u * u / r } else { 0.0 };
    3.0 * (-s3 * r).exp() * (1.0 - s3 * ratio)
}

/// Lipschitz constant of the unit Matérn-3/2 derivative kernel over all of
/// `R^d`. The kernel depends only on the axis offset and the orthogonal
/// distance, so a 2-D grid covers every `d >= 2`. Beyond ten lengthscales
/// all derivatives are below `1e-6` of their peak.
fn matern32_derivative_lipschitz_unit(multi_dim: bool) -> GridEstimate {
    static ONE_D: OnceLock<GridEstimate> = OnceLock::new();
    static MULTI_D: OnceLock<GridEstimate> = OnceLock::new();
    if multi_dim {
        *MULTI_D.get_or_init(|| {
            let axes = vec![linspace(0.0, 10.0, 601), linspace(0.0, 10.0, 601)];
            gradient_norm_sup(
                |p| matern32_unit_derivative(p[0], p[0].hypot(p[1])),
                &axes,
                &[0, 1],
            )
        })
    } else {
        *ONE_D.get_or_init(|| {
            let axes = vec![linspace(0.0, 10.0, 20_001)];
            gradient_norm_sup(|p| matern32_unit_derivative(p[0], p[0]), &axes, &[0])
        })
    }
}

fn pair_axes(dom: &DomainBox) -> Vec<Vec<f64>> {
    let d = dom.dim();
    let n = (PAIR_GRID_BUDGET.powf(1.0 / (2 * d) as f64).floor() as usize).max(3);
    (0..2 * d)
        .map(|a| linspace(dom.lower()[a % d], dom.upper()[a % d], n))
        .collect()
}

fn diag_axes(dom: &DomainBox) -> Vec<Vec<f64>> {
    let d = dom.dim();
    let n = (PAIR_GRID_BUDGET.powf(1.0 / d as f64).floor() as usize).max(3);
    (0..d)
        .map(|a| linspace(dom.lower()[a], dom.upper()[a], n))
        .collect()
}

pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> DomainBox {
        DomainBox::cube(0.0, 1.0, 1).unwrap()
    }

    fn all_families(d: usize) -> Vec<KernelSpec> {
        vec![
            KernelSpec::se_iso(1.3, 0.7).unwrap(),
            KernelSpec::se_ard(0.8, (0..d).map(|i| 0.5 + 0.3 * i as f64).collect()).unwrap(),
            KernelSpec::matern12(1.0, 0.6).unwrap(),
            KernelSpec::matern32(1.1, 0.9).unwrap(),
            KernelSpec::polynomial(1.0, 3).unwrap(),
            KernelSpec::neural_network(1.0, vec![]).unwrap(),
        ]
    }

    #[test]
    fn eval_examples() {
        let se = KernelSpec::se_iso(1.0, 1.0).unwrap();
        assert_eq!(se.eval(&[0.3], &[0.3]).unwrap(), 1.0);
        assert!((se.eval(&[0.0], &[1.0]).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        assert!((se.eval(&[0.0], &[1.0]).unwrap() - 0.606531).abs() < 1e-6);
        let m12 = KernelSpec::matern12(1.0, 1.0).unwrap();
        assert!((m12.eval(&[0.0], &[1.0]).unwrap() - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let se = KernelSpec::se_iso(1.0, 1.0).unwrap();
        assert!(matches!(se.eval(&[0.0], &[0.0, 1.0]), Err(Error::InvalidArgument(_))));
        let ard = KernelSpec::se_ard(1.0, vec![1.0, 2.0]).unwrap();
        assert!(ard.eval(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(KernelSpec::se_iso(0.0, 1.0).is_err());
        assert!(KernelSpec::se_iso(1.0, -1.0).is_err());
        assert!(KernelSpec::polynomial(1.0, 0).is_err());
        assert!(KernelSpec::new(KernelFamily::Matern12, 1.0, vec![1.0, 2.0], 3, vec![]).is_err());
    }

    #[test]
    fn gram_examples() {
        let se = KernelSpec::se_iso(1.0, 1.0).unwrap();
        assert_eq!(se.gram(&[vec![0.2]]).unwrap()[(0, 0)], 1.0);
        let g = se.gram(&[vec![0.2], vec![0.2]]).unwrap();
        assert_eq!(g, DMatrix::from_element(2, 2, 1.0));
    }

    #[test]
    fn gram_is_psd_for_every_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in 1..=3 {
            for k in all_families(d) {
                for _ in 0..20 {
                    let pts: Vec<Vec<f64>> = (0..5)
                        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
                        .collect();
                    let g = k.gram(&pts).unwrap();
                    let min = SymmetricEigen::new(g).eigenvalues.min();
                    assert!(min >= -1e-8, "{:?} min eigenvalue {min}", k.family());
                }
            }
        }
    }

    #[test]
    fn lipschitz_examples() {
        let se = KernelSpec::se_iso(1.0, 1.0).unwrap();
        assert!((se.lipschitz_const(&unit()).value - 0.606531).abs() < 1e-6);
        let se2 = KernelSpec::se_iso(2.0, 1.0).unwrap();
        assert!((se2.lipschitz_const(&unit()).value - 2.426123).abs() < 1e-6);
        let m12 = KernelSpec::matern12(1.0, 1.0).unwrap();
        let est = m12.lipschitz_const(&unit());
        assert!((est.value - 1.0).abs() <= est.slack + 1e-12);
        assert!(est.upper() >= 1.0);
        // Matérn-3/2 peak slope sqrt(3) / e sits inside the scanned range.
        let m32 = KernelSpec::matern32(1.0, 1.0).unwrap();
        let est = m32.lipschitz_const(&DomainBox::cube(0.0, 3.0, 1).unwrap());
        let exact = 3f64.sqrt() / E;
        assert!(est.value <= exact + 1e-12 && est.upper() >= exact);
    }

    #[test]
    fn derivative_kernel_examples() {
        let se = KernelSpec::se_iso(1.0, 1.0).unwrap();
        assert_eq!(se.derivative_kernel_eval(0, &[0.4], &[0.4]).unwrap(), 1.0);
        let se_l2 = KernelSpec::se_iso(1.0, 2.0).unwrap();
        assert_eq!(se_l2.derivative_kernel_eval(0, &[0.4], &[0.4]).unwrap(), 0.25);
        let m12 = KernelSpec::matern12(1.0, 1.0).unwrap();
        assert!(matches!(
            m12.derivative_kernel_eval(0, &[0.0], &[0.0]),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            m12.derivative_lipschitz(0, &unit()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn derivative_lipschitz_examples() {
        let w = omega();
        assert!((w - 1.38011).abs() < 1e-5);
        let cases = [(1.0, 1.0, w), (1.0, 2.0, w / 8.0), (3.0, 1.0, 9.0 * w)];
        for (sf, l, expected) in cases {
            let k = KernelSpec::se_iso(sf, l).unwrap();
            let got = k.derivative_lipschitz(0, &unit()).unwrap().value;
            assert!((got - expected).abs() < 1e-12 * expected.max(1.0));
        }
        assert!((KernelSpec::se_iso(1.0, 2.0).unwrap().derivative_lipschitz(0, &unit()).unwrap().value - 0.172514).abs() < 1e-6);
        assert!((KernelSpec::se_iso(3.0, 1.0).unwrap().derivative_lipschitz(0, &unit()).unwrap().value - 12.4210).abs() < 1e-4);
    }

    #[test]
    fn se_derivative_lipschitz_matches_grid() {
        // Independent check of the omega closed form on a fine 1-D grid.
        let axes = vec![linspace(-6.0, 6.0, 120_001)];
        let k = KernelSpec::se_iso(1.0, 1.0).unwrap();
        let est = gradient_norm_sup(|p| k.derivative_kernel_unchecked(0, &[p[0]], &[0.0]), &axes, &[0]);
        assert!((est.value - omega()).abs() < 1e-6);
    }

    #[test]
    fn matern32_unit_constant_is_attained_near_origin() {
        // Along the axis the unit derivative kernel is 3 e^{-s u}(1 - s u),
        // whose slope at the origin is -6 sqrt(3).
        let one = matern32_derivative_lipschitz_unit(false);
        assert!((one.value - 6.0 * 3f64.sqrt()).abs() <= one.slack + 1e-3);
        let multi = matern32_derivative_lipschitz_unit(true);
        assert!(multi.upper() >= 6.0 * 3f64.sqrt() - 1e-9);
    }

    #[test]
    fn ard_with_equal_lengthscales_is_isotropic() {
        let iso = KernelSpec::se_iso(1.7, 0.8).unwrap();
        let ard = KernelSpec::se_ard(1.7, vec![0.8, 0.8, 0.8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            assert!((iso.eval(&x, &y).unwrap() - ard.eval(&x, &y).unwrap()).abs() < 1e-14);
        }
    }

    /// Central mixed difference of `k` used as an independent oracle.
    fn fd_mixed(k: &KernelSpec, axis: usize, x: &[f64], xp: &[f64], h: f64) -> f64 {
        let mut xa = x.to_vec();
        let mut xb = x.to_vec();
        let mut ya = xp.to_vec();
        let mut yb = xp.to_vec();
        xa[axis] += h;
        xb[axis] -= h;
        ya[axis] += h;
        yb[axis] -= h;
        (k.eval(&xa, &ya).unwrap() - k.eval(&xa, &yb).unwrap() - k.eval(&xb, &ya).unwrap()
            + k.eval(&xb, &yb).unwrap())
            / (4.0 * h * h)
    }

    #[test]
    fn derivative_kernels_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let kernels = [
            KernelSpec::se_iso(1.2, 0.7).unwrap(),
            KernelSpec::se_ard(0.9, vec![0.6, 1.4]).unwrap(),
            KernelSpec::matern32(1.0, 0.8).unwrap(),
            KernelSpec::polynomial(1.0, 3).unwrap(),
        ];
        for k in &kernels {
            let scale = k.signal_var() / k.lengthscale(0).powi(2).min(1.0);
            for _ in 0..200 {
                let x: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
                let y: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
                for axis in 0..2 {
                    let got = k.derivative_kernel_eval(axis, &x, &y).unwrap();
                    let fd = fd_mixed(k, axis, &x, &y, 1e-4 * k.lengthscale(axis));
                    assert!(
                        (got - fd).abs() <= 1e-6 * got.abs().max(scale),
                        "{:?}: {got} vs {fd}",
                        k.family()
                    );
                }
            }
        }
    }

    #[test]
    fn lipschitz_soundness_on_random_pairs() {
        let dom = DomainBox::cube(-1.0, 1.0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in all_families(1) {
            let lk = k.lipschitz_const(&dom).upper();
            for _ in 0..10_000 {
                let x = [rng.random_range(-1.0..1.0)];
                let xp = [rng.random_range(-1.0..1.0)];
                let z = [rng.random_range(-1.0..1.0)];
                let diff = (k.eval(&x, &z).unwrap() - k.eval(&xp, &z).unwrap()).abs();
                assert!(
                    diff <= lk * (x[0] - xp[0]).abs() + 1e-12,
                    "{:?}: {diff} > {lk} * |dx|",
                    k.family()
                );
            }
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_nonnegative_diagonal(
            x in proptest::collection::vec(-3.0f64..3.0, 2),
            y in proptest::collection::vec(-3.0f64..3.0, 2),
        ) {
            for k in all_families(2) {
                prop_assert_eq!(k.eval(&x, &y).unwrap(), k.eval(&y, &x).unwrap());
                prop_assert!(k.eval(&x, &x).unwrap() >= 0.0);
            }
        }
    }
}
