//! Exact posterior variance at one query point for large one-dimensional
//! datasets, where a dense `N x N` factorization is too expensive.
//!
//! * Matérn-1/2 is a Markov process: filtering the data left and right of the
//!   query and fusing both predictions gives the variance in `O(N)`.
//! * Smooth kernels are represented through Chebyshev interpolation on the
//!   data interval, `k(x, x') = psi(x)^T psi(x')`, which turns the `N x N` solve
//!   into an `m x m` one. The interpolation error is measured on a check grid
//!   and the rank is raised until it is negligible.
//!
//! Both paths fall back to dense conditioning for kernels they do not cover.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use super::{clamp_variance, Dataset, Posterior};
use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, KernelSpec};

const INITIAL_RANK: usize = 32;
const MAX_RANK: usize = 256;
/// Acceptable interpolation error relative to the prior variance.
const INTERP_TOL: f64 = 1e-13;

/// Posterior variance at `x_star` after observing the 1-D `inputs`.
pub fn posterior_variance_1d(
    kernel: &KernelSpec,
    inputs: &[f64],
    noise_var: f64,
    x_star: f64,
) -> Result<f64> {
    if !(noise_var > 0.0) {
        return Err(Error::invalid("noise variance must be > 0"));
    }
    kernel.check_dim(1)?;
    if inputs.is_empty() {
        return Ok(kernel.eval_unchecked(&[x_star], &[x_star]));
    }
    match kernel.family() {
        KernelFamily::Matern12 => Ok(markov_variance(kernel, inputs, noise_var, x_star)),
        KernelFamily::Matern32 => dense_variance(kernel, inputs, noise_var, x_star),
        _ => match low_rank_variance(kernel, inputs, noise_var, x_star)? {
            Some(v) => Ok(v),
            None => dense_variance(kernel, inputs, noise_var, x_star),
        },
    }
}

fn dense_variance(kernel: &KernelSpec, inputs: &[f64], noise_var: f64, x_star: f64) -> Result<f64> {
    let x: Vec<Vec<f64>> = inputs.iter().map(|v| vec![*v]).collect();
    let data = Dataset::new(x, vec![0.0; inputs.len()], noise_var)?;
    Posterior::condition(kernel.clone(), data)?.predict_var(&[x_star])
}

/// Variance of `f(x_star)` given noisy observations of an Ornstein-Uhlenbeck
/// process, from one filter sweeping in from each side.
fn markov_variance(kernel: &KernelSpec, inputs: &[f64], noise_var: f64, x_star: f64) -> f64 {
    let prior = kernel.signal_var();
    let l = kernel.lengthscale(0);
    let mut left: Vec<f64> = inputs.iter().copied().filter(|v| *v <= x_star).collect();
    let mut right: Vec<f64> = inputs.iter().map(|v| -v).filter(|v| *v < -x_star).collect();
    left.sort_by(f64::total_cmp);
    right.sort_by(f64::total_cmp);
    let sweep = |points: &[f64], target: f64| -> f64 {
        let Some(&first) = points.first() else {
            return prior;
        };
        let mut p = prior;
        let mut at = first;
        for &x in points {
            let a = (-(x - at) / l).exp();
            p = a * a * p + prior * (1.0 - a * a);
            p -= p * p / (p + noise_var);
            at = x;
        }
        let a = (-(target - at) / l).exp();
        a * a * p + prior * (1.0 - a * a)
    };
    let p_left = sweep(&left, x_star);
    let p_right = sweep(&right, -x_star);
    1.0 / (1.0 / p_left + 1.0 / p_right - 1.0 / prior)
}

struct ChebBasis {
    lo: f64,
    hi: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ChebBasis {
    fn new(lo: f64, hi: f64, m: usize) -> Self {
        let nodes = (0..m)
            .map(|j| {
                let t = (std::f64::consts::PI * j as f64 / (m - 1) as f64).cos();
                0.5 * (lo + hi) + 0.5 * (hi - lo) * t
            })
            .collect();
        let weights = (0..m)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == m - 1 {
                    0.5 * sign
                } else {
                    sign
                }
            })
            .collect();
        Self { lo, hi, nodes, weights }
    }

    /// Barycentric Lagrange basis values at `x`.
    fn lagrange(&self, x: f64) -> Vec<f64> {
        let m = self.nodes.len();
        let mut out = vec![0.0; m];
        if let Some(j) = self.nodes.iter().position(|z| *z == x) {
            out[j] = 1.0;
            return out;
        }
        let mut total = 0.0;
        for j in 0..m {
            let t = self.weights[j] / (x - self.nodes[j]);
            out[j] = t;
            total += t;
        }
        out.iter_mut().for_each(|v| *v /= total);
        out
    }
}

/// Feature map `psi(x) = R^T ell(x)` with `K(nodes, nodes) = R R^T`.
struct Features {
    basis: ChebBasis,
    r: DMatrix<f64>,
}

impl Features {
    fn new(kernel: &KernelSpec, lo: f64, hi: f64, m: usize) -> Self {
        let basis = ChebBasis::new(lo, hi, m);
        let pts: Vec<Vec<f64>> = basis.nodes.iter().map(|z| vec![*z]).collect();
        let mut c = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                c[(i, j)] = kernel.eval_unchecked(&pts[i], &pts[j]);
            }
        }
        let eig = SymmetricEigen::new(c);
        let mut r = eig.eigenvectors;
        for (j, lam) in eig.eigenvalues.iter().enumerate() {
            let s = lam.max(0.0).sqrt();
            r.column_mut(j).scale_mut(s);
        }
        Self { basis, r }
    }

    fn psi(&self, x: f64) -> DVector<f64> {
        let ell = DVector::from_vec(self.basis.lagrange(x));
        self.r.tr_mul(&ell)
    }

    fn max_error(&self, kernel: &KernelSpec) -> f64 {
        let probes: Vec<f64> = (0..37)
            .map(|i| self.basis.lo + (self.basis.hi - self.basis.lo) * (i as f64 + 0.37) / 37.0)
            .chain([self.basis.lo, self.basis.hi])
            .collect();
        let feats: Vec<DVector<f64>> = probes.iter().map(|x| self.psi(*x)).collect();
        let mut worst: f64 = 0.0;
        for (i, a) in probes.iter().enumerate() {
            for (j, b) in probes.iter().enumerate() {
                let exact = kernel.eval_unchecked(&[*a], &[*b]);
                worst = worst.max((exact - feats[i].dot(&feats[j])).abs());
            }
        }
        worst
    }
}

fn low_rank_variance(
    kernel: &KernelSpec,
    inputs: &[f64],
    noise_var: f64,
    x_star: f64,
) -> Result<Option<f64>> {
    let (mut lo, mut hi) = inputs
        .iter()
        .fold((x_star, x_star), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let scale = kernel
        .eval_unchecked(&[lo], &[lo])
        .max(kernel.eval_unchecked(&[hi], &[hi]))
        .max(kernel.eval_unchecked(&[x_star], &[x_star]));
    let mut m = INITIAL_RANK;
    let features = loop {
        let f = Features::new(kernel, lo, hi, m);
        if f.max_error(kernel) <= INTERP_TOL * scale {
            break f;
        }
        if m >= MAX_RANK {
            return Ok(None);
        }
        m *= 2;
    };
    let mut g = DMatrix::zeros(m, m);
    for x in inputs {
        let p = features.psi(*x);
        g.ger(1.0, &p, &p, 1.0);
    }
    for i in 0..m {
        g[(i, i)] += noise_var;
    }
    let chol = Cholesky::new(g).ok_or_else(|| Error::numerical("feature Gram factorization failed"))?;
    let ps = features.psi(x_star);
    let prior = kernel.eval_unchecked(&[x_star], &[x_star]);
    let var = prior - ps.norm_squared() + noise_var * ps.dot(&chol.solve(&ps));
    clamp_variance(var).map(Some)
}
