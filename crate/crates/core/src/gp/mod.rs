//! Exact Gaussian-process conditioning with a zero prior mean.

pub mod structured;

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;

/// Round-off tolerance below which negative variances are clamped to zero.
pub const NEGATIVE_VARIANCE_TOL: f64 = 1e-10;
/// Largest `N` for which `||A^{-1}||` is computed by an eigen-solve.
pub const EIGEN_NORM_MAX_N: usize = 2000;

/// Training inputs, targets and observation noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    noise_var: f64,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>, noise_var: f64) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::invalid(format!(
                "{} inputs but {} targets",
                x.len(),
                y.len()
            )));
        }
        if !(noise_var.is_finite() && noise_var > 0.0) {
            return Err(Error::invalid(format!("noise variance must be > 0, got {noise_var}")));
        }
        if let Some(first) = x.first() {
            if first.is_empty() || x.iter().any(|p| p.len() != first.len()) {
                return Err(Error::invalid("inconsistent input dimensions"));
            }
        }
        Ok(Self { x, y, noise_var })
    }

    /// A dataset without observations.
    pub fn empty(noise_var: f64) -> Result<Self> {
        Self::new(Vec::new(), Vec::new(), noise_var)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Input dimension, `None` without observations.
    pub fn dim(&self) -> Option<usize> {
        self.x.first().map(Vec::len)
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// Same inputs and targets with another noise variance.
    pub fn with_noise_var(&self, noise_var: f64) -> Result<Self> {
        Self::new(self.x.clone(), self.y.clone(), noise_var)
    }

    /// The first `n` observations.
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            x: self.x[..n].to_vec(),
            y: self.y[..n].to_vec(),
            noise_var: self.noise_var,
        }
    }
}

fn data_covariance(kernel: &KernelSpec, data: &Dataset) -> Result<DMatrix<f64>> {
    let mut a = kernel.gram(data.inputs())?;
    for i in 0..data.len() {
        a[(i, i)] += data.noise_var();
    }
    Ok(a)
}

fn factor(a: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("data covariance has non-finite entries"));
    }
    Cholesky::new(a).ok_or_else(|| Error::numerical("Cholesky factorization failed"))
}

/// GP posterior: the factored data covariance `A = K + s I` and `alpha = A^{-1} y`.
#[derive(Debug, Clone)]
pub struct Posterior {
    kernel: KernelSpec,
    data: Dataset,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

impl Posterior {
    pub fn condition(kernel: KernelSpec, data: Dataset) -> Result<Self> {
        if data.is_empty() {
            return Ok(Self {
                kernel,
                data,
                chol: None,
                alpha: DVector::zeros(0),
            });
        }
        let a = data_covariance(&kernel, &data)?;
        let chol = factor(a)?;
        let alpha = chol.solve(&DVector::from_column_slice(data.targets()));
        Ok(Self {
            kernel,
            data,
            chol: Some(chol),
            alpha,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Lower Cholesky factor of `A` (empty without data).
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol
            .as_ref()
            .map(|c| c.l())
            .unwrap_or_else(|| DMatrix::zeros(0, 0))
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        match self.data.dim() {
            Some(d) if d != x.len() => Err(Error::invalid(format!(
                "query has dimension {}, data has {d}",
                x.len()
            ))),
            _ => self.kernel.check_dim(x.len()),
        }
    }

    fn cross_cov(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.data.inputs().iter().map(|xi| self.kernel.eval_unchecked(xi, x)),
        )
    }

    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        if self.is_empty() {
            return Ok(0.0);
        }
        Ok(self.cross_cov(x).dot(&self.alpha))
    }

    pub fn predict_var(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict(x)?.1)
    }

    /// Posterior mean and variance at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_point(x)?;
        let prior = self.kernel.eval_unchecked(x, x);
        let Some(chol) = &self.chol else {
            return Ok((0.0, prior));
        };
        let kx = self.cross_cov(x);
        let mean = kx.dot(&self.alpha);
        let v = chol
            .l_dirty()
            .solve_lower_triangular(&kx)
            .ok_or_else(|| Error::numerical("singular Cholesky factor"))?;
        let var = prior - v.norm_squared();
        Ok((mean, clamp_variance(var)?))
    }

    /// Spectral norm `||A^{-1}||`: `1 / lambda_min(A)` up to
    /// [`EIGEN_NORM_MAX_N`] points, the bound `1 / s` beyond.
    pub fn inverse_norm(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        if self.len() > EIGEN_NORM_MAX_N {
            return 1.0 / self.data.noise_var();
        }
        let l = self.chol_factor();
        let a = &l * l.transpose();
        let min = SymmetricEigen::new(a).eigenvalues.min();
        1.0 / min.max(self.data.noise_var())
    }
}

pub(crate) fn clamp_variance(var: f64) -> Result<f64> {
    if var >= 0.0 {
        Ok(var)
    } else if var >= -NEGATIVE_VARIANCE_TOL {
        Ok(0.0)
    } else {
        Err(Error::numerical(format!("negative posterior variance {var:e}")))
    }
}

/// `log p(y | X)` for a zero-mean GP with the given kernel.
pub fn log_marginal_likelihood(kernel: &KernelSpec, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let chol = factor(data_covariance(kernel, data)?)?;
    let y = DVector::from_column_slice(data.targets());
    let alpha = chol.solve(&y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    let n = data.len() as f64;
    Ok(-0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n * (2.0 * PI).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn se() -> KernelSpec {
        KernelSpec::se_iso(1.0, 1.0).unwrap()
    }

    #[test]
    fn empty_posterior_is_prior() {
        let post = Posterior::condition(se(), Dataset::empty(0.1).unwrap()).unwrap();
        assert_eq!(post.predict_mean(&[0.3]).unwrap(), 0.0);
        assert_eq!(post.predict_var(&[0.3]).unwrap(), 1.0);
        assert_eq!(post.chol_factor().nrows(), 0);
    }

    #[test]
    fn single_point_examples() {
        let data = Dataset::new(vec![vec![0.7]], vec![1.1], 0.1).unwrap();
        let post = Posterior::condition(se(), data).unwrap();
        let l = post.chol_factor();
        assert!((l[(0, 0)] * l[(0, 0)] - 1.1).abs() < 1e-15);
        assert!((post.alpha()[0] - 1.0).abs() < 1e-15);
        assert!((post.predict_mean(&[0.7]).unwrap() - 1.0).abs() < 1e-15);
        assert!((post.predict_var(&[0.7]).unwrap() - (1.0 - 1.0 / 1.1)).abs() < 1e-15);
        assert!((post.inverse_norm() - 1.0 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn two_coincident_points() {
        let data = Dataset::new(vec![vec![0.0], vec![0.0]], vec![0.0, 0.0], 0.1).unwrap();
        let post = Posterior::condition(se(), data).unwrap();
        let l = post.chol_factor();
        let a = &l * l.transpose();
        assert!((a - DMatrix::from_row_slice(2, 2, &[1.1, 1.0, 1.0, 1.1])).norm() < 1e-15);
        assert!((post.predict_var(&[0.0]).unwrap() - (1.0 - 2.0 / 2.1)).abs() < 1e-14);
    }

    #[test]
    fn near_interpolation() {
        let data = Dataset::new(vec![vec![0.0], vec![1.0]], vec![0.5, -0.3], 1e-8).unwrap();
        let post = Posterior::condition(se(), data).unwrap();
        assert!((post.predict_mean(&[0.0]).unwrap() - 0.5).abs() < 1e-4);
        assert!((post.predict_mean(&[1.0]).unwrap() + 0.3).abs() < 1e-4);
    }

    #[test]
    fn log_likelihood_examples() {
        let zero = Dataset::new(vec![vec![0.0]], vec![0.0], 0.1).unwrap();
        let one = Dataset::new(vec![vec![0.0]], vec![1.0], 0.1).unwrap();
        let base = -0.5 * 1.1f64.ln() - 0.5 * (2.0 * PI).ln();
        assert!((log_marginal_likelihood(&se(), &zero).unwrap() - base).abs() < 1e-14);
        assert!((log_marginal_likelihood(&se(), &one).unwrap() - (base - 1.0 / 2.2)).abs() < 1e-14);
        assert!((base + 0.96659).abs() < 1e-5);
    }

    #[test]
    fn log_likelihood_matches_dense_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=5 {
            let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let data = Dataset::new(x.clone(), y.clone(), 0.2).unwrap();
            let mut a = se().gram(&x).unwrap();
            for i in 0..n {
                a[(i, i)] += 0.2;
            }
            let yv = DVector::from_vec(y);
            let quad = yv.dot(&(a.clone().try_inverse().unwrap() * &yv));
            let oracle = -0.5 * quad
                - 0.5 * a.determinant().ln()
                - 0.5 * n as f64 * (2.0 * PI).ln();
            let got = log_marginal_likelihood(&se(), &data).unwrap();
            assert!((got - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let data = Dataset::new(vec![vec![0.0, 1.0]], vec![0.0], 0.1).unwrap();
        let post = Posterior::condition(se(), data).unwrap();
        assert!(post.predict_var(&[0.0]).is_err());
        assert!(Dataset::new(vec![vec![0.0], vec![0.0, 1.0]], vec![0.0, 0.0], 0.1).is_err());
        assert!(Dataset::new(vec![vec![0.0]], vec![0.0], 0.0).is_err());
    }

    #[test]
    fn negative_variance_policy() {
        assert_eq!(clamp_variance(-1e-12).unwrap(), 0.0);
        assert!(matches!(clamp_variance(-1e-6), Err(Error::Numerical(_))));
    }

    proptest! {
        #[test]
        fn variance_shrinks_with_more_data(
            xs in proptest::collection::vec(-3.0f64..3.0, 1..15),
            q in -3.0f64..3.0,
        ) {
            let n = xs.len();
            let x: Vec<Vec<f64>> = xs.iter().map(|v| vec![*v]).collect();
            let data = Dataset::new(x, vec![0.0; n], 0.05).unwrap();
            let full = Posterior::condition(se(), data.clone()).unwrap();
            let less = Posterior::condition(se(), data.prefix(n - 1)).unwrap();
            let v_full = full.predict_var(&[q]).unwrap();
            prop_assert!(v_full <= less.predict_var(&[q]).unwrap() + 1e-10);
            prop_assert!(v_full <= 1.0);
        }
    }
}
