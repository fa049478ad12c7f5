use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feedback gain `k_c` and filter coefficients `lambda_1..lambda_{d-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    pub k_c: f64,
    pub lambda: Vec<f64>,
}

fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    m.nrows() == 0 || m.complex_eigenvalues().iter().all(|z| z.re < 0.0)
}

impl ControllerGains {
    /// Checks `k_c > 0` and that `s^{d-1} + lambda_{d-1} s^{d-2} + ... + lambda_1`
    /// is Hurwitz.
    pub fn new(k_c: f64, lambda: Vec<f64>) -> Result<Self> {
        if !(k_c > 0.0 && k_c.is_finite()) {
            return Err(Error::invalid(format!("k_c must be positive, got {k_c}")));
        }
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("filter coefficients must be finite"));
        }
        let n = lambda.len();
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            c[(i, i + 1)] = 1.0;
        }
        for (j, l) in lambda.iter().enumerate() {
            c[(n - 1, j)] = -l;
        }
        if !is_hurwitz(&c) {
            return Err(Error::invalid(format!(
                "filter polynomial with coefficients {lambda:?} is not Hurwitz"
            )));
        }
        Ok(Self { k_c, lambda })
    }

    /// Chain order `d`.
    pub fn order(&self) -> usize {
        self.lambda.len() + 1
    }

    /// `k_c [lambda 1] e`.
    pub fn feedback(&self, e: &[f64]) -> f64 {
        let lin: f64 = self.lambda.iter().zip(e).map(|(l, v)| l * v).sum();
        self.k_c * (lin + e[self.lambda.len()])
    }
}

/// Closed-loop error dynamics matrix: ones on the superdiagonal and last row
/// `-k_c [lambda_1, ..., lambda_{d-1}, 1]`.
pub fn companion_matrix(gains: &ControllerGains, d: usize) -> Result<DMatrix<f64>> {
    if gains.order() != d {
        return Err(Error::invalid(format!(
            "{} filter coefficients given for order {d}",
            gains.lambda.len()
        )));
    }
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d - 1 {
        a[(i, i + 1)] = 1.0;
    }
    for (j, l) in gains.lambda.iter().enumerate() {
        a[(d - 1, j)] = -gains.k_c * l;
    }
    a[(d - 1, d - 1)] = -gains.k_c;
    if !is_hurwitz(&a) {
        return Err(Error::invalid(format!(
            "closed-loop matrix for k_c={} and lambda={:?} is not Hurwitz",
            gains.k_c, gains.lambda
        )));
    }
    Ok(a)
}

fn lyapunov_residual(a: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * p + p * a + DMatrix::identity(a.nrows(), a.nrows())
}

/// Solves `A^T P + P A = -I` through the Kronecker form
/// `(I (x) A^T + A^T (x) I) vec(P) = -vec(I)`, with two rounds of iterative
/// refinement.
pub fn solve_lyapunov(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    if d == 0 || a.ncols() != d {
        return Err(Error::invalid("Lyapunov equation needs a nonempty square matrix"));
    }
    let eye = DMatrix::<f64>::identity(d, d);
    let at = a.transpose();
    let system = eye.kronecker(&at) + at.kronecker(&eye);
    let lu = system.lu();
    let rhs = DVector::from_iterator(d * d, (-&eye).iter().copied());
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::invalid("Lyapunov system is singular (matrix not Hurwitz)"))?;
    let mut p = DMatrix::from_column_slice(d, d, sol.as_slice());
    for _ in 0..2 {
        let r = lyapunov_residual(a, &p);
        let r = DVector::from_column_slice(r.as_slice());
        if let Some(corr) = lu.solve(&r) {
            p -= DMatrix::from_column_slice(d, d, corr.as_slice());
        }
    }
    let p = 0.5 * (&p + p.transpose());
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("Lyapunov solution is not finite"));
    }
    Ok(p)
}

/// Quadratic Lyapunov function `V(e) = e^T P e` of the nominal error dynamics.
#[derive(Debug, Clone)]
pub struct LyapunovCert {
    pub gains: ControllerGains,
    pub a: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Last column of `P`.
    pub p_d: DVector<f64>,
}

impl LyapunovCert {
    pub fn new(gains: &ControllerGains) -> Result<Self> {
        let d = gains.order();
        let a = companion_matrix(gains, d)?;
        let p = solve_lyapunov(&a)?;
        let cert = Self {
            gains: gains.clone(),
            p_d: p.column(d - 1).into_owned(),
            a,
            p,
        };
        let res = cert.residual();
        if res > 1e-10 {
            return Err(Error::numerical(format!("Lyapunov residual {res:e} above 1e-10")));
        }
        if cert.min_eigenvalue() <= 0.0 {
            return Err(Error::numerical("Lyapunov solution is not positive definite"));
        }
        Ok(cert)
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// `||A^T P + P A + I||_F`.
    pub fn residual(&self) -> f64 {
        lyapunov_residual(&self.a, &self.p).norm()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.p.symmetric_eigenvalues().min()
    }

    /// `e^T P e` for one channel's error.
    pub fn value(&self, e: &[f64]) -> f64 {
        let e = DVector::from_column_slice(e);
        (e.transpose() * &self.p * &e)[(0, 0)]
    }

    /// `e^T p_d`.
    pub fn last_column_dot(&self, e: &[f64]) -> f64 {
        self.p_d.iter().zip(e).map(|(p, v)| p * v).sum()
    }

    /// Diagonal of `P^{-1}`: `e_i^2 <= v (P^{-1})_ii` on the level set `e^T P e = v`.
    pub fn inverse_diagonal(&self) -> Result<Vec<f64>> {
        let inv = self
            .p
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::numerical("P is singular"))?;
        Ok(inv.diagonal().iter().copied().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn companion_examples() {
        let a = companion_matrix(&ControllerGains::new(4.0, vec![2.0]).unwrap(), 2).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -8.0, -4.0]));
        let a = companion_matrix(&ControllerGains::new(4.0, vec![]).unwrap(), 1).unwrap();
        assert_eq!(a[(0, 0)], -4.0);
        let a = companion_matrix(&ControllerGains::new(1.0, vec![1.0, 2.0]).unwrap(), 3).unwrap();
        assert_eq!(a.row(2).iter().copied().collect::<Vec<_>>(), vec![-1.0, -2.0, -1.0]);
    }

    #[test]
    fn rejects_unstable_gains() {
        assert!(ControllerGains::new(4.0, vec![-1.0]).is_err());
        assert!(ControllerGains::new(0.0, vec![1.0]).is_err());
        let g = ControllerGains::new(4.0, vec![2.0]).unwrap();
        assert!(companion_matrix(&g, 3).is_err());
        // filter polynomial Hurwitz, closed loop not: s^3 + s^2 + 5 s + 6
        let g = ControllerGains::new(1.0, vec![6.0, 5.0]).unwrap();
        assert!(companion_matrix(&g, 3).is_err());
    }

    #[test]
    fn lyapunov_examples() {
        let p = solve_lyapunov(&DMatrix::from_element(1, 1, -4.0)).unwrap();
        assert!((p[(0, 0)] - 0.125).abs() < 1e-15);

        let cert = LyapunovCert::new(&ControllerGains::new(4.0, vec![2.0]).unwrap()).unwrap();
        let want = [11.0 / 8.0, 1.0 / 16.0, 1.0 / 16.0, 9.0 / 64.0];
        for (got, w) in cert.p.iter().zip(want) {
            assert!((got - w).abs() < 1e-12);
        }
        assert!((cert.p.determinant() - 97.0 / 512.0).abs() < 1e-12);
        assert_eq!(cert.p_d.as_slice(), cert.p.column(1).as_slice());
    }

    proptest! {
        #[test]
        fn residual_and_definiteness(roots in proptest::collection::vec(0.2f64..5.0, 0..3), k in 0.5f64..20.0) {
            // filter polynomial with the given negative real roots
            let mut poly = vec![1.0];
            for r in &roots {
                let mut next = vec![0.0; poly.len() + 1];
                for (i, c) in poly.iter().enumerate() {
                    next[i] += c * r;
                    next[i + 1] += c;
                }
                poly = next;
            }
            let lambda = poly[..poly.len() - 1].to_vec();
            let g = ControllerGains::new(k, lambda).unwrap();
            if companion_matrix(&g, g.order()).is_ok() {
                let cert = LyapunovCert::new(&g).unwrap();
                prop_assert!(cert.residual() <= 1e-10);
                prop_assert!(cert.min_eigenvalue() > 0.0);
            }
        }
    }
}
