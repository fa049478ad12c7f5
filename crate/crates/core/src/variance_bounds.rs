//! Upper bounds on the posterior variance that depend only on how many
//! training inputs fall near the query point.
//!
//! Besides the Lipschitz-based bound ([`bound_general`]) and its isotropic
//! refinement ([`bound_isotropic`]) the module carries two baselines used for
//! comparison: the two-nearest-points bound ([`bound_williams`]) and a mean
//! square prediction error bound ([`bound_wang_mspe`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::Dataset;
use crate::kernels::{sq_dist, KernelFamily, KernelSpec};
use crate::numeric::ols_slope;

/// Distance used to decide ball membership.
#[derive(Debug, Clone, PartialEq)]
pub enum BallMetric {
    Euclidean,
    /// `(x' - x*)^T diag(l^2)^{-1} (x' - x*) <= rho^2`.
    ArdEllipsoid(Vec<f64>),
}

impl BallMetric {
    /// Ellipsoid for ARD kernels, Euclidean ball otherwise.
    pub fn for_kernel(kernel: &KernelSpec) -> Self {
        if kernel.family() == KernelFamily::SquaredExpArd {
            BallMetric::ArdEllipsoid(kernel.lengthscales().to_vec())
        } else {
            BallMetric::Euclidean
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            BallMetric::Euclidean => sq_dist(a, b).sqrt(),
            BallMetric::ArdEllipsoid(ls) => a
                .iter()
                .zip(b)
                .zip(ls)
                .map(|((x, y), l)| ((x - y) / l).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BallCount {
    pub center: Vec<f64>,
    pub radius: f64,
    pub count: usize,
    pub metric: BallMetric,
}

pub fn ball_count(
    data: &Dataset,
    center: &[f64],
    radius: f64,
    metric: &BallMetric,
) -> Result<BallCount> {
    if !(radius >= 0.0) {
        return Err(Error::invalid(format!("radius must be >= 0, got {radius}")));
    }
    if let (Some(d), BallMetric::ArdEllipsoid(ls)) = (data.dim(), metric) {
        if ls.len() != d {
            return Err(Error::invalid("ellipsoid lengthscales do not match data dimension"));
        }
    }
    if data.dim().is_some_and(|d| d != center.len()) {
        return Err(Error::invalid("ball center dimension does not match data"));
    }
    let count = data
        .inputs()
        .iter()
        .filter(|p| metric.distance(p, center) <= radius)
        .count();
    Ok(BallCount {
        center: center.to_vec(),
        radius,
        count,
        metric: metric.clone(),
    })
}

/// Largest admissible information radius `k(x, x) / L_k`.
pub fn radius_cap(kernel: &KernelSpec, x: &[f64], lipschitz: f64) -> Result<f64> {
    Ok(kernel.eval(x, x)? / lipschitz)
}

/// Lipschitz-based bound on `sigma_N^2(x)` from the count of training
/// inputs within `rho` of the reference point `x_star`:
///
/// ```text
/// (s k(x,x) + |B| xi) / (|B| (k(x*,x*) + 2 L rho) + s)
/// xi = k(x,x) (k(x*,x*) + 2 L rho) - max(0, k(x*,x) - L rho)^2
/// ```
///
/// For `x_star == x` this is `xi = 4 L rho k(x,x) - L^2 rho^2`. For other
/// reference points `xi` keeps the gap `k(x,x) k(x*,x*) - k(x*,x)^2`, which
/// is nonnegative by Cauchy-Schwarz and needed for the bound to hold.
/// `lipschitz` must upper-bound the kernel's Lipschitz constant on the domain.
pub fn bound_general(
    kernel: &KernelSpec,
    data: &Dataset,
    x: &[f64],
    x_star: &[f64],
    rho: f64,
    lipschitz: f64,
) -> Result<f64> {
    let kxx = kernel.eval(x, x)?;
    let cap = kxx / lipschitz;
    if rho > cap {
        return Err(Error::invalid(format!(
            "radius {rho} exceeds the admissible cap k(x,x)/L_k = {cap}"
        )));
    }
    let count = ball_count(data, x_star, rho, &BallMetric::Euclidean)?.count as f64;
    if count == 0.0 {
        return Ok(kxx);
    }
    let ks = kernel.eval(x_star, x_star)?;
    let kxs = kernel.eval(x_star, x)?;
    let s = data.noise_var();
    let lr = lipschitz * rho;
    let spread = ks + 2.0 * lr;
    let near = (kxs - lr).max(0.0);
    let xi = kxx * spread - near * near;
    Ok((s * kxx + count * xi) / (count * spread + s))
}

/// Bound for isotropic, non-increasing kernels:
/// `k(0) - k(rho)^2 / (k(0) + s / |B_rho(x)|)`. ARD kernels use the
/// ellipsoidal ball with `rho` measured in lengthscale units.
pub fn bound_isotropic(kernel: &KernelSpec, data: &Dataset, x: &[f64], rho: f64) -> Result<f64> {
    let family = kernel.family();
    if !(family.is_isotropic() || family == KernelFamily::SquaredExpArd) {
        return Err(Error::unsupported(format!(
            "{} kernel is not isotropic",
            family.name()
        )));
    }
    kernel.check_dim(x.len())?;
    let count = ball_count(data, x, rho, &BallMetric::for_kernel(kernel))?.count as f64;
    let k0 = kernel.signal_var();
    if count == 0.0 {
        return Ok(k0);
    }
    let kr = kernel.profile(rho);
    Ok(k0 - kr * kr / (k0 + data.noise_var() / count))
}

/// Two-nearest-points bound from distances `rho1`, `rho2` to the two closest
/// training inputs and their mutual distance `eta`.
pub fn bound_williams(
    kernel: &KernelSpec,
    rho1: f64,
    rho2: f64,
    eta: f64,
    noise_var: f64,
) -> Result<f64> {
    if !kernel.family().is_isotropic() {
        return Err(Error::unsupported(format!(
            "{} kernel is not isotropic",
            kernel.family().name()
        )));
    }
    let k0 = kernel.signal_var();
    let (k1, k2, ke) = (kernel.profile(rho1), kernel.profile(rho2), kernel.profile(eta));
    let a = k0 + noise_var;
    Ok(k0 - (a * (k2 * k2 + k1 * k1) - 2.0 * ke * k1 * k2) / (a * a - ke * ke))
}

/// [`bound_williams`] with distances taken from the data.
pub fn bound_williams_data(kernel: &KernelSpec, data: &Dataset, x: &[f64]) -> Result<f64> {
    if data.len() < 2 {
        return Err(Error::unsupported("two-point bound needs at least two observations"));
    }
    let (i1, i2) = two_nearest(data, x);
    let pts = data.inputs();
    let rho1 = sq_dist(&pts[i1], x).sqrt();
    let rho2 = sq_dist(&pts[i2], x).sqrt();
    let eta = sq_dist(&pts[i1], &pts[i2]).sqrt();
    bound_williams(kernel, rho1, rho2, eta, data.noise_var())
}

fn two_nearest(data: &Dataset, x: &[f64]) -> (usize, usize) {
    let mut best = (f64::INFINITY, 0usize);
    let mut second = (f64::INFINITY, 0usize);
    for (i, p) in data.inputs().iter().enumerate() {
        let d = sq_dist(p, x);
        if d < best.0 {
            second = best;
            best = (d, i);
        } else if d < second.0 {
            second = (d, i);
        }
    }
    (best.1, second.1)
}

/// Mean square prediction error bound built from the nearest training input
/// `x_` and `S = sup k` over the domain:
///
/// ```text
/// k(x,x) - 2k(x_,x) + k(x_,x_) - (k(x_,x) + k(x_,x_))^2 / (N S + s)
///   + s (N S + 2 (k(x_,x) + k(x_,x_))^2) / (N S + s)
/// ```
///
/// Kept as a literature baseline; it is not guaranteed to dominate the exact
/// posterior variance.
pub fn bound_wang_mspe(kernel: &KernelSpec, data: &Dataset, x: &[f64], sup_k: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::unsupported("prediction error bound needs data"));
    }
    let (i, _) = two_nearest(data, x);
    let xn = &data.inputs()[i];
    let kxx = kernel.eval(x, x)?;
    let knx = kernel.eval(xn, x)?;
    let knn = kernel.eval(xn, xn)?;
    let s = data.noise_var();
    let ns = data.len() as f64 * sup_k;
    let t = knx + knn;
    Ok(kxx - 2.0 * knx + knn - t * t / (ns + s) + s * (ns + 2.0 * t * t) / (ns + s))
}

/// Candidate with the largest prior variance `k(x*, x*)`; ties go to the
/// smallest index.
pub fn select_reference_point(kernel: &KernelSpec, candidates: &[Vec<f64>]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let v = kernel.eval(c, c)?;
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::invalid("no reference point candidates"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingRegime {
    Uniform,
    Vanishing,
}

/// `rho(N) = c N^{-q}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusSchedule {
    pub coefficient: f64,
    pub exponent: f64,
}

impl RadiusSchedule {
    /// Radius for `n` samples clipped at `cap`; the flag tells whether
    /// clipping was applied.
    pub fn radius(&self, n: usize, cap: f64) -> (f64, bool) {
        let rho = self.coefficient * (n.max(1) as f64).powf(-self.exponent);
        if rho > cap {
            (cap, true)
        } else {
            (rho, false)
        }
    }
}

/// Schedule with the best asymptotic decay for a kernel family and a
/// sampling regime. Non-stationary kernels are bounded around a reference
/// point away from the test point, where the density does not vanish, so
/// they keep the uniform-density schedule.
pub fn radius_schedule_for(
    family: KernelFamily,
    regime: SamplingRegime,
    coefficient: f64,
) -> Result<RadiusSchedule> {
    if !(coefficient > 0.0) {
        return Err(Error::invalid("schedule coefficient must be > 0"));
    }
    let exponent = match (family, regime) {
        (KernelFamily::SquaredExpIso | KernelFamily::SquaredExpArd, SamplingRegime::Uniform) => {
            1.0 / 3.0
        }
        (KernelFamily::SquaredExpIso | KernelFamily::SquaredExpArd, SamplingRegime::Vanishing) => {
            1.0 / 4.0
        }
        (KernelFamily::Matern12, SamplingRegime::Vanishing) => 1.0 / 3.0,
        (_, SamplingRegime::Uniform) => 0.5,
        (f, SamplingRegime::Vanishing) if !f.is_stationary() => 0.5,
        (f, SamplingRegime::Vanishing) => {
            return Err(Error::invalid(format!(
                "no radius schedule for {} under vanishing density",
                f.name()
            )))
        }
    };
    Ok(RadiusSchedule {
        coefficient,
        exponent,
    })
}

/// Log-log slope of `value` against `N` over the upper half of the `N` range.
pub fn decay_slope(series: &[(f64, f64)]) -> Result<f64> {
    if series.len() < 5 {
        return Err(Error::invalid("decay slope needs at least 5 points"));
    }
    if series.iter().any(|(n, v)| !(*v > 0.0) || !(*n > 0.0)) {
        return Err(Error::invalid("decay slope needs positive N and values"));
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let upper = &sorted[sorted.len() / 2..];
    let xs: Vec<f64> = upper.iter().map(|(n, _)| n.ln()).collect();
    let ys: Vec<f64> = upper.iter().map(|(_, v)| v.ln()).collect();
    Ok(ols_slope(&xs, &ys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::Posterior;
    use proptest::prelude::*;

    fn se() -> KernelSpec {
        KernelSpec::se_iso(1.0, 1.0).unwrap()
    }

    fn data_1d(xs: &[f64], s: f64) -> Dataset {
        Dataset::new(xs.iter().map(|v| vec![*v]).collect(), vec![0.0; xs.len()], s).unwrap()
    }

    #[test]
    fn ball_count_examples() {
        let d = data_1d(&[0.9, 1.0, 1.2], 0.1);
        let e = BallMetric::Euclidean;
        assert_eq!(ball_count(&d, &[1.0], 0.15, &e).unwrap().count, 2);
        assert_eq!(ball_count(&d, &[1.05], 0.0, &e).unwrap().count, 0);
        assert_eq!(ball_count(&d, &[1.0], 0.0, &e).unwrap().count, 1);
        assert_eq!(ball_count(&d, &[1.0], 10.0, &e).unwrap().count, 3);
        assert!(ball_count(&d, &[1.0], -1.0, &e).is_err());
    }

    #[test]
    fn ellipsoid_with_unit_lengthscales_is_a_ball() {
        let d = Dataset::new(
            vec![vec![0.1, 0.2], vec![0.5, -0.3], vec![1.0, 1.0]],
            vec![0.0; 3],
            0.1,
        )
        .unwrap();
        for r in [0.0, 0.3, 0.6, 1.2, 2.0] {
            let a = ball_count(&d, &[0.2, 0.1], r, &BallMetric::Euclidean).unwrap();
            let b = ball_count(&d, &[0.2, 0.1], r, &BallMetric::ArdEllipsoid(vec![1.0, 1.0])).unwrap();
            assert_eq!(a.count, b.count);
        }
    }

    #[test]
    fn general_bound_examples() {
        let lk = se().lipschitz_const(&crate::DomainBox::cube(0.0, 2.0, 1).unwrap()).upper();
        let d = data_1d(&[1.0; 10], 0.1);
        let v = bound_general(&se(), &d, &[1.0], &[1.0], 0.0, lk).unwrap();
        assert!((v - 0.1 / 10.1).abs() < 1e-15);
        let far = data_1d(&[5.0], 0.1);
        assert_eq!(bound_general(&se(), &far, &[1.0], &[1.0], 0.1, lk).unwrap(), 1.0);
        assert!(matches!(
            bound_general(&se(), &d, &[1.0], &[1.0], 10.0, lk),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn general_bound_reduces_to_closed_form_at_reference() {
        let lk = 0.6;
        let d = data_1d(&[0.95, 1.0, 1.1, 3.0], 0.1);
        let rho = 0.2;
        let b = 3.0;
        let expected = ((4.0 * lk * rho - lk * lk * rho * rho) * b + 0.1) / (b * (1.0 + 2.0 * lk * rho) + 0.1);
        let got = bound_general(&se(), &d, &[1.0], &[1.0], rho, lk).unwrap();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn isotropic_bound_examples() {
        let d2 = data_1d(&[1.0, 1.0], 0.1);
        let v = bound_isotropic(&se(), &d2, &[1.0], 0.0).unwrap();
        assert!((v - (1.0 - 1.0 / 1.05)).abs() < 1e-15);
        let exact = Posterior::condition(se(), d2).unwrap().predict_var(&[1.0]).unwrap();
        assert!((v - exact).abs() < 1e-12);
        assert_eq!(bound_isotropic(&se(), &data_1d(&[9.0], 0.1), &[1.0], 0.5).unwrap(), 1.0);
        let d5 = data_1d(&[1.0, 1.2, 0.5, 1.9, 1.5], 0.1);
        let v = bound_isotropic(&se(), &d5, &[1.0], 1.0).unwrap();
        assert!((v - (1.0 - (-1.0f64).exp() / 1.02)).abs() < 1e-12);
        assert!((v - 0.639333).abs() < 1e-6);
        let poly = KernelSpec::polynomial(1.0, 3).unwrap();
        assert!(matches!(bound_isotropic(&poly, &d5, &[1.0], 0.1), Err(Error::Unsupported(_))));
    }

    #[test]
    fn williams_examples() {
        let v = bound_williams(&se(), 0.0, 0.0, 0.0, 0.1).unwrap();
        assert!((v - (1.0 - 0.2 / 0.21)).abs() < 1e-14);
        let v = bound_williams(&se(), 100.0, 100.0, 100.0, 0.1).unwrap();
        assert_eq!(v, 1.0);
        let v = bound_williams(&se(), 0.0, 100.0, 100.0, 0.1).unwrap();
        assert!((v - (1.0 - 1.1 / 1.21)).abs() < 1e-14);
        assert!(matches!(
            bound_williams_data(&se(), &data_1d(&[1.0], 0.1), &[1.0]),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn wang_examples() {
        assert!(matches!(
            bound_wang_mspe(&se(), &data_1d(&[], 0.1), &[1.0], 1.0),
            Err(Error::Unsupported(_))
        ));
        // Coincident nearest point: the gap terms cancel.
        let v = bound_wang_mspe(&se(), &data_1d(&[1.0], 0.1), &[1.0], 1.0).unwrap();
        let t: f64 = 2.0;
        assert!((v - (-t * t / 1.1 + 0.1 * (1.0 + 2.0 * t * t) / 1.1)).abs() < 1e-14);
        // With coincident data the expression tends to the noise variance.
        let v = bound_wang_mspe(&se(), &data_1d(&vec![1.0; 200_000], 0.1), &[1.0], 1.0).unwrap();
        assert!((v - 0.1).abs() < 1e-4);
    }

    #[test]
    fn reference_point_prefers_high_prior_variance() {
        let poly = KernelSpec::polynomial(1.0, 3).unwrap();
        let c = vec![vec![1.0], vec![1.4], vec![-1.4], vec![0.0]];
        assert_eq!(select_reference_point(&poly, &c).unwrap(), 1);
        assert_eq!(select_reference_point(&se(), &c).unwrap(), 0);
    }

    #[test]
    fn schedules() {
        use KernelFamily::*;
        use SamplingRegime::*;
        let q = |f, r| radius_schedule_for(f, r, 1.0).unwrap().exponent;
        assert_eq!(q(SquaredExpIso, Uniform), 1.0 / 3.0);
        assert_eq!(q(Matern12, Uniform), 0.5);
        assert_eq!(q(Polynomial, Uniform), 0.5);
        assert_eq!(q(NeuralNetwork, Uniform), 0.5);
        assert_eq!(q(SquaredExpIso, Vanishing), 0.25);
        assert_eq!(q(Matern12, Vanishing), 1.0 / 3.0);
        assert_eq!(q(Polynomial, Vanishing), 0.5);
        assert!(radius_schedule_for(Matern32, Vanishing, 1.0).is_err());
        let s = radius_schedule_for(SquaredExpIso, Uniform, 1.0).unwrap();
        assert_eq!(s.radius(8, 10.0), (0.5, false));
        assert_eq!(s.radius(1, 0.3), (0.3, true));
    }

    #[test]
    fn slopes() {
        let exact: Vec<(f64, f64)> = (1..=10)
            .map(|i| {
                let n = 10f64.powf(2.0 + 2.0 * (i - 1) as f64 / 9.0);
                (n, n.powf(-2.0 / 3.0))
            })
            .collect();
        assert!((decay_slope(&exact).unwrap() + 2.0 / 3.0).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = exact.iter().map(|(n, _)| (*n, 3.0)).collect();
        assert!(decay_slope(&flat).unwrap().abs() < 1e-12);
        assert!(decay_slope(&exact[..4]).is_err());
        let mut bad = exact.clone();
        bad[0].1 = 0.0;
        assert!(decay_slope(&bad).is_err());
    }

    proptest! {
        #[test]
        fn isotropic_bound_decreases_with_count(n in 1usize..40, rho in 0.0f64..2.0) {
            let a = bound_isotropic(&se(), &data_1d(&vec![1.0; n], 0.1), &[1.0], rho).unwrap();
            let b = bound_isotropic(&se(), &data_1d(&vec![1.0; n + 1], 0.1), &[1.0], rho).unwrap();
            prop_assert!(b < a);
        }

        #[test]
        fn general_bound_at_reference_is_below_prior(
            xs in proptest::collection::vec(0.0f64..2.0, 0..30),
        ) {
            let d = data_1d(&xs, 0.1);
            let v = bound_general(&se(), &d, &[1.0], &[1.0], 0.0, 0.61).unwrap();
            prop_assert!(v <= 1.0 + 1e-15);
        }
    }
}
