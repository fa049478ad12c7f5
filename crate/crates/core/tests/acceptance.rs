//! End-to-end acceptance checks. Each test prints one `[PASS]` or `[FAIL]`
//! line straight to stderr so the verdicts show up in captured runs.

use std::io::Write;
use std::time::{Duration, Instant};

use gpcert::control::{rk4_step, ControllerGains, LyapunovCert};
use gpcert::experiments::{
    self, run_error_bound, run_tracking, run_var_decay, ErrorBoundConfig, ExperimentConfig,
    TrackingConfig, VarDecayConfig,
};
use gpcert::prior_shaping::{f_max_bound, probabilistic_lipschitz};
use gpcert::uniform_error::make_cert;
use gpcert::variance_bounds::{bound_general, bound_isotropic, radius_cap};
use gpcert::{log_marginal_likelihood, Dataset, DomainBox, KernelSpec, Posterior};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("[{verdict}] {id:>2} {name}: {detail}\n");
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

fn uniform_points(rng: &mut ChaCha8Rng, n: usize, dom: &DomainBox) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..dom.dim())
                .map(|i| rng.random_range(dom.lower()[i]..dom.upper()[i]))
                .collect()
        })
        .collect()
}

/// Posterior mean and variance from an explicit inverse of `K + s I`.
fn dense_posterior(kernel: &KernelSpec, data: &Dataset, x: &[f64]) -> (f64, f64) {
    let n = data.len();
    let xs = data.inputs();
    let a = DMatrix::from_fn(n, n, |i, j| {
        kernel.eval(&xs[i], &xs[j]).unwrap() + if i == j { data.noise_var() } else { 0.0 }
    });
    let inv = a.try_inverse().expect("invertible Gram matrix");
    let kx = DVector::from_fn(n, |i, _| kernel.eval(&xs[i], x).unwrap());
    let y = DVector::from_column_slice(data.targets());
    let mean = kx.dot(&(&inv * y));
    let var = kernel.eval(x, x).unwrap() - kx.dot(&(&inv * &kx));
    (mean, var)
}

/// Square-root factor `V sqrt(max(Lambda, 0))` of a covariance matrix.
fn sqrt_factor(cov: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(cov);
    let scale = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    eig.eigenvectors * DMatrix::from_diagonal(&scale)
}

fn gp_draw(factor: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let z = DVector::from_fn(factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    factor * z
}

#[test]
fn variance_bounds_are_sound() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dom = DomainBox::cube(0.0, 1.0, 2).unwrap();
    let fractions = [0.0, 0.01, 0.05, 0.1, 0.3, 0.6, 1.0];
    let (mut checks, mut violations) = (0usize, 0usize);
    for _ in 0..50 {
        let sf = rng.random_range(0.5..2.0);
        let l = rng.random_range(0.1..1.0);
        let noise = rng.random_range(0.01..0.5);
        let kernels = [
            KernelSpec::se_iso(sf, l).unwrap(),
            KernelSpec::matern12(sf, l).unwrap(),
            KernelSpec::se_ard(sf, vec![l, rng.random_range(0.1..1.0)]).unwrap(),
        ];
        for kernel in &kernels {
            let lk = kernel.lipschitz_const(&dom).upper();
            for n in [5, 20, 100] {
                let xs = uniform_points(&mut rng, n, &dom);
                let ys = xs.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
                let data = Dataset::new(xs, ys, noise).unwrap();
                for x in uniform_points(&mut rng, 20, &dom) {
                    let exact = dense_posterior(kernel, &data, &x).1;
                    let cap = radius_cap(kernel, &x, lk).unwrap();
                    for f in fractions {
                        let b = bound_general(kernel, &data, &x, &x, f * cap, lk).unwrap();
                        let c = bound_isotropic(kernel, &data, &x, f * 3.0).unwrap();
                        for bound in [b, c] {
                            checks += 1;
                            if exact > bound + 1e-12 * bound.abs().max(1.0) {
                                violations += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = violations == 0 && elapsed < Duration::from_secs(60);
    report(
        1,
        "variance bound soundness",
        pass,
        &format!("{violations} violations in {checks} checks, {:.1} s (limit 60 s)", elapsed.as_secs_f64()),
    );
    assert!(pass);
}

#[test]
fn variance_bound_decay_rates() {
    let start = Instant::now();
    let cfg = VarDecayConfig {
        kernels: vec![
            KernelSpec::se_iso(1.0, 1.0).unwrap(),
            KernelSpec::matern12(1.0, 1.0).unwrap(),
        ],
        replications: 20,
        ..Default::default()
    };
    let rep = run_var_decay(&cfg).unwrap();
    let elapsed = start.elapsed();
    let se = rep.kernels[0].slope_bm.unwrap();
    let m12 = rep.kernels[1].slope_bm.unwrap();
    let ok_exp = (rep.kernels[0].rho_exponent - 1.0 / 3.0).abs() < 1e-12
        && (rep.kernels[1].rho_exponent - 0.5).abs() < 1e-12;
    let pass = ok_exp
        && (se + 2.0 / 3.0).abs() <= 0.15
        && (m12 + 0.5).abs() <= 0.15
        && elapsed < Duration::from_secs(300);
    report(
        2,
        "variance bound decay rates",
        pass,
        &format!(
            "SE slope {se:.4} (target -0.6667 +- 0.15), Matern12 slope {m12:.4} (target -0.5 +- 0.15), {:.1} s (limit 300 s)",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn coincident_data_bound_is_exact() {
    let mut worst = 0.0f64;
    for kernel in [
        KernelSpec::se_iso(1.0, 1.0).unwrap(),
        KernelSpec::se_iso(1.7, 0.3).unwrap(),
        KernelSpec::matern12(0.8, 2.0).unwrap(),
    ] {
        for noise in [0.01, 0.1, 1.0] {
            let x = vec![0.3, -1.2];
            for m in 1..=10 {
                let data = Dataset::new(vec![x.clone(); m], vec![0.0; m], noise).unwrap();
                let k0 = kernel.signal_var();
                let oracle = k0 * noise / (m as f64 * k0 + noise);
                let bound = bound_isotropic(&kernel, &data, &x, 0.0).unwrap();
                let exact = Posterior::condition(kernel.clone(), data).unwrap().predict_var(&x).unwrap();
                worst = worst.max((bound - oracle).abs()).max((exact - oracle).abs());
            }
        }
    }
    let pass = worst <= 1e-12;
    report(3, "coincident-data exactness", pass, &format!("max abs deviation {worst:.2e} (limit 1e-12)"));
    assert!(pass);
}

#[test]
fn lyapunov_certificates() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut accepted, mut worst_res, mut min_eig) = (0, 0.0f64, f64::INFINITY);
    let mut rejected_draws = 0;
    while accepted < 100 {
        let d = rng.random_range(1..=4usize);
        // filter polynomial from negative real roots, then a random loop gain
        let mut poly = vec![1.0];
        for _ in 0..d - 1 {
            let r: f64 = rng.random_range(0.2..5.0);
            let mut next = vec![0.0; poly.len() + 1];
            for (i, c) in poly.iter().enumerate() {
                next[i] += c * r;
                next[i + 1] += c;
            }
            poly = next;
        }
        let lambda = poly[..poly.len() - 1].to_vec();
        let gains = ControllerGains::new(rng.random_range(0.5..20.0), lambda).unwrap();
        let Ok(cert) = LyapunovCert::new(&gains) else {
            rejected_draws += 1;
            continue;
        };
        let a = &cert.a;
        let res = (a.transpose() * &cert.p + &cert.p * a + DMatrix::identity(d, d)).norm();
        let eig = SymmetricEigen::new(cert.p.clone()).eigenvalues.min();
        worst_res = worst_res.max(res);
        min_eig = min_eig.min(eig);
        accepted += 1;
    }
    let cert = LyapunovCert::new(&ControllerGains::new(4.0, vec![2.0]).unwrap()).unwrap();
    let want = [1.375, 0.0625, 0.0625, 0.140625];
    let dev = cert.p.iter().zip(want).map(|(p, w)| (p - w).abs()).fold(0.0, f64::max);
    let pass = worst_res <= 1e-10 && min_eig > 0.0 && dev <= 1e-12;
    report(
        4,
        "Lyapunov certification",
        pass,
        &format!(
            "100 gain sets ({rejected_draws} non-Hurwitz draws skipped): max residual {worst_res:.2e} (limit 1e-10), min eigenvalue {min_eig:.3e}; k_c=4, lambda=2 deviation {dev:.1e} (limit 1e-12)"
        ),
    );
    assert!(pass);
}

#[test]
fn constrained_priors_reduce_violations() {
    let start = Instant::now();
    let rep = run_error_bound(&ErrorBoundConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let mut pass = elapsed < Duration::from_secs(600);
    let mut detail = Vec::new();
    for s in &rep.scenarios {
        let (free, constrained) = (&s.arms[0], &s.arms[1]);
        pass &= constrained.median < free.median;
        detail.push(format!(
            "{}: {} median {:.4} vs constrained {:.4}",
            s.scenario, free.arm, free.median, constrained.median
        ));
    }
    report(
        5,
        "constrained-prior effect",
        pass,
        &format!("{}; {:.1} s (limit 600 s)", detail.join("; "), elapsed.as_secs_f64()),
    );
    assert!(pass);
}

#[test]
fn uniform_error_bound_coverage() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let kernel = KernelSpec::se_iso(1.0, 0.2).unwrap();
    let dom = DomainBox::cube(0.0, 1.0, 1).unwrap();
    let (delta, delta_l, noise, tau) = (0.1, 0.05, 0.01f64, 1e-6);
    let l_f = probabilistic_lipschitz(&kernel, &dom, delta_l).unwrap();
    let grid = dom.grid(200);
    let (functions, n) = (200, 30);
    let mut violated = 0;
    for _ in 0..functions {
        let train = uniform_points(&mut rng, n, &dom);
        let pts: Vec<Vec<f64>> = grid.iter().chain(&train).cloned().collect();
        let f = gp_draw(&sqrt_factor(kernel.gram(&pts).unwrap()), &mut rng);
        let ys = (0..n)
            .map(|i| f[grid.len() + i] + noise.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let post = Posterior::condition(kernel.clone(), Dataset::new(train, ys, noise).unwrap()).unwrap();
        let cert = make_cert(&post, &dom, tau, delta, l_f).unwrap();
        let any = grid.iter().enumerate().any(|(i, x)| {
            let (m, v) = post.predict(x).unwrap();
            (f[i] - m).abs() > cert.bound_from_var(v)
        });
        violated += usize::from(any);
    }
    let rate = violated as f64 / functions as f64;
    let pass = rate <= 0.15;
    report(
        6,
        "uniform error bound coverage",
        pass,
        &format!("{violated} of {functions} sample functions violated somewhere on the grid, rate {rate:.3} (limit 0.15)"),
    );
    assert!(pass);
}

#[test]
fn tracking_certification() {
    let start = Instant::now();
    let rep = run_tracking(&TrackingConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let main = &rep.main;
    let contained = main.entered_at.is_some() && main.stays_inside && !main.aborted;
    let v: Vec<f64> = rep.sweep_runs.iter().map(|r| r.ultimate_bound).collect();
    let e: Vec<f64> = rep.sweep_runs.iter().map(|r| r.err_bound).collect();
    let monotone = |s: &[f64]| s.windows(2).all(|w| w[1] <= 1.05 * w[0]);
    let shrinks = |s: &[f64]| s[s.len() - 1] < 0.5 * s[0];
    let pass = contained
        && v.len() == 10
        && monotone(&v)
        && monotone(&e)
        && shrinks(&v)
        && shrinks(&e)
        && elapsed < Duration::from_secs(300);
    report(
        7,
        "tracking certification",
        pass,
        &format!(
            "trajectory inside sqrt(v) from t={:?} on: {}; sweep ultimate bound {:.4} -> {:.4}, err_bound {:.4} -> {:.4}; {:.1} s (limit 300 s)",
            main.entered_at,
            main.stays_inside,
            v[0],
            v[v.len() - 1],
            e[0],
            e[e.len() - 1],
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn sample_maximum_bound_is_conservative() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let kernel = KernelSpec::se_iso(1.0, 0.2).unwrap();
    let dom = DomainBox::cube(0.0, 1.0, 1).unwrap();
    let bound = f_max_bound(&kernel, &dom, 0.1).unwrap();
    let factor = sqrt_factor(kernel.gram(&dom.grid(400)).unwrap());
    let draws = 1000;
    let exceed = (0..draws)
        .filter(|_| gp_draw(&factor, &mut rng).max() > bound)
        .count();
    let frac = exceed as f64 / draws as f64;
    let pass = frac <= 0.1;
    report(
        8,
        "sample maximum bound conservativeness",
        pass,
        &format!("bound {bound:.4}, {exceed} of {draws} draws exceed it, fraction {frac:.3} (limit 0.1)"),
    );
    assert!(pass);
}

#[test]
fn numerical_hygiene() {
    // derivative kernels against central mixed differences, relative to the
    // derivative process variance at x so near-zero covariances stay meaningful
    let h = 1e-4;
    let kernels = [
        KernelSpec::se_iso(1.3, 0.7).unwrap(),
        KernelSpec::se_ard(0.9, vec![0.5, 1.5]).unwrap(),
        KernelSpec::matern32(1.1, 0.8).unwrap(),
        KernelSpec::polynomial(1.0, 3).unwrap(),
    ];
    let pairs = [([0.1, 0.4], [0.9, -0.3]), ([-0.5, 0.2], [0.3, 0.8]), ([0.0, 0.0], [0.6, 0.1])];
    let mut worst_deriv = 0.0f64;
    for k in &kernels {
        for (x, xp) in &pairs {
            for axis in 0..2 {
                let shift = |p: &[f64; 2], s: f64| {
                    let mut q = p.to_vec();
                    q[axis] += s;
                    q
                };
                let e = |a: f64, b: f64| k.eval(&shift(x, a), &shift(xp, b)).unwrap();
                let fd = (e(h, h) - e(h, -h) - e(-h, h) + e(-h, -h)) / (4.0 * h * h);
                let an = k.derivative_kernel_eval(axis, x, xp).unwrap();
                let scale = k.derivative_kernel_eval(axis, x, x).unwrap().abs();
                worst_deriv = worst_deriv.max((an - fd).abs() / an.abs().max(scale));
            }
        }
    }

    // RK4 on x' = A x with A = [[0, 1], [-2, -3]], closed form from the eigenpairs
    let exact = |t: f64| {
        let (x0, v0) = (1.0, 0.0);
        let c1 = 2.0 * x0 + v0;
        let c2 = -(x0 + v0);
        let e1 = (-t).exp();
        let e2 = (-2.0 * t).exp();
        [c1 * e1 + c2 * e2, -c1 * e1 - 2.0 * c2 * e2]
    };
    let rk4_error = |h: f64| {
        let steps = (1.0 / h).round() as usize;
        let mut x = vec![1.0, 0.0];
        for i in 0..steps {
            x = rk4_step(|_, s| Ok(vec![s[1], -2.0 * s[0] - 3.0 * s[1]]), i as f64 * h, &x, h).unwrap();
        }
        let want = exact(1.0);
        ((x[0] - want[0]).powi(2) + (x[1] - want[1]).powi(2)).sqrt()
    };
    let ratio = rk4_error(0.1) / rk4_error(0.05);

    // GP posterior and likelihood against an explicit inverse
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dom = DomainBox::cube(-2.0, 2.0, 2).unwrap();
    let mut worst_gp = 0.0f64;
    for n in [1, 5, 20, 50] {
        let kernel = KernelSpec::se_ard(1.2, vec![0.8, 1.4]).unwrap();
        let xs = uniform_points(&mut rng, n, &dom);
        let ys: Vec<f64> = xs.iter().map(|x| x[0].sin() + 0.3 * x[1]).collect();
        let data = Dataset::new(xs, ys.clone(), 0.05).unwrap();
        let post = Posterior::condition(kernel.clone(), data.clone()).unwrap();
        for x in uniform_points(&mut rng, 10, &dom) {
            let (m, v) = post.predict(&x).unwrap();
            let (dm, dv) = dense_posterior(&kernel, &data, &x);
            worst_gp = worst_gp
                .max((m - dm).abs() / dm.abs().max(1e-3))
                .max((v - dv).abs() / dv.abs().max(1e-3));
        }
        let a = kernel.gram(data.inputs()).unwrap() + DMatrix::identity(n, n) * 0.05;
        let y = DVector::from_vec(ys);
        let quad = y.dot(&(a.clone().try_inverse().unwrap() * &y));
        let dense_lml = -0.5 * quad
            - 0.5 * a.determinant().ln()
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        let lml = log_marginal_likelihood(&kernel, &data).unwrap();
        worst_gp = worst_gp.max((lml - dense_lml).abs() / dense_lml.abs().max(1e-3));
    }

    let pass = worst_deriv <= 1e-6 && (12.0..=20.0).contains(&ratio) && worst_gp <= 1e-8;
    report(
        9,
        "numerical hygiene",
        pass,
        &format!(
            "derivative kernel rel. err {worst_deriv:.2e} (limit 1e-6), RK4 error ratio {ratio:.2} (range 12-20), GP vs dense inverse rel. err {worst_gp:.2e} (limit 1e-8)"
        ),
    );
    assert!(pass);
}

fn csv_bodies(dir: &std::path::Path) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            let body: String = std::fs::read_to_string(&p)
                .unwrap()
                .lines()
                .filter(|l| !l.starts_with('#'))
                .map(|l| format!("{l}\n"))
                .collect();
            (p.file_name().unwrap().to_string_lossy().into_owned(), body)
        })
        .collect();
    out.sort();
    out
}

#[test]
fn experiments_are_deterministic() {
    let configs = [
        r#"{"experiment": "var-decay", "n_schedule": [10, 40, 160], "replications": 3}"#,
        r#"{"experiment": "error-bound", "replications": 4, "grid_points": 20}"#,
        r#"{"experiment": "tracking", "fit_starts": 2, "horizon": 5.0, "sweep_max_m": 2,
            "sweep_horizon": 3.0, "region_grid": 20, "phases": 2,
            "bound_grid": {"directions_per_axis": 11, "radii": 30}}"#,
        r#"{"experiment": "robot", "fit_starts": 1, "horizon": 3.0, "phases": 2,
            "bound_grid": {"directions_per_axis": 3, "radii": 20, "refine_steps": 10}}"#,
    ];
    let dir = tempfile::tempdir().unwrap();
    let mut mismatched = Vec::new();
    let mut files = 0;
    for (i, text) in configs.iter().enumerate() {
        let cfg: ExperimentConfig = experiments::parse_config(text).unwrap();
        let a = dir.path().join(format!("{i}a"));
        let b = dir.path().join(format!("{i}b"));
        experiments::run(&cfg, &a, None).unwrap();
        experiments::run(&cfg, &b, None).unwrap();
        let (ba, bb) = (csv_bodies(&a), csv_bodies(&b));
        files += ba.len();
        if ba != bb || ba.is_empty() {
            mismatched.push(cfg.kind().name());
        }
    }
    let pass = mismatched.is_empty();
    report(
        10,
        "determinism",
        pass,
        &format!("{files} CSV files compared across two runs, mismatching experiments: {mismatched:?}"),
    );
    assert!(pass);
}
