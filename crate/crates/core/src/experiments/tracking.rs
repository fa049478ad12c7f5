//! Certified tracking of a two-state chain of integrators with a learned
//! drift, and the dependence of the certificate on the amount of data.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::output::CsvTable;
use super::sampler::{seed_scheme, stream_rng};
use super::truth::TruthFunction;
use crate::control::{
    classify_points, full_reference, simulate, ultimate_bound, ChainLayout, ControllerGains,
    DriftModel, Envelope, ExactDrift, LyapunovCert, PosteriorEnvelope, ReferenceTrajectory,
    SimOptions, SinusoidReference, SystemModel, Trajectory, UltimateBound, UltimateBoundOptions,
};
use crate::domain::{linspace, DomainBox};
use crate::error::{Error, Result};
use crate::gp::{Dataset, Posterior};
use crate::kernels::KernelSpec;
use crate::prior_shaping::{
    constrained_ml_fit, probabilistic_lipschitz, FitOptions, NoiseModel, PriorKnowledge,
};
use crate::uniform_error::{auto_tau, make_cert, ErrorBoundCert};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingConfig {
    pub truth: TruthFunction,
    pub kernel: KernelSpec,
    pub train_domain: DomainBox,
    /// Training grid points per axis.
    pub train_grid: Vec<usize>,
    pub noise_var: f64,
    pub state_domain: DomainBox,
    pub prior: PriorKnowledge,
    pub fit_starts: usize,
    pub reference: SinusoidReference,
    pub k_c: f64,
    pub lambda: Vec<f64>,
    pub delta: f64,
    pub tau: f64,
    pub delta_lipschitz: f64,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub step: f64,
    pub record_every: usize,
    pub bound_grid: UltimateBoundOptions,
    /// Reference states over one period used for the ultimate bound.
    pub phases: usize,
    /// Points per axis of the region classification map.
    pub region_grid: usize,
    /// Data sets of size `4 m^2` for `m = 1..=sweep_max_m`.
    pub sweep_max_m: usize,
    pub sweep_domain: DomainBox,
    pub sweep_horizon: f64,
    /// When set, each sweep entry lowers `tau` until `gamma` is at most this
    /// fraction of `sqrt(beta)` times the smallest posterior standard
    /// deviation on the sweep domain. Otherwise `tau` is used throughout.
    pub sweep_gamma_fraction: Option<f64>,
    pub seed: u64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            truth: TruthFunction::TrackingDrift,
            kernel: KernelSpec::se_ard(1.0, vec![1.0, 1.0]).expect("valid kernel"),
            train_domain: DomainBox::new(vec![0.0, -5.0], vec![3.0, 5.0]).expect("valid box"),
            train_grid: vec![5, 5],
            noise_var: 0.04,
            state_domain: DomainBox::new(vec![-4.0, -6.0], vec![4.0, 6.0]).expect("valid box"),
            prior: PriorKnowledge::new(2.5, None, vec![1.6, 0.2], None, 0.99, 0.99)
                .expect("valid prior knowledge"),
            fit_starts: 8,
            reference: SinusoidReference::new(2.0, 1.0),
            k_c: 4.0,
            lambda: vec![2.0],
            delta: 0.01,
            tau: 1e-6,
            delta_lipschitz: 0.01,
            x0: vec![0.0, 0.0],
            horizon: 30.0,
            step: 1e-3,
            record_every: 10,
            bound_grid: UltimateBoundOptions::default(),
            phases: 8,
            region_grid: 200,
            sweep_max_m: 10,
            sweep_domain: DomainBox::new(vec![-3.0, -5.0], vec![3.0, 5.0]).expect("valid box"),
            sweep_horizon: 20.0,
            sweep_gamma_fraction: Some(0.1),
            seed: 0,
        }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.train_domain.dim() != 2 || self.state_domain.dim() != 2 || self.sweep_domain.dim() != 2 {
            return bad("tracking domains must be two-dimensional");
        }
        if self.train_grid.len() != 2 || self.train_grid.iter().any(|n| *n == 0) {
            return bad("train_grid needs two positive counts");
        }
        if self.x0.len() != 2 || !self.state_domain.contains(&self.x0) || !self.sweep_domain.contains(&self.x0) {
            return bad("x0 must be a state inside the state and sweep domains");
        }
        if self.phases == 0 || self.sweep_max_m == 0 || self.region_grid < 2 {
            return bad("phases, sweep_max_m and region_grid must be positive");
        }
        if !(self.noise_var > 0.0 && self.step > 0.0 && self.horizon > 0.0 && self.sweep_horizon > 0.0) {
            return bad("noise variance, step and horizons must be positive");
        }
        if self.sweep_gamma_fraction.is_some_and(|f| !(f > 0.0)) {
            return bad("sweep_gamma_fraction must be positive");
        }
        Ok(())
    }

    fn gains(&self) -> Result<ControllerGains> {
        ControllerGains::new(self.k_c, self.lambda.clone())
    }

    fn reference_states(&self, layout: &ChainLayout) -> Result<Vec<Vec<f64>>> {
        let period = self.reference.period();
        let span = if period.is_finite() { period } else { 0.0 };
        (0..self.phases)
            .map(|k| {
                let t = span * k as f64 / self.phases as f64;
                Ok(full_reference(layout, &[&self.reference], t)?.0)
            })
            .collect()
    }
}

/// Certificate of one learned model: error bound, Lyapunov sets, simulation.
#[derive(Debug, Clone, Serialize)]
pub struct CertifiedRun {
    pub n_train: usize,
    pub error_cert: ErrorBoundCert,
    pub ultimate: UltimateBound,
    /// `sqrt(v / lambda_min(P))`, a bound on `||e||` inside the ultimate set.
    pub error_norm_bound: f64,
    /// Largest `||e||` over the second half of the simulation.
    pub late_error_norm: f64,
    /// First recorded time with `sqrt(V) <= sqrt(v)`.
    pub entered_at: Option<f64>,
    /// After entering, `sqrt(V)` never exceeded `sqrt(v) + 1e-6`.
    pub stays_inside: bool,
    pub aborted: bool,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrackingReport {
    pub kernel: KernelSpec,
    pub log_likelihood: f64,
    pub l_f: f64,
    pub p: Vec<f64>,
    pub main: CertifiedRun,
    /// Every sampled state lies in the decrease region or in the initial set.
    pub initial_set_covers_complement: bool,
    /// Final `||e||` with the true drift as model.
    pub oracle_final_error: f64,
    #[serde(skip)]
    pub regions: CsvTable,
    #[serde(skip)]
    pub sweep: CsvTable,
    pub sweep_runs: Vec<SweepPoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub n: usize,
    pub err_sim: f64,
    pub err_bound: f64,
    pub ultimate_bound: f64,
    pub tau: f64,
    /// Additive constant of the error bound at this data size.
    pub gamma: f64,
    pub stays_inside: bool,
}

fn noisy_data(
    truth: TruthFunction,
    points: Vec<Vec<f64>>,
    noise_var: f64,
    seed: u64,
    stream: u64,
) -> Result<Dataset> {
    let mut rng = stream_rng(seed, stream);
    let noise = Normal::new(0.0, noise_var.sqrt())
        .map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;
    let ys = points.iter().map(|x| truth.eval(x) + noise.sample(&mut rng)).collect();
    Dataset::new(points, ys, noise_var)
}

pub(crate) fn min_posterior_std(post: &Posterior, dom: &DomainBox, per_axis: usize) -> Result<f64> {
    dom.grid(per_axis)
        .iter()
        .try_fold(f64::INFINITY, |m, x| Ok(m.min(post.predict_var(x)?.sqrt())))
}

pub(crate) fn containment(tr: &Trajectory) -> (Option<f64>, bool) {
    let ub = tr.ultimate_bound.sqrt();
    let Some(first) = tr.points.iter().position(|p| p.lyap <= ub) else {
        return (None, false);
    };
    let stays = tr.points[first..].iter().all(|p| p.lyap <= ub + 1e-6);
    (Some(tr.points[first].t), stays)
}

pub(crate) fn late_error(tr: &Trajectory, from: f64) -> f64 {
    tr.points
        .iter()
        .filter(|p| p.t >= from)
        .map(|p| p.e.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn certify(
    cfg: &TrackingConfig,
    post: &Posterior,
    l_f: f64,
    cert: &LyapunovCert,
    horizon: f64,
    dom: &DomainBox,
    tau: f64,
) -> Result<CertifiedRun> {
    let layout = ChainLayout::single(2)?;
    let error_cert = make_cert(post, dom, tau, cfg.delta, l_f)?;
    let env = PosteriorEnvelope {
        cert: &error_cert,
        post,
    };
    let ultimate = ultimate_bound(
        &layout,
        cert,
        &[&env],
        dom,
        &cfg.reference_states(&layout)?,
        &cfg.bound_grid,
    )?;
    let truth = cfg.truth;
    let system = SystemModel::new(layout, move |x| vec![truth.eval(x)]);
    let opts = SimOptions {
        horizon,
        step: cfg.step,
        record_every: cfg.record_every,
        safety_box: Some(dom.clone()),
        ultimate_bound: ultimate.value,
    };
    let trajectory = simulate(&system, &[post], cert, &[&cfg.reference], &cfg.x0, &opts)?;
    let (entered_at, stays_inside) = containment(&trajectory);
    Ok(CertifiedRun {
        n_train: post.len(),
        error_norm_bound: (ultimate.value / cert.min_eigenvalue()).sqrt(),
        late_error_norm: late_error(&trajectory, 0.5 * horizon),
        entered_at,
        stays_inside,
        aborted: trajectory.aborted,
        error_cert,
        ultimate,
        trajectory,
    })
}

pub fn run_tracking(cfg: &TrackingConfig) -> Result<TrackingReport> {
    cfg.validate()?;
    let gains = cfg.gains()?;
    let cert = LyapunovCert::new(&gains)?;
    let layout = ChainLayout::single(2)?;
    let dom = &cfg.state_domain;

    let train = noisy_data(
        cfg.truth,
        cfg.train_domain.grid_per_axis(&cfg.train_grid),
        cfg.noise_var,
        cfg.seed,
        0,
    )?;
    let fit = constrained_ml_fit(
        &train,
        &cfg.kernel,
        Some(&cfg.prior),
        dom,
        &FitOptions {
            starts: cfg.fit_starts,
            noise: NoiseModel::Fixed,
            seed: cfg.seed,
            ..Default::default()
        },
    )?;
    let kernel = fit.kernel.clone();
    let l_f = probabilistic_lipschitz(&kernel, dom, cfg.delta_lipschitz)?;
    let post = Posterior::condition(kernel.clone(), train)?;
    let main = certify(cfg, &post, l_f, &cert, cfg.horizon, dom, cfg.tau)?;

    let x_ref0 = full_reference(&layout, &[&cfg.reference], 0.0)?.0;
    let env = PosteriorEnvelope {
        cert: &main.error_cert,
        post: &post,
    };
    let envs: [&dyn Envelope; 1] = [&env];
    let axes: Vec<Vec<f64>> = (0..2)
        .map(|i| linspace(dom.lower()[i], dom.upper()[i], cfg.region_grid))
        .collect();
    let points = crate::domain::tensor_grid(&axes);
    let classes = classify_points(&layout, &cert, &envs, &x_ref0, &main.ultimate, &points)?;
    let mut regions = CsvTable::new(["x_1", "x_2", "in_L", "in_V", "in_X0"])
        .comment("membership at reference phase t=0: decrease region L, ultimate set V, initial set X0")
        .comment(format!("ultimate bound v={}, exit level={}", main.ultimate.value, main.ultimate.exit_level));
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    for (x, c) in points.iter().zip(&classes) {
        regions.push(vec![
            x[0],
            x[1],
            flag(c.in_decrease_region),
            flag(c.in_ultimate_set),
            flag(c.in_initial_set),
        ]);
    }
    let initial_set_covers_complement = classes
        .iter()
        .all(|c| c.in_decrease_region || c.in_initial_set);

    let truth = cfg.truth;
    let oracle_system = SystemModel::new(layout, move |x| vec![truth.eval(x)]);
    let oracle_model = ExactDrift(move |x: &[f64]| truth.eval(x));
    let oracle = simulate(
        &oracle_system,
        &[&oracle_model as &dyn DriftModel],
        &cert,
        &[&cfg.reference as &dyn ReferenceTrajectory],
        &cfg.x0,
        &SimOptions {
            horizon: cfg.horizon,
            step: cfg.step,
            record_every: cfg.record_every,
            safety_box: Some(dom.clone()),
            ultimate_bound: 0.0,
        },
    )?;
    let oracle_final_error = oracle
        .last()
        .map(|p| p.e.iter().map(|v| v * v).sum::<f64>().sqrt())
        .unwrap_or(f64::NAN);

    let mut sweep = CsvTable::new(["Ns", "err_sim", "err_bound"])
        .comment("training grids of 4 m^2 points over the sweep domain, which is also the certified state space")
        .comment("hyperparameters from the main fit; tau per entry as reported in the summary")
        .comment("err_sim: max ||e|| over the second half of the run; err_bound: sqrt(v / lambda_min(P))")
        .comment(seed_scheme(cfg.seed));
    let mut sweep_runs = Vec::new();
    let sweep_l_f = probabilistic_lipschitz(&kernel, &cfg.sweep_domain, cfg.delta_lipschitz)?;
    for m in 1..=cfg.sweep_max_m {
        let per_axis = 2 * m;
        let data = noisy_data(
            cfg.truth,
            cfg.sweep_domain.grid_per_axis(&[per_axis, per_axis]),
            cfg.noise_var,
            cfg.seed,
            m as u64,
        )?;
        let post_m = Posterior::condition(kernel.clone(), data)?;
        let tau = match cfg.sweep_gamma_fraction {
            Some(fraction) => {
                let min_std = min_posterior_std(&post_m, &cfg.sweep_domain, 41)?;
                auto_tau(&post_m, &cfg.sweep_domain, cfg.delta, sweep_l_f, min_std, fraction, cfg.tau)?
            }
            None => cfg.tau,
        };
        let run = certify(cfg, &post_m, sweep_l_f, &cert, cfg.sweep_horizon, &cfg.sweep_domain, tau)?;
        sweep.push(vec![run.n_train as f64, run.late_error_norm, run.error_norm_bound]);
        sweep_runs.push(SweepPoint {
            n: run.n_train,
            err_sim: run.late_error_norm,
            err_bound: run.error_norm_bound,
            ultimate_bound: run.ultimate.value,
            tau,
            gamma: run.error_cert.gamma,
            stays_inside: run.stays_inside,
        });
    }

    Ok(TrackingReport {
        kernel,
        log_likelihood: fit.log_likelihood,
        l_f,
        p: cert.p.iter().copied().collect(),
        main,
        initial_set_covers_complement,
        oracle_final_error,
        regions,
        sweep,
        sweep_runs,
    })
}
