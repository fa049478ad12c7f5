//! Violation of the uniform error bound with and without hyperparameters
//! constrained by prior knowledge of the function's extremes.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::output::CsvTable;
use super::sampler::{seed_scheme, stream_rng};
use super::truth::TruthFunction;
use crate::domain::DomainBox;
use crate::error::{Error, Result};
use crate::gp::{Dataset, Posterior};
use crate::kernels::KernelSpec;
use crate::numeric::{median, quantile};
use crate::prior_shaping::{
    constrained_ml_fit, constrained_random_hyperparameters, probabilistic_lipschitz, FitOptions,
    PriorKnowledge,
};
use crate::uniform_error::{make_cert, violation_fraction};

/// Hyperparameters drawn at random with no training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomScenario {
    pub name: String,
    pub truth: TruthFunction,
    pub domain: DomainBox,
    pub prior: PriorKnowledge,
    pub delta: f64,
    pub tau: f64,
    /// Confidence parameter of the probabilistic Lipschitz constant.
    pub delta_lipschitz: f64,
    /// Mean of the exponential distribution of `sigma_f` and `1/l`.
    pub exp_mean: f64,
}

/// Hyperparameters fitted by maximum likelihood to data covering only part
/// of the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedScenario {
    pub name: String,
    pub truth: TruthFunction,
    pub kernel: KernelSpec,
    pub domain: DomainBox,
    pub data_domain: DomainBox,
    pub n_train: usize,
    pub noise_var: f64,
    pub prior: PriorKnowledge,
    pub delta: f64,
    pub tau: f64,
    pub delta_lipschitz: f64,
    pub fit_starts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorScenario {
    RandomHyperparameters(RandomScenario),
    FittedHyperparameters(FittedScenario),
}

impl PriorScenario {
    pub fn name(&self) -> &str {
        match self {
            PriorScenario::RandomHyperparameters(s) => &s.name,
            PriorScenario::FittedHyperparameters(s) => &s.name,
        }
    }

    /// Labels of the baseline and the constrained arm.
    pub fn arms(&self) -> [&'static str; 2] {
        match self {
            PriorScenario::RandomHyperparameters(_) => ["random", "constrained"],
            PriorScenario::FittedHyperparameters(_) => ["unconstrained", "constrained"],
        }
    }

    pub fn squared_exponential_no_data() -> Self {
        PriorScenario::RandomHyperparameters(RandomScenario {
            name: "se_no_data".into(),
            truth: TruthFunction::SinSigmoid,
            domain: DomainBox::cube(-4.0, 4.0, 2).expect("valid box"),
            prior: PriorKnowledge::new(1.5, Some(-0.8), vec![0.8, 0.2], Some(vec![-0.8, 0.0]), 0.99, 0.99)
                .expect("valid prior knowledge"),
            delta: 0.1,
            tau: 1e-2,
            delta_lipschitz: 0.01,
            exp_mean: 0.05,
        })
    }

    pub fn matern_sparse_data() -> Self {
        PriorScenario::FittedHyperparameters(FittedScenario {
            name: "matern_sparse_data".into(),
            truth: TruthFunction::TanhStep,
            kernel: KernelSpec::matern32(1.0, 1.0).expect("valid kernel"),
            domain: DomainBox::cube(-4.0, 4.0, 2).expect("valid box"),
            data_domain: DomainBox::new(vec![-4.0, 0.0], vec![4.0, 4.0]).expect("valid box"),
            n_train: 20,
            noise_var: 0.01,
            prior: PriorKnowledge::new(
                8.0,
                Some(-8.0),
                vec![2.0, 400.0],
                Some(vec![0.0, -400.0]),
                0.5,
                0.5,
            )
            .expect("valid prior knowledge"),
            delta: 0.01,
            tau: 1e-8,
            delta_lipschitz: 0.01,
            fit_starts: 8,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErrorBoundConfig {
    pub scenarios: Vec<PriorScenario>,
    pub replications: usize,
    /// Evaluation grid points per axis.
    pub grid_points: usize,
    pub seed: u64,
}

impl Default for ErrorBoundConfig {
    fn default() -> Self {
        Self {
            scenarios: vec![
                PriorScenario::squared_exponential_no_data(),
                PriorScenario::matern_sparse_data(),
            ],
            replications: 100,
            grid_points: 100,
            seed: 0,
        }
    }
}

impl ErrorBoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::Config("no scenarios given".into()));
        }
        if self.replications == 0 || self.grid_points < 2 {
            return Err(Error::Config("need >= 1 replication and >= 2 grid points per axis".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmSummary {
    pub arm: String,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub mean: f64,
    /// Replications without a feasible hyperparameter choice.
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub arms: Vec<ArmSummary>,
    #[serde(skip)]
    pub table: CsvTable,
}

impl ScenarioReport {
    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.arm == name)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorBoundReport {
    pub scenarios: Vec<ScenarioReport>,
}

/// Violation fraction, or `None` when no hyperparameters met the constraints.
fn skip_infeasible(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::InfeasibleConstraints(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn evaluate(
    kernel: KernelSpec,
    data: Dataset,
    dom: &DomainBox,
    tau: f64,
    delta: f64,
    delta_l: f64,
    truth: TruthFunction,
    grid: &[Vec<f64>],
) -> Result<f64> {
    let l_f = probabilistic_lipschitz(&kernel, dom, delta_l)?;
    let post = Posterior::condition(kernel, data)?;
    let cert = make_cert(&post, dom, tau, delta, l_f)?;
    violation_fraction(&cert, &post, |x| truth.eval(x), grid)
}

fn random_replication(s: &RandomScenario, seed: u64, rep: u64, grid: &[Vec<f64>]) -> Result<[Option<f64>; 2]> {
    let mut rng = stream_rng(seed, rep);
    let mut arm = |pk: Option<&PriorKnowledge>| -> Result<Option<f64>> {
        skip_infeasible(
            constrained_random_hyperparameters(pk, &s.domain, &mut rng, s.exp_mean).and_then(|k| {
                evaluate(
                    k,
                    Dataset::empty(1e-2)?,
                    &s.domain,
                    s.tau,
                    s.delta,
                    s.delta_lipschitz,
                    s.truth,
                    grid,
                )
            }),
        )
    };
    let random = arm(None)?;
    let constrained = arm(Some(&s.prior))?;
    Ok([random, constrained])
}

fn fitted_replication(s: &FittedScenario, seed: u64, rep: u64, grid: &[Vec<f64>]) -> Result<[Option<f64>; 2]> {
    let mut rng = stream_rng(seed, rep);
    let noise = Normal::new(0.0, s.noise_var.sqrt())
        .map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;
    let lo = s.data_domain.lower();
    let hi = s.data_domain.upper();
    let mut xs = Vec::with_capacity(s.n_train);
    let mut ys = Vec::with_capacity(s.n_train);
    for _ in 0..s.n_train {
        let x: Vec<f64> = (0..lo.len())
            .map(|i| lo[i] + (hi[i] - lo[i]) * rand::Rng::random::<f64>(&mut rng))
            .collect();
        ys.push(s.truth.eval(&x) + noise.sample(&mut rng));
        xs.push(x);
    }
    let data = Dataset::new(xs, ys, s.noise_var)?;
    let opts = FitOptions {
        starts: s.fit_starts,
        seed: seed ^ rep.wrapping_mul(0x9E37_79B9_7F4A_7C15),
        ..Default::default()
    };
    let arm = |pk: Option<&PriorKnowledge>| -> Result<Option<f64>> {
        skip_infeasible(
            constrained_ml_fit(&data, &s.kernel, pk, &s.domain, &opts).and_then(|fit| {
                evaluate(
                    fit.kernel,
                    data.with_noise_var(fit.noise_var)?,
                    &s.domain,
                    s.tau,
                    s.delta,
                    s.delta_lipschitz,
                    s.truth,
                    grid,
                )
            }),
        )
    };
    Ok([arm(None)?, arm(Some(&s.prior))?])
}

fn summarize(arm: &str, values: &[Option<f64>]) -> ArmSummary {
    let ok: Vec<f64> = values.iter().flatten().copied().collect();
    let stat = |f: fn(&[f64]) -> f64| if ok.is_empty() { f64::NAN } else { f(&ok) };
    ArmSummary {
        arm: arm.into(),
        median: stat(median),
        q25: stat(|v| quantile(v, 0.25)),
        q75: stat(|v| quantile(v, 0.75)),
        mean: stat(|v| v.iter().sum::<f64>() / v.len() as f64),
        skipped: values.len() - ok.len(),
    }
}

pub fn run_error_bound(cfg: &ErrorBoundConfig) -> Result<ErrorBoundReport> {
    cfg.validate()?;
    let mut reports = Vec::new();
    for (si, scenario) in cfg.scenarios.iter().enumerate() {
        let dom = match scenario {
            PriorScenario::RandomHyperparameters(s) => &s.domain,
            PriorScenario::FittedHyperparameters(s) => &s.domain,
        };
        let grid = dom.grid(cfg.grid_points);
        let seed = cfg.seed.wrapping_add(si as u64);
        let results: Vec<[Option<f64>; 2]> = (0..cfg.replications as u64)
            .into_par_iter()
            .map(|r| match scenario {
                PriorScenario::RandomHyperparameters(s) => random_replication(s, seed, r, &grid),
                PriorScenario::FittedHyperparameters(s) => fitted_replication(s, seed, r, &grid),
            })
            .collect::<Result<_>>()?;
        let arms = scenario.arms();
        let mut table = CsvTable::new(["rep", arms[0], arms[1]])
            .comment(format!(
                "fraction of a {0}x{0} grid where the uniform error bound is violated, scenario {1}",
                cfg.grid_points,
                scenario.name()
            ))
            .comment(seed_scheme(seed));
        for (r, v) in results.iter().enumerate() {
            table.push(vec![
                r as f64,
                v[0].unwrap_or(f64::NAN),
                v[1].unwrap_or(f64::NAN),
            ]);
        }
        let col = |i: usize| results.iter().map(|v| v[i]).collect::<Vec<_>>();
        reports.push(ScenarioReport {
            scenario: scenario.name().to_string(),
            arms: vec![summarize(arms[0], &col(0)), summarize(arms[1], &col(1))],
            table,
        });
    }
    Ok(ErrorBoundReport { scenarios: reports })
}
