//! Decay of the posterior variance at a fixed test point as the number of
//! one-dimensional training inputs grows, against several upper bounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::output::CsvTable;
use super::sampler::{seed_scheme, stream_rng, Sampler};
use crate::domain::DomainBox;
use crate::error::{Error, Result};
use crate::gp::structured::posterior_variance_1d;
use crate::gp::Dataset;
use crate::kernels::KernelSpec;
use crate::variance_bounds::{
    bound_general, bound_isotropic, bound_wang_mspe, bound_williams_data, decay_slope,
    radius_cap, radius_schedule_for,
};

pub const COLUMNS: [&str; 6] = ["idx", "sig_m", "sig_bm", "sig_bm_gen", "sig2", "sig_wang"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VarDecayConfig {
    pub kernels: Vec<KernelSpec>,
    pub sampler: Sampler,
    /// Training set sizes, strictly increasing.
    pub n_schedule: Vec<usize>,
    pub replications: usize,
    pub noise_var: f64,
    pub test_point: f64,
    /// Reference point of the general bound for non-stationary kernels.
    pub reference_point: f64,
    /// `c` in `rho(N) = c N^{-q}`.
    pub schedule_coefficient: f64,
    pub seed: u64,
}

pub fn log_spaced_sizes(lo: f64, hi: f64, count: usize) -> Vec<usize> {
    (0..count)
        .map(|i| {
            let t = i as f64 / (count - 1).max(1) as f64;
            (lo * (hi / lo).powf(t)).round() as usize
        })
        .collect()
}

impl Default for VarDecayConfig {
    fn default() -> Self {
        Self {
            kernels: vec![
                KernelSpec::se_iso(1.0, 1.0).expect("valid kernel"),
                KernelSpec::matern12(1.0, 1.0).expect("valid kernel"),
                KernelSpec::polynomial(1.0, 3).expect("valid kernel"),
                KernelSpec::neural_network(1.0, vec![]).expect("valid kernel"),
            ],
            sampler: Sampler::default(),
            n_schedule: log_spaced_sizes(1e2, 1e4, 10),
            replications: 20,
            noise_var: 0.1,
            test_point: 1.0,
            reference_point: 1.4,
            schedule_coefficient: 1.0,
            seed: 0,
        }
    }
}

impl VarDecayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernels.is_empty() {
            return Err(Error::Config("no kernels given".into()));
        }
        if self.n_schedule.is_empty() || self.n_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("N schedule must be nonempty and strictly increasing".into()));
        }
        if self.n_schedule[0] < 2 {
            return Err(Error::Config("N schedule must start at 2 or more".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if !(self.noise_var > 0.0) {
            return Err(Error::Config("noise variance must be > 0".into()));
        }
        for k in &self.kernels {
            k.check_dim(1).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    fn support(&self) -> Result<DomainBox> {
        match self.sampler {
            Sampler::Uniform { lo, hi } => DomainBox::new(vec![lo], vec![hi]),
            Sampler::VanishingAbs => DomainBox::new(vec![0.5], vec![1.5]),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelDecay {
    pub kernel: String,
    pub rho_exponent: f64,
    pub reference_point: f64,
    pub lipschitz: f64,
    /// Log-log slopes over the upper half of the schedule, `None` for columns
    /// not computed for this kernel.
    pub slope_exact: f64,
    pub slope_bm: Option<f64>,
    pub slope_bm_gen: f64,
    /// Rows where a bound column falls below the exact variance, per column.
    pub violations: Vec<(String, usize)>,
    /// Schedule entries where the general bound's radius had to be clipped.
    pub clipped: usize,
    #[serde(skip)]
    pub table: CsvTable,
}

#[derive(Debug, Clone, Serialize)]
pub struct VarDecayReport {
    pub kernels: Vec<KernelDecay>,
}

struct Row {
    exact: f64,
    iso: f64,
    general: f64,
    williams: f64,
    wang: f64,
}

pub fn run_var_decay(cfg: &VarDecayConfig) -> Result<VarDecayReport> {
    cfg.validate()?;
    let dom = cfg.support()?;
    let x = [cfg.test_point];
    let mut out = Vec::new();
    for kernel in &cfg.kernels {
        let family = kernel.family();
        let stationary = family.is_stationary();
        let isotropic = family.is_isotropic();
        let x_star = if stationary { cfg.test_point } else { cfg.reference_point };
        let schedule = radius_schedule_for(family, cfg.sampler.regime(), cfg.schedule_coefficient)?;
        let lipschitz = kernel.lipschitz_const(&dom).upper();
        let cap = radius_cap(kernel, &x, lipschitz)?;
        let sup_k = kernel.max_value(&dom);

        let mut table = CsvTable::new(COLUMNS)
            .comment(format!(
                "posterior variance at x={} for the {} kernel, noise variance {}, {} replications",
                cfg.test_point,
                family.name(),
                cfg.noise_var,
                cfg.replications
            ))
            .comment(format!(
                "rho(N) = {} N^-{}, general bound reference point {x_star}, L_k = {lipschitz}",
                schedule.coefficient, schedule.exponent
            ))
            .comment(seed_scheme(cfg.seed));
        let mut clipped = 0;
        for &n in &cfg.n_schedule {
            let (rho_gen, was_clipped) = schedule.radius(n, cap);
            clipped += usize::from(was_clipped);
            let rho_iso = schedule.radius(n, f64::INFINITY).0;
            let rows: Vec<Row> = (0..cfg.replications)
                .into_par_iter()
                .map(|r| -> Result<Row> {
                    let mut rng = stream_rng(cfg.seed, r as u64);
                    let xs = cfg.sampler.sample(&mut rng, n);
                    let exact = posterior_variance_1d(kernel, &xs, cfg.noise_var, cfg.test_point)?;
                    let data = Dataset::new(
                        xs.iter().map(|v| vec![*v]).collect(),
                        vec![0.0; n],
                        cfg.noise_var,
                    )?;
                    let general = bound_general(kernel, &data, &x, &[x_star], rho_gen, lipschitz)?;
                    let (iso, williams) = if isotropic {
                        (
                            bound_isotropic(kernel, &data, &x, rho_iso)?,
                            bound_williams_data(kernel, &data, &x)?,
                        )
                    } else {
                        (f64::NAN, f64::NAN)
                    };
                    let wang = bound_wang_mspe(kernel, &data, &x, sup_k)?;
                    Ok(Row {
                        exact,
                        iso,
                        general,
                        williams,
                        wang,
                    })
                })
                .collect::<Result<_>>()?;
            let mean = |f: fn(&Row) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
            table.push(vec![
                n as f64,
                mean(|r| r.exact),
                mean(|r| r.iso),
                mean(|r| r.general),
                mean(|r| r.williams),
                mean(|r| r.wang),
            ]);
        }

        let series = |col: &str| -> Vec<(f64, f64)> {
            let ns = table.column("idx").expect("column exists");
            ns.into_iter().zip(table.column(col).expect("column exists")).collect()
        };
        let violations = ["sig_bm", "sig_bm_gen", "sig2", "sig_wang"]
            .iter()
            .map(|c| {
                let count = series(c)
                    .iter()
                    .zip(series("sig_m"))
                    .filter(|((_, b), (_, m))| !b.is_nan() && b < m)
                    .count();
                (c.to_string(), count)
            })
            .collect();
        out.push(KernelDecay {
            kernel: family.name().to_string(),
            rho_exponent: schedule.exponent,
            reference_point: x_star,
            lipschitz,
            slope_exact: decay_slope(&series("sig_m")).unwrap_or(f64::NAN),
            slope_bm: isotropic.then(|| decay_slope(&series("sig_bm")).unwrap_or(f64::NAN)),
            slope_bm_gen: decay_slope(&series("sig_bm_gen")).unwrap_or(f64::NAN),
            violations,
            clipped,
            table,
        });
    }
    Ok(VarDecayReport { kernels: out })
}
