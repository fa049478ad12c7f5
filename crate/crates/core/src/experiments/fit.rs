//! Hyperparameter fit on user-supplied data, optionally under prior
//! knowledge constraints, with an optional uniform error certificate.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::DomainBox;
use crate::error::{Error, Result};
use crate::gp::{Dataset, Posterior};
use crate::kernels::KernelSpec;
use crate::prior_shaping::{
    constrained_ml_fit, probabilistic_lipschitz, FitOptions, NoiseModel, PriorKnowledge,
};
use crate::uniform_error::{make_cert, ErrorBoundCert};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub kernel: KernelSpec,
    /// Inline inputs, one row per point. Ignored when `data_csv` is set.
    #[serde(default)]
    pub inputs: Vec<Vec<f64>>,
    #[serde(default)]
    pub targets: Vec<f64>,
    /// CSV file with a header row; the last column is the target.
    #[serde(default)]
    pub data_csv: Option<PathBuf>,
    pub noise_var: f64,
    #[serde(default = "fitted")]
    pub noise: NoiseModel,
    #[serde(default)]
    pub prior: Option<PriorKnowledge>,
    pub domain: DomainBox,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default)]
    pub seed: u64,
    /// When set together with `tau`, a uniform error certificate is attached.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default = "default_delta_l")]
    pub delta_lipschitz: f64,
}

fn fitted() -> NoiseModel {
    NoiseModel::Fitted
}

fn default_starts() -> usize {
    16
}

fn default_delta_l() -> f64 {
    0.01
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub kernel: KernelSpec,
    pub noise_var: f64,
    pub log_likelihood: f64,
    pub n_train: usize,
    pub constrained: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_cert: Option<ErrorBoundCert>,
}

fn read_csv(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("{} row {}: {e}", path.display(), line + 1)))?;
        let Some((y, x)) = vals.split_last() else {
            return Err(Error::Config(format!("{} row {} is empty", path.display(), line + 1)));
        };
        xs.push(x.to_vec());
        ys.push(*y);
    }
    Ok((xs, ys))
}

impl FitConfig {
    /// Training data, with a relative `data_csv` resolved against `base`.
    pub fn dataset(&self, base: Option<&Path>) -> Result<Dataset> {
        let (xs, ys) = match &self.data_csv {
            Some(p) => {
                let path = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                read_csv(&path)?
            }
            None => (self.inputs.clone(), self.targets.clone()),
        };
        if xs.is_empty() {
            return Err(Error::Config("no training data".into()));
        }
        if xs.len() != ys.len() {
            return Err(Error::Config(format!(
                "{} inputs but {} targets",
                xs.len(),
                ys.len()
            )));
        }
        if xs.iter().any(|x| x.len() != self.domain.dim()) {
            return Err(Error::Config(format!(
                "every input must have dimension {}",
                self.domain.dim()
            )));
        }
        Dataset::new(xs, ys, self.noise_var).map_err(|e| Error::Config(e.to_string()))
    }
}

pub fn run_fit(cfg: &FitConfig, base: Option<&Path>) -> Result<FitReport> {
    cfg.kernel
        .check_dim(cfg.domain.dim())
        .map_err(|e| Error::Config(e.to_string()))?;
    if cfg.starts == 0 {
        return Err(Error::Config("starts must be >= 1".into()));
    }
    let data = cfg.dataset(base)?;
    let fit = constrained_ml_fit(
        &data,
        &cfg.kernel,
        cfg.prior.as_ref(),
        &cfg.domain,
        &FitOptions {
            starts: cfg.starts,
            noise: cfg.noise,
            seed: cfg.seed,
            ..Default::default()
        },
    )?;
    let (l_f, error_cert) = match (cfg.delta, cfg.tau) {
        (Some(delta), Some(tau)) => {
            let l_f = probabilistic_lipschitz(&fit.kernel, &cfg.domain, cfg.delta_lipschitz)?;
            let post = Posterior::condition(fit.kernel.clone(), data.with_noise_var(fit.noise_var)?)?;
            (Some(l_f), Some(make_cert(&post, &cfg.domain, tau, delta, l_f)?))
        }
        (None, None) => (None, None),
        _ => return Err(Error::Config("delta and tau must be given together".into())),
    };
    Ok(FitReport {
        kernel: fit.kernel,
        noise_var: fit.noise_var,
        log_likelihood: fit.log_likelihood,
        n_train: data.len(),
        constrained: cfg.prior.is_some(),
        l_f,
        error_cert,
    })
}
