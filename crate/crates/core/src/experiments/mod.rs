//! Reproducible studies driven by a JSON configuration, writing CSV tables,
//! a JSON summary and gnuplot scripts into an output directory.

pub mod error_bound;
pub mod fit;
pub mod output;
pub mod plots;
pub mod robot;
pub mod sampler;
pub mod tracking;
pub mod truth;
pub mod var_decay;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use error_bound::{run_error_bound, ErrorBoundConfig, ErrorBoundReport, PriorScenario};
pub use fit::{run_fit, FitConfig, FitReport};
pub use output::CsvTable;
pub use robot::{run_robot, RobotConfig, RobotReport};
pub use sampler::Sampler;
pub use tracking::{run_tracking, TrackingConfig, TrackingReport};
pub use truth::TruthFunction;
pub use var_decay::{run_var_decay, VarDecayConfig, VarDecayReport};

/// One experiment, selected by the `experiment` field of the JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment")]
pub enum ExperimentConfig {
    #[serde(rename = "var-decay")]
    VarDecay(VarDecayConfig),
    #[serde(rename = "error-bound-priors", alias = "error-bound")]
    ErrorBound(ErrorBoundConfig),
    #[serde(rename = "tracking-2d", alias = "tracking")]
    Tracking(TrackingConfig),
    #[serde(rename = "robot-2dof", alias = "robot")]
    Robot(RobotConfig),
    #[serde(rename = "fit")]
    Fit(FitConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    VarDecay,
    ErrorBound,
    Tracking,
    Robot,
    Fit,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::VarDecay => "var-decay",
            ExperimentKind::ErrorBound => "error-bound",
            ExperimentKind::Tracking => "tracking",
            ExperimentKind::Robot => "robot",
            ExperimentKind::Fit => "fit",
        }
    }
}

impl ExperimentConfig {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            ExperimentConfig::VarDecay(_) => ExperimentKind::VarDecay,
            ExperimentConfig::ErrorBound(_) => ExperimentKind::ErrorBound,
            ExperimentConfig::Tracking(_) => ExperimentKind::Tracking,
            ExperimentConfig::Robot(_) => ExperimentKind::Robot,
            ExperimentConfig::Fit(_) => ExperimentKind::Fit,
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        match self {
            ExperimentConfig::VarDecay(c) => {
                c.seed = o.seed.unwrap_or(c.seed);
                c.replications = o.reps.unwrap_or(c.replications);
            }
            ExperimentConfig::ErrorBound(c) => {
                c.seed = o.seed.unwrap_or(c.seed);
                if o.full_scale {
                    c.replications = 1000;
                }
                c.replications = o.reps.unwrap_or(c.replications);
            }
            ExperimentConfig::Tracking(c) => {
                c.seed = o.seed.unwrap_or(c.seed);
                if o.full_scale {
                    c.sweep_max_m = 50;
                }
                c.sweep_max_m = o.reps.unwrap_or(c.sweep_max_m);
            }
            ExperimentConfig::Robot(c) => c.seed = o.seed.unwrap_or(c.seed),
            ExperimentConfig::Fit(c) => c.seed = o.seed.unwrap_or(c.seed),
        }
    }
}

/// Command-line adjustments applied on top of a loaded configuration.
///
/// `reps` sets the replication count, or the largest sweep index `m` for the
/// tracking study. `full_scale` raises the error-bound replications to 1000
/// and the tracking sweep to `m = 50`; an explicit `reps` still wins.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub full_scale: bool,
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Run an experiment and write its outputs into `out_dir`, which is created
/// if needed. `base` resolves relative data paths. Returns the files written.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path, base: Option<&Path>) -> Result<Vec<PathBuf>> {
    output::ensure_dir(out_dir)?;
    let mut csvs = Vec::new();
    let mut write = |name: String, table: &CsvTable| -> Result<()> {
        let path = out_dir.join(name);
        table.write(&path)?;
        csvs.push(path);
        Ok(())
    };
    let summary = out_dir.join("summary.json");
    match cfg {
        ExperimentConfig::VarDecay(c) => {
            let rep = run_var_decay(c)?;
            for k in &rep.kernels {
                write(format!("var_decay_{}.csv", k.kernel), &k.table)?;
            }
            output::write_json(&summary, &rep)?;
        }
        ExperimentConfig::ErrorBound(c) => {
            let rep = run_error_bound(c)?;
            for s in &rep.scenarios {
                write(format!("error_bound_{}.csv", s.scenario), &s.table)?;
            }
            output::write_json(&summary, &rep)?;
        }
        ExperimentConfig::Tracking(c) => {
            let rep = run_tracking(c)?;
            write("tracking_trajectory.csv".into(), &trajectory_table(&rep.main.trajectory, c.seed))?;
            write("tracking_regions.csv".into(), &rep.regions)?;
            write("tracking_sweep.csv".into(), &rep.sweep)?;
            output::write_json(&summary, &rep)?;
        }
        ExperimentConfig::Robot(c) => {
            let rep = run_robot(c)?;
            write("robot_trajectory.csv".into(), &rep.trajectory)?;
            write("robot_task.csv".into(), &rep.task)?;
            write("robot_region.csv".into(), &rep.region)?;
            output::write_json(&summary, &rep)?;
        }
        ExperimentConfig::Fit(c) => {
            let rep = run_fit(c, base)?;
            let path = out_dir.join("fit.json");
            output::write_json(&path, &rep)?;
            return Ok(vec![path]);
        }
    }
    let mut files = plots::emit_plots(&csvs)?;
    files.splice(0..0, csvs);
    files.push(summary);
    Ok(files)
}

fn trajectory_table(tr: &crate::control::Trajectory, seed: u64) -> CsvTable {
    let mut t = CsvTable::new(tr.header())
        .comment("closed-loop trajectory; lyap = sqrt(e^T P e), ub = sqrt of the ultimate bound")
        .comment(sampler::seed_scheme(seed));
    for row in tr.rows() {
        t.push(row);
    }
    t
}
