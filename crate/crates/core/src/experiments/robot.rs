//! Certified joint-space tracking of a planar two-link arm whose
//! uncompensated dynamics are learned per joint.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::output::CsvTable;
use super::sampler::{seed_scheme, stream_rng};
use super::tracking::{containment, late_error, min_posterior_std};
use crate::control::{
    full_reference, simulate, ultimate_bound, ChainLayout, ControllerGains, DriftModel, Envelope,
    ExactDrift, LyapunovCert, PosteriorEnvelope, ReferenceTrajectory, SimOptions,
    SinusoidReference, SystemModel, TwoLinkArm, UltimateBound, UltimateBoundOptions,
};
use crate::domain::{linspace, DomainBox};
use crate::error::{Error, Result};
use crate::gp::{Dataset, Posterior};
use crate::kernels::KernelSpec;
use crate::prior_shaping::{constrained_ml_fit, probabilistic_lipschitz, FitOptions, NoiseModel};
use crate::uniform_error::{auto_tau, make_cert, multi_output_cert, ErrorBoundCert};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotConfig {
    pub arm: TwoLinkArm,
    pub kernel: KernelSpec,
    /// Training states on a grid over this box, ordered `(q1, q2, dq1, dq2)`.
    pub train_domain: DomainBox,
    pub train_points_per_axis: usize,
    pub noise_var: f64,
    pub fit_starts: usize,
    pub state_domain: DomainBox,
    pub references: [SinusoidReference; 2],
    pub k_c: f64,
    pub lambda: Vec<f64>,
    /// Total confidence budget, split evenly over the two joints.
    pub delta: f64,
    /// Largest grid constant; see `gamma_fraction`.
    pub tau: f64,
    /// When set, `tau` is lowered per joint until `gamma` is at most this
    /// fraction of `sqrt(beta)` times the smallest posterior standard
    /// deviation on the state domain.
    pub gamma_fraction: Option<f64>,
    pub delta_lipschitz: f64,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub step: f64,
    pub record_every: usize,
    pub bound_grid: UltimateBoundOptions,
    /// Reference states sampled over the horizon for the ultimate bound.
    pub phases: usize,
    /// Simulation time after which the arm should stay in the certified set.
    pub transient: f64,
    pub seed: u64,
}

impl Default for RobotConfig {
    fn default() -> Self {
        let pi = std::f64::consts::PI;
        Self {
            arm: TwoLinkArm::default(),
            kernel: KernelSpec::se_ard(1.0, vec![1.0; 4]).expect("valid kernel"),
            train_domain: DomainBox::cube(-1.5, 1.5, 4).expect("valid box"),
            train_points_per_axis: 3,
            noise_var: 1e-3,
            fit_starts: 4,
            state_domain: DomainBox::cube(-pi, pi, 4).expect("valid box"),
            references: [
                SinusoidReference::new(0.8, 1.0),
                SinusoidReference {
                    amplitude: 0.6,
                    frequency: 1.3,
                    phase: 0.5,
                    offset: 0.0,
                },
            ],
            k_c: 15.0,
            lambda: vec![3.0],
            delta: 0.01,
            tau: 1e-6,
            gamma_fraction: Some(0.1),
            delta_lipschitz: 0.01,
            x0: vec![0.4, -0.2, 0.0, 0.0],
            horizon: 10.0,
            step: 1e-3,
            record_every: 10,
            bound_grid: UltimateBoundOptions {
                directions_per_axis: 9,
                radii: 100,
                ..Default::default()
            },
            phases: 8,
            transient: 2.0,
            seed: 0,
        }
    }
}

impl RobotConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.train_domain.dim() != 4 || self.state_domain.dim() != 4 {
            return bad("robot domains must be four-dimensional");
        }
        if self.x0.len() != 4 || !self.state_domain.contains(&self.x0) {
            return bad("x0 must be a state inside the state domain");
        }
        if self.train_points_per_axis == 0 || self.phases == 0 {
            return bad("train_points_per_axis and phases must be positive");
        }
        if !(self.noise_var > 0.0 && self.step > 0.0 && self.horizon > 0.0) {
            return bad("noise variance, step and horizon must be positive");
        }
        if self.gamma_fraction.is_some_and(|f| !(f > 0.0)) {
            return bad("gamma_fraction must be positive");
        }
        Ok(())
    }

    fn refs(&self) -> [&dyn ReferenceTrajectory; 2] {
        [&self.references[0], &self.references[1]]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct JointModel {
    pub kernel: KernelSpec,
    pub log_likelihood: f64,
    pub l_f: f64,
    pub error_cert: ErrorBoundCert,
}

#[derive(Debug, Clone, Serialize)]
pub struct RobotReport {
    pub joints: Vec<JointModel>,
    pub ultimate: UltimateBound,
    /// Joint-angle radius `sqrt(v (P^{-1})_11)` of the ultimate set.
    pub joint_radius: f64,
    pub entered_at: Option<f64>,
    pub stays_inside: bool,
    /// After the transient both joint errors stay within `joint_radius`.
    pub tip_inside_after_transient: bool,
    pub late_error_norm: f64,
    pub oracle_error_after_transient: f64,
    pub aborted: bool,
    #[serde(skip)]
    pub trajectory: CsvTable,
    #[serde(skip)]
    pub task: CsvTable,
    #[serde(skip)]
    pub region: CsvTable,
}

pub fn run_robot(cfg: &RobotConfig) -> Result<RobotReport> {
    cfg.validate()?;
    let layout = ChainLayout::new(2, 2)?;
    let gains = ControllerGains::new(cfg.k_c, cfg.lambda.clone())?;
    let cert = LyapunovCert::new(&gains)?;
    let dom = &cfg.state_domain;
    let arm = cfg.arm;

    let inputs = cfg.train_domain.grid(cfg.train_points_per_axis);
    let mut rng = stream_rng(cfg.seed, 0);
    let noise = Normal::new(0.0, cfg.noise_var.sqrt())
        .map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;
    let mut targets = [Vec::new(), Vec::new()];
    for x in &inputs {
        let f = arm.drift(x)?;
        for c in 0..2 {
            targets[c].push(f[c] + noise.sample(&mut rng));
        }
    }

    let split_l = cfg.delta_lipschitz / 2.0;
    let mut posts = Vec::new();
    let mut fits = Vec::new();
    let mut certs = Vec::new();
    for (c, ys) in targets.into_iter().enumerate() {
        let data = Dataset::new(inputs.clone(), ys, cfg.noise_var)?;
        let fit = constrained_ml_fit(
            &data,
            &cfg.kernel,
            None,
            dom,
            &FitOptions {
                starts: cfg.fit_starts,
                noise: NoiseModel::Fixed,
                seed: cfg.seed.wrapping_add(c as u64),
                ..Default::default()
            },
        )?;
        let l_f = probabilistic_lipschitz(&fit.kernel, dom, split_l)?;
        let post = Posterior::condition(fit.kernel.clone(), data)?;
        let tau = match cfg.gamma_fraction {
            Some(fraction) => {
                let min_std = min_posterior_std(&post, dom, 7)?;
                auto_tau(&post, dom, cfg.delta / 2.0, l_f, min_std, fraction, cfg.tau)?
            }
            None => cfg.tau,
        };
        certs.push(make_cert(&post, dom, tau, cfg.delta, l_f)?);
        fits.push((fit, l_f));
        posts.push(post);
    }
    let certs = multi_output_cert(&certs, cfg.delta)?;

    let envs: Vec<PosteriorEnvelope> = certs
        .iter()
        .zip(&posts)
        .map(|(cert, post)| PosteriorEnvelope { cert, post })
        .collect();
    let env_refs: Vec<&dyn Envelope> = envs.iter().map(|e| e as &dyn Envelope).collect();
    let ref_states: Vec<Vec<f64>> = linspace(0.0, cfg.horizon, cfg.phases)
        .into_iter()
        .map(|t| Ok(full_reference(&layout, &cfg.refs(), t)?.0))
        .collect::<Result<_>>()?;
    let ultimate = ultimate_bound(&layout, &cert, &env_refs, dom, &ref_states, &cfg.bound_grid)?;
    let joint_radius = (ultimate.value * cert.inverse_diagonal()?[0]).sqrt();

    let system = SystemModel::new(layout, move |x| arm.drift(x).map(Vec::from).unwrap_or(vec![f64::NAN; 2]));
    let models: Vec<&dyn DriftModel> = posts.iter().map(|p| p as &dyn DriftModel).collect();
    let opts = SimOptions {
        horizon: cfg.horizon,
        step: cfg.step,
        record_every: cfg.record_every,
        safety_box: Some(dom.clone()),
        ultimate_bound: ultimate.value,
    };
    let tr = simulate(&system, &models, &cert, &cfg.refs(), &cfg.x0, &opts)?;
    let (entered_at, stays_inside) = containment(&tr);

    let oracle_models: [ExactDrift<Box<dyn Fn(&[f64]) -> f64 + Sync>>; 2] = [
        ExactDrift(Box::new(move |x: &[f64]| arm.drift(x).map_or(f64::NAN, |f| f[0]))),
        ExactDrift(Box::new(move |x: &[f64]| arm.drift(x).map_or(f64::NAN, |f| f[1]))),
    ];
    let oracle_refs: Vec<&dyn DriftModel> = oracle_models.iter().map(|m| m as &dyn DriftModel).collect();
    let oracle = simulate(&system, &oracle_refs, &cert, &cfg.refs(), &cfg.x0, &opts)?;
    let oracle_error_after_transient = late_error(&oracle, cfg.transient.max(5.0).min(cfg.horizon));

    let mut trajectory = CsvTable::new(tr.header())
        .comment("joint-space closed loop, state (q1, q2, dq1, dq2)")
        .comment(format!("ultimate bound v={}, joint radius={joint_radius}", ultimate.value))
        .comment(seed_scheme(cfg.seed));
    for row in tr.rows() {
        trajectory.push(row);
    }

    let mut task = CsvTable::new(["t", "tip_x", "tip_y", "ref_tip_x", "ref_tip_y", "within"])
        .comment("end effector and reference in task space; within = joint errors inside the certified radius");
    let mut tip_inside_after_transient = true;
    for p in &tr.points {
        let (_, tip) = arm.forward_kinematics([p.x[0], p.x[1]]);
        let q_ref = [p.x[0] - p.e[0], p.x[1] - p.e[1]];
        let (_, ref_tip) = arm.forward_kinematics(q_ref);
        let within = p.e[0].abs() <= joint_radius && p.e[1].abs() <= joint_radius;
        if p.t >= cfg.transient && !within {
            tip_inside_after_transient = false;
        }
        task.push(vec![p.t, tip[0], tip[1], ref_tip[0], ref_tip[1], f64::from(u8::from(within))]);
    }

    let mut region = CsvTable::new(["t", "q_1", "q_2", "x", "y"])
        .comment("task-space image of the boundary of the joint box q_ref(t) +- joint radius");
    let snapshots = linspace(0.0, cfg.horizon, 11);
    for t in snapshots {
        let (x_ref, _) = full_reference(&layout, &cfg.refs(), t)?;
        for (s1, s2) in box_boundary(20) {
            let q = [x_ref[0] + s1 * joint_radius, x_ref[1] + s2 * joint_radius];
            let (_, tip) = arm.forward_kinematics(q);
            region.push(vec![t, q[0], q[1], tip[0], tip[1]]);
        }
    }

    Ok(RobotReport {
        joints: fits
            .into_iter()
            .zip(certs)
            .map(|((fit, l_f), error_cert)| JointModel {
                kernel: fit.kernel,
                log_likelihood: fit.log_likelihood,
                l_f,
                error_cert,
            })
            .collect(),
        ultimate,
        joint_radius,
        entered_at,
        stays_inside,
        tip_inside_after_transient,
        late_error_norm: late_error(&tr, cfg.transient),
        oracle_error_after_transient,
        aborted: tr.aborted,
        trajectory,
        task,
        region,
    })
}

/// Points on the boundary of `[-1, 1]^2`, `per_side` per edge, counter-clockwise.
fn box_boundary(per_side: usize) -> Vec<(f64, f64)> {
    let s = linspace(-1.0, 1.0, per_side + 1);
    let mut out = Vec::with_capacity(4 * per_side + 1);
    out.extend(s[..per_side].iter().map(|v| (*v, -1.0)));
    out.extend(s[..per_side].iter().map(|v| (1.0, *v)));
    out.extend(s[1..].iter().rev().map(|v| (*v, 1.0)));
    out.extend(s[1..].iter().rev().map(|v| (-1.0, *v)));
    out.push((-1.0, -1.0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_closes() {
        let b = box_boundary(4);
        assert_eq!(b.len(), 17);
        assert_eq!(b.first(), b.last());
        assert!(b.iter().all(|(x, y)| x.abs() == 1.0 || y.abs() == 1.0));
    }

    #[test]
    fn small_run() {
        let cfg = RobotConfig {
            fit_starts: 1,
            horizon: 6.0,
            phases: 2,
            bound_grid: UltimateBoundOptions {
                directions_per_axis: 3,
                radii: 20,
                refine_steps: 10,
                ..Default::default()
            },
            ..Default::default()
        };
        let rep = run_robot(&cfg).unwrap();
        assert!(!rep.aborted);
        assert!(rep.oracle_error_after_transient < 1e-3);
        assert!(rep.joint_radius > 0.0);
        assert_eq!(rep.region.rows.len(), 11 * 81);
    }
}
