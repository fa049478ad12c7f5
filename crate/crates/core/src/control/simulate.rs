use super::controller::{control_inputs, full_reference, DriftModel, ReferenceTrajectory};
use super::lyapunov::LyapunovCert;
use super::ChainLayout;
use crate::domain::DomainBox;
use crate::error::{Error, Result};

type DriftFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Chains of integrators `d/dt x_{d,c} = f_c(x) + u_c`.
pub struct SystemModel {
    pub layout: ChainLayout,
    drift: Box<DriftFn>,
}

impl SystemModel {
    /// `drift` returns one value per channel.
    pub fn new<F>(layout: ChainLayout, drift: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            layout,
            drift: Box::new(drift),
        }
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        (self.drift)(x)
    }

    /// State derivative under the inputs `u`.
    pub fn rhs(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        let f = self.drift(x);
        let mut dx = vec![0.0; l.state_dim()];
        for c in 0..l.channels {
            for k in 0..l.order - 1 {
                dx[l.index(c, k)] = x[l.index(c, k + 1)];
            }
            dx[l.index(c, l.order - 1)] = f[c] + u[c];
        }
        dx
    }
}

/// One classic fourth-order Runge-Kutta step.
pub fn rk4_step<F>(mut f: F, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let shift = |k: &[f64], s: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * h, &shift(&k1, 0.5 * h))?;
    let k3 = f(t + 0.5 * h, &shift(&k2, 0.5 * h))?;
    let k4 = f(t + h, &shift(&k3, h))?;
    Ok((0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub horizon: f64,
    pub step: f64,
    /// Keep every n-th step in the trace (the final state is always kept).
    pub record_every: usize,
    /// Abort once the state leaves this box.
    pub safety_box: Option<DomainBox>,
    /// Ultimate bound `v` reported alongside the trace as `sqrt(v)`.
    pub ultimate_bound: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            horizon: 10.0,
            step: 1e-3,
            record_every: 1,
            safety_box: None,
            ultimate_bound: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub e: Vec<f64>,
    /// `sqrt(sum_c e_c^T P e_c)`.
    pub lyap: f64,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub layout: ChainLayout,
    pub points: Vec<TrajectoryPoint>,
    /// The state left the safety box and integration stopped early.
    pub aborted: bool,
    pub ultimate_bound: f64,
}

impl Trajectory {
    pub fn header(&self) -> Vec<String> {
        let n = self.layout.state_dim();
        let mut h = vec!["t".to_string()];
        h.extend((1..=n).map(|i| format!("x_{i}")));
        h.extend((1..=n).map(|i| format!("e_{i}")));
        h.push("lyap".into());
        h.push("ub".into());
        if self.layout.channels == 1 {
            h.push("u".into());
        } else {
            h.extend((1..=self.layout.channels).map(|i| format!("u_{i}")));
        }
        h
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        let ub = self.ultimate_bound.sqrt();
        self.points
            .iter()
            .map(|p| {
                let mut r = vec![p.t];
                r.extend(&p.x);
                r.extend(&p.e);
                r.push(p.lyap);
                r.push(ub);
                r.extend(&p.u);
                r
            })
            .collect()
    }

    pub fn last(&self) -> Option<&TrajectoryPoint> {
        self.points.last()
    }
}

/// Closed-loop simulation with fixed-step RK4; the controller is evaluated
/// at every stage.
pub fn simulate(
    system: &SystemModel,
    models: &[&dyn DriftModel],
    cert: &LyapunovCert,
    refs: &[&dyn ReferenceTrajectory],
    x0: &[f64],
    opts: &SimOptions,
) -> Result<Trajectory> {
    let layout = system.layout;
    layout.check_state(x0)?;
    if !(opts.step > 0.0 && opts.horizon >= 0.0) {
        return Err(Error::invalid("step must be positive and horizon nonnegative"));
    }
    if cert.order() != layout.order {
        return Err(Error::invalid("certificate order does not match the system"));
    }
    let gains = &cert.gains;
    let inputs = |t: f64, x: &[f64]| control_inputs(&layout, models, gains, refs, t, x);
    let record = |t: f64, x: &[f64]| -> Result<TrajectoryPoint> {
        let (x_ref, _) = full_reference(&layout, refs, t)?;
        let e: Vec<f64> = x.iter().zip(&x_ref).map(|(a, b)| a - b).collect();
        let v: f64 = (0..layout.channels)
            .map(|c| cert.value(&layout.channel_slice(&e, c)))
            .sum();
        Ok(TrajectoryPoint {
            t,
            x: x.to_vec(),
            e,
            lyap: v.max(0.0).sqrt(),
            u: inputs(t, x)?,
        })
    };

    let steps = (opts.horizon / opts.step).round() as usize;
    let every = opts.record_every.max(1);
    let mut x = x0.to_vec();
    let mut points = vec![record(0.0, &x)?];
    let mut aborted = false;
    for k in 0..steps {
        let t = k as f64 * opts.step;
        x = rk4_step(
            |s, y| Ok(system.rhs(y, &inputs(s, y)?)),
            t,
            &x,
            opts.step,
        )?;
        let t_next = (k + 1) as f64 * opts.step;
        let outside = x.iter().any(|v| !v.is_finite())
            || opts.safety_box.as_ref().is_some_and(|b| !b.contains(&x));
        if outside {
            aborted = true;
            if x.iter().all(|v| v.is_finite()) {
                points.push(record(t_next, &x)?);
            }
            break;
        }
        if (k + 1) % every == 0 || k + 1 == steps {
            points.push(record(t_next, &x)?);
        }
    }
    Ok(Trajectory {
        layout,
        points,
        aborted,
        ultimate_bound: opts.ultimate_bound,
    })
}
