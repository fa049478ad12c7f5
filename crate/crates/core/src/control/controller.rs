use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::lyapunov::ControllerGains;
use super::ChainLayout;
use crate::error::{Error, Result};
use crate::gp::Posterior;

/// Model `nu(x)` of one channel's drift, cancelled by the controller.
pub trait DriftModel: Sync {
    fn mean(&self, x: &[f64]) -> Result<f64>;
}

impl DriftModel for Posterior {
    fn mean(&self, x: &[f64]) -> Result<f64> {
        self.predict_mean(x)
    }
}

/// Drift model that is never wrong: the true drift itself.
pub struct ExactDrift<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync> DriftModel for ExactDrift<F> {
    fn mean(&self, x: &[f64]) -> Result<f64> {
        Ok((self.0)(x))
    }
}

/// No model at all.
pub struct ZeroDrift;

impl DriftModel for ZeroDrift {
    fn mean(&self, _x: &[f64]) -> Result<f64> {
        Ok(0.0)
    }
}

/// Desired trajectory of one channel.
pub trait ReferenceTrajectory: Sync {
    /// Derivatives `0..order` of the reference at time `t`, and derivative
    /// number `order` used as feedforward.
    fn at(&self, t: f64, order: usize) -> (Vec<f64>, f64);
}

/// `offset + amplitude * sin(frequency * t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidReference {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub offset: f64,
}

impl SinusoidReference {
    pub fn new(amplitude: f64, frequency: f64) -> Self {
        Self {
            amplitude,
            frequency,
            phase: 0.0,
            offset: 0.0,
        }
    }

    fn derivative(&self, t: f64, k: usize) -> f64 {
        let arg = self.frequency * t + self.phase + k as f64 * FRAC_PI_2;
        let v = self.amplitude * self.frequency.powi(k as i32) * arg.sin();
        if k == 0 {
            v + self.offset
        } else {
            v
        }
    }

    /// Period of the signal, infinite for a constant.
    pub fn period(&self) -> f64 {
        if self.frequency == 0.0 || self.amplitude == 0.0 {
            f64::INFINITY
        } else {
            std::f64::consts::TAU / self.frequency.abs()
        }
    }
}

impl ReferenceTrajectory for SinusoidReference {
    fn at(&self, t: f64, order: usize) -> (Vec<f64>, f64) {
        let x = (0..order).map(|k| self.derivative(t, k)).collect();
        (x, self.derivative(t, order))
    }
}

/// Stacked reference state over all channels plus per-channel feedforward.
pub fn full_reference(
    layout: &ChainLayout,
    refs: &[&dyn ReferenceTrajectory],
    t: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if refs.len() != layout.channels {
        return Err(Error::invalid(format!(
            "{} references for {} channels",
            refs.len(),
            layout.channels
        )));
    }
    let mut x_ref = vec![0.0; layout.state_dim()];
    let mut ff = Vec::with_capacity(layout.channels);
    for (c, r) in refs.iter().enumerate() {
        let (xs, f) = r.at(t, layout.order);
        for (k, v) in xs.into_iter().enumerate() {
            x_ref[layout.index(c, k)] = v;
        }
        ff.push(f);
    }
    Ok((x_ref, ff))
}

/// `u = -nu(x) + x_ref^{(d)}(t) - k_c [lambda 1] (x - x_ref(t))` for a
/// single chain whose state is `x`.
pub fn control_input(
    model: &dyn DriftModel,
    gains: &ControllerGains,
    reference: &dyn ReferenceTrajectory,
    t: f64,
    x: &[f64],
) -> Result<f64> {
    let layout = ChainLayout::single(gains.order())?;
    Ok(control_inputs(&layout, &[model], gains, &[reference], t, x)?[0])
}

/// One control input per channel, each channel tracked with the same gains.
pub fn control_inputs(
    layout: &ChainLayout,
    models: &[&dyn DriftModel],
    gains: &ControllerGains,
    refs: &[&dyn ReferenceTrajectory],
    t: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    layout.check_state(x)?;
    if gains.order() != layout.order || models.len() != layout.channels {
        return Err(Error::invalid("gains or models do not match the chain layout"));
    }
    let (x_ref, ff) = full_reference(layout, refs, t)?;
    (0..layout.channels)
        .map(|c| {
            let e: Vec<f64> = layout
                .channel_indices(c)
                .into_iter()
                .map(|i| x[i] - x_ref[i])
                .collect();
            Ok(-models[c].mean(x)? + ff[c] - gains.feedback(&e))
        })
        .collect()
}
