//! Feedback-linearizing tracking control of chains of integrators with a
//! learned drift, certified through a quadratic Lyapunov function.
//!
//! A system has `channels` independent outputs, each a chain of `order`
//! integrators whose last state is driven by `f_c(x) + u_c`. States are laid
//! out derivative-major: entry `k * channels + c` holds the `k`-th derivative
//! of channel `c`, so a two-joint arm is stored as `(q1, q2, dq1, dq2)`.

pub mod controller;
pub mod lyapunov;
pub mod manipulator;
pub mod regions;
pub mod simulate;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use controller::{
    control_input, control_inputs, full_reference, DriftModel, ExactDrift, ReferenceTrajectory, SinusoidReference,
    ZeroDrift,
};
pub use lyapunov::{companion_matrix, solve_lyapunov, ControllerGains, LyapunovCert};
pub use manipulator::TwoLinkArm;
pub use regions::{
    classify_points, decrease_region_membership, in_decrease_region, ultimate_bound, Envelope,
    PointClass, PosteriorEnvelope, UltimateBound, UltimateBoundOptions,
};
pub use simulate::{rk4_step, simulate, SimOptions, SystemModel, Trajectory, TrajectoryPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainLayout {
    pub order: usize,
    pub channels: usize,
}

impl ChainLayout {
    pub fn new(order: usize, channels: usize) -> Result<Self> {
        if order == 0 || channels == 0 {
            return Err(Error::invalid("chain order and channel count must be positive"));
        }
        Ok(Self { order, channels })
    }

    pub fn single(order: usize) -> Result<Self> {
        Self::new(order, 1)
    }

    pub fn state_dim(&self) -> usize {
        self.order * self.channels
    }

    pub fn index(&self, channel: usize, derivative: usize) -> usize {
        derivative * self.channels + channel
    }

    /// State indices of one channel, lowest derivative first.
    pub fn channel_indices(&self, channel: usize) -> Vec<usize> {
        (0..self.order).map(|k| self.index(channel, k)).collect()
    }

    pub fn channel_slice(&self, x: &[f64], channel: usize) -> Vec<f64> {
        (0..self.order).map(|k| x[self.index(channel, k)]).collect()
    }

    /// Block-diagonal embedding of a per-channel matrix into the full state.
    pub fn block_diag(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.state_dim();
        let mut full = DMatrix::zeros(n, n);
        for c in 0..self.channels {
            for i in 0..self.order {
                for j in 0..self.order {
                    full[(self.index(c, i), self.index(c, j))] = p[(i, j)];
                }
            }
        }
        full
    }

    pub(crate) fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.state_dim() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "state has length {}, expected {}",
                x.len(),
                self.state_dim()
            )))
        }
    }
}
