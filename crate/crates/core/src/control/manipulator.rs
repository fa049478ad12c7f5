//! Planar two-link arm with revolute joints.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Link `i` has length `l_i`, mass `m_i`, inertia `i_i` about its centre of
/// mass and centre of mass at distance `r_i` from its proximal joint.
/// Gravity acts along `-y` with magnitude `gravity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoLinkArm {
    pub lengths: [f64; 2],
    pub masses: [f64; 2],
    pub inertias: [f64; 2],
    pub com: [f64; 2],
    #[serde(default)]
    pub gravity: f64,
}

impl Default for TwoLinkArm {
    fn default() -> Self {
        Self {
            lengths: [1.0, 1.0],
            masses: [1.0, 1.0],
            inertias: [1.0, 1.0],
            com: [0.5, 0.5],
            gravity: 0.0,
        }
    }
}

impl TwoLinkArm {
    pub const STANDARD_GRAVITY: f64 = 9.81;

    pub fn with_gravity(mut self, g: f64) -> Self {
        self.gravity = g;
        self
    }

    fn constants(&self) -> (f64, f64, f64) {
        let [l1, _] = self.lengths;
        let [m1, m2] = self.masses;
        let [i1, i2] = self.inertias;
        let [r1, r2] = self.com;
        let alpha = i1 + i2 + m1 * r1 * r1 + m2 * (l1 * l1 + r2 * r2);
        let beta = m2 * l1 * r2;
        let delta = i2 + m2 * r2 * r2;
        (alpha, beta, delta)
    }

    pub fn mass_matrix(&self, q: [f64; 2]) -> Matrix2<f64> {
        let (a, b, d) = self.constants();
        let c2 = q[1].cos();
        Matrix2::new(a + 2.0 * b * c2, d + b * c2, d + b * c2, d)
    }

    pub fn coriolis(&self, q: [f64; 2], dq: [f64; 2]) -> Matrix2<f64> {
        let (_, b, _) = self.constants();
        let s2 = q[1].sin();
        Matrix2::new(
            -b * s2 * dq[1],
            -b * s2 * (dq[0] + dq[1]),
            b * s2 * dq[0],
            0.0,
        )
    }

    pub fn gravity_torque(&self, q: [f64; 2]) -> Vector2<f64> {
        let [l1, _] = self.lengths;
        let [m1, m2] = self.masses;
        let [r1, r2] = self.com;
        let g = self.gravity;
        let c12 = (q[0] + q[1]).cos();
        Vector2::new(
            (m1 * r1 + m2 * l1) * g * q[0].cos() + m2 * r2 * g * c12,
            m2 * r2 * g * c12,
        )
    }

    /// `ddq = M(q)^{-1} (tau - C(q, dq) dq - N(q))`.
    pub fn forward_dynamics(&self, q: [f64; 2], dq: [f64; 2], tau: [f64; 2]) -> Result<[f64; 2]> {
        let m = self.mass_matrix(q);
        let rhs = Vector2::from(tau) - self.coriolis(q, dq) * Vector2::from(dq) - self.gravity_torque(q);
        let ddq = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::numerical("singular mass matrix"))?;
        Ok([ddq[0], ddq[1]])
    }

    /// Joint accelerations without actuation, for state `(q1, q2, dq1, dq2)`.
    /// With the inner loop `tau = M(q) u` the joints obey `ddq = drift + u`.
    pub fn drift(&self, state: &[f64]) -> Result<[f64; 2]> {
        self.forward_dynamics([state[0], state[1]], [state[2], state[3]], [0.0, 0.0])
    }

    pub fn kinetic_energy(&self, q: [f64; 2], dq: [f64; 2]) -> f64 {
        let v = Vector2::from(dq);
        0.5 * (v.transpose() * self.mass_matrix(q) * v)[(0, 0)]
    }

    /// Elbow and tip positions.
    pub fn forward_kinematics(&self, q: [f64; 2]) -> ([f64; 2], [f64; 2]) {
        let [l1, l2] = self.lengths;
        let elbow = [l1 * q[0].cos(), l1 * q[0].sin()];
        let a = q[0] + q[1];
        (elbow, [elbow[0] + l2 * a.cos(), elbow[1] + l2 * a.sin()])
    }
}
