use serde::{Deserialize, Serialize};

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Unknown functions used by the experiments, all on two inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthFunction {
    /// `sin(x1) + 1 / (1 + exp(-x2))`.
    SinSigmoid,
    /// `(1 - tanh(100 x2)) x1`.
    TanhStep,
    /// `1 - sin(2 x1) + 1 / (1 + exp(-x2))`.
    TrackingDrift,
    Zero,
}

impl TruthFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TruthFunction::SinSigmoid => x[0].sin() + sigmoid(x[1]),
            TruthFunction::TanhStep => (1.0 - (100.0 * x[1]).tanh()) * x[0],
            TruthFunction::TrackingDrift => 1.0 - (2.0 * x[0]).sin() + sigmoid(x[1]),
            TruthFunction::Zero => 0.0,
        }
    }
}
