//! Grid-based suprema used where no closed form is available.
//!
//! Every estimate carries a `slack`: the largest change of the sampled
//! quantity between neighbouring grid nodes. Between nodes the true supremum
//! can exceed the sampled maximum by roughly this amount, so `upper()` is the
//! value to use wherever an upper bound is required.

use serde::{Deserialize, Serialize};

use crate::domain::tensor_grid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridEstimate {
    pub value: f64,
    pub slack: f64,
}

impl GridEstimate {
    pub fn exact(value: f64) -> Self {
        Self { value, slack: 0.0 }
    }

    pub fn upper(&self) -> f64 {
        self.value + self.slack
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            value: self.value * factor,
            slack: self.slack * factor,
        }
    }
}

fn strides(axes: &[Vec<f64>]) -> Vec<usize> {
    let mut strides = vec![1usize; axes.len()];
    for a in (0..axes.len().saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * axes[a + 1].len();
    }
    strides
}

fn neighbour_variation(values: &[f64], axes: &[Vec<f64>]) -> f64 {
    let strides = strides(axes);
    let mut slack: f64 = 0.0;
    for (flat, &v) in values.iter().enumerate() {
        for (a, &s) in strides.iter().enumerate() {
            let pos = (flat / s) % axes[a].len();
            if pos + 1 < axes[a].len() {
                slack = slack.max((values[flat + s] - v).abs());
            }
        }
    }
    slack
}

/// Supremum of `f` sampled on the tensor grid spanned by `axes`.
pub fn sampled_sup<F>(f: F, axes: &[Vec<f64>]) -> GridEstimate
where
    F: Fn(&[f64]) -> f64,
{
    let values: Vec<f64> = tensor_grid(axes).iter().map(|p| f(p)).collect();
    let value = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    GridEstimate {
        value,
        slack: neighbour_variation(&values, axes),
    }
}

/// Supremum of the gradient norm of `f` restricted to the coordinates in
/// `diff_axes`, from one-sided differences between neighbouring nodes.
pub fn gradient_norm_sup<F>(f: F, axes: &[Vec<f64>], diff_axes: &[usize]) -> GridEstimate
where
    F: Fn(&[f64]) -> f64,
{
    let grid = tensor_grid(axes);
    let values: Vec<f64> = grid.iter().map(|p| f(p)).collect();
    let strides = strides(axes);
    let norms: Vec<f64> = (0..values.len())
        .map(|flat| {
            diff_axes
                .iter()
                .map(|&a| {
                    let n = axes[a].len();
                    let pos = (flat / strides[a]) % n;
                    let (lo, hi) = if pos + 1 < n {
                        (flat, flat + strides[a])
                    } else {
                        (flat - strides[a], flat)
                    };
                    let h = axes[a][(hi / strides[a]) % n] - axes[a][(lo / strides[a]) % n];
                    let slope = (values[hi] - values[lo]) / h;
                    slope * slope
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let value = norms.iter().copied().fold(0.0, f64::max);
    GridEstimate {
        value,
        slack: neighbour_variation(&norms, axes),
    }
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

/// Median of a sample (average of the two middle values for even sizes).
pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}
