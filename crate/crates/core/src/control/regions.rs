//! Sets attached to the Lyapunov certificate: the region `L` where the
//! decrease of `V` is not guaranteed, the ultimate bound `v = max_L V` and
//! the largest level `V <= v_exit` that stays inside the state domain.
//!
//! With several channels the certificate is `V(e) = sum_c e_c^T P e_c` and
//! `L = { x : ||e||^2 <= 2 sum_c b_c(x) |e_c^T p_d| }`, where `b_c` is the
//! uniform error bound of channel `c`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lyapunov::LyapunovCert;
use super::ChainLayout;
use crate::domain::{linspace, tensor_grid, DomainBox};
use crate::error::{Error, Result};
use crate::gp::Posterior;
use crate::uniform_error::ErrorBoundCert;

/// Pointwise bound `b(x)` on the model error of one channel.
pub trait Envelope: Sync {
    fn bound(&self, x: &[f64]) -> Result<f64>;
}

impl<F: Fn(&[f64]) -> f64 + Sync> Envelope for F {
    fn bound(&self, x: &[f64]) -> Result<f64> {
        Ok(self(x))
    }
}

/// `sqrt(beta) sigma_N(x) + gamma`.
pub struct PosteriorEnvelope<'a> {
    pub cert: &'a ErrorBoundCert,
    pub post: &'a Posterior,
}

impl Envelope for PosteriorEnvelope<'_> {
    fn bound(&self, x: &[f64]) -> Result<f64> {
        self.cert.bound_at(self.post, x)
    }
}

fn check_inputs(
    layout: &ChainLayout,
    cert: &LyapunovCert,
    envelopes: &[&dyn Envelope],
    x_ref: &[f64],
) -> Result<()> {
    layout.check_state(x_ref)?;
    if cert.order() != layout.order {
        return Err(Error::invalid("certificate order does not match the layout"));
    }
    if envelopes.len() != layout.channels {
        return Err(Error::invalid(format!(
            "{} error envelopes for {} channels",
            envelopes.len(),
            layout.channels
        )));
    }
    Ok(())
}

/// `2 sum_c b_c(x) |e_c^T p_d|`.
fn decrease_margin(
    layout: &ChainLayout,
    cert: &LyapunovCert,
    envelopes: &[&dyn Envelope],
    e: &[f64],
    x: &[f64],
) -> Result<f64> {
    let mut total = 0.0;
    for (c, env) in envelopes.iter().enumerate() {
        let dot = cert.last_column_dot(&layout.channel_slice(e, c)).abs();
        if dot > 0.0 {
            total += 2.0 * env.bound(x)? * dot;
        }
    }
    Ok(total)
}

fn full_value(layout: &ChainLayout, cert: &LyapunovCert, e: &[f64]) -> f64 {
    (0..layout.channels)
        .map(|c| cert.value(&layout.channel_slice(e, c)))
        .sum()
}

/// Whether `x` lies in the region where the Lyapunov decrease can fail.
pub fn in_decrease_region(
    layout: &ChainLayout,
    cert: &LyapunovCert,
    envelopes: &[&dyn Envelope],
    x_ref: &[f64],
    x: &[f64],
) -> Result<bool> {
    check_inputs(layout, cert, envelopes, x_ref)?;
    layout.check_state(x)?;
    let e: Vec<f64> = x.iter().zip(x_ref).map(|(a, b)| a - b).collect();
    let norm2: f64 = e.iter().map(|v| v * v).sum();
    Ok(norm2 <= decrease_margin(layout, cert, envelopes, &e, x)?)
}

/// Single-chain form of [`in_decrease_region`].
pub fn decrease_region_membership(
    cert: &LyapunovCert,
    envelope: &dyn Envelope,
    x_ref: &[f64],
    x: &[f64],
) -> Result<bool> {
    let layout = ChainLayout::single(cert.order())?;
    in_decrease_region(&layout, cert, &[envelope], x_ref, x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UltimateBoundOptions {
    /// Ray directions are the normalized points on the surface of the grid
    /// `linspace(-1, 1, k)^n`; for two states `k = 51` gives 200 rays.
    pub directions_per_axis: usize,
    /// Log-spaced radii per ray, from `min_radius_fraction` of the distance
    /// to the domain boundary up to that distance.
    pub radii: usize,
    pub min_radius_fraction: f64,
    /// Bisection steps locating the outermost boundary crossing on a ray.
    pub refine_steps: usize,
}

impl Default for UltimateBoundOptions {
    fn default() -> Self {
        Self {
            directions_per_axis: 51,
            radii: 200,
            min_radius_fraction: 1e-8,
            refine_steps: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UltimateBound {
    /// `max V` over the sampled part of `L`.
    pub value: f64,
    /// `min V` over the complement of the domain; level sets below it stay inside.
    pub exit_level: f64,
    pub directions: usize,
    pub radii: usize,
    /// Number of reference states the maximum was taken over.
    pub references: usize,
}

impl UltimateBound {
    /// `v <= v_exit`: the ultimately bounded set fits inside the domain.
    pub fn contained(&self) -> bool {
        self.value <= self.exit_level
    }
}

fn directions(n: usize, k: usize) -> Vec<Vec<f64>> {
    if n == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }
    let axis = linspace(-1.0, 1.0, k);
    let axes = vec![axis; n];
    tensor_grid(&axes)
        .into_iter()
        .filter(|p| p.iter().any(|v| (v.abs() - 1.0).abs() < 1e-12))
        .map(|p| {
            let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            p.into_iter().map(|v| v / norm).collect()
        })
        .collect()
}

/// Distance from `x_ref` to the domain boundary along unit direction `u`.
fn ray_extent(dom: &DomainBox, x_ref: &[f64], u: &[f64]) -> f64 {
    let mut t = f64::INFINITY;
    for i in 0..u.len() {
        if u[i] > 0.0 {
            t = t.min((dom.upper()[i] - x_ref[i]) / u[i]);
        } else if u[i] < 0.0 {
            t = t.min((dom.lower()[i] - x_ref[i]) / u[i]);
        }
    }
    t.max(0.0)
}

/// `min_i dist_i^2 / (P^{-1})_ii` over the faces of the domain.
fn exit_level(layout: &ChainLayout, cert: &LyapunovCert, dom: &DomainBox, x_ref: &[f64]) -> Result<f64> {
    let inv_diag = cert.inverse_diagonal()?;
    let mut level = f64::INFINITY;
    for c in 0..layout.channels {
        for (k, idx) in layout.channel_indices(c).into_iter().enumerate() {
            let gap = (dom.upper()[idx] - x_ref[idx]).min(x_ref[idx] - dom.lower()[idx]);
            level = level.min(gap * gap / inv_diag[k]);
        }
    }
    Ok(level)
}

/// Ultimate bound maximized over rays from each reference state.
///
/// Along a ray `x = x_ref + r u` the state is in `L` iff
/// `r <= 2 sum_c b_c(x) |u_c^T p_d|`. The outermost radius passing this test
/// is located on a log grid and refined by bisection, so the sampled maximum
/// resolves regions of any size relative to the domain.
pub fn ultimate_bound(
    layout: &ChainLayout,
    cert: &LyapunovCert,
    envelopes: &[&dyn Envelope],
    dom: &DomainBox,
    x_refs: &[Vec<f64>],
    opts: &UltimateBoundOptions,
) -> Result<UltimateBound> {
    if x_refs.is_empty() || opts.radii == 0 || opts.directions_per_axis < 2 {
        return Err(Error::invalid("ultimate bound grid is empty"));
    }
    if dom.dim() != layout.state_dim() {
        return Err(Error::invalid("domain dimension does not match the state"));
    }
    let n = layout.state_dim();
    let dirs = directions(n, opts.directions_per_axis);
    let p_full = layout.block_diag(&cert.p);
    let fractions: Vec<f64> = (0..opts.radii)
        .map(|j| {
            if opts.radii == 1 {
                1.0
            } else {
                opts.min_radius_fraction.powf(1.0 - j as f64 / (opts.radii - 1) as f64)
            }
        })
        .collect();

    let mut value: f64 = 0.0;
    let mut exit = f64::INFINITY;
    for x_ref in x_refs {
        check_inputs(layout, cert, envelopes, x_ref)?;
        if !dom.contains(x_ref) {
            return Err(Error::invalid("reference state lies outside the domain"));
        }
        exit = exit.min(exit_level(layout, cert, dom, x_ref)?);
        let per_ray: Vec<f64> = dirs
            .par_iter()
            .map(|u| -> Result<f64> {
                let extent = ray_extent(dom, x_ref, u);
                let inside = |r: f64| -> Result<bool> {
                    let x: Vec<f64> = x_ref.iter().zip(u).map(|(a, b)| a + r * b).collect();
                    let e: Vec<f64> = u.iter().map(|v| r * v).collect();
                    Ok(r * r <= decrease_margin(layout, cert, envelopes, &e, &x)?)
                };
                let mut best: Option<usize> = None;
                for (j, f) in fractions.iter().enumerate() {
                    if inside(f * extent)? {
                        best = Some(j);
                    }
                }
                let r = match best {
                    None => 0.0,
                    Some(j) if j + 1 == fractions.len() => extent,
                    Some(j) => {
                        let (mut lo, mut hi) = (fractions[j] * extent, fractions[j + 1] * extent);
                        for _ in 0..opts.refine_steps {
                            let mid = 0.5 * (lo + hi);
                            if inside(mid)? {
                                lo = mid;
                            } else {
                                hi = mid;
                            }
                        }
                        lo
                    }
                };
                let uv = DVector::from_column_slice(u);
                Ok(r * r * (uv.transpose() * &p_full * &uv)[(0, 0)])
            })
            .collect::<Result<_>>()?;
        value = per_ray.into_iter().fold(value, f64::max);
    }
    Ok(UltimateBound {
        value,
        exit_level: exit,
        directions: dirs.len(),
        radii: opts.radii,
        references: x_refs.len(),
    })
}

/// Membership of a state in `L`, in the ultimately bounded set `V <= v`
/// and in the initial set `V <= v_exit`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointClass {
    pub in_decrease_region: bool,
    pub in_ultimate_set: bool,
    pub in_initial_set: bool,
}

pub fn classify_points(
    layout: &ChainLayout,
    cert: &LyapunovCert,
    envelopes: &[&dyn Envelope],
    x_ref: &[f64],
    bound: &UltimateBound,
    points: &[Vec<f64>],
) -> Result<Vec<PointClass>> {
    check_inputs(layout, cert, envelopes, x_ref)?;
    points
        .par_iter()
        .map(|x| {
            layout.check_state(x)?;
            let e: Vec<f64> = x.iter().zip(x_ref).map(|(a, b)| a - b).collect();
            let v = full_value(layout, cert, &e);
            let norm2: f64 = e.iter().map(|v| v * v).sum();
            Ok(PointClass {
                in_decrease_region: norm2 <= decrease_margin(layout, cert, envelopes, &e, x)?,
                in_ultimate_set: v <= bound.value,
                in_initial_set: v <= bound.exit_level,
            })
        })
        .collect()
}
