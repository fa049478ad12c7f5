//! Gaussian-process regression with certified error bounds.
//!
//! The crate covers exact GP conditioning, data-dependent bounds on the
//! posterior variance, probabilistic bounds on sample functions used to
//! constrain hyperparameters, a uniform error bound over compact sets and a
//! feedback-linearizing tracking controller certified through a Lyapunov
//! function. The [`experiments`] module bundles reproducible studies that
//! exercise all of it.

pub mod control;
pub mod domain;
pub mod error;
pub mod experiments;
pub mod gp;
pub mod kernels;
pub mod numeric;
pub mod optimize;
pub mod prior_shaping;
pub mod uniform_error;
pub mod variance_bounds;

pub use domain::DomainBox;
pub use error::{Error, Result};
pub use gp::{log_marginal_likelihood, Dataset, Posterior};
pub use kernels::{KernelFamily, KernelSpec};
