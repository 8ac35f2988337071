//! Chance-constrained Bayesian inversion of the coolant Reynolds number in a
//! transpiration-cooled porous wall.
//!
//! The crate is organised bottom-up:
//!
//! - [`porous_flow`]: deterministic strip model and the interface pressure.
//! - [`gpc`]: Hermite chaos surrogates of the strip temperatures.
//! - [`heat_interface`]: interface temperature assembled from strips and
//!   diffused along the wall.
//! - [`chance_constraint`]: Monte Carlo estimate of `P(f2 <= beta)` on the
//!   surrogate and the feasibility decision.
//! - [`bayes`]: priors, likelihood, posterior and gradients.
//! - [`samplers`]: constrained random walk, penalized HMC, penalized SVGD and
//!   projected SVGD.
//! - [`diagnostics`]: reference posterior, histograms, relative L2 error and
//!   the Brooks-Gelman interval ratio.
//! - [`scenario`]: JSON scenario configuration and the end-to-end pipeline.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod chance_constraint;
pub mod diagnostics;
pub mod gpc;
pub mod heat_interface;
pub mod pipeline;
pub mod plot;
pub mod porous_flow;
pub mod samplers;
pub mod scenario;
