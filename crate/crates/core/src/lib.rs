//! Simulation and verification laboratory for a 1-D diffusion whose
//! diffusivity is updated at each crossing of the origin.
//!
//! The coupled process `(X_t, A_t)` solves
//!
//! ```text
//! dX_t = sqrt(2 A_t) dW_t,      dA_t = f(A_t) dL_t^W / sqrt(2 A_t),
//! ```
//!
//! where `L_t^W` is the Brownian local time at 0. For `X_0 = 0` the
//! solution has the product form `X_t = sqrt(2 A_t) W_t` with
//! `A_t = Phi_{A_0}(L_t^W)`, the flow of `y' = f(y)/sqrt(2y)` evaluated at
//! the accumulated local time. This crate provides:
//!
//! * [`brownian`] — simple random walks with discrete local time and exact
//!   joint samples of `(W_t, L_t^W)`;
//! * [`flow`] — closed-form and general flows driven by local time, with
//!   exit thresholds;
//! * [`process`] — exact and discrete-scheme samplers for `(X_t, A_t)`,
//!   survival probabilities and regime classification;
//! * [`limits`] — rescaled limit-law samplers, two-sample KS testing and
//!   weak-sense generator verification;
//! * [`pde`] — a conservative finite-difference solver for the associated
//!   singular parabolic equation, its closed-form solution, and blow-up
//!   probes.

// Preconditions on floats are written `!(x > 0.0)` on purpose: the
// negation also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brownian;
pub mod flow;
pub mod limits;
pub mod pde;
pub mod process;
pub mod rng;

pub use flow::{FlowResult, PowerLawDrive};
pub use process::{ProcessPoint, Status};
pub use rng::RngStream;
