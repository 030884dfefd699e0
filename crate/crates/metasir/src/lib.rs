//! Analytical and Monte-Carlo toolkit for the SIR meta distribution in
//! Poisson cellular networks with cell-center / cell-edge user splitting.
//!
//! The crate is layered bottom-up:
//!
//! * [`quad`] — adaptive Gauss–Kronrod quadrature over real and complex
//!   integrands, including semi-infinite ranges.
//! * [`specialfn`] — the Gauss hypergeometric values, generalized binomial
//!   coefficients and regularized incomplete beta the closed forms need.
//! * [`geometry`] — network parameters, PPP sampling on a torus, user
//!   classification and the serving-distance laws.
//! * [`moments`] — closed-form moments M_b of the conditional success
//!   probability, mean local delay and its phase transitions.
//! * [`metadist`] — Gil-Pelaez inversion, beta approximation, the
//!   meta-distribution curve type and the traffic fixed point.
//! * [`simulator`] — spatio-temporal Monte-Carlo reference (fixed-activity
//!   and queue-coupled modes).
//! * [`config`] / [`experiment`] — TOML-driven experiment runner shared by
//!   the CLI.

pub mod config;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod metadist;
pub mod moments;
pub mod quad;
pub mod simulator;
pub mod specialfn;

pub use error::{Error, Result};
