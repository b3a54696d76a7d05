//! Composable finite-size security bounds for continuous-variable QKD with a
//! discrete coherent-state constellation and finite-range heterodyne detection.
//!
//! Modules, bottom-up:
//!
//! * [`fock`]: truncated Fock-space states, density operators and trace distances.
//! * [`constellation`]: Alice's modulation grid and the preparation errors
//!   `eps_a`, `eps_p` and the Gaussian tail term.
//! * [`security`]: entropies, AEP and continuity corrections, leftover-hash key
//!   length, asymptotic and finite-size key rates.
//! * [`covariance`]: ideal covariance model, deviation bounds for the practical
//!   protocol and a semi-analytic clipped-moment oracle.
//! * [`sim`]: seeded Monte Carlo simulation of the prepare, transmit, measure,
//!   digitize pipeline.
//! * [`config`] and [`commands`]: the declarative run configuration and the
//!   data-producing back ends of the `cvqkd` command line tool.
//!
//! All quadratures are in shot-noise units with the amplitude convention
//! `alpha = (q + i p) / sqrt(2)`, so a vacuum heterodyne outcome has unit
//! variance per quadrature. Entropies are in bits.

// `!(x >= 0.0)` style checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod constellation;
pub mod covariance;
mod error;
pub mod fock;
pub(crate) mod numerics;
pub mod security;
pub mod sim;

pub use error::{Error, Result};
