//! Coupled-mode modelling of a high-Q microwave cavity loaded with a
//! high-permittivity dielectric puck (SrTiO3 by default).
//!
//! The crate is organised bottom-up:
//!
//! * [`materials`]: permittivity and loss-tangent models versus temperature.
//! * [`resonator`]: puck geometry, the semi-analytic TE01δ frequency and the
//!   low-temperature quadratic frequency fit.
//! * [`cmt`]: two-mode coupled-mode theory, closed-form and eigen-solver.
//! * [`network`]: two-port transmission synthesis and feature finding.
//! * [`extract`]: resonance parameter extraction and ε_r sensitivities.
//! * [`sensitivity`]: the temperature responsivity chain.
//! * [`sweep`]: deterministic parameter sweeps.
//! * [`scenario`]: serializable model configuration shared by the sweep
//!   engine and the command-line tool.
//!
//! All frequencies are in Hz internally.

pub mod cmt;
pub mod error;
pub mod extract;
pub mod materials;
pub mod network;
pub mod resonator;
pub mod scenario;
pub mod sensitivity;
pub mod sweep;
pub mod units;

mod linalg;

pub use error::{Error, Result};
