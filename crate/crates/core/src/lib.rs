//! Quantized stereodynamics toolkit for ultracold fermionic polar molecules
//! held in a one-dimensional optical lattice.
//!
//! The crate covers the whole analysis chain of a lattice loss experiment:
//!
//! - [`channels`]: exchange-symmetry selection rules and the three lowest
//!   collision channels `|1>`, `|2>`, `|3>`.
//! - [`gasmodel`]: lattice-level populations and the layered cloud geometry.
//! - [`kinetics`]: coupled two-body loss equations, the effective initial
//!   rate, layer-resolved simulation and the 2D/3D rate conversion.
//! - [`fitting`]: Levenberg-Marquardt extraction of rate constants.
//! - [`scattering`]: single-channel barrier model with an absorbing inner
//!   boundary.
//! - [`bandmap`]: Brillouin-zone population analysis of band-mapped images.
//!
//! All quantities are SI internally; [`units`] converts at the boundary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandmap;
pub mod channels;
pub mod config;
pub mod constants;
pub mod error;
pub mod fitting;
pub mod gasmodel;
pub mod io;
pub mod kinetics;
pub mod lm;
pub mod ode;
pub mod scattering;
pub mod units;

pub use error::{Error, Result};
