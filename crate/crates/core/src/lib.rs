//! Score-driven Heston-Nandi GARCH with a time-varying variance risk ratio.
//!
//! The crate covers the physical/risk-neutral model algebra ([`model`]),
//! closed-form VIX ([`vix`]), Fourier option pricing ([`pricing`]), the
//! score-driven η update ([`score`]), likelihood filtering and estimation
//! ([`estimation`]), Monte Carlo oracles ([`mc`]) and file-based batch
//! runs ([`io`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod io;
pub mod mc;
pub mod model;
pub mod optim;
pub mod presets;
pub mod pricing;
pub mod quadrature;
pub mod score;
pub mod vix;

pub use error::{Error, Result};
pub use model::{FilterState, KernelCoeffs, KernelParams, PhysicalParams, QDayParams};
