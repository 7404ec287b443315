//! Joint laws of `(I, X, S, σ)` for a simple symmetric random walk stopped
//! at an almost-surely finite time.
//!
//! The crate is organised bottom-up:
//!
//! - [`measure`]: exact-rational quadruple measures and their file format.
//! - [`consistency`]: the φ/ψ window algebra, the per-cell HE1 inequalities
//!   and the (S, X) marginal checks.
//! - [`constructor`]: turns a consistent measure into a randomized cell
//!   stopping rule and samples trajectories from it.
//! - [`oracle`]: exact absorption laws of bounded stopping rules, used as
//!   ground truth.
//! - [`hedging`]: the `Z` / `Y` barrier hedge variables evaluated on
//!   trajectories.
//! - [`pricing`]: the extremal-price linear program and its dual hedge.

pub mod consistency;
pub mod constructor;
mod error;
pub mod hedging;
pub mod linalg;
pub mod measure;
pub mod oracle;
pub mod pricing;
pub mod rational;

pub use error::{Error, Result};
pub use measure::{GridMeasure, Quad, Sign};
pub use rational::Rational;
