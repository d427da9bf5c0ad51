//! Discrete-time Malliavin calculus for Markov-chain approximation schemes
//! `X_{t+δ} = ψ(X_t, t, δ^{1/2} Z_{t+δ}, δ)`.
//!
//! Modules, bottom-up: [`ad`] (dual numbers), [`vectorfield`] (brackets and the
//! Hörmander quantity), [`noise`] (splitting laws), [`scheme`] (paths and flows),
//! [`malliavin`] (derivatives, covariance, weights), [`localization`] (cutoffs and
//! thresholds), [`semigroup`] (Monte Carlo estimators, densities, total variation).

#[macro_use]
mod macros;

pub mod ad;
pub mod error;
pub mod linalg;
pub mod localization;
pub mod malliavin;
pub mod noise;
pub mod record;
pub mod rng;
pub mod scheme;
pub mod semigroup;
pub mod vectorfield;

pub use error::{Error, Result};
