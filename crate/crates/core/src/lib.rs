//! Multifractal analysis of functions through wavelet coefficient trees:
//! p-leaders, large-deviation estimates of the p-spectrum, random wavelet
//! series with their closed-form spectra, and profile-driven constructions.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dyadic;
mod error;
pub mod largedev;
pub mod leaders;
pub mod numeric;
pub mod rng;
pub mod rws;
pub mod snu;

pub use error::{MfaError, Result};
