//! Position-based physical-layer authentication for underwater acoustic
//! networks.
//!
//! A transmitter is ranged by time of arrival at a set of anchored reference
//! nodes, its position is fitted by linear least squares, and the squared
//! residual against the claimed position is thresholded to decide between a
//! legitimate sender and an impersonator. False-alarm and missed-detection
//! probabilities are available analytically (through the exact law of the
//! statistic, a weighted sum of noncentral chi-squares) and by Monte Carlo.

// Negated comparisons are used deliberately so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod authentication;
pub mod channel;
pub mod cli;
mod error;
pub mod experiment;
pub mod localization;
pub mod quadform;
mod quadrature;

pub use error::{Error, Result};

/// Planar coordinate in meters.
pub type Point = nalgebra::Point2<f64>;
