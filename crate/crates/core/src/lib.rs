//! Implicit channel-charting localization of ground nodes from UAV pilots.
//!
//! The pipeline: simulate per-waypoint power gains over an urban scene
//! ([`scene`], [`propagation`]), learn a symmetric network that maps CSI
//! pairs to geographic distances ([`regressor`]), and turn anchor distances
//! into positions ([`multilateration`]). [`baselines`] holds the two
//! fingerprinting comparisons and [`harness`] the Monte-Carlo sweeps.

// `!(x > 0.0)` is the NaN-rejecting form used throughout input validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod multilateration;
pub mod propagation;
pub mod regressor;
pub mod scene;
pub mod scenefile;
pub mod stats;

pub use error::{Error, Result};
