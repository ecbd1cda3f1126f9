//! Gradient-based design of parametric peaking equalizers for multi-source,
//! multi-microphone acoustic scenes.
//!
//! The pipeline: a [`scene::Scene`] of impulse responses is preprocessed,
//! simulated in the frequency domain by [`sim::Simulator`], scored by
//! [`loss::Objective`] (band-magnitude distance plus energy-ratio penalty),
//! and optimized either by [`biasnet`] with the analytic gradient or by the
//! [`baselines`]. All designs are scored through [`metrics::Evaluator`].

pub mod bands;
pub mod baselines;
pub mod biasnet;
pub mod cli;
pub mod error;
pub mod filter;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod params;
pub mod pipeline;
pub mod scene;
pub mod sim;

pub use error::{Error, Result};
