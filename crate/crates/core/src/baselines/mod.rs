//! Comparison designers: derivative-free direct search over the peaking
//! parameter space and regularized frequency-domain deconvolution into FIR
//! filters.

pub mod dsm;
pub mod fd;

pub use dsm::{dsm_optimize, DsmConfig};
pub use fd::{deconvolution_target, fd_design, fd_spectra, fir_equalized_response, FirEqualizer};

/// Multiply-adds per output sample of a direct-form FIR of `len` taps.
pub fn fir_ops_per_sample(len: usize) -> usize {
    (2 * len).saturating_sub(1)
}

/// Operations per output sample of a cascade of `n` second-order sections.
pub fn sos_ops_per_sample(n: usize) -> usize {
    9 * n
}
