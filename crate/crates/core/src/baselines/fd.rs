//! Regularized least-squares inversion of the scene transfer matrix, bin by
//! bin, turned into one FIR filter per source.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bands::BandSet;
use crate::error::{Error, Result};
use crate::filter::FrequencyGrid;
use crate::loss::TargetResponse;
use crate::sim::{real_inverse, real_spectrum, EqualizedResponse, Simulator};

type C = Complex64;

/// FIR equalizer taps for one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirEqualizer {
    pub taps: Vec<f64>,
}

/// Zero-phase desired response: the band target inside the equalization
/// range, a raised-cosine roll-off over one third-octave on either side and
/// zero beyond.
pub fn deconvolution_target(grid: &FrequencyGrid, bands: &BandSet, target: &TargetResponse) -> Vec<f64> {
    let set = bands.bands();
    let (f_low, f_high) = (set[0].lo, set[set.len() - 1].hi);
    let (d_low, d_high) = (target.magnitudes[0], target.magnitudes[set.len() - 1]);
    let third = 2f64.powf(1.0 / 3.0);
    let taper = |octaves_out: f64| 0.5 * (1.0 + (std::f64::consts::PI * octaves_out * 3.0).cos());
    (0..grid.bins())
        .map(|k| {
            if let Some(b) = bands.band_of(k) {
                return target.magnitudes[b];
            }
            let f = grid.frequency(k);
            if f <= 0.0 {
                0.0
            } else if f < f_low {
                if f > f_low / third {
                    d_low * taper((f_low / f).log2())
                } else {
                    0.0
                }
            } else if f > f_high && f < f_high * third {
                d_high * taper((f / f_high).log2())
            } else if f > f_high {
                0.0
            } else {
                // inside the range but not owned by a band (edge rounding)
                let b = set.iter().position(|b| f < b.hi).unwrap_or(set.len() - 1);
                target.magnitudes[b]
            }
        })
        .collect()
}

/// Per-bin solution of `(H^H H + beta I) G = H^H D` on the simulator grid.
/// `H` is the `M x S` matrix of path spectra and `D` repeats the desired
/// response at every mic.
pub fn fd_spectra(sim: &Simulator, desired: &[f64], beta: f64) -> Result<Vec<Vec<C>>> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::domain(format!("regularization must be non-negative, got {beta}")));
    }
    let (n_s, n_m) = (sim.n_sources(), sim.n_mics());
    let bins = sim.grid().bins();
    if desired.len() != bins {
        return Err(Error::shape("desired response length does not match grid"));
    }
    let mut g = vec![vec![C::new(0.0, 0.0); bins]; n_s];
    for k in 0..bins {
        let h = DMatrix::from_fn(n_m, n_s, |m, s| sim.path(s, m)[k]);
        let d = DVector::from_element(n_m, C::new(desired[k], 0.0));
        let hh = h.adjoint();
        let normal = &hh * &h + DMatrix::from_diagonal_element(n_s, n_s, C::new(beta, 0.0));
        let rhs = &hh * d;
        let chol = normal.cholesky().ok_or(Error::SingularSystem { bin: k })?;
        let x = chol.solve(&rhs);
        for s in 0..n_s {
            g[s][k] = x[s];
        }
    }
    Ok(g)
}

/// Designs FIR equalizers of `filter_len` taps: inverse DFT of the per-bin
/// solution, circular shift by half the DFT size, then the `filter_len`
/// samples centered on that shift.
pub fn fd_design(
    sim: &Simulator,
    bands: &BandSet,
    target: &TargetResponse,
    filter_len: usize,
    beta: f64,
) -> Result<Vec<FirEqualizer>> {
    let grid = sim.grid();
    let n = grid.size();
    if filter_len == 0 || filter_len > n {
        return Err(Error::domain(format!(
            "FIR length {filter_len} must lie in [1, {n}] (DFT size)"
        )));
    }
    target.validate(bands)?;
    let desired = deconvolution_target(grid, bands, target);
    let spectra = fd_spectra(sim, &desired, beta)?;
    let start = n / 2 - filter_len / 2;
    Ok(spectra
        .iter()
        .map(|g| {
            let h = real_inverse(g, grid);
            let taps = (start..start + filter_len)
                .map(|i| h[(i + n / 2) % n])
                .collect();
            FirEqualizer { taps }
        })
        .collect())
}

/// Scene response with one FIR per source.
pub fn fir_equalized_response(sim: &Simulator, firs: &[FirEqualizer]) -> Result<EqualizedResponse> {
    let spectra = firs
        .iter()
        .map(|f| real_spectrum(&f.taps, sim.grid()))
        .collect::<Result<Vec<_>>>()?;
    sim.apply(&spectra)
}
