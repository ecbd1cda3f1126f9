//! Frequency-domain simulation of equalized scenes.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::filter::{db_to_lin, FrequencyGrid, SosCascade};
use crate::scene::Scene;

/// DFT of a real signal zero-padded to `grid.size()`, non-negative bins only.
pub fn real_spectrum(x: &[f64], grid: &FrequencyGrid) -> Result<Vec<Complex64>> {
    let n = grid.size();
    if x.len() > n {
        return Err(Error::domain(format!(
            "signal of {} samples exceeds DFT size {n}",
            x.len()
        )));
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.truncate(grid.bins());
    Ok(buf)
}

/// Inverse DFT of a Hermitian spectrum given by its non-negative bins.
pub fn real_inverse(half: &[Complex64], grid: &FrequencyGrid) -> Vec<f64> {
    let n = grid.size();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    buf[..half.len()].copy_from_slice(half);
    for k in 1..n / 2 {
        buf[n - k] = half[k].conj();
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Weight of bin `k` in a full-spectrum sum reconstructed from half bins.
#[inline]
pub fn hermitian_weight(k: usize, n: usize) -> f64 {
    if k == 0 || k == n / 2 {
        1.0
    } else {
        2.0
    }
}

/// Time-domain energy of a real signal from its half spectrum (Parseval).
pub fn parseval_energy(half: &[Complex64], n: usize) -> f64 {
    half.iter()
        .enumerate()
        .map(|(k, h)| hermitian_weight(k, n) * h.norm_sqr())
        .sum::<f64>()
        / n as f64
}

/// Equalized spectra of every path and their per-microphone sums.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualizedResponse {
    n_mics: usize,
    /// Path spectra indexed `source * n_mics + mic`.
    pub per_path: Vec<Vec<Complex64>>,
    pub per_mic: Vec<Vec<Complex64>>,
}

impl EqualizedResponse {
    pub fn path(&self, s: usize, m: usize) -> &[Complex64] {
        &self.per_path[s * self.n_mics + m]
    }
}

/// Precomputed path spectra of a preprocessed scene on a fixed grid.
///
/// Path spectra include the alignment delay of each source and the global
/// offset gain, so equalizing is a bin-wise product.
#[derive(Debug, Clone)]
pub struct Simulator {
    grid: FrequencyGrid,
    n_sources: usize,
    n_mics: usize,
    reference_source: usize,
    paths: Vec<Vec<Complex64>>,
}

impl Simulator {
    pub fn new(scene: &Scene, grid: FrequencyGrid) -> Result<Self> {
        if (grid.fs() - scene.fs).abs() > 0.0 {
            return Err(Error::shape(format!(
                "grid sample rate {} differs from scene {}",
                grid.fs(),
                scene.fs
            )));
        }
        let offset = db_to_lin(scene.offset_db);
        let mut paths = Vec::with_capacity(scene.n_sources() * scene.n_mics());
        for s in 0..scene.n_sources() {
            for m in 0..scene.n_mics() {
                let h: Vec<f64> = scene.aligned_rir(s, m).iter().map(|v| v * offset).collect();
                paths.push(real_spectrum(&h, &grid)?);
            }
        }
        Ok(Simulator {
            grid,
            n_sources: scene.n_sources(),
            n_mics: scene.n_mics(),
            reference_source: scene.reference_source,
            paths,
        })
    }

    /// Simulator on the scene's default grid.
    pub fn for_scene(scene: &Scene) -> Result<Self> {
        Self::new(scene, scene.default_grid()?)
    }

    /// Builds a simulator directly from path spectra, indexed `s * n_mics + m`.
    pub fn from_spectra(
        grid: FrequencyGrid,
        n_sources: usize,
        n_mics: usize,
        reference_source: usize,
        paths: Vec<Vec<Complex64>>,
    ) -> Result<Self> {
        if paths.len() != n_sources * n_mics || paths.iter().any(|p| p.len() != grid.bins()) {
            return Err(Error::shape("path spectra do not match scene shape and grid"));
        }
        if reference_source >= n_sources {
            return Err(Error::shape("reference source out of range"));
        }
        Ok(Simulator {
            grid,
            n_sources,
            n_mics,
            reference_source,
            paths,
        })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn n_sources(&self) -> usize {
        self.n_sources
    }

    pub fn n_mics(&self) -> usize {
        self.n_mics
    }

    pub fn reference_source(&self) -> usize {
        self.reference_source
    }

    pub fn path(&self, s: usize, m: usize) -> &[Complex64] {
        &self.paths[s * self.n_mics + m]
    }

    /// Energies of the unequalized (aligned, offset-scaled) paths, `[s][m]`.
    pub fn path_energies(&self) -> Vec<Vec<f64>> {
        (0..self.n_sources)
            .map(|s| {
                (0..self.n_mics)
                    .map(|m| parseval_energy(self.path(s, m), self.grid.size()))
                    .collect()
            })
            .collect()
    }

    /// Applies one equalizer response per source to every path.
    pub fn apply(&self, eq_responses: &[Vec<Complex64>]) -> Result<EqualizedResponse> {
        if eq_responses.len() != self.n_sources {
            return Err(Error::shape(format!(
                "{} equalizers for {} sources",
                eq_responses.len(),
                self.n_sources
            )));
        }
        let bins = self.grid.bins();
        if eq_responses.iter().any(|g| g.len() != bins) {
            return Err(Error::shape("equalizer response length does not match grid"));
        }
        let mut per_path = Vec::with_capacity(self.paths.len());
        let mut per_mic = vec![vec![Complex64::new(0.0, 0.0); bins]; self.n_mics];
        for (s, g) in eq_responses.iter().enumerate() {
            for (m, acc) in per_mic.iter_mut().enumerate() {
                let eq: Vec<Complex64> = self.path(s, m).iter().zip(g).map(|(h, g)| h * g).collect();
                acc.iter_mut().zip(&eq).for_each(|(a, e)| *a += e);
                per_path.push(eq);
            }
        }
        Ok(EqualizedResponse {
            n_mics: self.n_mics,
            per_path,
            per_mic,
        })
    }

    pub fn apply_cascades(&self, cascades: &[SosCascade]) -> Result<EqualizedResponse> {
        let responses: Vec<_> = cascades.iter().map(|c| c.response(&self.grid)).collect();
        self.apply(&responses)
    }

    pub fn unequalized(&self) -> EqualizedResponse {
        let ones = vec![vec![Complex64::new(1.0, 0.0); self.grid.bins()]; self.n_sources];
        self.apply(&ones).expect("unity responses match the grid")
    }
}

/// Equalized per-path and per-microphone spectra of a preprocessed scene.
pub fn equalized_response(
    scene: &Scene,
    eqs: &[crate::filter::Equalizer],
    grid: &FrequencyGrid,
) -> Result<EqualizedResponse> {
    let sim = Simulator::new(scene, *grid)?;
    let cascades = eqs
        .iter()
        .map(|e| e.cascade(grid.fs()))
        .collect::<Result<Vec<_>>>()?;
    sim.apply_cascades(&cascades)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parseval_matches_time_energy() {
        let grid = FrequencyGrid::new(64, 48_000.0).unwrap();
        let x: Vec<f64> = (0..40).map(|n| ((n * 7 % 11) as f64 - 5.0) * 0.1).collect();
        let spec = real_spectrum(&x, &grid).unwrap();
        let e: f64 = x.iter().map(|v| v * v).sum();
        assert!((parseval_energy(&spec, 64) - e).abs() < 1e-12);
        let back = real_inverse(&spec, &grid);
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
