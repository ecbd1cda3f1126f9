//! Third-octave banding of DFT spectra.

use std::ops::Range as IndexRange;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::FrequencyGrid;
use crate::params::Range;

/// Base-2 third-octave center `1000 * 2^((i - 30) / 3)` Hz.
pub fn third_octave_center(i: i64) -> f64 {
    1000.0 * 2f64.powf((i - 30) as f64 / 3.0)
}

/// Edge `1000 * 2^((j - 61) / 6)` Hz; band `i` spans edges `2i` and `2i + 2`,
/// so adjacent bands share the exact same boundary value.
fn third_octave_edge(j: i64) -> f64 {
    1000.0 * 2f64.powf((j - 61) as f64 / 6.0)
}

/// One third-octave band: its nominal center, edges clipped to the
/// equalization range, and the DFT bins it owns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub center: f64,
    pub lo: f64,
    pub hi: f64,
    pub bins: IndexRange<usize>,
}

impl Band {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Sorted, non-overlapping third-octave bands over a frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSet {
    bands: Vec<Band>,
}

impl BandSet {
    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.bands.iter().map(|b| b.center).collect()
    }

    /// Clipped band edges, used as per-section center-frequency ranges.
    pub fn fc_ranges(&self) -> Vec<Range> {
        self.bands.iter().map(|b| Range { lo: b.lo, hi: b.hi }).collect()
    }

    /// Band index owning bin `k`, if any.
    pub fn band_of(&self, k: usize) -> Option<usize> {
        self.bands.iter().position(|b| b.bins.contains(&k))
    }

    /// Total number of bins covered by the set.
    pub fn covered_bins(&self) -> usize {
        self.bands.iter().map(Band::len).sum()
    }
}

/// Nominal third-octave bands overlapping `[f_low, f_high]`, as
/// `(center, clipped_lo, clipped_hi)`.
pub fn third_octave_bands(f_low: f64, f_high: f64) -> Result<Vec<(f64, f64, f64)>> {
    if !(f_low.is_finite() && f_high.is_finite() && f_low > 0.0 && f_low < f_high) {
        return Err(Error::domain(format!(
            "empty or invalid band range [{f_low}, {f_high}] Hz"
        )));
    }
    let first = (30.0 + 3.0 * (f_low / 1000.0).log2()).floor() as i64 - 2;
    let mut out = Vec::new();
    let mut i = first;
    loop {
        let c = third_octave_center(i);
        let (lo, hi) = (third_octave_edge(2 * i), third_octave_edge(2 * i + 2));
        if lo >= f_high {
            break;
        }
        if hi > f_low {
            out.push((c, lo.max(f_low), hi.min(f_high)));
        }
        i += 1;
    }
    Ok(out)
}

/// Third-octave bands over `[f_low, f_high]` with their bin ranges on `grid`.
///
/// A band owns the bins whose frequency lies in `[lo, hi)` (the top band also
/// keeps a bin sitting exactly on `f_high`). Bands narrower than a bin are
/// widened to one bin by pushing later boundaries up, so bin ranges stay
/// contiguous and disjoint.
pub fn make_bands(f_low: f64, f_high: f64, grid: &FrequencyGrid) -> Result<BandSet> {
    if f_high >= grid.fs() / 2.0 {
        return Err(Error::domain(format!(
            "band range upper limit {f_high} Hz must stay below Nyquist"
        )));
    }
    let spec = third_octave_bands(f_low, f_high)?;
    let df = grid.bin_width();
    let mut starts: Vec<usize> = spec.iter().map(|&(_, lo, _)| (lo / df).ceil() as usize).collect();
    let last_hi = spec.last().map(|b| b.2).unwrap_or(f_high);
    starts.push((last_hi / df).floor() as usize + 1);
    for b in 0..spec.len() {
        if starts[b + 1] <= starts[b] {
            starts[b + 1] = starts[b] + 1;
        }
    }
    if *starts.last().unwrap() > grid.bins() {
        return Err(Error::domain(format!(
            "grid of {} bins too coarse for {} bands",
            grid.bins(),
            spec.len()
        )));
    }
    let bands = spec
        .iter()
        .enumerate()
        .map(|(b, &(center, lo, hi))| Band {
            center,
            lo,
            hi,
            bins: starts[b]..starts[b + 1],
        })
        .collect();
    Ok(BandSet { bands })
}

/// Per-band root-mean-square of a magnitude spectrum.
pub fn band_average(magnitude: &[f64], bands: &BandSet) -> Vec<f64> {
    bands
        .bands()
        .iter()
        .map(|b| {
            let power: f64 = magnitude[b.bins.clone()].iter().map(|m| m * m).sum();
            (power / b.len() as f64).sqrt()
        })
        .collect()
}

/// Per-band root-mean-square magnitude of a complex spectrum.
pub fn band_magnitudes(spectrum: &[Complex64], bands: &BandSet) -> Vec<f64> {
    bands
        .bands()
        .iter()
        .map(|b| {
            let power: f64 = spectrum[b.bins.clone()].iter().map(|h| h.norm_sqr()).sum();
            (power / b.len() as f64).sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> FrequencyGrid {
        FrequencyGrid::new(8192, 48_000.0).unwrap()
    }

    #[test]
    fn room_and_cabin_band_counts() {
        assert_eq!(make_bands(100.0, 14_000.0, &grid()).unwrap().len(), 22);
        assert_eq!(make_bands(20.0, 14_000.0, &grid()).unwrap().len(), 29);
    }

    #[test]
    fn narrow_range_gives_one_band_at_1k() {
        let set = make_bands(1000.0, 1000.0 + 1e-6, &grid()).unwrap();
        assert_eq!(set.len(), 1);
        assert!((set.bands()[0].center - 1000.0).abs() < 1e-9);
        assert_eq!(set.bands()[0].len(), 1);
    }

    #[test]
    fn empty_range_is_error() {
        assert!(make_bands(1000.0, 1000.0, &grid()).is_err());
        assert!(make_bands(2000.0, 1000.0, &grid()).is_err());
    }

    #[test]
    fn bins_disjoint_and_cover_range() {
        for &(lo, hi) in &[(100.0, 14_000.0), (20.0, 14_000.0), (500.0, 2500.0)] {
            let g = grid();
            let set = make_bands(lo, hi, &g).unwrap();
            for w in set.bands().windows(2) {
                assert_eq!(w[0].bins.end, w[1].bins.start);
                assert!(w[0].center < w[1].center);
            }
            assert!(set.bands().iter().all(|b| !b.is_empty()));
            let first = set.bands()[0].bins.start;
            let last = set.bands().last().unwrap().bins.end;
            assert!(g.frequency(first) >= lo - g.bin_width());
            for k in 0..g.bins() {
                let f = g.frequency(k);
                if f >= lo && f <= hi && lo >= 100.0 {
                    assert!(set.band_of(k).is_some(), "bin {k} at {f} Hz unassigned");
                }
            }
            assert!(last <= g.bins());
        }
    }

    #[test]
    fn averaging_rules() {
        let g = FrequencyGrid::new(64, 48_000.0).unwrap();
        let set = BandSet {
            bands: vec![Band {
                center: 1.0,
                lo: 0.0,
                hi: 1.0,
                bins: 0..10,
            }],
        };
        let mut mag = vec![1.0; g.bins()];
        mag[3] = 0.0;
        let b = band_average(&mag, &set);
        assert!((b[0] - 0.9f64.sqrt()).abs() < 1e-15);
        let flat = vec![2.5; g.bins()];
        assert_eq!(band_average(&flat, &set), vec![2.5]);
    }
}
