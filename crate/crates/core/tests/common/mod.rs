//! Reference computations shared by the integration tests. They avoid the
//! crate's frequency-domain simulation: responses come from time-domain
//! filtering and a long FFT, bands from the third-octave formula.

#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use eqopt::filter::{db_to_lin, SosCascade};
use eqopt::scene::Scene;

/// `(lo, hi)` edges of the nominal third-octave bands (centers
/// `1000 * 2^(k/3)`) that overlap `[f_low, f_high]`, clipped to it.
pub fn band_edges(f_low: f64, f_high: f64) -> Vec<(f64, f64)> {
    (-40..40)
        .map(|k| {
            let c = 1000.0 * 2f64.powf(k as f64 / 3.0);
            (c * 2f64.powf(-1.0 / 6.0), c * 2f64.powf(1.0 / 6.0))
        })
        .filter(|&(lo, hi)| hi > f_low && lo < f_high)
        .map(|(lo, hi)| (lo.max(f_low), hi.min(f_high)))
        .collect()
}

/// DFT of `x` zero-padded to `n` points; bins `0..=n/2`.
pub fn dft(x: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.truncate(n / 2 + 1);
    buf
}

/// How an equalizer is realized in the reference simulation.
pub enum Realized<'a> {
    None,
    Iir(&'a [SosCascade]),
    Fir(&'a [Vec<f64>]),
}

/// Per-mic band magnitudes of the equalized preprocessed scene, evaluated
/// at the frequencies `k * fs / n_design`. IIR paths run through the
/// difference equations over `n_long` samples (tails must have decayed by
/// then); FIR paths are linear convolutions done as a zero-padded product of
/// long DFTs.
pub fn reference_band_mags(
    scene: &Scene,
    eq: Realized<'_>,
    n_design: usize,
    n_long: usize,
) -> Vec<Vec<f64>> {
    assert!(n_long % n_design == 0 && n_long.is_power_of_two());
    let offset = db_to_lin(scene.offset_db);
    let edges = band_edges(scene.f_low, scene.f_high);
    let df = scene.fs / n_design as f64;
    let n_fft = match &eq {
        Realized::Fir(f) => (n_long + f[0].len()).next_power_of_two(),
        _ => n_long,
    };
    let step = n_fft / n_design;
    (0..scene.n_mics())
        .map(|m| {
            let mut sum = vec![Complex64::new(0.0, 0.0); n_fft / 2 + 1];
            for s in 0..scene.n_sources() {
                let mut h: Vec<f64> = scene.aligned_rir(s, m).iter().map(|v| v * offset).collect();
                assert!(h.len() <= n_long);
                h.resize(n_long, 0.0);
                let spec = match &eq {
                    Realized::None => dft(&h, n_fft),
                    Realized::Iir(c) => dft(&c[s].filter(&h), n_fft),
                    Realized::Fir(f) => dft(&h, n_fft)
                        .iter()
                        .zip(dft(&f[s], n_fft))
                        .map(|(a, b)| a * b)
                        .collect(),
                };
                for (acc, v) in sum.iter_mut().zip(spec) {
                    *acc += v;
                }
            }
            let last = edges.len() - 1;
            edges
                .iter()
                .enumerate()
                .map(|(b, &(lo, hi))| {
                    let bins: Vec<usize> = (0..=n_design / 2)
                        .filter(|&k| {
                            let f = k as f64 * df;
                            f >= lo && (f < hi || (b == last && f <= hi))
                        })
                        .collect();
                    assert!(!bins.is_empty(), "band {b} holds no bin");
                    let power: f64 = bins.iter().map(|&k| sum[k * step].norm_sqr()).sum();
                    (power / bins.len() as f64).sqrt()
                })
                .collect()
        })
        .collect()
}

/// Mean over mics of the mean squared deviation from 0 dB.
pub fn reference_mse(mags: &[Vec<f64>]) -> f64 {
    mags.iter()
        .map(|bm| bm.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / bm.len() as f64)
        .sum::<f64>()
        / mags.len() as f64
}

/// Mean over mics of the population standard deviation of `factor * log10`.
pub fn reference_sigma(mags: &[Vec<f64>], factor: f64) -> f64 {
    mags.iter()
        .map(|bm| {
            let d: Vec<f64> = bm.iter().map(|v| factor * v.log10()).collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt()
        })
        .sum::<f64>()
        / mags.len() as f64
}

/// Central differences with probes kept inside `[-1, 1]`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, p: &[f64], h: f64) -> Vec<f64> {
    let mut x = p.to_vec();
    (0..p.len())
        .map(|i| {
            let (a, b) = ((p[i] + h).min(1.0), (p[i] - h).max(-1.0));
            x[i] = a;
            let fa = f(&x);
            x[i] = b;
            let fb = f(&x);
            x[i] = p[i];
            (fa - fb) / (a - b)
        })
        .collect()
}

pub fn uniform(len: usize, bound: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Time-domain energy of every equalized path, `[s][m]`.
pub fn reference_path_energies(scene: &Scene, cascades: &[SosCascade], n_long: usize) -> Vec<Vec<f64>> {
    let offset = db_to_lin(scene.offset_db);
    (0..scene.n_sources())
        .map(|s| {
            (0..scene.n_mics())
                .map(|m| {
                    let mut h: Vec<f64> = scene.aligned_rir(s, m).iter().map(|v| v * offset).collect();
                    h.resize(n_long, 0.0);
                    cascades[s].filter(&h).iter().map(|v| v * v).sum()
                })
                .collect()
        })
        .collect()
}

/// Largest `|r_after - r_before| / r_before` with `r = e_ref / e_s` per mic.
pub fn max_ratio_deviation(before: &[Vec<f64>], after: &[Vec<f64>], reference: usize) -> f64 {
    let mut worst = 0.0f64;
    for s in 0..before.len() {
        for m in 0..before[s].len() {
            let rb = before[reference][m] / before[s][m];
            let ra = after[reference][m] / after[s][m];
            worst = worst.max(((ra - rb) / rb).abs());
        }
    }
    worst
}
