//! Peaking biquad design and exact evaluation of equalizer cascades.
//!
//! Sections use the bilinear-transform peaking prototype with
//! `K = tan(pi * fc / fs)`. The boost branch (gain >= 0 dB) carries the
//! linear gain in the numerator, the cut branch carries its reciprocal in the
//! denominator, so `design(fc, q, +g)` and `design(fc, q, -g)` are exact
//! reciprocals and both collapse to the identity at 0 dB.

use std::f64::consts::{LN_10, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest DFT size used for scene simulation.
pub const MIN_DFT_SIZE: usize = 8192;

/// Converts a gain in dB to a linear amplitude factor.
#[inline]
pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// One peaking second-order section, in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParametricSection {
    /// Center frequency in Hz.
    pub fc: f64,
    /// Quality factor.
    pub q: f64,
    /// Gain at the center frequency in dB.
    pub gain_db: f64,
    /// Index of the frequency band whose range bounds `fc`.
    pub band: usize,
}

impl ParametricSection {
    pub fn coeffs(&self, fs: f64) -> Result<BiquadCoeffs> {
        design_peaking_section(self.fc, self.q, self.gain_db, fs)
    }
}

/// Transfer-function coefficients of a biquad, normalized so `a0 == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiquadCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
}

impl BiquadCoeffs {
    pub const IDENTITY: BiquadCoeffs = BiquadCoeffs {
        b0: 1.0,
        b1: 0.0,
        b2: 0.0,
        a0: 1.0,
        a1: 0.0,
        a2: 0.0,
    };

    /// Largest pole modulus of `1 + a1 z^-1 + a2 z^-2` (after normalizing by `a0`).
    pub fn max_pole_modulus(&self) -> f64 {
        let a1 = self.a1 / self.a0;
        let a2 = self.a2 / self.a0;
        let disc = a1 * a1 - 4.0 * a2;
        if disc < 0.0 {
            a2.sqrt()
        } else {
            let r = disc.sqrt();
            ((-a1 + r) / 2.0).abs().max(((-a1 - r) / 2.0).abs())
        }
    }

    /// Evaluates `B(z) / A(z)` at `z^-1 = z1`, `z^-2 = z2`.
    #[inline]
    pub fn eval(&self, z1: Complex64, z2: Complex64) -> Complex64 {
        let num = z1 * self.b1 + z2 * self.b2 + self.b0;
        let den = z1 * self.a1 + z2 * self.a2 + self.a0;
        num / den
    }
}

/// Partial derivatives of the normalized coefficients `[b0, b1, b2, a1, a2]`
/// with respect to each physical section parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoeffJacobian {
    pub d_fc: [f64; 5],
    pub d_q: [f64; 5],
    pub d_gain_db: [f64; 5],
}

/// A polynomial term of the design equations with its partials in
/// `K`, `Q` and the branch gain variable (`V0` on boost, `1/V0` on cut).
#[derive(Clone, Copy)]
struct Term {
    v: f64,
    dk: f64,
    dq: f64,
    dx: f64,
}

fn check_section(fc: f64, q: f64, gain_db: f64, fs: f64) -> Result<()> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::domain(format!("sample rate must be positive, got {fs}")));
    }
    if !(fc.is_finite() && fc > 0.0 && fc < fs / 2.0) {
        return Err(Error::domain(format!(
            "center frequency {fc} Hz outside (0, {}) Hz",
            fs / 2.0
        )));
    }
    if !(q.is_finite() && q > 0.0) {
        return Err(Error::domain(format!("quality factor must be positive, got {q}")));
    }
    if !gain_db.is_finite() {
        return Err(Error::domain(format!("gain must be finite, got {gain_db}")));
    }
    Ok(())
}

/// Designs a peaking section and returns its coefficients together with the
/// closed-form partials of every coefficient.
pub fn design_peaking_with_jacobian(
    fc: f64,
    q: f64,
    gain_db: f64,
    fs: f64,
) -> Result<(BiquadCoeffs, CoeffJacobian)> {
    check_section(fc, q, gain_db, fs)?;
    let k = (PI * fc / fs).tan();
    let dk_dfc = PI / fs * (1.0 + k * k);
    let boost = gain_db >= 0.0;
    // x is V0 on the boost branch and 1/V0 on the cut branch; both are >= 1.
    let x = db_to_lin(gain_db.abs());
    let dx_dg = if boost { x * LN_10 / 20.0 } else { -x * LN_10 / 20.0 };
    let kq = k / q;
    let k2 = k * k;
    let q2 = q * q;

    let mid = Term {
        v: 2.0 * (k2 - 1.0),
        dk: 4.0 * k,
        dq: 0.0,
        dx: 0.0,
    };
    let plain_hi = Term {
        v: 1.0 + kq + k2,
        dk: 1.0 / q + 2.0 * k,
        dq: -k / q2,
        dx: 0.0,
    };
    let plain_lo = Term {
        v: 1.0 - kq + k2,
        dk: -1.0 / q + 2.0 * k,
        dq: k / q2,
        dx: 0.0,
    };
    let scaled_hi = Term {
        v: 1.0 + x * kq + k2,
        dk: x / q + 2.0 * k,
        dq: -x * k / q2,
        dx: kq,
    };
    let scaled_lo = Term {
        v: 1.0 - x * kq + k2,
        dk: -x / q + 2.0 * k,
        dq: x * k / q2,
        dx: -kq,
    };

    let (raw, den) = if boost {
        ([scaled_hi, mid, scaled_lo, mid, plain_lo], plain_hi)
    } else {
        ([plain_hi, mid, plain_lo, mid, scaled_lo], scaled_hi)
    };

    let mut c = [0.0; 5];
    let mut jac = CoeffJacobian {
        d_fc: [0.0; 5],
        d_q: [0.0; 5],
        d_gain_db: [0.0; 5],
    };
    for (i, t) in raw.iter().enumerate() {
        let ci = t.v / den.v;
        c[i] = ci;
        jac.d_fc[i] = (t.dk - ci * den.dk) / den.v * dk_dfc;
        jac.d_q[i] = (t.dq - ci * den.dq) / den.v;
        jac.d_gain_db[i] = (t.dx - ci * den.dx) / den.v * dx_dg;
    }
    let coeffs = BiquadCoeffs {
        b0: c[0],
        b1: c[1],
        b2: c[2],
        a0: 1.0,
        a1: c[3],
        a2: c[4],
    };
    Ok((coeffs, jac))
}

/// Peaking biquad with gain `gain_db` at `fc`, bandwidth set by `q`.
pub fn design_peaking_section(fc: f64, q: f64, gain_db: f64, fs: f64) -> Result<BiquadCoeffs> {
    design_peaking_with_jacobian(fc, q, gain_db, fs).map(|(c, _)| c)
}

/// DFT size and sample rate shared by every spectrum of a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    size: usize,
    fs: f64,
}

impl FrequencyGrid {
    pub fn new(size: usize, fs: f64) -> Result<Self> {
        if size < 4 || !size.is_power_of_two() {
            return Err(Error::domain(format!(
                "DFT size must be a power of two >= 4, got {size}"
            )));
        }
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::domain(format!("sample rate must be positive, got {fs}")));
        }
        Ok(FrequencyGrid { size, fs })
    }

    /// Smallest power of two holding twice `len` samples, never below `min_size`.
    pub fn for_length(len: usize, fs: f64, min_size: usize) -> Result<Self> {
        let size = (2 * len.max(1)).next_power_of_two().max(min_size);
        Self::new(size, fs)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    /// Number of non-negative frequency bins, `N/2 + 1`.
    pub fn bins(&self) -> usize {
        self.size / 2 + 1
    }

    pub fn bin_width(&self) -> f64 {
        self.fs / self.size as f64
    }

    pub fn frequency(&self, k: usize) -> f64 {
        k as f64 * self.bin_width()
    }

    /// `(e^{-j w_k}, e^{-j 2 w_k})` for every bin, `w_k = 2 pi k / N`.
    pub fn unit_delays(&self) -> Vec<(Complex64, Complex64)> {
        (0..self.bins())
            .map(|k| {
                let w = 2.0 * PI * k as f64 / self.size as f64;
                (Complex64::from_polar(1.0, -w), Complex64::from_polar(1.0, -2.0 * w))
            })
            .collect()
    }
}

/// Frequency response `B(k) / A(k)` of one section on the non-negative bins.
pub fn section_response(c: &BiquadCoeffs, grid: &FrequencyGrid) -> Vec<Complex64> {
    grid.unit_delays()
        .into_iter()
        .map(|(z1, z2)| c.eval(z1, z2))
        .collect()
}

/// Channel gain plus an ordered list of peaking sections for one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equalizer {
    pub gain_db: f64,
    pub sections: Vec<ParametricSection>,
}

impl Equalizer {
    pub fn unity() -> Self {
        Equalizer {
            gain_db: 0.0,
            sections: Vec::new(),
        }
    }

    pub fn cascade(&self, fs: f64) -> Result<SosCascade> {
        let sections = self
            .sections
            .iter()
            .map(|s| s.coeffs(fs))
            .collect::<Result<Vec<_>>>()?;
        Ok(SosCascade {
            gain_db: self.gain_db,
            sections,
        })
    }
}

/// A realized equalizer: channel gain and designed biquad coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SosCascade {
    pub gain_db: f64,
    pub sections: Vec<BiquadCoeffs>,
}

impl SosCascade {
    pub fn response(&self, grid: &FrequencyGrid) -> Vec<Complex64> {
        let gain = db_to_lin(self.gain_db);
        grid.unit_delays()
            .into_iter()
            .map(|(z1, z2)| {
                self.sections
                    .iter()
                    .fold(Complex64::new(gain, 0.0), |acc, c| acc * c.eval(z1, z2))
            })
            .collect()
    }

    /// Runs the cascade as direct-form I difference equations, then applies
    /// the channel gain.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for c in &self.sections {
            let (b0, b1, b2) = (c.b0 / c.a0, c.b1 / c.a0, c.b2 / c.a0);
            let (a1, a2) = (c.a1 / c.a0, c.a2 / c.a0);
            let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
            for v in y.iter_mut() {
                let xn = *v;
                let yn = b0 * xn + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
                x2 = x1;
                x1 = xn;
                y2 = y1;
                y1 = yn;
                *v = yn;
            }
        }
        let gain = db_to_lin(self.gain_db);
        y.iter_mut().for_each(|v| *v *= gain);
        y
    }
}

/// Complex response of an equalizer on the non-negative bins of `grid`.
pub fn equalizer_response(eq: &Equalizer, grid: &FrequencyGrid) -> Result<Vec<Complex64>> {
    Ok(eq.cascade(grid.fs())?.response(grid))
}

/// Time-domain filtering through the equalizer's difference equations.
pub fn filter_time_domain(eq: &Equalizer, fs: f64, x: &[f64]) -> Result<Vec<f64>> {
    Ok(eq.cascade(fs)?.filter(x))
}
