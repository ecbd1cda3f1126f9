//! Normalized parameter vectors and their affine map onto physical ranges.
//!
//! Layout: for each source a block of `(fc, Q, gain_dB)` triplets, one per
//! band, followed by the channel gain in dB. Every component lives in
//! `[-1, 1]`; a component `p` maps to `q = (hi - lo) / 2 * p + (hi + lo) / 2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{Equalizer, ParametricSection};

/// Which physical quantity a normalized component controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamClass {
    Fc,
    Q,
    V0,
    Vs,
}

impl ParamClass {
    pub const ALL: [ParamClass; 4] = [ParamClass::Fc, ParamClass::Q, ParamClass::V0, ParamClass::Vs];

    pub fn name(self) -> &'static str {
        match self {
            ParamClass::Fc => "fc",
            ParamClass::Q => "q",
            ParamClass::V0 => "v0",
            ParamClass::Vs => "vs",
        }
    }
}

impl std::str::FromStr for ParamClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "fc" => Ok(ParamClass::Fc),
            "q" => Ok(ParamClass::Q),
            "v0" => Ok(ParamClass::V0),
            "vs" => Ok(ParamClass::Vs),
            other => Err(format!("unknown parameter class '{other}'")),
        }
    }
}

/// A closed interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::domain(format!("invalid range [{lo}, {hi}]")));
        }
        Ok(Range { lo, hi })
    }

    #[inline]
    pub fn half_width(&self) -> f64 {
        (self.hi - self.lo) / 2.0
    }

    #[inline]
    pub fn mid(&self) -> f64 {
        (self.hi + self.lo) / 2.0
    }

    #[inline]
    pub fn denormalize(&self, p: f64) -> f64 {
        self.half_width() * p + self.mid()
    }

    #[inline]
    pub fn normalize(&self, q: f64) -> f64 {
        (q - self.mid()) / self.half_width()
    }

    #[inline]
    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.lo, self.hi)
    }
}

/// Allowed parameter ranges; center-frequency ranges are per band and shared
/// across sources, the others are global.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub fc_bands: Vec<Range>,
    pub q: Range,
    pub gain_db: Range,
    pub channel_gain_db: Range,
}

impl ParamRanges {
    /// Default ranges: Q in [0.05, 5], section gain in [-10, 10] dB and
    /// channel gain in [-20, 20] dB.
    pub fn with_bands(fc_bands: Vec<Range>) -> Result<Self> {
        let r = ParamRanges {
            fc_bands,
            q: Range { lo: 0.05, hi: 5.0 },
            gain_db: Range { lo: -10.0, hi: 10.0 },
            channel_gain_db: Range { lo: -20.0, hi: 20.0 },
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        for r in [self.q, self.gain_db, self.channel_gain_db]
            .iter()
            .chain(self.fc_bands.iter())
        {
            Range::new(r.lo, r.hi)?;
        }
        if self.q.lo <= 0.0 {
            return Err(Error::domain("Q range must be positive"));
        }
        for w in self.fc_bands.windows(2) {
            if w[1].lo < w[0].hi {
                return Err(Error::domain(format!(
                    "center-frequency bands overlap or are unsorted: [{}, {}] then [{}, {}]",
                    w[0].lo, w[0].hi, w[1].lo, w[1].hi
                )));
            }
        }
        Ok(())
    }

    pub fn n_bands(&self) -> usize {
        self.fc_bands.len()
    }

    /// Normalized components per source: three per band plus the channel gain.
    pub fn block_len(&self) -> usize {
        3 * self.n_bands() + 1
    }

    pub fn param_len(&self, n_sources: usize) -> usize {
        self.block_len() * n_sources
    }

    /// Physical range and class of normalized component `i`.
    pub fn component(&self, i: usize) -> (ParamClass, Range) {
        let j = i % self.block_len();
        if j == 3 * self.n_bands() {
            return (ParamClass::Vs, self.channel_gain_db);
        }
        match j % 3 {
            0 => (ParamClass::Fc, self.fc_bands[j / 3]),
            1 => (ParamClass::Q, self.q),
            _ => (ParamClass::V0, self.gain_db),
        }
    }

    pub fn class_of(&self, i: usize) -> ParamClass {
        self.component(i).0
    }

    /// `dq/dp` for every component, i.e. the half width of its range.
    pub fn jacobian_diag(&self, n_sources: usize) -> Vec<f64> {
        (0..self.param_len(n_sources))
            .map(|i| self.component(i).1.half_width())
            .collect()
    }
}

/// Maps a normalized vector onto one equalizer per source.
pub fn denormalize(p: &[f64], ranges: &ParamRanges) -> Result<Vec<Equalizer>> {
    let block = ranges.block_len();
    if p.is_empty() || p.len() % block != 0 {
        return Err(Error::shape(format!(
            "parameter vector length {} is not a multiple of {block}",
            p.len()
        )));
    }
    if let Some((i, v)) = p
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && (-1.0..=1.0).contains(*v)))
    {
        return Err(Error::domain(format!(
            "normalized parameter {i} = {v} outside [-1, 1]"
        )));
    }
    let nb = ranges.n_bands();
    Ok(p.chunks(block)
        .map(|chunk| Equalizer {
            gain_db: ranges.channel_gain_db.denormalize(chunk[3 * nb]),
            sections: (0..nb)
                .map(|b| ParametricSection {
                    fc: ranges.fc_bands[b].denormalize(chunk[3 * b]),
                    q: ranges.q.denormalize(chunk[3 * b + 1]),
                    gain_db: ranges.gain_db.denormalize(chunk[3 * b + 2]),
                    band: b,
                })
                .collect(),
        })
        .collect())
}

/// Inverse of [`denormalize`]; values outside a range map outside `[-1, 1]`.
pub fn normalize(eqs: &[Equalizer], ranges: &ParamRanges) -> Result<Vec<f64>> {
    let nb = ranges.n_bands();
    let mut p = Vec::with_capacity(ranges.param_len(eqs.len()));
    for (s, eq) in eqs.iter().enumerate() {
        if eq.sections.len() != nb {
            return Err(Error::shape(format!(
                "source {s} has {} sections, expected {nb}",
                eq.sections.len()
            )));
        }
        for (b, sec) in eq.sections.iter().enumerate() {
            p.push(ranges.fc_bands[b].normalize(sec.fc));
            p.push(ranges.q.normalize(sec.q));
            p.push(ranges.gain_db.normalize(sec.gain_db));
        }
        p.push(ranges.channel_gain_db.normalize(eq.gain_db));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ranges() -> ParamRanges {
        ParamRanges::with_bands(vec![
            Range::new(100.0, 126.0).unwrap(),
            Range::new(126.0, 159.0).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn endpoints_and_midpoint() {
        let r = ranges();
        let mut p = vec![0.0; r.param_len(1)];
        p[0] = -1.0;
        p[1] = 1.0;
        let eqs = denormalize(&p, &r).unwrap();
        assert_eq!(eqs[0].sections[0].fc, 100.0);
        assert_eq!(eqs[0].sections[0].q, 5.0);
        p[0] = 0.0;
        let eqs = denormalize(&p, &r).unwrap();
        assert_eq!(eqs[0].sections[0].fc, 113.0);
        assert_eq!(eqs[0].sections[0].gain_db, 0.0);
        assert_eq!(eqs[0].gain_db, 0.0);
    }

    #[test]
    fn rejects_out_of_range() {
        let r = ranges();
        let mut p = vec![0.0; r.param_len(2)];
        p[5] = 1.0 + 1e-12;
        assert!(matches!(denormalize(&p, &r), Err(Error::Domain(_))));
        assert!(matches!(denormalize(&p[..5], &r), Err(Error::Shape(_))));
    }

    #[test]
    fn overlapping_bands_rejected() {
        let bad = ParamRanges::with_bands(vec![
            Range::new(100.0, 130.0).unwrap(),
            Range::new(120.0, 160.0).unwrap(),
        ]);
        assert!(bad.is_err());
    }

    #[test]
    fn layout_classes() {
        let r = ranges();
        let classes: Vec<_> = (0..r.param_len(1)).map(|i| r.class_of(i)).collect();
        use ParamClass::*;
        assert_eq!(classes, vec![Fc, Q, V0, Fc, Q, V0, Vs]);
    }

    proptest! {
        #[test]
        fn denormalize_is_affine(p in prop::collection::vec(-1.0f64..=1.0, 14)) {
            let r = ranges();
            let neg: Vec<f64> = p.iter().map(|v| -v).collect();
            let flat = |eqs: Vec<Equalizer>| -> Vec<f64> {
                eqs.iter().flat_map(|e| {
                    e.sections.iter().flat_map(|s| [s.fc, s.q, s.gain_db]).chain([e.gain_db]).collect::<Vec<_>>()
                }).collect()
            };
            let a = flat(denormalize(&p, &r).unwrap());
            let b = flat(denormalize(&neg, &r).unwrap());
            let z = flat(denormalize(&vec![0.0; 14], &r).unwrap());
            for i in 0..a.len() {
                prop_assert!((a[i] + b[i] - 2.0 * z[i]).abs() <= 1e-12 * z[i].abs().max(1.0));
            }
            let back = normalize(&denormalize(&p, &r).unwrap(), &r).unwrap();
            for (x, y) in back.iter().zip(&p) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
