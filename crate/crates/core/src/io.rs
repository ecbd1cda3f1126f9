//! Text formats: coefficient files, FIR tap files, band-response CSVs and
//! JSON helpers.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::baselines::FirEqualizer;
use crate::error::{Error, Result};
use crate::filter::{BiquadCoeffs, SosCascade};

/// `gain_dB <Vs>` header followed by one `b0 b1 b2 a0 a1 a2` line per section.
/// Numbers use the shortest representation that parses back exactly.
pub fn format_sos(cascade: &SosCascade) -> String {
    let mut out = format!("gain_dB {}\n", cascade.gain_db);
    for c in &cascade.sections {
        out.push_str(&format!("{} {} {} {} {} {}\n", c.b0, c.b1, c.b2, c.a0, c.a1, c.a2));
    }
    out
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("not a number: '{tok}'")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value '{tok}'")));
    }
    Ok(v)
}

pub fn parse_sos(text: &str, path: &Path) -> Result<SosCascade> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let mut head = header.split_whitespace();
    if head.next() != Some("gain_dB") {
        return Err(parse_err(path, 1, "expected 'gain_dB <value>' header"));
    }
    let gain_db = parse_f64(path, 1, head.next().ok_or_else(|| parse_err(path, 1, "missing gain"))?)?;
    if head.next().is_some() {
        return Err(parse_err(path, 1, "trailing tokens after gain"));
    }
    let mut sections = Vec::new();
    for (i, line) in lines {
        let vals = line
            .split_whitespace()
            .map(|t| parse_f64(path, i + 1, t))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != 6 {
            return Err(parse_err(
                path,
                i + 1,
                format!("expected 6 coefficients, found {}", vals.len()),
            ));
        }
        if vals[3] == 0.0 {
            return Err(parse_err(path, i + 1, "a0 must be nonzero"));
        }
        sections.push(BiquadCoeffs {
            b0: vals[0],
            b1: vals[1],
            b2: vals[2],
            a0: vals[3],
            a1: vals[4],
            a2: vals[5],
        });
    }
    Ok(SosCascade { gain_db, sections })
}

/// One tap per line.
pub fn format_fir(fir: &FirEqualizer) -> String {
    fir.taps.iter().map(|t| format!("{t}\n")).collect()
}

pub fn parse_fir(text: &str, path: &Path) -> Result<FirEqualizer> {
    let taps = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_f64(path, i + 1, l.trim()))
        .collect::<Result<Vec<_>>>()?;
    if taps.is_empty() {
        return Err(parse_err(path, 1, "no taps"));
    }
    Ok(FirEqualizer { taps })
}

/// `band_center_hz,mag_db_mic_1,...` with one row per band.
pub fn format_band_csv(centers: &[f64], curves_db: &[Vec<f64>]) -> String {
    let mut out = String::from("band_center_hz");
    for m in 0..curves_db.len() {
        out.push_str(&format!(",mag_db_mic_{}", m + 1));
    }
    out.push('\n');
    for (b, c) in centers.iter().enumerate() {
        out.push_str(&c.to_string());
        for curve in curves_db {
            out.push_str(&format!(",{}", curve[b]));
        }
        out.push('\n');
    }
    out
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn sos_file_name(source: usize) -> String {
    format!("source_{:02}.sos", source + 1)
}

pub fn fir_file_name(source: usize) -> String {
    format!("source_{:02}.fir", source + 1)
}
