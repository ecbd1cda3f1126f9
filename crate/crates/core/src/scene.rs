//! Acoustic scenes: impulse-response matrices, preprocessing and synthetic
//! scene generation.

use std::f64::consts::LN_10;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bands::{band_magnitudes, make_bands, BandSet};
use crate::error::{Error, Result};
use crate::filter::{FrequencyGrid, ParametricSection, SosCascade, MIN_DFT_SIZE};
use crate::sim::Simulator;

/// `S x M` impulse responses plus the preprocessing state used to simulate them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub fs: f64,
    /// Impulse responses indexed `[source][mic]`.
    pub rirs: Vec<Vec<Vec<f64>>>,
    /// Direct-sound arrival sample of each source at the reference mic.
    pub delays: Vec<usize>,
    /// Global gain applied to every path, in dB.
    pub offset_db: f64,
    pub f_low: f64,
    pub f_high: f64,
    pub reference_source: usize,
    pub reference_mic: usize,
}

impl Scene {
    pub fn new(fs: f64, rirs: Vec<Vec<Vec<f64>>>, f_low: f64, f_high: f64) -> Result<Self> {
        let scene = Scene {
            fs,
            delays: vec![0; rirs.len()],
            rirs,
            offset_db: 0.0,
            f_low,
            f_high,
            reference_source: 0,
            reference_mic: 0,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(Error::domain(format!("invalid sample rate {}", self.fs)));
        }
        if self.rirs.is_empty() || self.rirs[0].is_empty() {
            return Err(Error::shape("scene needs at least one source and one mic"));
        }
        let m = self.rirs[0].len();
        for (s, row) in self.rirs.iter().enumerate() {
            if row.len() != m {
                return Err(Error::shape(format!(
                    "source {s} has {} mics, expected {m}",
                    row.len()
                )));
            }
            if let Some(mic) = row.iter().position(|h| h.is_empty()) {
                return Err(Error::domain(format!("empty impulse response (source {s}, mic {mic})")));
            }
        }
        if !(self.f_low > 0.0 && self.f_low < self.f_high && self.f_high < self.fs / 2.0) {
            return Err(Error::domain(format!(
                "band limits [{}, {}] Hz must satisfy 0 < low < high < fs/2",
                self.f_low, self.f_high
            )));
        }
        if self.delays.len() != self.rirs.len() {
            return Err(Error::shape("one delay per source required"));
        }
        if self.reference_source >= self.rirs.len() || self.reference_mic >= m {
            return Err(Error::shape("reference source or mic out of range"));
        }
        Ok(())
    }

    pub fn n_sources(&self) -> usize {
        self.rirs.len()
    }

    pub fn n_mics(&self) -> usize {
        self.rirs[0].len()
    }

    /// Extra delay applied to source `s` so that all direct sounds reach the
    /// reference mic at the same sample.
    pub fn alignment_shift(&self, s: usize) -> usize {
        let latest = self.delays.iter().copied().max().unwrap_or(0);
        latest - self.delays[s]
    }

    pub fn aligned_rir(&self, s: usize, m: usize) -> Vec<f64> {
        let mut h = vec![0.0; self.alignment_shift(s)];
        h.extend_from_slice(&self.rirs[s][m]);
        h
    }

    pub fn aligned_len(&self) -> usize {
        (0..self.n_sources())
            .flat_map(|s| (0..self.n_mics()).map(move |m| (s, m)))
            .map(|(s, m)| self.alignment_shift(s) + self.rirs[s][m].len())
            .max()
            .unwrap_or(1)
    }

    /// Smallest power of two of at least twice the aligned length, minimum 8192.
    pub fn default_grid(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::for_length(self.aligned_len(), self.fs, MIN_DFT_SIZE)
    }

    pub fn bands(&self, grid: &FrequencyGrid) -> Result<BandSet> {
        make_bands(self.f_low, self.f_high, grid)
    }

    /// Returns a copy with every impulse response multiplied by `gain`.
    pub fn scaled(&self, gain: f64) -> Scene {
        let mut out = self.clone();
        out.rirs
            .iter_mut()
            .flatten()
            .flatten()
            .for_each(|v| *v *= gain);
        out
    }
}

/// Mean in-band level, in dB, of the per-mic summed responses.
fn mean_band_level_db(sim: &Simulator, bands: &BandSet) -> Result<f64> {
    let resp = sim.unequalized();
    let mut total = 0.0;
    let mut count = 0usize;
    for (m, spec) in resp.per_mic.iter().enumerate() {
        for (b, mag) in band_magnitudes(spec, bands).into_iter().enumerate() {
            if mag <= 0.0 {
                return Err(Error::SingularGradient { mic: m, band: b });
            }
            total += 20.0 * mag.log10();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Estimates per-source delays at the reference mic and the offset gain that
/// brings the mean in-band level of the summed response to 0 dB.
pub fn preprocess(scene: &Scene) -> Result<Scene> {
    scene.validate()?;
    for (s, row) in scene.rirs.iter().enumerate() {
        for (m, h) in row.iter().enumerate() {
            if h.iter().all(|v| *v == 0.0) {
                return Err(Error::domain(format!(
                    "all-zero impulse response (source {s}, mic {m})"
                )));
            }
        }
    }
    let mut out = scene.clone();
    out.offset_db = 0.0;
    out.delays = scene
        .rirs
        .iter()
        .map(|row| {
            let h = &row[scene.reference_mic];
            h.iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |best, (n, v)| {
                    if v.abs() > best.1 {
                        (n, v.abs())
                    } else {
                        best
                    }
                })
                .0
        })
        .collect();
    let sim = Simulator::for_scene(&out)?;
    let bands = out.bands(sim.grid())?;
    out.offset_db = -mean_band_level_db(&sim, &bands)?;
    Ok(out)
}

/// Parameters of a synthetic scene. Field names follow the JSON spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(rename = "S")]
    pub sources: usize,
    #[serde(rename = "M")]
    pub mics: usize,
    #[serde(default = "default_fs")]
    pub fs: f64,
    /// Time for the reverberant tail to decay by 60 dB.
    #[serde(default = "default_decay_ms")]
    pub decay_ms: f64,
    /// Peak gain magnitude of the coloration sections, in dB.
    #[serde(default = "default_coloration_db")]
    pub coloration_db: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_f_low")]
    pub f_low: f64,
    #[serde(default = "default_f_high")]
    pub f_high: f64,
    /// Tail energy relative to the direct sound, in dB.
    #[serde(default = "default_tail_db")]
    pub tail_db: f64,
}

fn default_fs() -> f64 {
    48_000.0
}
fn default_decay_ms() -> f64 {
    40.0
}
fn default_coloration_db() -> f64 {
    7.5
}
fn default_f_low() -> f64 {
    100.0
}
fn default_f_high() -> f64 {
    14_000.0
}
fn default_tail_db() -> f64 {
    -30.0
}

impl SynthSpec {
    pub fn new(sources: usize, mics: usize, seed: u64) -> Self {
        SynthSpec {
            sources,
            mics,
            fs: default_fs(),
            decay_ms: default_decay_ms(),
            coloration_db: default_coloration_db(),
            seed,
            f_low: default_f_low(),
            f_high: default_f_high(),
            tail_db: default_tail_db(),
        }
    }

    /// The 8-source, 2-mic room-like scene.
    pub fn room(seed: u64) -> Self {
        Self::new(8, 2, seed)
    }
}

/// Length of every synthetic impulse response. Alignment shifts stay below
/// 256 samples, so aligned responses fit the 8192-point grid.
pub const SYNTH_RIR_LEN: usize = 3840;
const MAX_BASE_DELAY: usize = 200;
const MIN_BASE_DELAY: usize = 24;
const MAX_MIC_SPREAD: usize = 24;

fn random_colorations<R: Rng>(
    rng: &mut R,
    count: usize,
    gain_lo: f64,
    gain_hi: f64,
    alternate: bool,
    spec: &SynthSpec,
) -> Vec<ParametricSection> {
    let (lo, hi) = ((spec.f_low * 1.25).ln(), (spec.f_high / 1.25).ln());
    let start_sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    (0..count)
        .map(|i| {
            // one center per equal log-width slot keeps the peaks apart
            let slot = (hi - lo) / count as f64;
            let fc = (lo + slot * (i as f64 + rng.gen_range(0.2..0.8))).exp();
            let sign = if alternate {
                if i % 2 == 0 {
                    start_sign
                } else {
                    -start_sign
                }
            } else if rng.gen_bool(0.5) {
                1.0
            } else {
                -1.0
            };
            ParametricSection {
                fc,
                q: rng.gen_range(0.8..2.5),
                gain_db: sign * spec.coloration_db * rng.gen_range(gain_lo..gain_hi),
                band: i,
            }
        })
        .collect()
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; the uniform draw is kept away from zero.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Deterministic synthetic scene: per path a delayed direct impulse with an
/// exponentially decaying noise tail, colored by a cascade of peaking
/// sections shared by all paths (alternating boost and cut at up to
/// `coloration_db`) and a milder per-source cascade.
pub fn synth_scene(spec: &SynthSpec) -> Result<Scene> {
    if spec.sources == 0 || spec.mics == 0 {
        return Err(Error::domain("synthetic scene needs S >= 1 and M >= 1"));
    }
    if !(spec.decay_ms >= 0.0 && spec.coloration_db >= 0.0 && spec.tail_db.is_finite()) {
        return Err(Error::domain("decay, coloration and tail level must be non-negative/finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let common = SosCascade {
        gain_db: 0.0,
        sections: random_colorations(&mut rng, 6, 0.7, 1.0, true, spec)
            .iter()
            .map(|s| s.coeffs(spec.fs))
            .collect::<Result<_>>()?,
    };
    let decay_len = (spec.decay_ms * spec.fs / 1000.0).round() as usize;
    let tau = decay_len as f64 / (3.0 * LN_10); // amplitude down 60 dB at decay_len
    let tail_gain = 10f64.powf(spec.tail_db / 20.0);

    let mut rirs = Vec::with_capacity(spec.sources);
    for _ in 0..spec.sources {
        let own = SosCascade {
            gain_db: 0.0,
            sections: random_colorations(&mut rng, 3, 0.2, 0.4, false, spec)
                .iter()
                .map(|s| s.coeffs(spec.fs))
                .collect::<Result<_>>()?,
        };
        let base = rng.gen_range(MIN_BASE_DELAY..=MAX_BASE_DELAY);
        let mut row = Vec::with_capacity(spec.mics);
        for m in 0..spec.mics {
            let delay = base + if m == 0 { 0 } else { rng.gen_range(0..=MAX_MIC_SPREAD) };
            let level = 10f64.powf(rng.gen_range(-1.5..1.5) / 20.0);
            let mut h = vec![0.0; SYNTH_RIR_LEN];
            h[delay] = level;
            if decay_len > 0 && tail_gain > 0.0 {
                let tail: Vec<f64> = (1..decay_len.min(SYNTH_RIR_LEN - delay))
                    .map(|n| gaussian(&mut rng) * (-(n as f64) / tau).exp())
                    .collect();
                let energy: f64 = tail.iter().map(|v| v * v).sum();
                if energy > 0.0 {
                    let scale = level * tail_gain / energy.sqrt();
                    for (n, v) in tail.iter().enumerate() {
                        h[delay + 1 + n] += v * scale;
                    }
                }
            }
            let h = common.filter(&own.filter(&h));
            row.push(h);
        }
        rirs.push(row);
    }
    Scene::new(spec.fs, rirs, spec.f_low, spec.f_high)
}

/// One row of a scene manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source: usize,
    pub mic: usize,
    pub path: PathBuf,
}

/// JSON manifest mapping (source, mic) pairs to mono WAV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub fs: f64,
    pub f_low: f64,
    pub f_high: f64,
    #[serde(default)]
    pub reference_source: usize,
    pub rirs: Vec<ManifestEntry>,
}

fn read_wav(path: &Path) -> Result<(f64, Vec<f64>)> {
    let wav = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::domain(format!(
            "{} has {} channels, expected mono",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav)?,
        hound::SampleFormat::Int => {
            let full = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav)?
        }
    };
    Ok((spec.sample_rate as f64, samples))
}

/// Loads a scene from a JSON manifest; paths resolve relative to the manifest.
pub fn load_scene(manifest_path: &Path) -> Result<Scene> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: SceneManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let n_sources = manifest.rirs.iter().map(|e| e.source + 1).max().unwrap_or(0);
    let n_mics = manifest.rirs.iter().map(|e| e.mic + 1).max().unwrap_or(0);
    if n_sources == 0 {
        return Err(Error::shape("manifest lists no impulse responses"));
    }
    let mut slots: Vec<Vec<Option<Vec<f64>>>> = vec![vec![None; n_mics]; n_sources];
    for entry in &manifest.rirs {
        let path = base.join(&entry.path);
        let (rate, samples) = read_wav(&path)?;
        if rate != manifest.fs {
            return Err(Error::domain(format!(
                "{} sampled at {rate} Hz, manifest says {} Hz",
                path.display(),
                manifest.fs
            )));
        }
        if samples.is_empty() {
            return Err(Error::domain(format!("{} holds no samples", path.display())));
        }
        slots[entry.source][entry.mic] = Some(samples);
    }
    let rirs = slots
        .into_iter()
        .enumerate()
        .map(|(s, row)| {
            row.into_iter()
                .enumerate()
                .map(|(m, h)| {
                    h.ok_or_else(|| Error::shape(format!("manifest misses source {s}, mic {m}")))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scene = Scene::new(manifest.fs, rirs, manifest.f_low, manifest.f_high)?;
    scene.reference_source = manifest.reference_source;
    scene.validate()?;
    Ok(scene)
}

/// Writes every impulse response as a 32-bit float WAV plus `manifest.json`.
pub fn save_scene(scene: &Scene, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: scene.fs.round() as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut entries = Vec::new();
    for (s, row) in scene.rirs.iter().enumerate() {
        for (m, h) in row.iter().enumerate() {
            let name = PathBuf::from(format!("rir_s{:02}_m{:02}.wav", s + 1, m + 1));
            let path = dir.join(&name);
            let wav = |source| Error::Wav {
                path: path.clone(),
                source,
            };
            let mut writer = hound::WavWriter::create(&path, spec).map_err(wav)?;
            for v in h {
                writer.write_sample(*v as f32).map_err(wav)?;
            }
            writer.finalize().map_err(wav)?;
            entries.push(ManifestEntry {
                source: s,
                mic: m,
                path: name,
            });
        }
    }
    let manifest = SceneManifest {
        fs: scene.fs,
        f_low: scene.f_low,
        f_high: scene.f_high,
        reference_source: scene.reference_source,
        rirs: entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
