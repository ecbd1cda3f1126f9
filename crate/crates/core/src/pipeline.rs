//! End-to-end design runs shared by the command line and the C interface.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{dsm_optimize, fd_design, fir_ops_per_sample, sos_ops_per_sample, DsmConfig, FirEqualizer};
use crate::biasnet::{optimize, timed, HistoryEntry, Optimized, RunConfig};
use crate::error::{Error, Result};
use crate::filter::{Equalizer, SosCascade};
use crate::io;
use crate::loss::Objective;
use crate::metrics::{summary_csv, EvalReport, Evaluator, RunInfo};
use crate::scene::{load_scene, preprocess, synth_scene, Scene, SynthSpec};

/// Designer selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Biasnet,
    Dsm,
    Fd,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Biasnet => "biasnet",
            Method::Dsm => "dsm",
            Method::Fd => "fd",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "biasnet" => Ok(Method::Biasnet),
            "dsm" => Ok(Method::Dsm),
            "fd" => Ok(Method::Fd),
            other => Err(format!("unknown method '{other}' (expected biasnet, dsm or fd)")),
        }
    }
}

/// Where the impulse responses come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneSource {
    Manifest(PathBuf),
    Synth(SynthSpec),
}

impl SceneSource {
    pub fn load(&self) -> Result<Scene> {
        match self {
            SceneSource::Manifest(path) => load_scene(path),
            SceneSource::Synth(spec) => synth_scene(spec),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            SceneSource::Manifest(path) => format!("manifest:{}", path.display()),
            SceneSource::Synth(spec) => format!(
                "synth:S={},M={},fs={},decay_ms={},coloration_db={},seed={},band={}-{}",
                spec.sources, spec.mics, spec.fs, spec.decay_ms, spec.coloration_db, spec.seed, spec.f_low, spec.f_high
            ),
        }
    }
}

/// Effective settings of a design run; echoed into the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignConfig {
    pub scene: Option<SceneSource>,
    pub methods: Vec<Method>,
    pub fir_lens: Vec<usize>,
    pub beta: f64,
    pub biasnet: RunConfig,
    pub dsm: DsmConfig,
    pub gamma2_override: Option<f64>,
    pub sigma_db_factor: f64,
    pub timing: bool,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            scene: None,
            methods: vec![Method::Biasnet],
            fir_lens: vec![8192],
            beta: 1e-4,
            biasnet: RunConfig::default(),
            dsm: DsmConfig::default(),
            gamma2_override: None,
            sigma_db_factor: 10.0,
            timing: false,
        }
    }
}

/// Designed filters of one method.
#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    Iir {
        equalizers: Vec<Equalizer>,
        history: Vec<HistoryEntry>,
    },
    Fir {
        filters: Vec<FirEqualizer>,
    },
}

/// A finished design plus its evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub label: String,
    pub design: Design,
    pub report: EvalReport,
}

/// Stored form of IIR designs, self-contained for re-export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualizerFile {
    pub fs: f64,
    pub equalizers: Vec<Equalizer>,
}

/// A preprocessed scene with its objective and evaluator.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scene: Scene,
    pub objective: Objective,
    pub evaluator: Evaluator,
    pub description: String,
}

impl Prepared {
    pub fn new(raw: &Scene, description: String, gamma2_override: Option<f64>, sigma_db_factor: f64) -> Result<Self> {
        let scene = preprocess(raw)?;
        let mut objective = Objective::for_scene(&scene)?;
        if let Some(g2) = gamma2_override {
            objective = objective.with_gamma2(g2)?;
        }
        let evaluator = Evaluator::new(
            objective.simulator().clone(),
            objective.bands().clone(),
            objective.target().clone(),
            sigma_db_factor,
        )?;
        Ok(Prepared {
            scene,
            objective,
            evaluator,
            description,
        })
    }

    pub fn cascades(&self, eqs: &[Equalizer]) -> Result<Vec<SosCascade>> {
        eqs.iter().map(|e| e.cascade(self.scene.fs)).collect()
    }

    fn info(&self, method: String, ops: usize, iterations: usize, wall_s: Option<f64>, seed: u64) -> RunInfo {
        RunInfo {
            method,
            scene: self.description.clone(),
            ops_per_sample: ops,
            iterations,
            wall_s,
            seed,
        }
    }

    fn iir_outcome(&self, label: &str, opt: Optimized, wall: f64, config: &DesignConfig, seed: u64) -> Result<Outcome> {
        let ops = sos_ops_per_sample(self.objective.ranges().n_bands());
        let info = self.info(label.into(), ops, opt.iterations, config.timing.then_some(wall), seed);
        let report = self.evaluator.evaluate_cascades(&self.cascades(&opt.equalizers)?, info)?;
        Ok(Outcome {
            label: label.into(),
            design: Design::Iir {
                equalizers: opt.equalizers,
                history: opt.history,
            },
            report,
        })
    }

    /// Runs one designer; FD yields one outcome per FIR length.
    pub fn run(&self, method: Method, config: &DesignConfig) -> Result<Vec<Outcome>> {
        match method {
            Method::Biasnet => {
                let (opt, wall) = timed(|| optimize(&self.objective, &config.biasnet));
                Ok(vec![self.iir_outcome("biasnet", opt?, wall, config, config.biasnet.seed)?])
            }
            Method::Dsm => {
                let (opt, wall) = timed(|| dsm_optimize(&self.objective, &config.dsm));
                Ok(vec![self.iir_outcome("dsm", opt?, wall, config, config.dsm.seed)?])
            }
            Method::Fd => config
                .fir_lens
                .iter()
                .map(|&len| {
                    let (firs, wall) = timed(|| {
                        fd_design(
                            self.objective.simulator(),
                            self.objective.bands(),
                            self.objective.target(),
                            len,
                            config.beta,
                        )
                    });
                    let firs = firs?;
                    let label = format!("fd{len}");
                    let info = self.info(label.clone(), fir_ops_per_sample(len), 0, config.timing.then_some(wall), 0);
                    let report = self.evaluator.evaluate_firs(&firs, info)?;
                    Ok(Outcome {
                        label,
                        design: Design::Fir { filters: firs },
                        report,
                    })
                })
                .collect(),
        }
    }
}

/// Runs every configured method on the configured scene.
pub fn design(config: &DesignConfig) -> Result<(Prepared, Vec<Outcome>)> {
    let source = config
        .scene
        .as_ref()
        .ok_or_else(|| Error::domain("no scene given (manifest or synthetic spec)"))?;
    if config.methods.is_empty() {
        return Err(Error::domain("no design method selected"));
    }
    let prepared = Prepared::new(&source.load()?, source.describe(), config.gamma2_override, config.sigma_db_factor)?;
    let mut outcomes = Vec::new();
    for &m in &config.methods {
        outcomes.extend(prepared.run(m, config)?);
    }
    Ok((prepared, outcomes))
}

/// Writes a method's designed filters (coefficients or taps).
pub fn write_design(dir: &Path, fs: f64, design: &Design) -> Result<()> {
    match design {
        Design::Iir { equalizers, history } => {
            io::write_json(
                &dir.join("equalizers.json"),
                &EqualizerFile {
                    fs,
                    equalizers: equalizers.clone(),
                },
            )?;
            io::write_json(&dir.join("history.json"), history)?;
            export_coefficients(equalizers, fs, &dir.join("coeffs"))
        }
        Design::Fir { filters } => {
            for (s, f) in filters.iter().enumerate() {
                io::write_text(&dir.join("fir").join(io::fir_file_name(s)), &io::format_fir(f))?;
            }
            Ok(())
        }
    }
}

/// Writes one `.sos` file per source.
pub fn export_coefficients(eqs: &[Equalizer], fs: f64, dir: &Path) -> Result<()> {
    for (s, eq) in eqs.iter().enumerate() {
        io::write_text(&dir.join(io::sos_file_name(s)), &io::format_sos(&eq.cascade(fs)?))?;
    }
    Ok(())
}

/// Writes the complete run directory.
pub fn write_run(dir: &Path, config: &DesignConfig, prepared: &Prepared, outcomes: &[Outcome]) -> Result<()> {
    io::write_json(&dir.join("config.json"), config)?;
    let reports: Vec<EvalReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    io::write_json(&dir.join("report.json"), &reports)?;
    io::write_text(&dir.join("summary.csv"), &summary_csv(&reports))?;
    let centers = prepared.objective.bands().centers();
    let before = crate::metrics::curves_db(prepared.evaluator.unequalized_magnitudes());
    io::write_text(&dir.join("response_unequalized.csv"), &io::format_band_csv(&centers, &before))?;
    for o in outcomes {
        let sub = dir.join(&o.label);
        write_design(&sub, prepared.scene.fs, &o.design)?;
        io::write_json(&sub.join("report.json"), &o.report)?;
        io::write_text(
            &sub.join("response_equalized.csv"),
            &io::format_band_csv(&centers, &o.report.curves_after_db),
        )?;
    }
    Ok(())
}

/// Re-evaluates the exported files of one method directory.
pub fn evaluate_exported(prepared: &Prepared, dir: &Path, info: RunInfo) -> Result<EvalReport> {
    let n_sources = prepared.scene.n_sources();
    let n_bands = prepared.objective.ranges().n_bands();
    let coeffs = dir.join("coeffs");
    if coeffs.is_dir() {
        let cascades = (0..n_sources)
            .map(|s| {
                let path = coeffs.join(io::sos_file_name(s));
                let c = io::parse_sos(&io::read_text(&path)?, &path)?;
                if c.sections.len() != n_bands {
                    return Err(Error::shape(format!(
                        "{} holds {} sections, scene has {n_bands} bands",
                        path.display(),
                        c.sections.len()
                    )));
                }
                Ok(c)
            })
            .collect::<Result<Vec<_>>>()?;
        prepared.evaluator.evaluate_cascades(&cascades, info)
    } else {
        let fir = dir.join("fir");
        let firs = (0..n_sources)
            .map(|s| {
                let path = fir.join(io::fir_file_name(s));
                io::parse_fir(&io::read_text(&path)?, &path)
            })
            .collect::<Result<Vec<_>>>()?;
        prepared.evaluator.evaluate_firs(&firs, info)
    }
}
