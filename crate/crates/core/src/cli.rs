//! Command-line front end.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::io;
use crate::loss::gradcheck;
use crate::baselines::sos_ops_per_sample;
use crate::metrics::{EvalReport, RunInfo};
use crate::params::ParamClass;
use crate::pipeline::{design, evaluate_exported, export_coefficients, write_run, DesignConfig, EqualizerFile, Method, Prepared, SceneSource};
use crate::scene::{save_scene, synth_scene, SynthSpec};

/// Environment variable naming the default root for run directories.
pub const OUT_DIR_ENV: &str = "EQOPT_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "eqopt", version, about = "Parametric equalizer design for multi-source acoustic scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene (WAV files plus manifest).
    Synth(SynthArgs),
    /// Design equalizers and write a run directory.
    Design(DesignArgs),
    /// Recompute metrics from exported coefficient or tap files.
    Eval(EvalArgs),
    /// Compare the analytic gradient with finite differences.
    Gradcheck(GradcheckArgs),
    /// Re-derive coefficient files from a stored equalizers.json.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthetic scene spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory for the scene.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct SceneArgs {
    /// Scene manifest (JSON) referencing one mono WAV per source/mic pair.
    #[arg(long, conflicts_with = "synth")]
    pub scene: Option<PathBuf>,
    /// Synthetic scene spec (JSON) generated on the fly.
    #[arg(long)]
    pub synth: Option<PathBuf>,
}

impl SceneArgs {
    fn source(&self) -> anyhow::Result<Option<SceneSource>> {
        Ok(match (&self.scene, &self.synth) {
            (Some(p), _) => Some(SceneSource::Manifest(p.clone())),
            (None, Some(p)) => Some(SceneSource::Synth(io::read_json(p)?)),
            (None, None) => None,
        })
    }
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// JSON config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Designers to run (comma-separated or repeated).
    #[arg(long, value_delimiter = ',')]
    pub method: Vec<Method>,
    /// FIR lengths for the deconvolution designer.
    #[arg(long, value_delimiter = ',')]
    pub fir_len: Vec<usize>,
    /// Deconvolution regularization.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Direct-search relative perturbation bound.
    #[arg(long)]
    pub dsm_gamma: Option<f64>,
    /// Hidden layer sizes of the network (comma-separated; "none" for the bias-only model).
    #[arg(long)]
    pub layers: Option<String>,
    /// Iterations for the iterative designers.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Weight of the energy-ratio term instead of log2 S + log2 M.
    #[arg(long)]
    pub gamma2_override: Option<f64>,
    /// Use 20 log10 instead of 10 log10 for the sigma metric.
    #[arg(long)]
    pub sigma20: bool,
    /// Record wall-clock time in the report (makes runs non-reproducible).
    #[arg(long)]
    pub timing: bool,
    /// Run directory; defaults to a name under $EQOPT_OUT_DIR (or ./runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `design`; the scene comes from its config.json.
    #[arg(long, conflicts_with_all = ["scene", "synth", "coeffs"])]
    pub run: Option<PathBuf>,
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Method directory holding `coeffs/` or `fir/` (with --scene or --synth).
    #[arg(long)]
    pub coeffs: Option<PathBuf>,
    /// Write the reproduced reports here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Synthetic scene spec (JSON); defaults to a random 2x2 scene.
    #[arg(long)]
    pub synth: Option<PathBuf>,
    /// Seed of the random evaluation point (and of the default scene).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Finite-difference steps (comma-separated or repeated).
    #[arg(long, value_delimiter = ',', default_value = "1e-4")]
    pub step: Vec<f64>,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    /// Test hook: scale the analytic derivative of one parameter class.
    #[arg(long, hide = true)]
    pub corrupt: Option<ParamClass>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// equalizers.json written by `design`.
    #[arg(long)]
    pub equalizers: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Bad invocation: exit code 2.
    Usage(String),
    /// Any domain, data or I/O failure: exit code 1.
    Domain(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Domain(e)
    }
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::Domain(e.into())
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Domain(_) => 1,
        }
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Design(a) => cmd_design(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Export(a) => cmd_export(&a),
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => io::write_json(path, value)?,
        None => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<(), Failure> {
    let spec: SynthSpec = io::read_json(&a.spec)?;
    let scene = synth_scene(&spec)?;
    let manifest = save_scene(&scene, &a.out)?;
    io::write_json(&a.out.join("synth_spec.json"), &spec)?;
    println!("{}", manifest.display());
    Ok(())
}

fn parse_layers(s: &str) -> Result<Vec<usize>, Failure> {
    if s.trim() == "none" || s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Failure::Usage(format!("invalid layer size '{t}'")))
        })
        .collect()
}

/// Merges the config file (if any) with command-line flags.
pub fn design_config(a: &DesignArgs) -> Result<DesignConfig, Failure> {
    let mut cfg: DesignConfig = match &a.config {
        Some(p) => io::read_json(p)?,
        None => DesignConfig::default(),
    };
    if let Some(src) = a.scene.source()? {
        cfg.scene = Some(src);
    }
    if cfg.scene.is_none() {
        return Err(Failure::Usage("design needs --scene or --synth (or a scene in --config)".into()));
    }
    if !a.method.is_empty() {
        cfg.methods = a.method.clone();
    }
    if !a.fir_len.is_empty() {
        cfg.fir_lens = a.fir_len.clone();
    }
    if let Some(b) = a.beta {
        cfg.beta = b;
    }
    if let Some(g) = a.dsm_gamma {
        cfg.dsm.gamma = g;
    }
    if let Some(l) = &a.layers {
        cfg.biasnet.layers = parse_layers(l)?;
    }
    if let Some(n) = a.iters {
        cfg.biasnet.iterations = n;
        cfg.dsm.iterations = n;
    }
    if let Some(s) = a.seed {
        cfg.biasnet.seed = s;
        cfg.dsm.seed = s;
    }
    if let Some(lr) = a.lr {
        cfg.biasnet.lr = lr;
    }
    if a.gamma2_override.is_some() {
        cfg.gamma2_override = a.gamma2_override;
    }
    if a.sigma20 {
        cfg.sigma_db_factor = 20.0;
    }
    if a.timing {
        cfg.timing = true;
    }
    Ok(cfg)
}

fn default_run_dir(cfg: &DesignConfig) -> PathBuf {
    let root = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    let methods: Vec<&str> = cfg.methods.iter().map(|m| m.name()).collect();
    root.join(format!("design-{}-seed{}", methods.join("-"), cfg.biasnet.seed))
}

fn cmd_design(a: &DesignArgs) -> Result<(), Failure> {
    let cfg = design_config(a)?;
    let dir = a.out.clone().unwrap_or_else(|| default_run_dir(&cfg));
    let (prepared, outcomes) = design(&cfg)?;
    write_run(&dir, &cfg, &prepared, &outcomes)?;
    for o in &outcomes {
        eprintln!(
            "{}: mse {:.4e} (no EQ {:.4e}), sigma {:.4}",
            o.label, o.report.mse_avg, o.report.mse_unequalized, o.report.sigma_avg
        );
    }
    println!("{}", dir.display());
    Ok(())
}

/// Reproduced metrics of one method directory.
#[derive(Debug, Serialize)]
struct EvalOutcome {
    report: EvalReport,
    /// Largest absolute difference to the stored MSE/sigma values, if known.
    max_abs_diff: Option<f64>,
}

fn metric_diff(a: &EvalReport, b: &EvalReport) -> f64 {
    let pairs = a
        .mse_per_mic
        .iter()
        .zip(&b.mse_per_mic)
        .chain(a.sigma_per_mic.iter().zip(&b.sigma_per_mic))
        .chain([(&a.mse_avg, &b.mse_avg), (&a.sigma_avg, &b.sigma_avg)]);
    pairs.map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Tolerance of the eval round trip.
pub const EVAL_TOLERANCE: f64 = 1e-12;

fn cmd_eval(a: &EvalArgs) -> Result<(), Failure> {
    if let Some(run) = &a.run {
        let cfg: DesignConfig = io::read_json(&run.join("config.json"))?;
        let stored: Vec<EvalReport> = io::read_json(&run.join("report.json"))?;
        let source = cfg.scene.clone().context("run config has no scene")?;
        let prepared = Prepared::new(&source.load()?, source.describe(), cfg.gamma2_override, cfg.sigma_db_factor)?;
        let mut results = Vec::new();
        for s in &stored {
            let report = evaluate_exported(&prepared, &run.join(&s.method), RunInfo::from_report(s))?;
            let diff = metric_diff(&report, s);
            results.push(EvalOutcome {
                report,
                max_abs_diff: Some(diff),
            });
        }
        emit(&results, a.out.as_deref())?;
        if let Some(bad) = results.iter().find(|r| r.max_abs_diff.unwrap() > EVAL_TOLERANCE) {
            return Err(Failure::Domain(anyhow::anyhow!(
                "{}: reproduced metrics differ from stored report by {:e}",
                bad.report.method,
                bad.max_abs_diff.unwrap()
            )));
        }
        return Ok(());
    }
    let Some(dir) = &a.coeffs else {
        return Err(Failure::Usage("eval needs --run, or --coeffs with --scene/--synth".into()));
    };
    let Some(source) = a.scene.source()? else {
        return Err(Failure::Usage("eval --coeffs needs --scene or --synth".into()));
    };
    let prepared = Prepared::new(&source.load()?, source.describe(), None, 10.0)?;
    let method = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let n_bands = prepared.objective.ranges().n_bands();
    let ops = if dir.join("coeffs").is_dir() { sos_ops_per_sample(n_bands) } else { 0 };
    let info = RunInfo {
        method,
        scene: prepared.description.clone(),
        ops_per_sample: ops,
        iterations: 0,
        wall_s: None,
        seed: 0,
    };
    let report = evaluate_exported(&prepared, dir, info)?;
    emit(
        &vec![EvalOutcome {
            report,
            max_abs_diff: None,
        }],
        a.out.as_deref(),
    )?;
    Ok(())
}

/// JSON output of the gradcheck subcommand.
#[derive(Debug, Serialize)]
struct GradcheckOutput {
    scene: SynthSpec,
    seed: u64,
    n_params: usize,
    pass: bool,
    reports: Vec<crate::loss::GradcheckReport>,
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<(), Failure> {
    let spec: SynthSpec = match &a.synth {
        Some(p) => io::read_json(p)?,
        None => {
            let mut s = SynthSpec::new(2, 2, a.seed);
            s.f_low = 500.0;
            s.f_high = 4000.0;
            s
        }
    };
    if a.step.iter().any(|s| !(*s > 0.0)) {
        return Err(Failure::Usage("finite-difference steps must be positive".into()));
    }
    let prepared = Prepared::new(&synth_scene(&spec)?, String::new(), None, 10.0)?;
    let mut obj = prepared.objective;
    if let Some(class) = a.corrupt {
        obj = obj.with_corrupted_derivative(class, 1.01);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let p: Vec<f64> = (0..obj.param_len()).map(|_| rng.gen_range(-0.9..0.9)).collect();
    let reports = a
        .step
        .iter()
        .map(|&h| gradcheck(&obj, &p, h, a.tol))
        .collect::<crate::Result<Vec<_>>>()?;
    let pass = reports.iter().all(|r| r.pass);
    let out = GradcheckOutput {
        scene: spec,
        seed: a.seed,
        n_params: p.len(),
        pass,
        reports,
    };
    emit(&out, a.out.as_deref())?;
    if !pass {
        let failing: Vec<String> = out
            .reports
            .iter()
            .flat_map(|r| r.failing.iter().map(|c| c.name().to_string()))
            .collect();
        return Err(Failure::Domain(anyhow::anyhow!(
            "gradient check failed for parameter class(es): {}",
            failing.join(", ")
        )));
    }
    Ok(())
}

fn cmd_export(a: &ExportArgs) -> Result<(), Failure> {
    let file: EqualizerFile = io::read_json(&a.equalizers)?;
    if file.equalizers.is_empty() {
        return Err(Failure::Domain(anyhow::anyhow!("equalizers file lists no equalizers")));
    }
    export_coefficients(&file.equalizers, file.fs, &a.out)?;
    println!("{}", a.out.display());
    Ok(())
}
