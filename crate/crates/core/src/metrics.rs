//! Band-averaged error metrics, energy-balance checks and run reports.

use serde::{Deserialize, Serialize};

use crate::bands::{band_magnitudes, BandSet};
use crate::baselines::{fir_equalized_response, FirEqualizer};
use crate::error::{Error, Result};
use crate::filter::SosCascade;
use crate::loss::{EnergyRatios, TargetResponse};
use crate::sim::{EqualizedResponse, Simulator};

/// Per-band signed errors `|H_m| - |H_des|`, indexed `[m][b]`.
pub fn band_errors(mags: &[Vec<f64>], target: &[f64]) -> Vec<Vec<f64>> {
    mags.iter()
        .map(|bm| bm.iter().zip(target).map(|(a, d)| a - d).collect())
        .collect()
}

/// Mean squared band error per mic (divided by the band count) and its mean
/// over mics.
pub fn mse(mags: &[Vec<f64>], target: &[f64]) -> Result<(Vec<f64>, f64)> {
    if target.is_empty() || mags.is_empty() {
        return Err(Error::domain("MSE needs at least one band and one mic"));
    }
    if mags.iter().any(|m| m.len() != target.len()) {
        return Err(Error::shape("band count differs between response and target"));
    }
    let per_mic: Vec<f64> = band_errors(mags, target)
        .iter()
        .map(|e| e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64)
        .collect();
    let avg = per_mic.iter().sum::<f64>() / per_mic.len() as f64;
    Ok((per_mic, avg))
}

/// Standard deviation of `factor * log10 |H_b|` around its mean level, per
/// mic, and the mean over mics. `factor` is 10 or 20.
pub fn sigma(mags: &[Vec<f64>], factor: f64) -> Result<(Vec<f64>, f64)> {
    if mags.is_empty() || mags.iter().any(Vec::is_empty) {
        return Err(Error::domain("sigma needs at least one band and one mic"));
    }
    let mut per_mic = Vec::with_capacity(mags.len());
    for (m, bm) in mags.iter().enumerate() {
        if let Some(b) = bm.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::SingularGradient { mic: m, band: b });
        }
        let db: Vec<f64> = bm.iter().map(|v| factor * v.log10()).collect();
        let mean = db.iter().sum::<f64>() / db.len() as f64;
        let var = db.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / db.len() as f64;
        per_mic.push(var.sqrt());
    }
    let avg = per_mic.iter().sum::<f64>() / per_mic.len() as f64;
    Ok((per_mic, avg))
}

/// `20 log10` band curves, `[m][b]`.
pub fn curves_db(mags: &[Vec<f64>]) -> Vec<Vec<f64>> {
    mags.iter()
        .map(|bm| bm.iter().map(|v| 20.0 * v.log10()).collect())
        .collect()
}

/// Evaluation of one equalized scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub scene: String,
    pub mse_per_mic: Vec<f64>,
    pub mse_avg: f64,
    pub sigma_per_mic: Vec<f64>,
    pub sigma_avg: f64,
    /// Multiplier of `log10` used for sigma (10 or 20).
    pub sigma_db_factor: f64,
    pub mse_unequalized: f64,
    pub sigma_unequalized: f64,
    pub ops_per_sample: usize,
    pub iterations: usize,
    pub wall_s: Option<f64>,
    pub seed: u64,
    /// Largest `|r_hat - r| / r` over all source/mic pairs.
    pub max_energy_ratio_deviation: f64,
    pub energy_ratios_before: Vec<Vec<f64>>,
    pub energy_ratios_after: Vec<Vec<f64>>,
    pub band_centers_hz: Vec<f64>,
    pub curves_before_db: Vec<Vec<f64>>,
    pub curves_after_db: Vec<Vec<f64>>,
}

/// Bookkeeping that the evaluator cannot infer from a response.
#[derive(Debug, Clone, PartialEq)]
pub struct RunInfo {
    pub method: String,
    pub scene: String,
    pub ops_per_sample: usize,
    pub iterations: usize,
    pub wall_s: Option<f64>,
    pub seed: u64,
}

impl RunInfo {
    /// Bookkeeping carried over from a stored report.
    pub fn from_report(r: &EvalReport) -> Self {
        RunInfo {
            method: r.method.clone(),
            scene: r.scene.clone(),
            ops_per_sample: r.ops_per_sample,
            iterations: r.iterations,
            wall_s: r.wall_s,
            seed: r.seed,
        }
    }
}

/// Shared metrics path for every designer.
#[derive(Debug, Clone)]
pub struct Evaluator {
    sim: Simulator,
    bands: BandSet,
    target: TargetResponse,
    sigma_factor: f64,
    before: EnergyRatios,
    before_mags: Vec<Vec<f64>>,
}

impl Evaluator {
    pub fn new(sim: Simulator, bands: BandSet, target: TargetResponse, sigma_factor: f64) -> Result<Self> {
        target.validate(&bands)?;
        if !(sigma_factor == 10.0 || sigma_factor == 20.0) {
            return Err(Error::domain(format!("sigma dB factor must be 10 or 20, got {sigma_factor}")));
        }
        let flat = sim.unequalized();
        let before = EnergyRatios::of_response(
            &flat,
            sim.n_sources(),
            sim.n_mics(),
            sim.grid().size(),
            sim.reference_source(),
        );
        let before_mags = flat.per_mic.iter().map(|h| band_magnitudes(h, &bands)).collect();
        Ok(Evaluator {
            sim,
            bands,
            target,
            sigma_factor,
            before,
            before_mags,
        })
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn bands(&self) -> &BandSet {
        &self.bands
    }

    pub fn band_magnitudes(&self, resp: &EqualizedResponse) -> Vec<Vec<f64>> {
        resp.per_mic.iter().map(|h| band_magnitudes(h, &self.bands)).collect()
    }

    pub fn unequalized_magnitudes(&self) -> &[Vec<f64>] {
        &self.before_mags
    }

    pub fn evaluate(&self, resp: &EqualizedResponse, info: RunInfo) -> Result<EvalReport> {
        let t = &self.target.magnitudes;
        let mags = self.band_magnitudes(resp);
        let (mse_per_mic, mse_avg) = mse(&mags, t)?;
        let (sigma_per_mic, sigma_avg) = sigma(&mags, self.sigma_factor)?;
        let after = EnergyRatios::of_response(
            resp,
            self.sim.n_sources(),
            self.sim.n_mics(),
            self.sim.grid().size(),
            self.sim.reference_source(),
        );
        Ok(EvalReport {
            method: info.method,
            scene: info.scene,
            mse_per_mic,
            mse_avg,
            sigma_per_mic,
            sigma_avg,
            sigma_db_factor: self.sigma_factor,
            mse_unequalized: mse(&self.before_mags, t)?.1,
            sigma_unequalized: sigma(&self.before_mags, self.sigma_factor)?.1,
            ops_per_sample: info.ops_per_sample,
            iterations: info.iterations,
            wall_s: info.wall_s,
            seed: info.seed,
            max_energy_ratio_deviation: after.max_relative_deviation(&self.before),
            energy_ratios_before: self.before.ratios.clone(),
            energy_ratios_after: after.ratios,
            band_centers_hz: self.bands.centers(),
            curves_before_db: curves_db(&self.before_mags),
            curves_after_db: curves_db(&mags),
        })
    }

    pub fn evaluate_cascades(&self, cascades: &[SosCascade], info: RunInfo) -> Result<EvalReport> {
        self.evaluate(&self.sim.apply_cascades(cascades)?, info)
    }

    pub fn evaluate_firs(&self, firs: &[FirEqualizer], info: RunInfo) -> Result<EvalReport> {
        self.evaluate(&fir_equalized_response(&self.sim, firs)?, info)
    }
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub mse_avg: f64,
    pub sigma_avg: f64,
    pub ops_per_sample: usize,
    pub max_energy_ratio_deviation: f64,
}

/// Comparison rows ordered by averaged MSE, lowest first.
pub fn summary_table(reports: &[EvalReport]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = reports
        .iter()
        .map(|r| SummaryRow {
            method: r.method.clone(),
            mse_avg: r.mse_avg,
            sigma_avg: r.sigma_avg,
            ops_per_sample: r.ops_per_sample,
            max_energy_ratio_deviation: r.max_energy_ratio_deviation,
        })
        .collect();
    rows.sort_by(|a, b| a.mse_avg.total_cmp(&b.mse_avg).then_with(|| a.method.cmp(&b.method)));
    rows
}

/// CSV rendering of [`summary_table`].
pub fn summary_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("method,mse_avg,sigma_avg,ops_per_sample,max_energy_ratio_deviation\n");
    for r in summary_table(reports) {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.method, r.mse_avg, r.sigma_avg, r.ops_per_sample, r.max_energy_ratio_deviation
        ));
    }
    out
}
