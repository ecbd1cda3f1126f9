//! Spectral-distance plus energy-ratio objective and its analytic gradient.
//!
//! Complex adjoints follow the convention `g = dL/dRe + i dL/dIm`. For a
//! holomorphic map `w = f(u)` the adjoint pulls back as `g_u = conj(f'(u)) g_w`
//! and a real parameter `t` receives `Re(conj(g_w) dw/dt)`.

use std::f64::consts::LN_10;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bands::{band_magnitudes, BandSet};
use crate::error::{Error, Result};
use crate::filter::{db_to_lin, design_peaking_with_jacobian, CoeffJacobian, Equalizer};
use crate::params::{denormalize, ParamClass, ParamRanges};
use crate::scene::Scene;
use crate::sim::{hermitian_weight, parseval_energy, EqualizedResponse, Simulator};

type C = Complex64;

/// Desired band magnitudes, one per band, shared by all mics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetResponse {
    pub magnitudes: Vec<f64>,
}

impl TargetResponse {
    /// 0 dB in every band.
    pub fn flat(n_bands: usize) -> Self {
        TargetResponse {
            magnitudes: vec![1.0; n_bands],
        }
    }

    pub fn validate(&self, bands: &BandSet) -> Result<()> {
        if self.magnitudes.len() != bands.len() {
            return Err(Error::shape(format!(
                "target has {} bands, band set has {}",
                self.magnitudes.len(),
                bands.len()
            )));
        }
        if self.magnitudes.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::domain("target magnitudes must be positive and finite"));
        }
        Ok(())
    }
}

/// The two loss terms, their weights and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub total: f64,
    /// Mean over mics of the mean squared band error, `L1_m^2 / n_bands`.
    pub mse: f64,
}

/// Default energy-term weight `log2 S + log2 M`.
pub fn default_gamma2(n_sources: usize, n_mics: usize) -> f64 {
    (n_sources as f64).log2() + (n_mics as f64).log2()
}

/// Path energies and reference-to-source energy ratios, indexed `[s][m]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRatios {
    pub energies: Vec<Vec<f64>>,
    pub ratios: Vec<Vec<f64>>,
}

impl EnergyRatios {
    pub fn from_energies(energies: Vec<Vec<f64>>, reference: usize) -> Self {
        let ratios = energies
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&energies[reference])
                    .map(|(e, r)| r / e)
                    .collect()
            })
            .collect();
        EnergyRatios { energies, ratios }
    }

    pub fn of_response(resp: &EqualizedResponse, n_sources: usize, n_mics: usize, n: usize, reference: usize) -> Self {
        let energies = (0..n_sources)
            .map(|s| (0..n_mics).map(|m| parseval_energy(resp.path(s, m), n)).collect())
            .collect();
        Self::from_energies(energies, reference)
    }

    /// Largest `|r_hat - r| / r` over all paths.
    pub fn max_relative_deviation(&self, before: &EnergyRatios) -> f64 {
        self.ratios
            .iter()
            .flatten()
            .zip(before.ratios.iter().flatten())
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0, f64::max)
    }
}

/// Which derivative to corrupt, used only to exercise gradient checking.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Corruption {
    class: ParamClass,
    factor: f64,
}

/// Objective over normalized parameters for one preprocessed scene.
#[derive(Debug, Clone)]
pub struct Objective {
    sim: Simulator,
    bands: BandSet,
    ranges: ParamRanges,
    target: TargetResponse,
    gamma1: f64,
    gamma2: f64,
    before: EnergyRatios,
    delays: Vec<(C, C)>,
    corruption: Option<Corruption>,
}

/// Forward-pass quantities kept for the backward pass.
struct Forward {
    /// Per source: coefficient arrays and Jacobians of every section.
    sections: Vec<Vec<([f64; 5], CoeffJacobian)>>,
    /// Per source equalizer response on the active bins.
    g: Vec<Vec<C>>,
    /// Equalized paths `[s * M + m]` and per-mic sums, active bins only.
    paths: Vec<Vec<C>>,
    mics: Vec<Vec<C>>,
}

impl Objective {
    /// Objective with a flat target and default weights on the scene's
    /// default grid and bands.
    pub fn for_scene(scene: &Scene) -> Result<Self> {
        let sim = Simulator::for_scene(scene)?;
        let bands = scene.bands(sim.grid())?;
        let ranges = ParamRanges::with_bands(bands.fc_ranges())?;
        let target = TargetResponse::flat(bands.len());
        let gamma2 = default_gamma2(scene.n_sources(), scene.n_mics());
        Self::new(sim, bands, ranges, target, 1.0, gamma2)
    }

    pub fn new(
        sim: Simulator,
        bands: BandSet,
        ranges: ParamRanges,
        target: TargetResponse,
        gamma1: f64,
        gamma2: f64,
    ) -> Result<Self> {
        target.validate(&bands)?;
        ranges.validate()?;
        if ranges.n_bands() != bands.len() {
            return Err(Error::shape(format!(
                "{} parameter bands for {} frequency bands",
                ranges.n_bands(),
                bands.len()
            )));
        }
        if !(gamma1 >= 0.0 && gamma2 >= 0.0 && gamma1.is_finite() && gamma2.is_finite()) {
            return Err(Error::domain("loss weights must be finite and non-negative"));
        }
        if bands.bands().last().map_or(0, |b| b.bins.end) > sim.grid().bins() {
            return Err(Error::shape("bands exceed the simulation grid"));
        }
        let before = EnergyRatios::from_energies(sim.path_energies(), sim.reference_source());
        let obj = Objective {
            delays: sim.grid().unit_delays(),
            sim,
            bands,
            ranges,
            target,
            gamma1,
            gamma2,
            before,
            corruption: None,
        };
        if obj.l2_active() {
            obj.check_energies(&obj.before.energies)?;
        }
        Ok(obj)
    }

    pub fn with_gamma2(mut self, gamma2: f64) -> Result<Self> {
        if !(gamma2 >= 0.0 && gamma2.is_finite()) {
            return Err(Error::domain("loss weights must be finite and non-negative"));
        }
        self.gamma2 = gamma2;
        if self.l2_active() {
            self.check_energies(&self.before.energies)?;
        }
        Ok(self)
    }

    /// Test hook: scales the analytic derivative of one parameter class.
    #[doc(hidden)]
    pub fn with_corrupted_derivative(mut self, class: ParamClass, factor: f64) -> Self {
        self.corruption = Some(Corruption { class, factor });
        self
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn bands(&self) -> &BandSet {
        &self.bands
    }

    pub fn ranges(&self) -> &ParamRanges {
        &self.ranges
    }

    pub fn target(&self) -> &TargetResponse {
        &self.target
    }

    pub fn gammas(&self) -> (f64, f64) {
        (self.gamma1, self.gamma2)
    }

    pub fn energy_before(&self) -> &EnergyRatios {
        &self.before
    }

    pub fn param_len(&self) -> usize {
        self.ranges.param_len(self.sim.n_sources())
    }

    fn l2_active(&self) -> bool {
        self.gamma2 > 0.0 && self.sim.n_sources() > 1
    }

    /// Bins that influence the loss: the whole half spectrum when the energy
    /// term is active, otherwise only the banded range.
    fn active_bins(&self) -> std::ops::Range<usize> {
        if self.l2_active() {
            0..self.sim.grid().bins()
        } else {
            let b = self.bands.bands();
            b[0].bins.start..b[b.len() - 1].bins.end
        }
    }

    fn check_energies(&self, energies: &[Vec<f64>]) -> Result<()> {
        for (s, row) in energies.iter().enumerate() {
            for (m, e) in row.iter().enumerate() {
                if !(*e > 0.0) {
                    return Err(Error::ZeroEnergy { source_index: s, mic: m });
                }
            }
        }
        Ok(())
    }

    fn forward(&self, p: &[f64]) -> Result<Forward> {
        if p.len() != self.param_len() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.param_len(),
                p.len()
            )));
        }
        let eqs = denormalize(p, &self.ranges)?;
        let fs = self.sim.grid().fs();
        let active = self.active_bins();
        let z = &self.delays[active.clone()];
        let (n_s, n_m) = (self.sim.n_sources(), self.sim.n_mics());
        let mut sections = Vec::with_capacity(n_s);
        let mut g = Vec::with_capacity(n_s);
        for eq in &eqs {
            let secs = eq
                .sections
                .iter()
                .map(|sec| {
                    design_peaking_with_jacobian(sec.fc, sec.q, sec.gain_db, fs)
                        .map(|(c, j)| ([c.b0, c.b1, c.b2, c.a1, c.a2], j))
                })
                .collect::<Result<Vec<_>>>()?;
            let gain = db_to_lin(eq.gain_db);
            let resp: Vec<C> = z
                .iter()
                .map(|&(z1, z2)| {
                    let (mut num, mut den) = (C::new(gain, 0.0), C::new(1.0, 0.0));
                    for (c, _) in &secs {
                        num *= z1 * c[1] + z2 * c[2] + c[0];
                        den *= z1 * c[3] + z2 * c[4] + 1.0;
                    }
                    num / den
                })
                .collect();
            sections.push(secs);
            g.push(resp);
        }
        let mut paths = Vec::with_capacity(n_s * n_m);
        let mut mics = vec![vec![C::new(0.0, 0.0); active.len()]; n_m];
        for (s, gs) in g.iter().enumerate() {
            for (m, acc) in mics.iter_mut().enumerate() {
                let h = &self.sim.path(s, m)[active.clone()];
                let eq: Vec<C> = h.iter().zip(gs).map(|(h, g)| h * g).collect();
                acc.iter_mut().zip(&eq).for_each(|(a, e)| *a += e);
                paths.push(eq);
            }
        }
        Ok(Forward {
            sections,
            g,
            paths,
            mics,
        })
    }

    /// Band magnitudes of an active-bin spectrum starting at bin `offset`.
    fn banded(&self, spec: &[C], offset: usize) -> Vec<f64> {
        self.bands
            .bands()
            .iter()
            .map(|b| {
                let r = b.bins.start - offset..b.bins.end - offset;
                (spec[r].iter().map(|h| h.norm_sqr()).sum::<f64>() / b.len() as f64).sqrt()
            })
            .collect()
    }

    fn active_energy(&self, spec: &[C], offset: usize) -> f64 {
        let n = self.sim.grid().size();
        spec.iter()
            .enumerate()
            .map(|(i, h)| hermitian_weight(i + offset, n) * h.norm_sqr())
            .sum::<f64>()
            / n as f64
    }

    fn breakdown(&self, l1_m: &[f64], l2: f64) -> LossBreakdown {
        let l1 = l1_m.iter().sum();
        let nb = self.bands.len() as f64;
        LossBreakdown {
            mse: l1_m.iter().map(|v| v * v / nb).sum::<f64>() / l1_m.len() as f64,
            l1,
            l2,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            total: self.gamma1 * l1 + self.gamma2 * l2,
        }
    }

    /// L1 per mic from band magnitudes.
    fn l1_terms(&self, mags: &[Vec<f64>]) -> Vec<f64> {
        mags.iter()
            .map(|bm| {
                bm.iter()
                    .zip(&self.target.magnitudes)
                    .map(|(a, d)| (a - d) * (a - d))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Per mic L2 term and post-equalization ratios `[m][s]`.
    fn l2_terms(&self, energies: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let (n_s, n_m) = (self.sim.n_sources(), self.sim.n_mics());
        let rf = self.sim.reference_source();
        let mut terms = Vec::with_capacity(n_m);
        let mut ratios = Vec::with_capacity(n_m);
        for m in 0..n_m {
            let r_hat: Vec<f64> = (0..n_s).map(|s| energies[rf][m] / energies[s][m]).collect();
            let t = r_hat
                .iter()
                .enumerate()
                .map(|(s, r)| (r - self.before.ratios[s][m]).powi(2))
                .sum::<f64>()
                .sqrt();
            terms.push(t);
            ratios.push(r_hat);
        }
        (terms, ratios)
    }

    /// Loss of an already simulated full-spectrum response.
    pub fn loss_of_response(&self, resp: &EqualizedResponse) -> Result<LossBreakdown> {
        let mags: Vec<Vec<f64>> = resp.per_mic.iter().map(|h| band_magnitudes(h, &self.bands)).collect();
        let l1 = self.l1_terms(&mags);
        let l2 = if self.l2_active() {
            let r = EnergyRatios::of_response(
                resp,
                self.sim.n_sources(),
                self.sim.n_mics(),
                self.sim.grid().size(),
                self.sim.reference_source(),
            );
            self.check_energies(&r.energies)?;
            self.l2_terms(&r.energies).0.iter().sum()
        } else {
            0.0
        };
        Ok(self.breakdown(&l1, l2))
    }

    fn loss_of_forward(&self, fw: &Forward) -> Result<(LossBreakdown, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let offset = self.active_bins().start;
        let mags: Vec<Vec<f64>> = fw.mics.iter().map(|h| self.banded(h, offset)).collect();
        let l1 = self.l1_terms(&mags);
        let (n_s, n_m) = (self.sim.n_sources(), self.sim.n_mics());
        let mut energies = Vec::new();
        let l2 = if self.l2_active() {
            energies = (0..n_s)
                .map(|s| (0..n_m).map(|m| self.active_energy(&fw.paths[s * n_m + m], offset)).collect())
                .collect::<Vec<Vec<f64>>>();
            self.check_energies(&energies)?;
            self.l2_terms(&energies).0.iter().sum()
        } else {
            0.0
        };
        Ok((self.breakdown(&l1, l2), mags, energies))
    }

    /// Denormalizes `p`, simulates the scene and evaluates the loss.
    pub fn loss(&self, p: &[f64]) -> Result<LossBreakdown> {
        let fw = self.forward(p)?;
        Ok(self.loss_of_forward(&fw)?.0)
    }

    /// Equalizers for a normalized parameter vector.
    pub fn equalizers(&self, p: &[f64]) -> Result<Vec<Equalizer>> {
        denormalize(p, &self.ranges)
    }

    /// Loss and exact gradient with respect to every normalized parameter.
    pub fn loss_and_gradient(&self, p: &[f64]) -> Result<(LossBreakdown, Vec<f64>)> {
        let fw = self.forward(p)?;
        let (loss, mags, energies) = self.loss_of_forward(&fw)?;
        let (n_s, n_m) = (self.sim.n_sources(), self.sim.n_mics());
        let active = self.active_bins();
        let offset = active.start;
        let n = self.sim.grid().size();

        // adjoint of each per-mic sum from the band-magnitude term
        let l1_m = self.l1_terms(&mags);
        let mut g_mic = vec![vec![C::new(0.0, 0.0); active.len()]; n_m];
        for m in 0..n_m {
            if l1_m[m] == 0.0 || self.gamma1 == 0.0 {
                continue;
            }
            for (b, band) in self.bands.bands().iter().enumerate() {
                let mag = mags[m][b];
                if mag <= 0.0 {
                    return Err(Error::SingularGradient { mic: m, band: b });
                }
                let d_mag = self.gamma1 * (mag - self.target.magnitudes[b]) / l1_m[m];
                let scale = d_mag / (mag * band.len() as f64);
                for k in band.bins.clone() {
                    g_mic[m][k - offset] = fw.mics[m][k - offset] * scale;
                }
            }
        }

        // adjoint of each path energy from the ratio term
        let mut g_energy = vec![vec![0.0; n_m]; n_s];
        if self.l2_active() {
            let rf = self.sim.reference_source();
            let (l2_m, r_hat) = self.l2_terms(&energies);
            for m in 0..n_m {
                if l2_m[m] == 0.0 {
                    continue;
                }
                for s in 0..n_s {
                    if s == rf {
                        continue;
                    }
                    let c = self.gamma2 * (r_hat[m][s] - self.before.ratios[s][m]) / l2_m[m];
                    g_energy[s][m] -= c * energies[rf][m] / (energies[s][m] * energies[s][m]);
                    g_energy[rf][m] += c / energies[s][m];
                }
            }
        }

        let mut grad = vec![0.0; self.param_len()];
        let block = self.ranges.block_len();
        let nb = self.ranges.n_bands();
        let z = &self.delays[active.clone()];
        for s in 0..n_s {
            // adjoint of the equalizer response G_s
            let mut g_g = vec![C::new(0.0, 0.0); active.len()];
            for m in 0..n_m {
                let h = &self.sim.path(s, m)[active.clone()];
                let path = &fw.paths[s * n_m + m];
                let ge = g_energy[s][m];
                for (i, gg) in g_g.iter_mut().enumerate() {
                    let mut g_path = g_mic[m][i];
                    if ge != 0.0 {
                        g_path += path[i] * (ge * hermitian_weight(i + offset, n) * 2.0 / n as f64);
                    }
                    *gg += h[i].conj() * g_path;
                }
            }
            // t = conj(G) g_G; then g_B = t / conj(B), g_A = -t / conj(A)
            let t: Vec<C> = fw.g[s].iter().zip(&g_g).map(|(g, gg)| g.conj() * gg).collect();
            let d_vs = t.iter().map(|v| v.re).sum::<f64>() * LN_10 / 20.0;
            let secs = &fw.sections[s];
            let mut d_coef = vec![[0.0f64; 5]; secs.len()];
            for (i, &(z1, z2)) in z.iter().enumerate() {
                let ti = t[i];
                for (c, acc) in secs.iter().zip(d_coef.iter_mut()) {
                    let c = &c.0;
                    let bq = z1 * c[1] + z2 * c[2] + c[0];
                    let aq = z1 * c[3] + z2 * c[4] + 1.0;
                    let gb = ti * bq / bq.norm_sqr();
                    let ga = -(ti * aq / aq.norm_sqr());
                    acc[0] += gb.re;
                    acc[1] += (gb * z1.conj()).re;
                    acc[2] += (gb * z2.conj()).re;
                    acc[3] += (ga * z1.conj()).re;
                    acc[4] += (ga * z2.conj()).re;
                }
            }
            let base = s * block;
            for (b, ((_, jac), dc)) in secs.iter().zip(&d_coef).enumerate() {
                let dot = |d: &[f64; 5]| d.iter().zip(dc).map(|(x, y)| x * y).sum::<f64>();
                grad[base + 3 * b] = dot(&jac.d_fc);
                grad[base + 3 * b + 1] = dot(&jac.d_q);
                grad[base + 3 * b + 2] = dot(&jac.d_gain_db);
            }
            grad[base + 3 * nb] = d_vs;
        }
        for (i, g) in grad.iter_mut().enumerate() {
            let (class, range) = self.ranges.component(i);
            *g *= range.half_width();
            if let Some(c) = self.corruption {
                if c.class == class {
                    *g *= c.factor;
                }
            }
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                tensor: "equalizer parameters".into(),
                index: i,
            });
        }
        Ok((loss, grad))
    }
}

/// Loss of explicit equalizers on a simulator.
pub fn compute_loss(objective: &Objective, eqs: &[Equalizer]) -> Result<LossBreakdown> {
    let sim = objective.simulator();
    let cascades = eqs
        .iter()
        .map(|e| e.cascade(sim.grid().fs()))
        .collect::<Result<Vec<_>>>()?;
    objective.loss_of_response(&sim.apply_cascades(&cascades)?)
}

/// Analytic gradient of the objective at `p`.
pub fn analytic_gradient(objective: &Objective, p: &[f64]) -> Result<Vec<f64>> {
    objective.loss_and_gradient(p).map(|(_, g)| g)
}

/// Central differences of `f` at `p`. Near the box boundary the probe points
/// are clamped to `[-1, 1]` and the quotient uses the actual spacing.
pub fn finite_diff_gradient<F>(mut f: F, p: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::domain(format!("finite-difference step must be positive, got {step}")));
    }
    let mut x = p.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let hi = (p[i] + step).min(1.0);
        let lo = (p[i] - step).max(-1.0);
        x[i] = hi;
        let f_hi = f(&x)?;
        x[i] = lo;
        let f_lo = f(&x)?;
        x[i] = p[i];
        grad.push((f_hi - f_lo) / (hi - lo));
    }
    Ok(grad)
}

/// Relative error used for gradient checks: `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Floor of the relative-error denominator for near-zero components.
pub const GRADCHECK_FLOOR: f64 = 1e-3;

/// Worst and mean relative error of one parameter class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassError {
    pub class: ParamClass,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub worst_index: usize,
    pub count: usize,
}

/// Result of comparing analytic and finite-difference gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub classes: Vec<ClassError>,
    pub max_rel_error: f64,
    pub pass: bool,
    /// Classes whose worst error exceeds the tolerance.
    pub failing: Vec<ParamClass>,
}

/// Compares the analytic gradient with central differences at `p`.
pub fn gradcheck(objective: &Objective, p: &[f64], step: f64, tolerance: f64) -> Result<GradcheckReport> {
    let analytic = analytic_gradient(objective, p)?;
    let numeric = finite_diff_gradient(|x| objective.loss(x).map(|l| l.total), p, step)?;
    let ranges = objective.ranges();
    let mut classes = Vec::new();
    for class in ParamClass::ALL {
        let errs: Vec<(usize, f64)> = (0..p.len())
            .filter(|&i| ranges.class_of(i) == class)
            .map(|i| (i, relative_error(analytic[i], numeric[i], GRADCHECK_FLOOR)))
            .collect();
        if errs.is_empty() {
            continue;
        }
        let (worst_index, max_rel_error) = errs
            .iter()
            .copied()
            .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
        classes.push(ClassError {
            class,
            max_rel_error,
            mean_rel_error: errs.iter().map(|e| e.1).sum::<f64>() / errs.len() as f64,
            worst_index,
            count: errs.len(),
        });
    }
    let max_rel_error = classes.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let failing: Vec<ParamClass> = classes
        .iter()
        .filter(|c| !(c.max_rel_error < tolerance))
        .map(|c| c.class)
        .collect();
    Ok(GradcheckReport {
        step,
        tolerance,
        classes,
        max_rel_error,
        pass: failing.is_empty(),
        failing,
    })
}
