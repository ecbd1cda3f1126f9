//! Direct search: random multiplicative perturbation of every physical
//! parameter, kept only when the total loss strictly decreases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::biasnet::{HistoryEntry, Optimized};
use crate::error::{Error, Result};
use crate::loss::Objective;
use crate::params::ParamRanges;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DsmConfig {
    /// Bound of the relative perturbation `|Gamma| <= gamma`.
    pub gamma: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Initial normalized parameters are drawn from `[-spread, spread]`; the
    /// full range by default, since a 0 dB gain never moves under
    /// multiplicative perturbation.
    pub init_spread: f64,
    pub log_every: usize,
}

impl Default for DsmConfig {
    fn default() -> Self {
        DsmConfig {
            gamma: 0.01,
            iterations: 10_000,
            seed: 0,
            init_spread: 1.0,
            log_every: 1,
        }
    }
}

impl DsmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::domain(format!("DSM gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.init_spread) {
            return Err(Error::domain("DSM initial spread must lie in [0, 1]"));
        }
        if self.log_every == 0 {
            return Err(Error::domain("log cadence must be >= 1"));
        }
        Ok(())
    }
}

fn physical(p: &[f64], ranges: &ParamRanges) -> Vec<f64> {
    p.iter()
        .enumerate()
        .map(|(i, v)| ranges.component(i).1.denormalize(*v))
        .collect()
}

fn normalized(c: &[f64], ranges: &ParamRanges) -> Vec<f64> {
    c.iter()
        .enumerate()
        .map(|(i, v)| ranges.component(i).1.normalize(*v).clamp(-1.0, 1.0))
        .collect()
}

/// Hill climbing from a seeded random start.
pub fn dsm_optimize(objective: &Objective, config: &DsmConfig) -> Result<Optimized> {
    config.validate()?;
    let ranges = objective.ranges();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let spread = config.init_spread;
    let mut p: Vec<f64> = (0..objective.param_len())
        .map(|_| if spread > 0.0 { rng.gen_range(-spread..=spread) } else { 0.0 })
        .collect();
    let mut c = physical(&p, ranges);
    let mut loss = objective.loss(&p)?;
    let mut best_iteration = 0;
    let mut history = vec![HistoryEntry::new(0, &loss, loss.total)];
    for it in 1..=config.iterations {
        let trial: Vec<f64> = c
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let gamma: f64 = rng.gen_range(-config.gamma..=config.gamma);
                ranges.component(i).1.clamp(v * (1.0 + gamma))
            })
            .collect();
        let trial_p = normalized(&trial, ranges);
        let trial_loss = objective.loss(&trial_p)?;
        if trial_loss.total < loss.total {
            c = trial;
            p = trial_p;
            loss = trial_loss;
            best_iteration = it;
        }
        if it % config.log_every == 0 || it == config.iterations {
            history.push(HistoryEntry::new(it, &loss, loss.total));
        }
    }
    Ok(Optimized {
        equalizers: objective.equalizers(&p)?,
        params: p,
        loss,
        best_iteration,
        iterations: config.iterations,
        history,
    })
}
