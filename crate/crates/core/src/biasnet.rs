//! BiasNet: a sine-activated feedforward network with no external input,
//! trained with Adam to emit normalized equalizer parameters.
//!
//! The first layer sees a constant zero input, so its pre-activation is just
//! the learnable vector `b0`. Its input weights are kept (and counted) but
//! never receive gradient. Later dense layers carry no bias unless
//! `hidden_bias` is set.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::Equalizer;
use crate::loss::{LossBreakdown, Objective};

/// Dense layer `z = W a (+ c)` with row-major `W` of shape `out x inp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inp: usize,
    pub out: usize,
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Dense {
    fn forward(&self, a: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone().unwrap_or_else(|| vec![0.0; self.out]);
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &self.weights[o * self.inp..(o + 1) * self.inp];
            *zo += row.iter().zip(a).map(|(w, x)| w * x).sum::<f64>();
        }
        z
    }
}

/// Learnable tensors of a [`Network`], also used for gradients and moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    /// Learnable input vector: the first pre-activation.
    pub b0: Vec<f64>,
    /// Weights from the constant zero input to the first layer; inert.
    pub input_weights: Vec<f64>,
    pub layers: Vec<Dense>,
}

impl Network {
    /// Seeded uniform init: weights in `+-sqrt(6 / fan_in) / omega`, `b0` and
    /// hidden biases in `[-1, 1]`. An empty `hidden` list gives the bias-only
    /// model `p = sin(b0)`.
    pub fn init(hidden: &[usize], out_dim: usize, seed: u64, omega: f64, hidden_bias: bool) -> Result<Self> {
        if out_dim == 0 {
            return Err(Error::domain("network output dimension must be >= 1"));
        }
        if hidden.contains(&0) {
            return Err(Error::domain("hidden layer sizes must be >= 1"));
        }
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::domain("init frequency factor must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first = hidden.first().copied().unwrap_or(out_dim);
        let b0 = (0..first).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let input_weights = if hidden.is_empty() {
            Vec::new()
        } else {
            (0..first).map(|_| rng.gen_range(-1.0..=1.0) * 6f64.sqrt() / omega).collect()
        };
        let mut sizes = hidden.to_vec();
        if !hidden.is_empty() {
            sizes.push(out_dim);
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (inp, out) = (w[0], w[1]);
                let bound = (6.0 / inp as f64).sqrt() / omega;
                Dense {
                    inp,
                    out,
                    weights: (0..inp * out).map(|_| rng.gen_range(-bound..=bound)).collect(),
                    bias: hidden_bias.then(|| (0..out).map(|_| rng.gen_range(-1.0..=1.0)).collect()),
                }
            })
            .collect();
        Ok(Network {
            b0,
            input_weights,
            layers,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(self.b0.len(), |l| l.out)
    }

    /// Number of learnable scalars, including `b0` and the inert input weights.
    pub fn param_count(&self) -> usize {
        self.b0.len()
            + self.input_weights.len()
            + self
                .layers
                .iter()
                .map(|l| l.weights.len() + l.bias.as_ref().map_or(0, Vec::len))
                .sum::<usize>()
    }

    /// Pre-activations of every layer, starting with `b0`.
    fn preactivations(&self) -> Vec<Vec<f64>> {
        let mut zs = vec![self.b0.clone()];
        for layer in &self.layers {
            let a: Vec<f64> = zs.last().unwrap().iter().map(|z| z.sin()).collect();
            zs.push(layer.forward(&a));
        }
        zs
    }

    /// Normalized parameters in `[-1, 1]`.
    pub fn forward(&self) -> Vec<f64> {
        self.preactivations().last().unwrap().iter().map(|z| z.sin()).collect()
    }

    /// Gradients of `dl_dp . p` with respect to every learnable tensor.
    pub fn backward(&self, dl_dp: &[f64]) -> Result<Network> {
        if dl_dp.len() != self.out_dim() {
            return Err(Error::shape(format!(
                "output gradient has {} entries, network emits {}",
                dl_dp.len(),
                self.out_dim()
            )));
        }
        let zs = self.preactivations();
        let mut grad = self.zeros_like();
        let mut delta: Vec<f64> = zs
            .last()
            .unwrap()
            .iter()
            .zip(dl_dp)
            .map(|(z, g)| g * z.cos())
            .collect();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let a: Vec<f64> = zs[l].iter().map(|z| z.sin()).collect();
            let gl = &mut grad.layers[l];
            for (o, d) in delta.iter().enumerate() {
                let row = &mut gl.weights[o * layer.inp..(o + 1) * layer.inp];
                row.iter_mut().zip(&a).for_each(|(w, x)| *w = d * x);
            }
            if let Some(b) = gl.bias.as_mut() {
                b.copy_from_slice(&delta);
            }
            let mut prev = vec![0.0; layer.inp];
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inp..(o + 1) * layer.inp];
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += w * d);
            }
            delta = prev.iter().zip(&zs[l]).map(|(p, z)| p * z.cos()).collect();
        }
        grad.b0 = delta;
        Ok(grad)
    }

    fn zeros_like(&self) -> Network {
        Network {
            b0: vec![0.0; self.b0.len()],
            input_weights: vec![0.0; self.input_weights.len()],
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    inp: l.inp,
                    out: l.out,
                    weights: vec![0.0; l.weights.len()],
                    bias: l.bias.as_ref().map(|b| vec![0.0; b.len()]),
                })
                .collect(),
        }
    }

    fn tensors(&self) -> Vec<(&'static str, &Vec<f64>)> {
        let mut t = vec![("b0", &self.b0), ("input_weights", &self.input_weights)];
        for l in &self.layers {
            t.push(("weights", &l.weights));
            if let Some(b) = &l.bias {
                t.push(("bias", b));
            }
        }
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut t = vec![&mut self.b0, &mut self.input_weights];
        for l in &mut self.layers {
            t.push(&mut l.weights);
            if let Some(b) = &mut l.bias {
                t.push(b);
            }
        }
        t
    }
}

/// Adam hyperparameters and moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Network,
    pub v: Network,
}

impl AdamState {
    pub fn new(net: &Network, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            step: 0,
            m: net.zeros_like(),
            v: net.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update of every tensor, `b0` included.
pub fn adam_step(net: &mut Network, state: &mut AdamState, grads: &Network) -> Result<()> {
    for (name, g) in grads.tensors() {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                tensor: name.to_string(),
                index: i,
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    let params = net.tensors_mut();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, m), v), (_, g)) in params.into_iter().zip(ms).zip(vs).zip(grads.tensors()) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub iterations: usize,
    pub seed: u64,
    pub layers: Vec<usize>,
    pub lr: f64,
    /// Record every n-th iteration in the history (the last one always).
    pub log_every: usize,
    /// Stop when the best loss has not improved for this many iterations.
    pub patience: Option<usize>,
    pub hidden_bias: bool,
    pub omega: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            iterations: 10_000,
            seed: 0,
            layers: vec![1024, 512, 256, 128],
            lr: 1e-4,
            log_every: 1,
            patience: None,
            hidden_bias: false,
            omega: 1.0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::domain("iterations must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::domain("learning rate must be positive"));
        }
        if self.log_every == 0 {
            return Err(Error::domain("log cadence must be >= 1"));
        }
        Ok(())
    }
}

/// One logged iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub mse: f64,
    /// Lowest total loss seen up to and including this iteration.
    pub best_total: f64,
}

impl HistoryEntry {
    pub fn new(iteration: usize, loss: &LossBreakdown, best_total: f64) -> Self {
        HistoryEntry {
            iteration,
            l1: loss.l1,
            l2: loss.l2,
            total: loss.total,
            mse: loss.mse,
            best_total,
        }
    }
}

/// Output of any iterative designer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimized {
    /// Normalized parameters with the lowest total loss.
    pub params: Vec<f64>,
    pub equalizers: Vec<Equalizer>,
    pub loss: LossBreakdown,
    pub best_iteration: usize,
    pub iterations: usize,
    pub history: Vec<HistoryEntry>,
}

/// First iteration whose best-so-far total falls to `threshold` or below.
pub fn iterations_to_reach(history: &[HistoryEntry], threshold: f64) -> Option<usize> {
    history.iter().find(|h| h.best_total <= threshold).map(|h| h.iteration)
}

/// Trains a fresh network against the objective and keeps the best iterate.
pub fn optimize(objective: &Objective, config: &RunConfig) -> Result<Optimized> {
    let net = Network::init(&config.layers, objective.param_len(), config.seed, config.omega, config.hidden_bias)?;
    optimize_network(objective, net, config)
}

/// As [`optimize`], starting from a given network.
pub fn optimize_network(objective: &Objective, mut net: Network, config: &RunConfig) -> Result<Optimized> {
    config.validate()?;
    if net.out_dim() != objective.param_len() {
        return Err(Error::shape(format!(
            "network emits {} values, objective needs {}",
            net.out_dim(),
            objective.param_len()
        )));
    }
    let mut adam = AdamState::new(&net, config.lr);
    let mut history = Vec::new();
    let mut best: Option<(f64, Vec<f64>, LossBreakdown, usize)> = None;
    let mut done = 0;
    for it in 0..config.iterations {
        let p = net.forward();
        let (loss, grad) = objective.loss_and_gradient(&p)?;
        let improved = best.as_ref().map_or(true, |b| loss.total < b.0);
        if improved {
            best = Some((loss.total, p, loss, it));
        }
        let best_ref = best.as_ref().unwrap();
        done = it + 1;
        if it % config.log_every == 0 || it + 1 == config.iterations {
            history.push(HistoryEntry::new(it, &loss, best_ref.0));
        }
        if let Some(patience) = config.patience {
            if it - best_ref.3 >= patience {
                if history.last().map(|h| h.iteration) != Some(it) {
                    history.push(HistoryEntry::new(it, &loss, best_ref.0));
                }
                break;
            }
        }
        let grads = net.backward(&grad)?;
        adam_step(&mut net, &mut adam, &grads)?;
    }
    let (_, params, loss, best_iteration) = best.expect("at least one iteration");
    Ok(Optimized {
        equalizers: objective.equalizers(&params)?,
        params,
        loss,
        best_iteration,
        iterations: done,
        history,
    })
}

/// Wall-clock seconds of a closure, with its result.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        let big = Network::init(&[1024, 512, 256, 128], 536, 0, 1.0, false).unwrap();
        assert_eq!(big.param_count(), 758_784);
        let small = Network::init(&[256], 536, 0, 1.0, false).unwrap();
        assert_eq!(small.param_count(), 137_728);
        let bias_only = Network::init(&[], 536, 0, 1.0, false).unwrap();
        assert_eq!(bias_only.param_count(), 536);
        assert_eq!(bias_only.out_dim(), 536);
    }

    #[test]
    fn init_is_seeded() {
        let a = Network::init(&[8, 4], 5, 3, 1.0, true).unwrap();
        assert_eq!(a, Network::init(&[8, 4], 5, 3, 1.0, true).unwrap());
        assert_ne!(a, Network::init(&[8, 4], 5, 4, 1.0, true).unwrap());
        assert!(Network::init(&[8], 0, 0, 1.0, false).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut net = Network::init(&[6, 4], 3, 1, 1.0, true).unwrap();
        for t in net.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(net.forward(), vec![0.0; 3]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net = Network::init(&[2, 2], 2, 9, 1.0, true).unwrap();
        let w = [0.7, -1.3];
        let f = |n: &Network| n.forward().iter().zip(&w).map(|(p, w)| p * w).sum::<f64>();
        let g = net.backward(&w).unwrap();
        let analytic: Vec<f64> = g.tensors().iter().flat_map(|(_, t)| t.to_vec()).collect();
        let mut numeric = Vec::new();
        let h = 1e-6;
        let n_tensors = net.tensors().len();
        for ti in 0..n_tensors {
            for i in 0..net.tensors()[ti].1.len() {
                let mut a = net.clone();
                a.tensors_mut()[ti][i] += h;
                let mut b = net.clone();
                b.tensors_mut()[ti][i] -= h;
                numeric.push((f(&a) - f(&b)) / (2.0 * h));
            }
        }
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-3) < 1e-7, "{a} vs {n}");
        }
        // inert input weights never receive gradient
        assert!(g.input_weights.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut net = Network::init(&[3], 2, 2, 1.0, false).unwrap();
        let before = net.clone();
        let mut state = AdamState::new(&net, 1e-4);
        let zero = net.zeros_like();
        adam_step(&mut net, &mut state, &zero).unwrap();
        assert_eq!(net, before);
        let mut g = net.zeros_like();
        g.b0.iter_mut().for_each(|v| *v = 0.37);
        let mut state = AdamState::new(&net, 1e-4);
        adam_step(&mut net, &mut state, &g).unwrap();
        for (a, b) in net.b0.iter().zip(&before.b0) {
            assert!(((b - a) - 1e-4).abs() < 1e-9);
        }
        g.b0[0] = f64::NAN;
        assert!(matches!(
            adam_step(&mut net, &mut state, &g),
            Err(Error::NonFiniteGradient { .. })
        ));
    }
}
