//! The global-weight mixture over frozen flow experts and its stage-2
//! weight adaptation.
//!
//! With expert parameters fixed, mixture weights are updated directly on the
//! probability simplex: each epoch draws a fresh batch from the target,
//! scores every expert's mean log-likelihood, softmax-normalizes the scores,
//! and folds them into the weights by an exponential moving average. A small
//! floor (applied after the EMA step, with renormalization) keeps weights
//! away from degenerate collapse.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flows::FlowExpert;
use crate::targets::{Split, TargetFamily};
use crate::{derive_seed, Error, LogDensity, Matrix, Result, LOG_DENSITY_SENTINEL};

/// Stage-2 adaptation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage2Config {
    /// EMA momentum.
    pub beta: f64,
    /// Number of adaptation epochs.
    pub epochs: usize,
    /// Fresh-batch size per epoch.
    pub batch_size: usize,
    /// Post-step weight floor.
    pub floor: f64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            beta: 0.9,
            epochs: 200,
            batch_size: 512,
            floor: 1e-3,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self, n_experts: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::config(format!("beta {} outside [0, 1)", self.beta)));
        }
        if self.epochs < 1 {
            return Err(Error::config("need at least one stage-2 epoch"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("fresh-batch size must be >= 1"));
        }
        if self.floor < 0.0 || self.floor >= 1.0 / n_experts as f64 {
            return Err(Error::config(format!(
                "floor {} outside [0, 1/K) for K = {n_experts}",
                self.floor
            )));
        }
        Ok(())
    }
}

/// K frozen experts combined with a simplex weight vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureModel {
    experts: Vec<FlowExpert>,
    weights: Vec<f64>,
    /// Weights after every stage-2 epoch, starting with the initial vector.
    trajectory: Vec<Vec<f64>>,
}

impl MixtureModel {
    /// Combine experts under explicit weights (must lie on the simplex).
    pub fn new(experts: Vec<FlowExpert>, weights: Vec<f64>) -> Result<MixtureModel> {
        if experts.is_empty() {
            return Err(Error::config("a mixture needs at least one expert"));
        }
        if experts.len() != weights.len() {
            return Err(Error::contract(format!(
                "{} experts but {} weights",
                experts.len(),
                weights.len()
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || weights.iter().any(|&w| w < 0.0) {
            return Err(Error::config(format!(
                "weights off the simplex: {weights:?}"
            )));
        }
        let trajectory = vec![weights.clone()];
        Ok(MixtureModel {
            experts,
            weights,
            trajectory,
        })
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn experts(&self) -> &[FlowExpert] {
        &self.experts
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight vector after each epoch; the first entry is the initial vector.
    pub fn trajectory(&self) -> &[Vec<f64>] {
        &self.trajectory
    }

    /// Stable mixture log-density via max-shifted log-sum-exp.
    ///
    /// A row is the sentinel only when every component is the sentinel there.
    pub fn log_prob(&self, z: &Matrix) -> Vec<f64> {
        let per_expert: Vec<Vec<f64>> = self.experts.iter().map(|e| e.log_prob(z)).collect();
        let mut out = Vec::with_capacity(z.nrows());
        for r in 0..z.nrows() {
            let terms: Vec<f64> = per_expert
                .iter()
                .zip(&self.weights)
                .filter(|(_, &w)| w > 0.0)
                .map(|(lp, &w)| w.ln() + lp[r])
                .collect();
            let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !m.is_finite() {
                out.push(LOG_DENSITY_SENTINEL);
                continue;
            }
            let sum: f64 = terms.iter().map(|t| (t - m).exp()).sum();
            out.push(m + sum.ln());
        }
        out
    }

    /// Ancestral sampling: a component index per row, then expert draws.
    /// Deterministic per seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Matrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut component = Vec::with_capacity(n);
        let mut counts = vec![0usize; self.experts.len()];
        for _ in 0..n {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = self.experts.len() - 1;
            for (k, &w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    chosen = k;
                    break;
                }
            }
            component.push(chosen);
            counts[chosen] += 1;
        }
        let draws: Vec<Matrix> = self
            .experts
            .iter()
            .enumerate()
            .map(|(k, e)| e.sample(counts[k], derive_seed(seed, &[k as u64 + 1])))
            .collect::<Result<_>>()?;
        let dim = self.experts[0].dim();
        let mut out = Array2::zeros((n, dim));
        let mut used = vec![0usize; self.experts.len()];
        for (r, &k) in component.iter().enumerate() {
            out.row_mut(r).assign(&draws[k].row(used[k]));
            used[k] += 1;
        }
        Ok(out)
    }
}

impl LogDensity for MixtureModel {
    fn log_density(&self, z: &Matrix) -> Vec<f64> {
        self.log_prob(z)
    }

    fn dim(&self) -> usize {
        self.experts[0].dim()
    }
}

/// Softmax of expert scores; sentinel scores contribute exactly zero mass.
///
/// If every score is the sentinel the result is uniform.
pub fn performance_softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores
        .iter()
        .cloned()
        .filter(|s| *s > LOG_DENSITY_SENTINEL)
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return vec![1.0 / scores.len() as f64; scores.len()];
    }
    let exps: Vec<f64> = scores
        .iter()
        .map(|&s| {
            if s > LOG_DENSITY_SENTINEL {
                (s - m).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// One EMA step on the simplex: `pi <- beta pi + (1 - beta) softmax(scores)`.
pub fn ema_step(pi: &[f64], scores: &[f64], beta: f64) -> Vec<f64> {
    let w = performance_softmax(scores);
    pi.iter()
        .zip(&w)
        .map(|(&p, &t)| beta * p + (1.0 - beta) * t)
        .collect()
}

/// Clamp weights to the floor and renormalize onto the simplex.
pub fn apply_floor(pi: &mut [f64], floor: f64) {
    for p in pi.iter_mut() {
        if *p < floor {
            *p = floor;
        }
    }
    let sum: f64 = pi.iter().sum();
    for p in pi.iter_mut() {
        *p /= sum;
    }
}

/// Effective number of experts: `exp(H(pi))` with `0 log 0 := 0`.
pub fn effective_experts(pi: &[f64]) -> f64 {
    let h: f64 = pi
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum();
    h.exp()
}

/// Stage-2 adaptation over frozen experts.
///
/// Starts from uniform weights and runs `cfg.epochs` EMA updates, each on a
/// fresh batch drawn from `fresh_source`; weights are floored and
/// renormalized after every step and the full trajectory is logged.
pub fn stage2_adapt(
    experts: Vec<FlowExpert>,
    cfg: &Stage2Config,
    fresh_source: &TargetFamily,
    seed: u64,
) -> Result<MixtureModel> {
    if experts.is_empty() {
        return Err(Error::config("stage-2 needs at least one expert"));
    }
    cfg.validate(experts.len())?;

    let k = experts.len();
    let mut pi = vec![1.0 / k as f64; k];
    let mut trajectory = Vec::with_capacity(cfg.epochs + 1);
    trajectory.push(pi.clone());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(Split::Fresh.stream());
    for _epoch in 0..cfg.epochs {
        let batch = fresh_batch(fresh_source, cfg.batch_size, &mut rng);
        let scores: Vec<f64> = experts.iter().map(|e| mean_log_prob(e, &batch)).collect();
        pi = ema_step(&pi, &scores, cfg.beta);
        apply_floor(&mut pi, cfg.floor);
        trajectory.push(pi.clone());
    }

    let mut mixture = MixtureModel::new(experts, pi)?;
    mixture.trajectory = trajectory;
    Ok(mixture)
}

fn fresh_batch<R: Rng>(family: &TargetFamily, n: usize, rng: &mut R) -> Matrix {
    // One continuous fresh stream across epochs: re-seed the family sampler
    // from this stream so batches differ per epoch but stay reproducible.
    let sub_seed: u64 = rng.gen();
    family
        .sample(n, sub_seed, Split::Fresh)
        .expect("n >= 1 by config validation")
        .samples
}

/// Mean log-likelihood of one expert on a batch; a sentinel row makes the
/// whole mean the sentinel.
fn mean_log_prob(expert: &FlowExpert, batch: &Matrix) -> f64 {
    let lp = expert.log_prob(batch);
    if lp.iter().any(|v| *v == LOG_DENSITY_SENTINEL) {
        return LOG_DENSITY_SENTINEL;
    }
    lp.iter().sum::<f64>() / lp.len() as f64
}
