//! Stage-1 expert fitting: minibatch log-likelihood ascent for the two
//! parametric flows, and the quantile-based fitting procedure for RBIG.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::maf::MafStack;
use super::realnvp::CouplingStack;
use super::rbig::RbigStack;
use super::{FitMeta, FlowExpert, LN_TWO_PI};
use crate::netcore::{AdamConfig, AdamState, DenseLayer, Gradients};
use crate::targets::SampleSet;
use crate::{Error, Matrix, Result};

/// Which of the two gradient-trained flows to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientFlowKind {
    Maf,
    RealNvp,
}

/// Stage-1 training configuration; defaults follow the benchmark protocol.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub maf_layers: usize,
    pub realnvp_layers: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 256,
            learning_rate: 1e-3,
            hidden: vec![64, 64],
            maf_layers: 5,
            realnvp_layers: 6,
            seed: 0,
        }
    }
}

/// Common training surface over the two parametric stacks.
trait GradientStack: Clone {
    type Cache;
    fn dims(&self) -> usize;
    fn fwd(&self, z: &Matrix) -> (Matrix, Vec<f64>, Vec<Self::Cache>);
    fn bwd(&self, caches: &[Self::Cache], d_u: &Matrix, coeff: &[f64]) -> Vec<Gradients>;
    fn param_layers_mut(&mut self) -> Vec<&mut [DenseLayer]>;
}

impl GradientStack for MafStack {
    type Cache = super::maf::MafLayerCache;

    fn dims(&self) -> usize {
        self.dim()
    }

    fn fwd(&self, z: &Matrix) -> (Matrix, Vec<f64>, Vec<Self::Cache>) {
        self.forward_train(z)
    }

    fn bwd(&self, caches: &[Self::Cache], d_u: &Matrix, coeff: &[f64]) -> Vec<Gradients> {
        self.backward_train(caches, d_u, coeff).0
    }

    fn param_layers_mut(&mut self) -> Vec<&mut [DenseLayer]> {
        self.nets_mut()
            .into_iter()
            .map(|n| n.net_mut().layers_mut())
            .collect()
    }
}

impl GradientStack for CouplingStack {
    type Cache = super::realnvp::CouplingLayerCache;

    fn dims(&self) -> usize {
        self.dim()
    }

    fn fwd(&self, z: &Matrix) -> (Matrix, Vec<f64>, Vec<Self::Cache>) {
        self.forward_train(z)
    }

    fn bwd(&self, caches: &[Self::Cache], d_u: &Matrix, coeff: &[f64]) -> Vec<Gradients> {
        self.backward_train(caches, d_u, coeff).0
    }

    fn param_layers_mut(&mut self) -> Vec<&mut [DenseLayer]> {
        self.nets_mut()
            .into_iter()
            .map(|n| n.layers_mut())
            .collect()
    }
}

struct TrainOutcome<S> {
    stack: S,
    meta: FitMeta,
    degenerate: bool,
}

/// Minibatch ascent on the mean flow log-likelihood.
///
/// If the epoch-mean train log-likelihood is non-finite for three
/// consecutive epochs, training stops and the best finite checkpoint is
/// frozen with the degenerate flag set.
fn run_training<S: GradientStack>(mut stack: S, train: &Matrix, cfg: &TrainConfig) -> TrainOutcome<S> {
    let n = train.nrows();
    let dim = stack.dims() as f64;
    let base_const = -0.5 * dim * LN_TWO_PI;

    let mut adams: Vec<AdamState> = stack
        .param_layers_mut()
        .into_iter()
        .map(|layers| {
            AdamState::new(
                layers,
                AdamConfig {
                    learning_rate: cfg.learning_rate,
                    ..AdamConfig::default()
                },
            )
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut meta = FitMeta::default();
    let mut best: Option<(S, f64)> = None;
    let mut consecutive_bad = 0usize;
    let mut degenerate = false;

    for _epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut weighted_obj = 0.0;
        for chunk in indices.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut zb = Array2::zeros((b, train.ncols()));
            for (r, &i) in chunk.iter().enumerate() {
                zb.row_mut(r).assign(&train.row(i));
            }

            let (u, log_det, caches) = stack.fwd(&zb);
            let mut obj = 0.0;
            for (row, &ld) in u.rows().into_iter().zip(&log_det) {
                let sq: f64 = row.iter().map(|v| v * v).sum();
                obj += base_const - 0.5 * sq + ld;
            }
            obj /= b as f64;
            weighted_obj += obj * b as f64;
            if !obj.is_finite() {
                meta.divergent_batches += 1;
                continue;
            }

            let scale = 1.0 / b as f64;
            let d_u = u.mapv(|v| -v * scale);
            let coeff = vec![scale; b];
            if d_u.iter().any(|v| !v.is_finite()) {
                meta.divergent_batches += 1;
                continue;
            }
            let grads = stack.bwd(&caches, &d_u, &coeff);
            for (adam, (layers, grad)) in adams
                .iter_mut()
                .zip(stack.param_layers_mut().into_iter().zip(&grads))
            {
                adam.step(layers, grad);
            }
        }

        let epoch_mean = weighted_obj / n as f64;
        meta.loss_curve.push(epoch_mean);
        meta.epochs_run += 1;
        if epoch_mean.is_finite() {
            consecutive_bad = 0;
            if best.as_ref().map_or(true, |(_, s)| epoch_mean > *s) {
                best = Some((stack.clone(), epoch_mean));
            }
        } else {
            consecutive_bad += 1;
            if consecutive_bad >= 3 {
                degenerate = true;
                break;
            }
        }
    }

    if degenerate {
        if let Some((checkpoint, score)) = best {
            stack = checkpoint;
            meta.final_train_log_likelihood = score;
        }
    } else {
        meta.final_train_log_likelihood = meta
            .loss_curve
            .iter()
            .rev()
            .find(|v| v.is_finite())
            .copied()
            .unwrap_or(f64::NAN);
    }

    TrainOutcome {
        stack,
        meta,
        degenerate,
    }
}

/// Fit one of the two parametric flows on a training split.
///
/// Zero epochs returns the identity-initialized expert flagged untrained.
pub fn fit_gradient_flow(
    kind: GradientFlowKind,
    train: &SampleSet,
    cfg: &TrainConfig,
) -> Result<FlowExpert> {
    if train.is_empty() {
        return Err(Error::contract("training set is empty".to_string()));
    }
    let dim = train.samples.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match kind {
        GradientFlowKind::Maf => {
            let stack = MafStack::new(dim, cfg.maf_layers, &cfg.hidden, &mut rng);
            if cfg.epochs == 0 {
                return Ok(FlowExpert::from_maf(stack, false));
            }
            let outcome = run_training(stack, &train.samples, cfg);
            let mut expert = FlowExpert::from_maf(outcome.stack, true);
            expert.fit_meta = outcome.meta;
            if outcome.degenerate {
                expert.mark_degenerate();
            }
            Ok(expert)
        }
        GradientFlowKind::RealNvp => {
            let stack = CouplingStack::new(dim, cfg.realnvp_layers, &cfg.hidden, &mut rng);
            if cfg.epochs == 0 {
                return Ok(FlowExpert::from_coupling(stack, false));
            }
            let outcome = run_training(stack, &train.samples, cfg);
            let mut expert = FlowExpert::from_coupling(outcome.stack, true);
            expert.fit_meta = outcome.meta;
            if outcome.degenerate {
                expert.mark_degenerate();
            }
            Ok(expert)
        }
    }
}

/// Fit the non-parametric Gaussianization flow.
pub fn fit_rbig(train: &SampleSet, layers: usize, nodes: usize) -> Result<FlowExpert> {
    let stack = if layers == 0 {
        RbigStack::identity()
    } else {
        RbigStack::fit(&train.samples, layers, nodes)?
    };
    Ok(FlowExpert::from_rbig(stack))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{Split, TargetFamily};
    use crate::LogDensity;

    fn std_gaussian() -> TargetFamily {
        TargetFamily::gaussian_mixture(
            "gauss_std",
            vec![([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn realnvp_reaches_gaussian_entropy_on_gaussian_data() {
        let train = std_gaussian().sample(8_000, 0, Split::Train).unwrap();
        let cfg = TrainConfig {
            epochs: 60,
            seed: 1,
            ..TrainConfig::default()
        };
        let expert = fit_gradient_flow(GradientFlowKind::RealNvp, &train, &cfg).unwrap();
        let nll = -expert
            .log_density(&train.samples)
            .iter()
            .sum::<f64>()
            / train.len() as f64;
        let entropy = LN_TWO_PI + 1.0;
        assert!(
            (nll - entropy).abs() < 0.1,
            "train NLL {nll} vs entropy {entropy}"
        );
    }

    #[test]
    fn zero_epochs_returns_untrained_identity() {
        let train = std_gaussian().sample(500, 0, Split::Train).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let expert = fit_gradient_flow(GradientFlowKind::Maf, &train, &cfg).unwrap();
        assert!(!expert.is_trained());
        let z = ndarray::array![[0.7, -0.4]];
        let (u, ld) = expert.forward(&z).unwrap();
        assert!((u[[0, 0]] - 0.7).abs() < 1e-12 && ld[0].abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let train = TargetFamily::two_moons().sample(2_000, 2, Split::Train).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            seed: 7,
            ..TrainConfig::default()
        };
        let a = fit_gradient_flow(GradientFlowKind::Maf, &train, &cfg).unwrap();
        let b = fit_gradient_flow(GradientFlowKind::Maf, &train, &cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let c = fit_gradient_flow(GradientFlowKind::RealNvp, &train, &cfg).unwrap();
        let d = fit_gradient_flow(GradientFlowKind::RealNvp, &train, &cfg).unwrap();
        assert_eq!(c.to_json().unwrap(), d.to_json().unwrap());
    }

    #[test]
    fn empty_training_set_is_a_contract_error() {
        let family = std_gaussian();
        let mut set = family.sample(10, 0, Split::Train).unwrap();
        set.samples = ndarray::Array2::zeros((0, 2));
        assert!(matches!(
            fit_gradient_flow(GradientFlowKind::Maf, &set, &TrainConfig::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn rbig_zero_layers_is_identity_expert() {
        let train = std_gaussian().sample(500, 0, Split::Train).unwrap();
        let expert = fit_rbig(&train, 0, 100).unwrap();
        let z = ndarray::array![[1.5, -2.5]];
        let (u, ld) = expert.forward(&z).unwrap();
        assert_eq!(u, z);
        assert_eq!(ld[0], 0.0);
    }

    #[test]
    fn loss_curve_is_recorded_and_improves() {
        let train = TargetFamily::bimodal().sample(4_000, 3, Split::Train).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            seed: 4,
            ..TrainConfig::default()
        };
        let expert = fit_gradient_flow(GradientFlowKind::RealNvp, &train, &cfg).unwrap();
        assert_eq!(expert.fit_meta.loss_curve.len(), 30);
        let first = expert.fit_meta.loss_curve[0];
        let last = expert.fit_meta.final_train_log_likelihood;
        assert!(last > first, "no improvement: {first} -> {last}");
    }
}
