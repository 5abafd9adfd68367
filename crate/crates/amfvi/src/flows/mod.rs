//! The three heterogeneous flow experts behind one invertible-density
//! interface: log-density, sampling, and forward/inverse transforms with
//! log-det-Jacobian.
//!
//! All three flows map data to a standard-Gaussian base distribution in the
//! forward direction. Log-densities follow the change-of-variables formula
//! `log q(z) = log N(forward(z); 0, I) + log|det ∂u/∂z|`, with a deterministic
//! guard that maps non-finite or catastrophically low rows to a `-inf`
//! sentinel.

mod maf;
mod realnvp;
mod rbig;
mod train;

pub use maf::MafStack;
pub use realnvp::CouplingStack;
pub use rbig::RbigStack;
pub use train::{fit_gradient_flow, fit_rbig, GradientFlowKind, TrainConfig};

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{guard_log_density, Error, LogDensity, Matrix, Result, LOG_DENSITY_SENTINEL};

const LN_TWO_PI: f64 = 1.8378770664093453;

/// Log-scale outputs are clamped to this range before exponentiation.
pub(crate) const SCALE_CLAMP: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    RealNvp,
    Maf,
    Rbig,
}

impl FlowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FlowKind::RealNvp => "realnvp",
            FlowKind::Maf => "maf",
            FlowKind::Rbig => "rbig",
        }
    }

    pub fn from_str(s: &str) -> Result<FlowKind> {
        match s {
            "realnvp" => Ok(FlowKind::RealNvp),
            "maf" => Ok(FlowKind::Maf),
            "rbig" => Ok(FlowKind::Rbig),
            other => Err(Error::config(format!("unknown flow kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Stack {
    Maf(MafStack),
    Coupling(CouplingStack),
    Rbig(RbigStack),
    /// Training diverged before any usable checkpoint; there is no transform
    /// and every log-density reports the sentinel.
    None,
}

/// Summary of a fitting run, kept with the serialized model.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitMeta {
    pub epochs_run: usize,
    /// Mean train log-likelihood per epoch (NaN entries mark divergent epochs).
    pub loss_curve: Vec<f64>,
    pub final_train_log_likelihood: f64,
    pub divergent_batches: u64,
}

/// A trained (frozen) invertible model over a standard-Gaussian base.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowExpert {
    kind: FlowKind,
    stack: Stack,
    dim: usize,
    trained: bool,
    degenerate: bool,
    frozen: bool,
    #[serde(default)]
    pub fit_meta: FitMeta,
}

impl FlowExpert {
    pub(crate) fn from_maf(stack: MafStack, trained: bool) -> FlowExpert {
        let dim = stack.dim();
        FlowExpert {
            kind: FlowKind::Maf,
            stack: Stack::Maf(stack),
            dim,
            trained,
            degenerate: false,
            frozen: true,
            fit_meta: FitMeta::default(),
        }
    }

    pub(crate) fn from_coupling(stack: CouplingStack, trained: bool) -> FlowExpert {
        let dim = stack.dim();
        FlowExpert {
            kind: FlowKind::RealNvp,
            stack: Stack::Coupling(stack),
            dim,
            trained,
            degenerate: false,
            frozen: true,
            fit_meta: FitMeta::default(),
        }
    }

    pub(crate) fn from_rbig(stack: RbigStack) -> FlowExpert {
        let dim = stack.dim();
        FlowExpert {
            kind: FlowKind::Rbig,
            stack: Stack::Rbig(stack),
            dim,
            trained: true,
            degenerate: false,
            frozen: true,
            fit_meta: FitMeta::default(),
        }
    }

    /// An expert whose training diverged before producing any usable
    /// checkpoint. Its log-density is the sentinel everywhere; sampling
    /// falls through to the base distribution.
    pub fn degenerate(kind: FlowKind, dim: usize) -> FlowExpert {
        FlowExpert {
            kind,
            stack: Stack::None,
            dim,
            trained: false,
            degenerate: true,
            frozen: true,
            fit_meta: FitMeta::default(),
        }
    }

    pub fn kind(&self) -> FlowKind {
        self.kind
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub(crate) fn mark_degenerate(&mut self) {
        self.degenerate = true;
    }

    /// Data-to-base transform with per-row log-det-Jacobian.
    ///
    /// Non-finite intermediates are reported with the index of the layer
    /// that produced them.
    pub fn forward(&self, z: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        self.check_cols(z)?;
        let (u, log_det) = match &self.stack {
            Stack::Maf(s) => s.forward_checked(z)?,
            Stack::Coupling(s) => s.forward_checked(z)?,
            Stack::Rbig(s) => s.forward_checked(z)?,
            Stack::None => {
                return Err(Error::numerical("degenerate expert has no transform"))
            }
        };
        Ok((u, log_det))
    }

    /// Base-to-data transform.
    pub fn inverse(&self, u: &Matrix) -> Result<Matrix> {
        self.check_cols(u)?;
        match &self.stack {
            Stack::Maf(s) => Ok(s.inverse(u)),
            Stack::Coupling(s) => Ok(s.inverse(u)),
            Stack::Rbig(s) => Ok(s.inverse(u)),
            Stack::None => Err(Error::numerical("degenerate expert has no transform")),
        }
    }

    /// Guarded per-row log-density under the flow.
    pub fn log_prob(&self, z: &Matrix) -> Vec<f64> {
        assert_eq!(z.ncols(), self.dim, "log_prob: dimension mismatch");
        match &self.stack {
            Stack::None => vec![LOG_DENSITY_SENTINEL; z.nrows()],
            _ => {
                let (u, log_det) = match &self.stack {
                    Stack::Maf(s) => s.forward_raw(z),
                    Stack::Coupling(s) => s.forward_raw(z),
                    Stack::Rbig(s) => s.forward_raw(z),
                    Stack::None => unreachable!(),
                };
                u.rows()
                    .into_iter()
                    .zip(&log_det)
                    .map(|(row, &ld)| {
                        let sq: f64 = row.iter().map(|v| v * v).sum();
                        let base = -0.5 * self.dim as f64 * LN_TWO_PI - 0.5 * sq;
                        guard_log_density(base + ld)
                    })
                    .collect()
            }
        }
    }

    /// Draw `n` samples by pushing base-Gaussian draws through the inverse.
    ///
    /// Deterministic per seed; `n = 0` yields an empty matrix with `dim`
    /// columns. A degenerate expert returns the base draws unchanged.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Matrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Array2::from_shape_fn((n, self.dim), |_| rng.sample::<f64, _>(StandardNormal));
        if n == 0 {
            return Ok(u);
        }
        match &self.stack {
            Stack::None => Ok(u),
            _ => self.inverse(&u),
        }
    }

    /// Serialize to a self-describing JSON document; round-trips bit-exactly.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<FlowExpert> {
        let expert: FlowExpert = serde_json::from_str(text)?;
        Ok(expert)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<FlowExpert> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    fn check_cols(&self, z: &Matrix) -> Result<()> {
        if z.ncols() != self.dim {
            return Err(Error::contract(format!(
                "batch has {} columns, expert expects {}",
                z.ncols(),
                self.dim
            )));
        }
        Ok(())
    }
}

impl LogDensity for FlowExpert {
    fn log_density(&self, z: &Matrix) -> Vec<f64> {
        self.log_prob(z)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{Split, TargetFamily};
    use ndarray::array;

    fn identity_experts() -> Vec<FlowExpert> {
        let mut cfg = TrainConfig::default();
        cfg.epochs = 0;
        let train = TargetFamily::bimodal().sample(128, 0, Split::Train).unwrap();
        vec![
            fit_gradient_flow(GradientFlowKind::RealNvp, &train, &cfg).unwrap(),
            fit_gradient_flow(GradientFlowKind::Maf, &train, &cfg).unwrap(),
            fit_rbig(&train, 0, 32).unwrap(),
        ]
    }

    #[test]
    fn identity_experts_are_the_identity_map() {
        let z = array![[0.3, -1.2], [2.0, 0.5], [0.0, 0.0]];
        for expert in identity_experts() {
            let (u, log_det) = expert.forward(&z).unwrap();
            for (a, b) in z.iter().zip(u.iter()) {
                assert!((a - b).abs() < 1e-12, "{:?}", expert.kind());
            }
            assert!(log_det.iter().all(|&d| d.abs() < 1e-12));
            let back = expert.inverse(&z).unwrap();
            for (a, b) in z.iter().zip(back.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_expert_log_prob_is_standard_gaussian() {
        let z = array![[0.0, 0.0], [3.0, 4.0]];
        for expert in identity_experts() {
            let lp = expert.log_prob(&z);
            assert!((lp[0] + LN_TWO_PI).abs() < 1e-10, "{:?}", expert.kind());
            assert!((lp[1] + LN_TWO_PI + 12.5).abs() < 1e-10);
        }
    }

    #[test]
    fn identity_expert_samples_standard_gaussian() {
        for expert in identity_experts() {
            let n = 20_000;
            let s = expert.sample(n, 42).unwrap();
            let mean0 = s.column(0).sum() / n as f64;
            let mean1 = s.column(1).sum() / n as f64;
            let bound = 3.0 / (n as f64).sqrt();
            assert!(mean0.abs() < bound && mean1.abs() < bound);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_empty_n_works() {
        for expert in identity_experts() {
            let a = expert.sample(64, 9).unwrap();
            let b = expert.sample(64, 9).unwrap();
            assert_eq!(a, b);
            let empty = expert.sample(0, 9).unwrap();
            assert_eq!(empty.nrows(), 0);
            assert_eq!(empty.ncols(), 2);
        }
    }

    #[test]
    fn degenerate_expert_reports_sentinel() {
        let expert = FlowExpert::degenerate(FlowKind::Maf, 2);
        let z = array![[0.0, 0.0]];
        assert_eq!(expert.log_prob(&z)[0], LOG_DENSITY_SENTINEL);
        assert!(expert.is_degenerate());
        assert!(expert.forward(&z).is_err());
        // Sampling falls through to the base distribution.
        assert_eq!(expert.sample(5, 1).unwrap().nrows(), 5);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let train = TargetFamily::two_moons()
            .sample(2_000, 3, Split::Train)
            .unwrap();
        let mut cfg = TrainConfig::default();
        cfg.epochs = 3;
        for expert in [
            fit_gradient_flow(GradientFlowKind::RealNvp, &train, &cfg).unwrap(),
            fit_gradient_flow(GradientFlowKind::Maf, &train, &cfg).unwrap(),
            fit_rbig(&train, 5, 64).unwrap(),
        ] {
            let text = expert.to_json().unwrap();
            let back = FlowExpert::from_json(&text).unwrap();
            let z = array![[0.4, -0.9], [1.3, 2.2]];
            let lp_a = expert.log_prob(&z);
            let lp_b = back.log_prob(&z);
            assert_eq!(lp_a, lp_b, "{:?}", expert.kind());
            assert_eq!(text, back.to_json().unwrap());
        }
    }
}

