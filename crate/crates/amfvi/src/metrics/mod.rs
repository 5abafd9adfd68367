//! The five evaluation quantities: NLL, Monte-Carlo KL(p||q), empirical
//! Wasserstein-2 via exact assignment, and RBF-kernel MMD in unbiased
//! (U-statistic) and biased (V-statistic) forms.

mod assignment;

pub use assignment::solve_assignment;

use serde::{Deserialize, Serialize};

use crate::targets::{McEstimate, SampleSet, Split, TargetFamily};
use crate::{Error, LogDensity, Matrix, Result, LOG_DENSITY_SENTINEL};

/// RBF kernel configuration for MMD.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum KernelConfig {
    /// Bandwidth = median pairwise distance of the pooled samples.
    MedianHeuristic,
    /// Explicit bandwidth (> 0).
    Fixed(f64),
}

impl KernelConfig {
    fn validate(&self) -> Result<()> {
        if let KernelConfig::Fixed(b) = self {
            if !(*b > 0.0) {
                return Err(Error::config(format!("bandwidth {b} must be positive")));
            }
        }
        Ok(())
    }
}

/// Both MMD estimates plus the bandwidth actually used.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MmdResult {
    /// `sign(U) * sqrt(|U|)` of the unbiased U-statistic.
    pub unbiased: f64,
    /// `sqrt(max(V, 0))` of the biased V-statistic.
    pub biased: f64,
    /// Raw squared-MMD U-statistic (may be negative).
    pub raw_u: f64,
    /// Raw squared-MMD V-statistic.
    pub raw_v: f64,
    pub bandwidth: f64,
    /// Set when the pooled set was degenerate and the bandwidth fell back to 1.
    pub bandwidth_fallback: bool,
}

/// One evaluated (dataset, model, seed) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub model: String,
    #[serde(with = "float_or_inf")]
    pub nll: f64,
    #[serde(with = "float_or_inf")]
    pub kl: f64,
    pub w2: f64,
    pub mmd_u: f64,
    pub mmd_b: f64,
    pub n_eval: usize,
    pub seed: u64,
    /// Wall-clock seconds spent evaluating this cell.
    pub wall_time: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str =
        "dataset,model,nll,kl,w2,mmd_u,mmd_b,n_eval,seed,wall_time";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.dataset,
            self.model,
            fmt_float(self.nll),
            fmt_float(self.kl),
            fmt_float(self.w2),
            fmt_float(self.mmd_u),
            fmt_float(self.mmd_b),
            self.n_eval,
            self.seed,
            fmt_float(self.wall_time),
        )
    }
}

/// Plain-text float formatting shared by all CSV exports: shortest
/// round-trip representation, `inf` for infinities.
pub fn fmt_float(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v}")
    }
}

/// Serialize possibly-infinite scalars as `"inf"` strings in JSON.
mod float_or_inf {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct FloatOrInf;

    impl Visitor<'_> for FloatOrInf {
        type Value = f64;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            write!(f, "a float or an \"inf\" string")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(E::custom(format!("unexpected float string {other:?}"))),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(FloatOrInf)
    }
}

/// Negative mean model log-density over an evaluation set.
///
/// Any sentinel row makes the estimate `+inf`.
pub fn nll(model: &dyn LogDensity, eval: &SampleSet) -> McEstimate {
    assert!(!eval.is_empty(), "nll needs a nonempty evaluation set");
    let logs = model.log_density(&eval.samples);
    if logs.iter().any(|v| *v == LOG_DENSITY_SENTINEL) {
        return McEstimate {
            value: f64::INFINITY,
            std_error: f64::INFINITY,
        };
    }
    let neg: Vec<f64> = logs.iter().map(|v| -v).collect();
    McEstimate::from_values(&neg)
}

/// Monte-Carlo `KL(p || q)` over `n` fresh target samples.
pub fn kl_mc(
    target: &TargetFamily,
    model: &dyn LogDensity,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    let set = target.sample(n, seed, Split::Fresh)?;
    let log_p = target.log_density(&set.samples);
    let log_q = model.log_density(&set.samples);
    if log_q.iter().any(|v| *v == LOG_DENSITY_SENTINEL) {
        return Ok(McEstimate {
            value: f64::INFINITY,
            std_error: f64::INFINITY,
        });
    }
    let diffs: Vec<f64> = log_p.iter().zip(&log_q).map(|(p, q)| p - q).collect();
    Ok(McEstimate::from_values(&diffs))
}

/// Empirical Wasserstein-2: square root of the optimal one-to-one
/// assignment cost under squared Euclidean ground cost, solved exactly.
pub fn w2(x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.nrows() != y.nrows() {
        return Err(Error::contract(format!(
            "w2 needs equal sample counts, got {} and {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.ncols() != y.ncols() {
        return Err(Error::contract(format!(
            "w2 needs equal dimensions, got {} and {}",
            x.ncols(),
            y.ncols()
        )));
    }
    let n = x.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let mut cost = ndarray::Array2::zeros((n, n));
    for i in 0..n {
        let xi = x.row(i);
        for j in 0..n {
            let yj = y.row(j);
            let mut d = 0.0;
            for (a, b) in xi.iter().zip(yj.iter()) {
                d += (a - b) * (a - b);
            }
            cost[[i, j]] = d;
        }
    }
    let (_, total) = solve_assignment(&cost)?;
    Ok((total / n as f64).sqrt())
}

/// Gaussian-RBF MMD, unbiased and biased estimates.
pub fn mmd(x: &Matrix, y: &Matrix, kernel: &KernelConfig) -> Result<MmdResult> {
    kernel.validate()?;
    let (n, m) = (x.nrows(), y.nrows());
    if n < 2 || m < 2 {
        return Err(Error::contract(
            "mmd needs at least 2 samples per side".to_string(),
        ));
    }
    if x.ncols() != y.ncols() {
        return Err(Error::contract("mmd dimension mismatch".to_string()));
    }

    let (bandwidth, fallback) = match kernel {
        KernelConfig::Fixed(b) => (*b, false),
        KernelConfig::MedianHeuristic => median_bandwidth(x, y),
    };
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);

    let kernel_sum = |a: &Matrix, b: &Matrix| -> f64 {
        let mut total = 0.0;
        for i in 0..a.nrows() {
            let ai = a.row(i);
            for j in 0..b.nrows() {
                let mut d = 0.0;
                for (p, q) in ai.iter().zip(b.row(j).iter()) {
                    d += (p - q) * (p - q);
                }
                total += (-gamma * d).exp();
            }
        }
        total
    };

    let kxx = kernel_sum(x, x);
    let kyy = kernel_sum(y, y);
    let kxy = kernel_sum(x, y);
    let (nf, mf) = (n as f64, m as f64);

    let raw_v = kxx / (nf * nf) + kyy / (mf * mf) - 2.0 * (kxy / (nf * mf));
    // Diagonal kernel values are exp(0) = 1.
    let raw_u = (kxx - nf) / (nf * (nf - 1.0)) + (kyy - mf) / (mf * (mf - 1.0))
        - 2.0 * (kxy / (nf * mf));

    Ok(MmdResult {
        unbiased: raw_u.signum() * raw_u.abs().sqrt(),
        biased: raw_v.max(0.0).sqrt(),
        raw_u,
        raw_v,
        bandwidth,
        bandwidth_fallback: fallback,
    })
}

/// Median pairwise Euclidean distance over the pooled samples, with a
/// fallback to 1.0 when all points coincide.
fn median_bandwidth(x: &Matrix, y: &Matrix) -> (f64, bool) {
    let total = x.nrows() + y.nrows();
    let row = |i: usize| {
        if i < x.nrows() {
            x.row(i)
        } else {
            y.row(i - x.nrows())
        }
    };
    let mut dists = Vec::with_capacity(total * (total - 1) / 2);
    for i in 0..total {
        let ri = row(i);
        for j in (i + 1)..total {
            let mut d = 0.0;
            for (a, b) in ri.iter().zip(row(j).iter()) {
                d += (a - b) * (a - b);
            }
            dists.push(d.sqrt());
        }
    }
    if dists.is_empty() {
        return (1.0, true);
    }
    let mid = dists.len() / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    if *median > 0.0 {
        (*median, false)
    } else {
        (1.0, true)
    }
}
