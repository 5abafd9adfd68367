//! Benchmark report assembly: per-seed rows, seed-mean aggregation with
//! best/second-best flags, weight records, and the CSV/JSON writers.

use std::collections::BTreeMap;

use amfvi::metrics::{fmt_float, MetricReport};
use serde::{Deserialize, Serialize};

pub const METRIC_NAMES: [&str; 5] = ["nll", "kl", "w2", "mmd_u", "mmd_b"];

/// A float that serializes infinities as strings so report JSON stays lossless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossyFloat(pub f64);

impl Serialize for LossyFloat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str(&fmt_float(self.0))
        }
    }
}

impl<'de> Deserialize<'de> for LossyFloat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<LossyFloat, D::Error> {
        use serde::de::Error;
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::Number(n) => Ok(LossyFloat(n.as_f64().unwrap_or(f64::NAN))),
            serde_json::Value::String(s) if s == "inf" => Ok(LossyFloat(f64::INFINITY)),
            serde_json::Value::String(s) if s == "-inf" => Ok(LossyFloat(f64::NEG_INFINITY)),
            other => Err(D::Error::custom(format!("bad float value {other}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailedCell {
    pub dataset: String,
    pub model: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightRecord {
    pub dataset: String,
    pub seed: u64,
    pub experts: Vec<String>,
    pub pi: Vec<f64>,
    pub n_eff: f64,
}

/// Seed-mean values for one (dataset, metric) row with ranking flags.
/// Ties share a flag; models with no surviving cells are omitted from
/// `values` and excluded from ranking.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub metric: String,
    pub values: BTreeMap<String, LossyFloat>,
    pub best: Vec<String>,
    pub second: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub cells: Vec<MetricReport>,
    pub failed: Vec<FailedCell>,
    pub weights: Vec<WeightRecord>,
    pub aggregate: Vec<AggregateRow>,
}

impl BenchReport {
    pub fn build(
        datasets: &[String],
        models: &[String],
        cells: Vec<MetricReport>,
        failed: Vec<FailedCell>,
        weights: Vec<WeightRecord>,
    ) -> BenchReport {
        let mut aggregate = Vec::new();
        for dataset in datasets {
            for metric in METRIC_NAMES {
                let mut values: BTreeMap<String, LossyFloat> = BTreeMap::new();
                for model in models {
                    let vals: Vec<f64> = cells
                        .iter()
                        .filter(|c| &c.dataset == dataset && &c.model == model)
                        .map(|c| metric_value(c, metric))
                        .collect();
                    if !vals.is_empty() {
                        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                        values.insert(model.clone(), LossyFloat(mean));
                    }
                }
                let (best, second) = rank_models(&values, models);
                aggregate.push(AggregateRow {
                    dataset: dataset.clone(),
                    metric: metric.to_string(),
                    values,
                    best,
                    second,
                });
            }
        }
        BenchReport {
            cells,
            failed,
            weights,
            aggregate,
        }
    }

    /// Per-seed CSV (includes wall time, so not byte-stable across runs).
    pub fn results_csv(&self) -> String {
        let mut out = String::from(MetricReport::CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            out.push_str(&c.to_csv_row());
            out.push('\n');
        }
        out
    }

    /// Aggregate CSV: seed means with best/second flags. Deterministic bytes
    /// for a fixed config and seed list.
    pub fn aggregate_csv(&self, models: &[String]) -> String {
        let mut out = String::from("dataset,metric");
        for m in models {
            out.push(',');
            out.push_str(m);
        }
        out.push_str(",best,second_best\n");
        for row in &self.aggregate {
            out.push_str(&row.dataset);
            out.push(',');
            out.push_str(&row.metric);
            for m in models {
                out.push(',');
                match row.values.get(m) {
                    Some(v) => out.push_str(&fmt_float(v.0)),
                    None => out.push_str("failed"),
                }
            }
            out.push(',');
            out.push_str(&row.best.join("+"));
            out.push(',');
            out.push_str(&row.second.join("+"));
            out.push('\n');
        }
        out
    }

    pub fn weights_csv(&self) -> String {
        let mut out = String::from("dataset,seed,pi_realnvp,pi_maf,pi_rbig,n_eff\n");
        for w in &self.weights {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                w.dataset,
                w.seed,
                fmt_float(w.pi[0]),
                fmt_float(w.pi[1]),
                fmt_float(w.pi[2]),
                fmt_float(w.n_eff)
            ));
        }
        out
    }
}

fn metric_value(c: &MetricReport, metric: &str) -> f64 {
    match metric {
        "nll" => c.nll,
        "kl" => c.kl,
        "w2" => c.w2,
        "mmd_u" => c.mmd_u,
        "mmd_b" => c.mmd_b,
        other => panic!("unknown metric {other}"),
    }
}

/// Best and second-best model groups under ascending value; exact ties are
/// flagged jointly. Model order inside a group follows the config order.
fn rank_models(
    values: &BTreeMap<String, LossyFloat>,
    model_order: &[String],
) -> (Vec<String>, Vec<String>) {
    let mut distinct: Vec<f64> = Vec::new();
    for v in values.values() {
        if v.0.is_nan() {
            continue;
        }
        if !distinct.iter().any(|d| d == &v.0) {
            distinct.push(v.0);
        }
    }
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let group = |target: Option<&f64>| -> Vec<String> {
        match target {
            None => Vec::new(),
            Some(&t) => model_order
                .iter()
                .filter(|m| values.get(*m).is_some_and(|v| v.0 == t))
                .cloned()
                .collect(),
        }
    };
    (group(distinct.first()), group(distinct.get(1)))
}
