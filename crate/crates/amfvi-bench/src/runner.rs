//! The benchmark grid engine: data generation, two-stage training, metric
//! evaluation, and plot emission.
//!
//! Grid cells are pure functions of `(config, dataset, model, seed)`; all
//! randomness flows from per-cell derived seeds, so results do not depend on
//! worker count or execution order. A failing cell is recorded and never
//! aborts the rest of the grid.

use std::fs;
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::time::Instant;

use amfvi::derive_seed;
use amfvi::flows::{fit_gradient_flow, fit_rbig, FlowExpert, GradientFlowKind};
use amfvi::metrics::{kl_mc, mmd, nll, w2, KernelConfig, MetricReport};
use amfvi::mixture::{effective_experts, stage2_adapt, MixtureModel};
use amfvi::targets::{SampleSet, Split, TargetFamily};
use amfvi::Matrix;
use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, EXPERT_ORDER};
use crate::model::SavedModel;
use crate::plot::{scatter_row_svg, weights_bar_svg};
use crate::report::{BenchReport, FailedCell, WeightRecord};

/// Panel order in the qualitative figure: truth first, mixture last.
const PANEL_MODELS: [&str; 4] = ["realnvp", "maf", "rbig", "amf_vi"];

const PURPOSE_STAGE1: u64 = 0xA1;
const PURPOSE_STAGE2: u64 = 0xA2;
const PURPOSE_SAMPLE: u64 = 0xA3;
const PURPOSE_KL: u64 = 0xA4;

/// Stable name tag for seed derivation (FNV-1a), so cell seeds do not
/// depend on list positions in the config.
fn tag(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool construction")
}

fn catch<T>(f: impl FnOnce() -> Result<T>) -> Result<T> {
    match std::panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            Err(anyhow!("cell panicked: {msg}"))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateManifest {
    pub datasets: Vec<String>,
    pub seeds: Vec<u64>,
    pub train_size: usize,
    pub eval_size: usize,
    pub files: Vec<ManifestFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFile {
    pub dataset: String,
    pub seed: u64,
    pub split: String,
    pub path: String,
    pub rows: usize,
}

/// Write train/eval CSVs for every (dataset, seed) plus a manifest.
pub fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    let mut files = Vec::new();
    for dataset in &cfg.datasets {
        let family = TargetFamily::by_name(dataset).map_err(|e| anyhow!("{e}"))?;
        for &seed in &cfg.seeds {
            let dir = cfg.out.join("data").join(dataset).join(seed.to_string());
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for (split, size) in [
                (Split::Train, cfg.data.train_size),
                (Split::Eval, cfg.data.eval_size),
            ] {
                let set = family
                    .sample(size, seed, split)
                    .map_err(|e| anyhow!("{e}"))?;
                let path = dir.join(format!("{}.csv", split.as_str()));
                let mut buf = Vec::new();
                set.write_csv(&mut buf).map_err(|e| anyhow!("{e}"))?;
                fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
                files.push(ManifestFile {
                    dataset: dataset.clone(),
                    seed,
                    split: split.as_str().to_string(),
                    path: path.to_string_lossy().into_owned(),
                    rows: size,
                });
            }
        }
    }
    let manifest = GenerateManifest {
        datasets: cfg.datasets.clone(),
        seeds: cfg.seeds.clone(),
        train_size: cfg.data.train_size,
        eval_size: cfg.data.eval_size,
        files,
    };
    let path = cfg.out.join("data").join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn fit_expert(
    cfg: &RunConfig,
    name: &str,
    train: &SampleSet,
    dataset: &str,
    seed: u64,
) -> Result<FlowExpert> {
    let s1_seed = derive_seed(seed, &[tag(dataset), tag(name), PURPOSE_STAGE1]);
    let expert = match name {
        "realnvp" => {
            let tc = cfg.train_config(s1_seed);
            fit_gradient_flow(GradientFlowKind::RealNvp, train, &tc)
        }
        "maf" => {
            let mut tc = cfg.train_config(s1_seed);
            if let Some(epochs) = cfg.stage1.maf_epochs {
                tc.epochs = epochs;
            }
            fit_gradient_flow(GradientFlowKind::Maf, train, &tc)
        }
        "rbig" => fit_rbig(train, cfg.stage1.rbig_layers, cfg.stage1.rbig_nodes),
        other => return Err(anyhow!("unknown expert {other}")),
    };
    expert.map_err(|e| anyhow!("{e}"))
}

fn write_trajectory_csv(path: &Path, mixture: &MixtureModel) -> Result<()> {
    let mut out = String::from("epoch,pi_realnvp,pi_maf,pi_rbig,n_eff\n");
    for (epoch, pi) in mixture.trajectory().iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            epoch,
            amfvi::metrics::fmt_float(pi[0]),
            amfvi::metrics::fmt_float(pi[1]),
            amfvi::metrics::fmt_float(pi[2]),
            amfvi::metrics::fmt_float(effective_experts(pi))
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

fn train_cell(cfg: &RunConfig, dataset: &str, seed: u64) -> Result<()> {
    let family = TargetFamily::by_name(dataset).map_err(|e| anyhow!("{e}"))?;
    let train = family
        .sample(cfg.data.train_size, seed, Split::Train)
        .map_err(|e| anyhow!("{e}"))?;
    let needs_mixture = cfg.models.iter().any(|m| m == "amf_vi");

    let mut experts = Vec::new();
    for name in EXPERT_ORDER {
        let wanted = needs_mixture || cfg.models.iter().any(|m| m == name);
        if !wanted {
            continue;
        }
        let expert = fit_expert(cfg, name, &train, dataset, seed)?;
        let dir = cfg.cell_dir(dataset, name, seed);
        fs::create_dir_all(&dir)?;
        SavedModel::Expert(expert.clone()).save(&dir.join("model.bin"))?;
        experts.push(expert);
    }

    if needs_mixture {
        let s2_seed = derive_seed(seed, &[tag(dataset), PURPOSE_STAGE2]);
        let mixture = stage2_adapt(experts, &cfg.stage2_config(), &family, s2_seed)
            .map_err(|e| anyhow!("{e}"))?;
        let dir = cfg.cell_dir(dataset, "amf_vi", seed);
        fs::create_dir_all(&dir)?;
        write_trajectory_csv(&dir.join("trajectory.csv"), &mixture)?;
        SavedModel::Mixture(mixture).save(&dir.join("model.bin"))?;
    }
    Ok(())
}

/// Stage-1 + stage-2 training over the (dataset, seed) grid.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<FailedCell>> {
    let cells: Vec<(String, u64)> = cfg
        .datasets
        .iter()
        .flat_map(|d| cfg.seeds.iter().map(move |&s| (d.clone(), s)))
        .collect();
    let outcomes: Vec<Result<()>> = pool(cfg.workers).install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|(dataset, seed)| catch(|| train_cell(cfg, dataset, *seed)))
            .collect()
    });
    let mut failed = Vec::new();
    for ((dataset, seed), outcome) in cells.into_iter().zip(outcomes) {
        if let Err(e) = outcome {
            failed.push(FailedCell {
                dataset,
                model: "training".to_string(),
                seed,
                error: format!("{e:#}"),
            });
        }
    }
    Ok(failed)
}

fn eval_cell(cfg: &RunConfig, dataset: &str, model: &str, seed: u64) -> Result<MetricReport> {
    let start = Instant::now();
    let family = TargetFamily::by_name(dataset).map_err(|e| anyhow!("{e}"))?;
    let saved = SavedModel::load(&cfg.cell_dir(dataset, model, seed).join("model.bin"))?;

    let eval = family
        .sample(cfg.data.eval_size, seed, Split::Eval)
        .map_err(|e| anyhow!("{e}"))?;
    let slice_set = |n: usize| SampleSet {
        samples: eval.samples.slice(ndarray::s![..n, ..]).to_owned(),
        family: eval.family.clone(),
        seed,
        split: Split::Eval,
    };

    let nll_est = nll(&saved, &slice_set(cfg.metrics.nll_samples));
    let kl_est = kl_mc(
        &family,
        &saved,
        cfg.metrics.kl_samples,
        derive_seed(seed, &[tag(dataset), PURPOSE_KL]),
    )
    .map_err(|e| anyhow!("{e}"))?;

    let n_model = cfg.metrics.w2_samples.max(cfg.metrics.mmd_samples);
    let model_samples = saved
        .sample(n_model, derive_seed(seed, &[tag(dataset), tag(model), PURPOSE_SAMPLE]))
        .map_err(|e| anyhow!("{e}"))?;
    let slice = |m: &Matrix, n: usize| m.slice(ndarray::s![..n, ..]).to_owned();

    let w2_v = w2(
        &slice(&eval.samples, cfg.metrics.w2_samples),
        &slice(&model_samples, cfg.metrics.w2_samples),
    )
    .map_err(|e| anyhow!("{e}"))?;
    let mmd_r = mmd(
        &slice(&eval.samples, cfg.metrics.mmd_samples),
        &slice(&model_samples, cfg.metrics.mmd_samples),
        &KernelConfig::MedianHeuristic,
    )
    .map_err(|e| anyhow!("{e}"))?;

    let dir = cfg.cell_dir(dataset, model, seed);
    fs::create_dir_all(&dir)?;
    let sample_set = SampleSet {
        samples: slice(&model_samples, cfg.metrics.w2_samples),
        family: dataset.to_string(),
        seed,
        split: Split::Fresh,
    };
    let mut buf = Vec::new();
    sample_set.write_csv(&mut buf).map_err(|e| anyhow!("{e}"))?;
    fs::write(dir.join("samples.csv"), buf)?;

    let report = MetricReport {
        dataset: dataset.to_string(),
        model: model.to_string(),
        nll: nll_est.value,
        kl: kl_est.value,
        w2: w2_v,
        mmd_u: mmd_r.unbiased,
        mmd_b: mmd_r.biased,
        n_eval: cfg.metrics.nll_samples,
        seed,
        wall_time: start.elapsed().as_secs_f64(),
    };
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Metric evaluation over the (dataset, model, seed) grid; writes the
/// per-seed CSV, the flagged aggregate CSV, the weight records, and the
/// JSON report. Returns the report and the number of failed cells.
pub fn cmd_eval(cfg: &RunConfig) -> Result<(BenchReport, usize)> {
    let cells: Vec<(String, String, u64)> = cfg
        .datasets
        .iter()
        .flat_map(|d| {
            cfg.models
                .iter()
                .flat_map(move |m| cfg.seeds.iter().map(move |&s| (d.clone(), m.clone(), s)))
        })
        .collect();
    let outcomes: Vec<Result<MetricReport>> = pool(cfg.workers).install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|(dataset, model, seed)| catch(|| eval_cell(cfg, dataset, model, *seed)))
            .collect()
    });

    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for ((dataset, model, seed), outcome) in cells.into_iter().zip(outcomes) {
        match outcome {
            Ok(r) => reports.push(r),
            Err(e) => failed.push(FailedCell {
                dataset,
                model,
                seed,
                error: format!("{e:#}"),
            }),
        }
    }

    let weights = collect_weight_records(cfg);
    let report = BenchReport::build(&cfg.datasets, &cfg.models, reports, failed, weights);

    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("results.csv"), report.results_csv())?;
    fs::write(
        cfg.out.join("aggregate.csv"),
        report.aggregate_csv(&cfg.models),
    )?;
    fs::write(cfg.out.join("weights.csv"), report.weights_csv())?;
    fs::write(
        cfg.out.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    let n_failed = report.failed.len();
    Ok((report, n_failed))
}

fn collect_weight_records(cfg: &RunConfig) -> Vec<WeightRecord> {
    let mut records = Vec::new();
    if !cfg.models.iter().any(|m| m == "amf_vi") {
        return records;
    }
    for dataset in &cfg.datasets {
        for &seed in &cfg.seeds {
            let path = cfg.cell_dir(dataset, "amf_vi", seed).join("model.bin");
            let Ok(SavedModel::Mixture(m)) = SavedModel::load(&path) else {
                continue;
            };
            records.push(WeightRecord {
                dataset: dataset.clone(),
                seed,
                experts: EXPERT_ORDER.iter().map(|s| s.to_string()).collect(),
                pi: m.weights().to_vec(),
                n_eff: effective_experts(m.weights()),
            });
        }
    }
    records
}

/// Scatter rows and the weight bar chart. Missing artifacts render as
/// annotated placeholders; returns how many panels were unavailable.
pub fn cmd_plot(cfg: &RunConfig) -> Result<usize> {
    let plots = cfg.out.join("plots");
    fs::create_dir_all(&plots)?;
    let seed = *cfg.seeds.first().expect("validated nonempty");
    let mut unavailable = 0usize;

    for dataset in &cfg.datasets {
        let family = TargetFamily::by_name(dataset).map_err(|e| anyhow!("{e}"))?;
        let truth = family
            .sample(cfg.plot.points, seed, Split::Eval)
            .map_err(|e| anyhow!("{e}"))?
            .samples;
        let mut panels = vec![("truth".to_string(), Some(truth))];
        for model in PANEL_MODELS {
            let points = SavedModel::load(&cfg.cell_dir(dataset, model, seed).join("model.bin"))
                .ok()
                .and_then(|m| {
                    m.sample(
                        cfg.plot.points,
                        derive_seed(seed, &[tag(dataset), tag(model), PURPOSE_SAMPLE]),
                    )
                    .ok()
                });
            if points.is_none() {
                unavailable += 1;
            }
            panels.push((model.to_string(), points));
        }
        let svg = scatter_row_svg(dataset, &panels, cfg.plot.axis);
        fs::write(plots.join(format!("{dataset}_samples.svg")), svg)?;
    }

    let mut rows = Vec::new();
    for dataset in &cfg.datasets {
        let path = cfg.cell_dir(dataset, "amf_vi", seed).join("model.bin");
        if let Ok(SavedModel::Mixture(m)) = SavedModel::load(&path) {
            let bars: Vec<(String, f64)> = EXPERT_ORDER
                .iter()
                .zip(m.weights())
                .map(|(n, &w)| (n.to_string(), w))
                .collect();
            rows.push((dataset.clone(), bars, effective_experts(m.weights())));
        }
    }
    fs::write(plots.join("weights.svg"), weights_bar_svg(&rows))?;
    Ok(unavailable)
}

/// All stages in order; returns the total number of failed cells.
pub fn cmd_run(cfg: &RunConfig) -> Result<usize> {
    cmd_generate(cfg)?;
    let train_failed = cmd_train(cfg)?;
    let (_, eval_failed) = cmd_eval(cfg)?;
    cmd_plot(cfg)?;
    Ok(train_failed.len() + eval_failed)
}
