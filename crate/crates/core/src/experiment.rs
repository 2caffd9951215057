//! Experiment runner: config resolution, protocol runs over folds and
//! trials, result tables, hyperparameter sweeps, and the ablation suite.
//!
//! Every run is self-describing: the resolved config, normalization
//! statistics, per-epoch logs, and checkpoints land under the output
//! directory, and `results.csv` / `results.json` are byte-stable across
//! reruns of the same config.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::concept::RegularizerKind;
use crate::data::split::{make_split, num_folds, Protocol, SplitIndices, SplitPlan};
use crate::data::{compute_channel_stats, ChannelStats, WindowedDataset};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{ModelConfig, ModelParams};
use crate::train::{train_loop, write_log, TrainConfig};

fn default_trials() -> usize {
    3
}
fn default_val_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Canonical dataset directory.
    pub dataset: PathBuf,
    pub protocol: Protocol,
    /// Specific fold, or all folds of the protocol when absent.
    #[serde(default)]
    pub fold: Option<usize>,
    /// Architecture preset name; mutually exclusive with `model`.
    #[serde(default)]
    pub model_preset: Option<String>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) || self.val_fraction == 0.0 {
            return Err(Error::Config("val_fraction must be in (0, 1)".into()));
        }
        if self.model.is_some() && self.model_preset.is_some() {
            return Err(Error::Config("set either model or model_preset, not both".into()));
        }
        Ok(())
    }

    /// The architecture for this run, checked against the dataset shape.
    pub fn resolve_model(&self, ds: &WindowedDataset) -> Result<ModelConfig> {
        let cfg = match (&self.model, &self.model_preset) {
            (Some(m), None) => m.clone(),
            (None, Some(name)) => ModelConfig::preset(name)?,
            (None, None) => ModelConfig::preset(&ds.meta.name).unwrap_or(ModelConfig {
                in_channels: ds.meta.channels,
                window_len: ds.meta.window,
                kernel_len: 6,
                channels_block1: 16,
                channels_block2: 32,
                num_classes: ds.num_classes(),
                activation: crate::nn::Activation::Relu,
                block_order: crate::model::BlockOrder::PoolThenNorm,
            }),
            (Some(_), Some(_)) => unreachable!("validated"),
        };
        if cfg.in_channels != ds.meta.channels
            || cfg.window_len != ds.meta.window
            || cfg.num_classes != ds.num_classes()
        {
            return Err(Error::shape(
                "resolve_model",
                format!(
                    "dataset ({}, 1, {}) with {} classes",
                    ds.meta.channels,
                    ds.meta.window,
                    ds.num_classes()
                ),
                format!(
                    "model ({}, 1, {}) with {} classes",
                    cfg.in_channels, cfg.window_len, cfg.num_classes
                ),
            ));
        }
        Ok(cfg)
    }

    /// The benchmark configuration for the default synthetic dataset.
    pub fn synth_benchmark(dataset: PathBuf, output: PathBuf) -> ExperimentConfig {
        ExperimentConfig {
            dataset,
            protocol: Protocol::CrossPerson,
            fold: None,
            model_preset: Some("synth".into()),
            model: None,
            train: TrainConfig {
                lr: 1e-3,
                max_epochs: 60,
                batch_mode: crate::train::BatchMode::Uniform,
                ..TrainConfig::default()
            },
            trials: 1,
            val_fraction: 0.2,
            output,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub protocol: String,
    pub fold: usize,
    pub trial: usize,
    pub seed: u64,
    pub status: String,
    pub val_acc: Option<f64>,
    pub target_acc: Option<f64>,
    pub checkpoint: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodAggregate {
    pub method: String,
    /// Mean target accuracy per fold over successful trials.
    pub fold_means: BTreeMap<usize, f64>,
    /// Arithmetic mean of the per-fold means.
    pub avg: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

fn fmt_acc(v: Option<f64>) -> String {
    match v {
        Some(a) => format!("{a:.4}"),
        None => String::new(),
    }
}

impl ResultTable {
    /// Aggregates recomputed from raw rows; rows with errors are skipped.
    pub fn aggregates(&self) -> Vec<MethodAggregate> {
        let mut per_method: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
        for row in &self.rows {
            if let Some(acc) = row.target_acc {
                per_method
                    .entry(row.method.clone())
                    .or_default()
                    .entry(row.fold)
                    .or_default()
                    .push(acc);
            }
        }
        per_method
            .into_iter()
            .map(|(method, folds)| {
                let fold_means: BTreeMap<usize, f64> = folds
                    .into_iter()
                    .map(|(fold, accs)| (fold, accs.iter().sum::<f64>() / accs.len() as f64))
                    .collect();
                let avg = if fold_means.is_empty() {
                    0.0
                } else {
                    fold_means.values().sum::<f64>() / fold_means.len() as f64
                };
                MethodAggregate {
                    method,
                    fold_means,
                    avg,
                }
            })
            .collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("method,protocol,fold,trial,seed,status,val_acc,target_acc,checkpoint\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.method,
                r.protocol,
                r.fold,
                r.trial,
                r.seed,
                r.status,
                fmt_acc(r.val_acc),
                fmt_acc(r.target_acc),
                r.checkpoint
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Payload<'a> {
            rows: &'a [ResultRow],
            aggregates: Vec<MethodAggregate>,
        }
        let payload = Payload {
            rows: &self.rows,
            aggregates: self.aggregates(),
        };
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &payload)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

/// One (fold, trial) training run: split, normalize, train, score target.
struct RunResult {
    plan: SplitPlan,
    val_acc: f64,
    target_acc: f64,
    best_params: ModelParams,
    best_epoch: usize,
    stats: ChannelStats,
    indices: SplitIndices,
    log: Vec<crate::train::EpochRecord>,
}

fn run_single(
    ds: &WindowedDataset,
    cfg: &ExperimentConfig,
    model_cfg: &ModelConfig,
    fold: usize,
    seed: u64,
) -> Result<RunResult> {
    let (plan, indices) = make_split(ds, cfg.protocol, fold, cfg.val_fraction, seed)?;
    let stats = compute_channel_stats(ds, &indices.train)?;
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let out = train_loop(ds, Some(&stats), &indices, model_cfg, &train_cfg, None)?;
    let target_acc = evaluate(&out.best_params, ds, Some(&stats), &indices.target)?;
    Ok(RunResult {
        plan,
        val_acc: out.best_val_acc,
        target_acc,
        best_params: out.best_params,
        best_epoch: out.best_epoch,
        stats,
        indices,
        log: out.log,
    })
}

/// Worker threads for independent (fold, trial) runs, from `CCIL_WORKERS`;
/// defaults to sequential.
fn worker_count() -> usize {
    std::env::var("CCIL_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Trains `trials` seeds over the configured folds and writes the table,
/// logs, and checkpoints under the output directory. Runs are independent
/// and may execute on `CCIL_WORKERS` threads, each owning its own output
/// subdirectory; the table is merged in job order, so outputs are identical
/// regardless of worker count. A failed trial marks its row and the run
/// continues.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let ds = WindowedDataset::load(&cfg.dataset)?;
    let model_cfg = cfg.resolve_model(&ds)?;
    std::fs::create_dir_all(&cfg.output)?;

    // Materialize the fully-resolved config so the run is self-describing.
    let resolved = serde_json::json!({
        "experiment": cfg,
        "model": model_cfg,
    });
    std::fs::write(
        cfg.output.join("config.json"),
        serde_json::to_string_pretty(&resolved)?,
    )?;

    let folds: Vec<usize> = match cfg.fold {
        Some(f) => vec![f],
        None => (0..num_folds(cfg.protocol, &ds)?).collect(),
    };
    let method = cfg.train.method_label().to_string();
    let jobs: Vec<(usize, usize)> = folds
        .iter()
        .flat_map(|&fold| (0..cfg.trials).map(move |trial| (fold, trial)))
        .collect();

    let execute = |&(fold, trial): &(usize, usize)| -> ResultRow {
        let seed = cfg.train.seed + trial as u64;
        let rel_dir = format!("fold{fold}/trial{trial}");
        let run_dir = cfg.output.join(&rel_dir);
        let outcome = run_single(&ds, cfg, &model_cfg, fold, seed).and_then(|run| {
            std::fs::create_dir_all(&run_dir)?;
            let ckpt_rel = format!("{rel_dir}/best.ckpt");
            run.best_params.save(&cfg.output.join(&ckpt_rel), seed, run.best_epoch)?;
            write_log(&run_dir.join("log.jsonl"), &run.log)?;
            std::fs::write(run_dir.join("stats.json"), serde_json::to_string_pretty(&run.stats)?)?;
            std::fs::write(
                run_dir.join("split.json"),
                serde_json::to_string_pretty(&serde_json::json!({
                    "plan": run.plan,
                    "train": run.indices.train,
                    "val": run.indices.val,
                    "target": run.indices.target,
                }))?,
            )?;
            Ok((run.val_acc, run.target_acc, ckpt_rel))
        });
        match outcome {
            Ok((val_acc, target_acc, checkpoint)) => ResultRow {
                method: method.clone(),
                protocol: cfg.protocol.as_str().to_string(),
                fold,
                trial,
                seed,
                status: "ok".into(),
                val_acc: Some(val_acc),
                target_acc: Some(target_acc),
                checkpoint,
            },
            Err(e) => ResultRow {
                method: method.clone(),
                protocol: cfg.protocol.as_str().to_string(),
                fold,
                trial,
                seed,
                // Keep the cell CSV-safe.
                status: format!("error: {e}").replace([',', '\n'], ";"),
                val_acc: None,
                target_acc: None,
                checkpoint: String::new(),
            },
        }
    };

    let workers = worker_count().min(jobs.len().max(1));
    let rows: Vec<ResultRow> = if workers <= 1 {
        jobs.iter().map(execute).collect()
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<ResultRow>>> =
            jobs.iter().map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= jobs.len() {
                        break;
                    }
                    *slots[i].lock().unwrap() = Some(execute(&jobs[i]));
                });
            }
        });
        slots
            .into_iter()
            .map(|slot| slot.into_inner().unwrap().expect("every job produced a row"))
            .collect()
    };

    let table = ResultTable { rows };
    table.write_csv(&cfg.output.join("results.csv"))?;
    table.write_json(&cfg.output.join("results.json"))?;
    Ok(table)
}

/// `(alpha, lambda)` grid of mean target accuracies; each cell is an
/// independent seeded run of the base config.
#[derive(Debug, Clone, Serialize)]
pub struct SweepGrid {
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// `cells[i][j]` = mean target accuracy at `(lambdas[i], alphas[j])`.
    pub cells: Vec<Vec<f64>>,
}

impl SweepGrid {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("lambda\\alpha");
        for a in &self.alphas {
            out.push_str(&format!(",{a}"));
        }
        out.push('\n');
        for (i, l) in self.lambdas.iter().enumerate() {
            out.push_str(&l.to_string());
            for cell in &self.cells[i] {
                out.push_str(&format!(",{cell:.4}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    /// Coordinates of the best cell `(lambda index, alpha index)`.
    pub fn best_cell(&self) -> (usize, usize) {
        let mut best = (0, 0);
        for i in 0..self.lambdas.len() {
            for j in 0..self.alphas.len() {
                if self.cells[i][j] > self.cells[best.0][best.1] {
                    best = (i, j);
                }
            }
        }
        best
    }
}

pub const DEFAULT_SWEEP_ALPHAS: [f64; 5] = [0.1, 0.5, 1.0, 5.0, 10.0];
pub const DEFAULT_SWEEP_LAMBDAS: [f64; 5] = [0.0, 0.9, 0.99, 0.999, 0.9999];

pub fn sweep(cfg: &ExperimentConfig, alphas: &[f64], lambdas: &[f64]) -> Result<SweepGrid> {
    if alphas.is_empty() || lambdas.is_empty() {
        return Err(Error::Config("sweep needs non-empty alpha and lambda lists".into()));
    }
    let mut cells = Vec::with_capacity(lambdas.len());
    for (i, &lambda) in lambdas.iter().enumerate() {
        let mut row = Vec::with_capacity(alphas.len());
        for (j, &alpha) in alphas.iter().enumerate() {
            let cell_cfg = ExperimentConfig {
                train: TrainConfig {
                    alpha,
                    lambda,
                    regularizer: RegularizerKind::ConceptMatrix,
                    ..cfg.train.clone()
                },
                output: cfg.output.join(format!("cell_l{i}_a{j}")),
                ..cfg.clone()
            };
            let table = run_experiment(&cell_cfg)?;
            let aggs = table.aggregates();
            let mean = aggs.first().map(|a| a.avg).unwrap_or(f64::NAN);
            row.push(mean);
        }
        cells.push(row);
    }
    let grid = SweepGrid {
        alphas: alphas.to_vec(),
        lambdas: lambdas.to_vec(),
        cells,
    };
    grid.write_csv(&cfg.output.join("sweep.csv"))?;
    Ok(grid)
}

/// The ablation suite: plain cross-entropy, the logit- and
/// feature-invariance variants, frozen and batch-mean banks, and the full
/// concept-matrix regularizer.
pub fn ablation_variants(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let ccil = |lambda: f64| TrainConfig {
        alpha: if base.alpha > 0.0 { base.alpha } else { 1.0 },
        lambda,
        regularizer: RegularizerKind::ConceptMatrix,
        ..base.clone()
    };
    vec![
        (
            "erm".into(),
            TrainConfig {
                alpha: 0.0,
                regularizer: RegularizerKind::None,
                ..base.clone()
            },
        ),
        (
            "w_log".into(),
            TrainConfig {
                regularizer: RegularizerKind::LogitInvariance,
                ..ccil(base.lambda)
            },
        ),
        (
            "w_fea".into(),
            TrainConfig {
                regularizer: RegularizerKind::FeatureInvariance,
                ..ccil(base.lambda)
            },
        ),
        ("ccil_lambda0".into(), ccil(0.0)),
        ("ccil_lambda1".into(), ccil(1.0)),
        ("ccil".into(), ccil(base.lambda)),
    ]
}

pub fn ablate(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let mut table = ResultTable::default();
    for (name, train) in ablation_variants(&cfg.train) {
        let sub = ExperimentConfig {
            train,
            output: cfg.output.join(&name),
            ..cfg.clone()
        };
        let mut part = run_experiment(&sub)?;
        for row in &mut part.rows {
            row.method = name.clone();
            row.checkpoint = format!("{name}/{}", row.checkpoint);
        }
        table.rows.append(&mut part.rows);
    }
    table.write_csv(&cfg.output.join("results.csv"))?;
    table.write_json(&cfg.output.join("results.json"))?;
    Ok(table)
}
