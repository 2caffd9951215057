//! The training loop: Adam on `L_CE + alpha * L_reg` with mean-bank
//! maintenance, source-validation model selection, and bit-exact
//! snapshot/resume.
//!
//! Every stochastic choice is keyed off `(seed, purpose, epoch)`, so a run
//! resumed from a snapshot at epoch `e` replays exactly the batches a
//! straight run would have seen.

pub mod adam;
pub mod loss;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::concept::{MeanBank, RegularizerKind};
use crate::data::{ChannelStats, WindowedDataset};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{apply_bn_updates, build_model, ModelConfig, ModelParams};
use crate::nn::Mode;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{eval_batch, finish_loss, total_loss, LossOutput};

/// When the mean bank absorbs the current batch relative to the loss.
/// Post-loss (the default) computes the loss against the previous
/// iteration's means, which keeps a zero-momentum bank genuinely frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankUpdateOrder {
    PreLoss,
    PostLoss,
}

/// How training batches are composed: per-domain sampling concatenates one
/// sub-batch from every source domain per step; uniform sampling ignores
/// domain labels entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    PerDomain,
    Uniform,
}

fn default_alpha() -> f64 {
    1.0
}
fn default_lambda() -> f64 {
    0.9
}
fn default_regularizer() -> RegularizerKind {
    RegularizerKind::ConceptMatrix
}
fn default_lr() -> f64 {
    1e-2
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_batch_size() -> usize {
    32
}
fn default_max_epochs() -> usize {
    150
}
fn default_order() -> BankUpdateOrder {
    BankUpdateOrder::PostLoss
}
fn default_batch_mode() -> BatchMode {
    BatchMode::PerDomain
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Regularizer weight; 0 is exact cross-entropy training.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Mean-bank momentum.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_regularizer")]
    pub regularizer: RegularizerKind,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_order")]
    pub bank_update_order: BankUpdateOrder,
    #[serde(default = "default_batch_mode")]
    pub batch_mode: BatchMode,
    #[serde(default)]
    pub decoupled_weight_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            alpha: default_alpha(),
            lambda: default_lambda(),
            regularizer: default_regularizer(),
            lr: default_lr(),
            weight_decay: default_weight_decay(),
            batch_size: default_batch_size(),
            max_epochs: default_max_epochs(),
            seed: 0,
            bank_update_order: default_order(),
            batch_mode: default_batch_mode(),
            decoupled_weight_decay: false,
        }
    }
}

impl TrainConfig {
    fn regularize(&self) -> bool {
        self.alpha > 0.0 && self.regularizer != RegularizerKind::None
    }

    /// Method label for tables: the regularizer name, or "erm" at alpha 0.
    pub fn method_label(&self) -> &'static str {
        if self.regularize() {
            self.regularizer.label()
        } else {
            "erm"
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            decoupled: self.decoupled_weight_decay,
            ..AdamConfig::new(self.lr, self.weight_decay)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_ce: f64,
    pub loss_cms: f64,
    pub val_acc: f64,
    pub wall_ms: u64,
}

/// Everything needed to resume training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: AdamState,
    pub bank: MeanBank,
    /// Completed epochs.
    pub epoch: usize,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub best_params: ModelParams,
    pub seed: u64,
}

pub struct TrainOutput {
    pub best_params: ModelParams,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub final_state: TrainState,
    pub log: Vec<EpochRecord>,
}

fn bank_shape(kind: RegularizerKind, d: usize, c: usize) -> Vec<usize> {
    match kind {
        RegularizerKind::ConceptMatrix => vec![d, c],
        RegularizerKind::FeatureInvariance => vec![d],
        RegularizerKind::LogitInvariance => vec![c],
        RegularizerKind::None => vec![1],
    }
}

/// Deterministic batch plan for one epoch.
fn plan_batches(
    ds: &WindowedDataset,
    train: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    let bs = cfg.batch_size;
    if bs == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut batches: Vec<Vec<usize>> = Vec::new();
    match cfg.batch_mode {
        BatchMode::Uniform => {
            let mut idx = train.to_vec();
            Rng::derive(cfg.seed, "epoch.shuffle", epoch as u64).shuffle(&mut idx);
            for chunk in idx.chunks(bs) {
                // Train-mode batch norm needs at least two samples.
                if chunk.len() >= 2 {
                    batches.push(chunk.to_vec());
                }
            }
        }
        BatchMode::PerDomain => {
            let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &i in train {
                groups.entry(ds.domain_label(i)).or_default().push(i);
            }
            for (&domain, group) in groups.iter_mut() {
                let key = ((epoch as u64) << 16) | domain as u64;
                Rng::derive(cfg.seed, "epoch.domain.shuffle", key).shuffle(group);
            }
            let steps = groups.values().map(|g| g.len() / bs).min().unwrap_or(0);
            for s in 0..steps {
                let mut batch = Vec::with_capacity(groups.len() * bs);
                for group in groups.values() {
                    batch.extend_from_slice(&group[s * bs..(s + 1) * bs]);
                }
                batches.push(batch);
            }
        }
    }
    if batches.is_empty() {
        return Err(Error::Config(format!(
            "train split of {} samples yields no batches of size {bs} ({:?})",
            train.len(),
            cfg.batch_mode
        )));
    }
    Ok(batches)
}

/// Trains to `max_epochs`, tracking the best source-validation checkpoint
/// (ties broken toward the earliest epoch). Pass a snapshot to resume.
pub fn train_loop(
    ds: &WindowedDataset,
    stats: Option<&ChannelStats>,
    split: &crate::data::split::SplitIndices,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    resume: Option<TrainState>,
) -> Result<TrainOutput> {
    if split.val.is_empty() {
        return Err(Error::EmptyInput {
            context: "train_loop validation split".into(),
        });
    }
    if split.train.is_empty() {
        return Err(Error::EmptyInput {
            context: "train_loop training split".into(),
        });
    }
    if !(0.0..=1.0).contains(&cfg.lambda) {
        return Err(Error::Config(format!("lambda must be in [0, 1], got {}", cfg.lambda)));
    }
    if cfg.alpha < 0.0 {
        return Err(Error::Config(format!("alpha must be >= 0, got {}", cfg.alpha)));
    }

    let mut state = match resume {
        Some(state) => state,
        None => {
            let params = build_model(model_cfg, cfg.seed)?;
            let d = params.feature_dim();
            let c = params.num_classes();
            let adam = AdamState::new(&params.opt_tensors());
            let bank = MeanBank::new(c, &bank_shape(cfg.regularizer, d, c), cfg.lambda);
            TrainState {
                best_params: params.clone(),
                params,
                adam,
                bank,
                epoch: 0,
                best_epoch: 0,
                best_val_acc: -1.0,
                seed: cfg.seed,
            }
        }
    };

    let adam_cfg = cfg.adam();
    let regularize = cfg.regularize();
    let mut log = Vec::with_capacity(cfg.max_epochs.saturating_sub(state.epoch));

    for epoch in state.epoch..cfg.max_epochs {
        let started = Instant::now();
        let batches = plan_batches(ds, &split.train, cfg, epoch)?;
        let mut ce_sum = 0.0;
        let mut reg_sum = 0.0;

        for batch_indices in &batches {
            let step = |state: &mut TrainState| -> Result<(f64, f64)> {
                let batch = ds.batch_tensor(batch_indices, stats)?;
                let labels = ds.labels_for(batch_indices);

                let comp =
                    eval_batch(&state.params, &batch, &labels, cfg.regularizer, regularize, Mode::Train)?;
                let items = if regularize {
                    comp.bank_items(cfg.regularizer)
                } else {
                    Vec::new()
                };
                let item_refs: Vec<&Tensor> = items.iter().collect();

                if regularize && cfg.bank_update_order == BankUpdateOrder::PreLoss {
                    state.bank.update(&item_refs, &labels)?;
                }
                let out = finish_loss(
                    &state.params,
                    comp,
                    &labels,
                    regularize.then_some(&state.bank),
                    cfg.alpha,
                    cfg.regularizer,
                )?;
                if regularize && cfg.bank_update_order == BankUpdateOrder::PostLoss {
                    state.bank.update(&item_refs, &labels)?;
                }

                adam_step(
                    &mut state.params.opt_tensors_mut(),
                    &out.grads.tensors(),
                    &mut state.adam,
                    &adam_cfg,
                )?;
                if let Some(upd) = out.bn_updates {
                    apply_bn_updates(&mut state.params, upd);
                }
                Ok((out.loss_ce, out.loss_reg))
            };
            // Any non-finite value inside a step means the run diverged.
            let (ce, reg) = step(&mut state).map_err(|e| match e {
                Error::NonFinite { context } => Error::Diverged {
                    epoch,
                    msg: format!("non-finite {context}"),
                },
                other => other,
            })?;
            ce_sum += ce;
            reg_sum += reg;
        }

        // Source validation in eval mode; the bank is never involved.
        let val_acc = evaluate(&state.params, ds, stats, &split.val)?;
        if val_acc > state.best_val_acc {
            state.best_val_acc = val_acc;
            state.best_epoch = epoch;
            state.best_params = state.params.clone();
        }
        state.epoch = epoch + 1;

        log.push(EpochRecord {
            epoch,
            loss_ce: ce_sum / batches.len() as f64,
            loss_cms: reg_sum / batches.len() as f64,
            val_acc,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }

    Ok(TrainOutput {
        best_params: state.best_params.clone(),
        best_epoch: state.best_epoch,
        best_val_acc: state.best_val_acc,
        final_state: state,
        log,
    })
}

/// Appends epoch records as JSON lines.
pub fn write_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in log {
        serde_json::to_writer(&mut w, record)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

impl TrainState {
    pub fn save(&self, path: &Path, model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<()> {
        let bank_meta = serde_json::json!({
            "shape": self.bank.entry_shape(),
            "initialized": (0..self.bank.num_classes()).map(|c| self.bank.is_initialized(c)).collect::<Vec<_>>(),
            "momentum": self.bank.momentum,
        });
        let meta = serde_json::json!({
            "kind": "train_state",
            "model_config": model_cfg,
            "train_config": train_cfg,
            "epoch": self.epoch,
            "best_epoch": self.best_epoch,
            "best_val_acc": self.best_val_acc,
            "adam_step": self.adam.step,
            "bank": bank_meta,
            "seed": self.seed,
        });

        let mut named: Vec<(String, &Tensor)> = Vec::new();
        named.extend(named_model_tensors(&self.params, "params."));
        named.extend(named_model_tensors(&self.best_params, "best."));
        for (i, t) in self.adam.m.iter().enumerate() {
            named.push((format!("adam.m{i}"), t));
        }
        for (i, t) in self.adam.v.iter().enumerate() {
            named.push((format!("adam.v{i}"), t));
        }
        for c in 0..self.bank.num_classes() {
            // Uninitialized means hold zeros; the flag restores them on load.
            named.push((format!("bank.{c}"), self.bank.raw_mean(c)));
        }

        let refs: Vec<(&str, &Tensor)> = named.iter().map(|(n, t)| (n.as_str(), *t)).collect();
        crate::checkpoint::save_checkpoint(path, &meta, &refs)
    }

    pub fn load(path: &Path) -> Result<(TrainState, ModelConfig, TrainConfig)> {
        let mut ckpt = crate::checkpoint::load_checkpoint(path)?;
        if ckpt.meta["kind"] != "train_state" {
            return Err(Error::Checkpoint(format!(
                "{} is not a training-state checkpoint",
                path.display()
            )));
        }
        let model_cfg: ModelConfig = serde_json::from_value(ckpt.meta["model_config"].clone())?;
        let train_cfg: TrainConfig = serde_json::from_value(ckpt.meta["train_config"].clone())?;
        let epoch = ckpt.meta["epoch"].as_u64().unwrap_or(0) as usize;
        let best_epoch = ckpt.meta["best_epoch"].as_u64().unwrap_or(0) as usize;
        let best_val_acc = ckpt.meta["best_val_acc"].as_f64().unwrap_or(-1.0);
        let adam_step_count = ckpt.meta["adam_step"].as_u64().unwrap_or(0);
        let seed = ckpt.meta["seed"].as_u64().unwrap_or(0);

        let params = load_model_tensors(&mut ckpt, "params.", &model_cfg)?;
        let best_params = load_model_tensors(&mut ckpt, "best.", &model_cfg)?;
        let m = (0..7).map(|i| ckpt.take_tensor(&format!("adam.m{i}"))).collect::<Result<Vec<_>>>()?;
        let v = (0..7).map(|i| ckpt.take_tensor(&format!("adam.v{i}"))).collect::<Result<Vec<_>>>()?;

        let initialized: Vec<bool> = serde_json::from_value(ckpt.meta["bank"]["initialized"].clone())?;
        let momentum = ckpt.meta["bank"]["momentum"].as_f64().unwrap_or(0.0);
        let means = (0..initialized.len())
            .map(|c| ckpt.take_tensor(&format!("bank.{c}")))
            .collect::<Result<Vec<_>>>()?;
        let bank = MeanBank::from_parts(means, initialized, momentum)?;

        Ok((
            TrainState {
                params,
                best_params,
                adam: AdamState {
                    m,
                    v,
                    step: adam_step_count,
                },
                bank,
                epoch,
                best_epoch,
                best_val_acc,
                seed,
            },
            model_cfg,
            train_cfg,
        ))
    }
}

fn named_model_tensors<'a>(params: &'a ModelParams, prefix: &str) -> Vec<(String, &'a Tensor)> {
    vec![
        (format!("{prefix}conv1"), &params.conv1),
        (format!("{prefix}bn1_gamma"), &params.bn1.gamma),
        (format!("{prefix}bn1_beta"), &params.bn1.beta),
        (format!("{prefix}bn1_running_mean"), &params.bn1.running_mean),
        (format!("{prefix}bn1_running_var"), &params.bn1.running_var),
        (format!("{prefix}conv2"), &params.conv2),
        (format!("{prefix}bn2_gamma"), &params.bn2.gamma),
        (format!("{prefix}bn2_beta"), &params.bn2.beta),
        (format!("{prefix}bn2_running_mean"), &params.bn2.running_mean),
        (format!("{prefix}bn2_running_var"), &params.bn2.running_var),
        (format!("{prefix}classifier"), &params.classifier),
    ]
}

fn load_model_tensors(
    ckpt: &mut crate::checkpoint::Checkpoint,
    prefix: &str,
    cfg: &ModelConfig,
) -> Result<ModelParams> {
    Ok(ModelParams {
        config: cfg.clone(),
        conv1: ckpt.take_tensor(&format!("{prefix}conv1"))?,
        bn1: crate::model::BnParams {
            gamma: ckpt.take_tensor(&format!("{prefix}bn1_gamma"))?,
            beta: ckpt.take_tensor(&format!("{prefix}bn1_beta"))?,
            running_mean: ckpt.take_tensor(&format!("{prefix}bn1_running_mean"))?,
            running_var: ckpt.take_tensor(&format!("{prefix}bn1_running_var"))?,
        },
        conv2: ckpt.take_tensor(&format!("{prefix}conv2"))?,
        bn2: crate::model::BnParams {
            gamma: ckpt.take_tensor(&format!("{prefix}bn2_gamma"))?,
            beta: ckpt.take_tensor(&format!("{prefix}bn2_beta"))?,
            running_mean: ckpt.take_tensor(&format!("{prefix}bn2_running_mean"))?,
            running_var: ckpt.take_tensor(&format!("{prefix}bn2_running_var"))?,
        },
        classifier: ckpt.take_tensor(&format!("{prefix}classifier"))?,
    })
}
