//! The classifier backbone: a feature extractor of two convolution blocks
//! and a single bias-free linear classifier, producing per-sample features
//! `z` and logits `o` with exact hand-derived gradients.
//!
//! Each block runs conv -> activation -> pooling -> batch norm (pooling and
//! norm order is configurable). The forward pass is pure; in train mode it
//! returns the batch-norm running-stat updates for the caller to commit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};
use crate::nn::{
    activation_backward, activation_forward, batchnorm_backward, batchnorm_forward, conv2d_backward,
    conv2d_forward, conv2d_output_len, linear_backward, linear_forward, maxpool2d_backward,
    maxpool2d_forward, maxpool2d_output_len, Activation, BnCache, Mode,
};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const POOL_K: usize = 2;
pub const POOL_STRIDE: usize = 2;

/// Order of pooling and batch norm inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockOrder {
    PoolThenNorm,
    NormThenPool,
}

fn default_block1() -> usize {
    16
}
fn default_block2() -> usize {
    32
}
fn default_activation() -> Activation {
    Activation::Relu
}
fn default_block_order() -> BlockOrder {
    BlockOrder::PoolThenNorm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub window_len: usize,
    /// Time-axis kernel extent of both convolution layers.
    pub kernel_len: usize,
    #[serde(default = "default_block1")]
    pub channels_block1: usize,
    #[serde(default = "default_block2")]
    pub channels_block2: usize,
    pub num_classes: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_block_order")]
    pub block_order: BlockOrder,
}

impl ModelConfig {
    /// Named architecture presets: input shape and kernel length per task.
    pub fn preset(name: &str) -> Result<ModelConfig> {
        let (in_channels, window_len, kernel_len, num_classes, c1, c2) = match name {
            "dsads" => (45, 125, 9, 19, 16, 32),
            "pamap2" => (27, 200, 9, 12, 16, 32),
            "usc-had" => (6, 200, 6, 12, 16, 32),
            "cross-position" => (9, 125, 9, 19, 16, 32),
            "cross-dataset" => (6, 50, 6, 6, 16, 32),
            "uci-har" => (9, 128, 9, 6, 16, 32),
            "synth" => (6, 64, 6, 6, 8, 16),
            other => {
                return Err(Error::Config(format!(
                    "unknown model preset '{other}' (expected dsads, pamap2, usc-had, \
                     cross-position, cross-dataset, uci-har, or synth)"
                )))
            }
        };
        Ok(ModelConfig {
            in_channels,
            window_len,
            kernel_len,
            channels_block1: c1,
            channels_block2: c2,
            num_classes,
            activation: Activation::Relu,
            block_order: BlockOrder::PoolThenNorm,
        })
    }

    /// Time extents after each stage: (conv1, pool1, conv2, pool2).
    fn stage_lens(&self) -> Result<(usize, usize, usize, usize)> {
        let err = |stage: &str| {
            Error::degenerate(
                "ModelConfig",
                format!(
                    "window_len {} with kernel_len {} leaves no {stage} output",
                    self.window_len, self.kernel_len
                ),
            )
        };
        let t1 = conv2d_output_len(self.window_len, self.kernel_len, 1).ok_or_else(|| err("conv1"))?;
        let p1 = maxpool2d_output_len(t1, POOL_K, POOL_STRIDE).ok_or_else(|| err("pool1"))?;
        let t2 = conv2d_output_len(p1, self.kernel_len, 1).ok_or_else(|| err("conv2"))?;
        let p2 = maxpool2d_output_len(t2, POOL_K, POOL_STRIDE).ok_or_else(|| err("pool2"))?;
        Ok((t1, p1, t2, p2))
    }

    /// Flattened feature dimension D produced by the extractor.
    pub fn feature_dim(&self) -> Result<usize> {
        if self.in_channels == 0
            || self.num_classes == 0
            || self.channels_block1 == 0
            || self.channels_block2 == 0
        {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let (_, _, _, p2) = self.stage_lens()?;
        Ok(self.channels_block2 * p2)
    }
}

/// Affine parameters and running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BnParams {
    fn new(channels: usize) -> BnParams {
        BnParams {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub conv1: Tensor,
    pub bn1: BnParams,
    pub conv2: Tensor,
    pub bn2: BnParams,
    /// Classifier weights `[D, C]`.
    pub classifier: Tensor,
}

/// Gradients for every optimized parameter, shape-matching [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub conv1: Tensor,
    pub bn1_gamma: Tensor,
    pub bn1_beta: Tensor,
    pub conv2: Tensor,
    pub bn2_gamma: Tensor,
    pub bn2_beta: Tensor,
    pub classifier: Tensor,
}

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> ParamGrads {
        ParamGrads {
            conv1: Tensor::zeros(params.conv1.shape()),
            bn1_gamma: Tensor::zeros(params.bn1.gamma.shape()),
            bn1_beta: Tensor::zeros(params.bn1.beta.shape()),
            conv2: Tensor::zeros(params.conv2.shape()),
            bn2_gamma: Tensor::zeros(params.bn2.gamma.shape()),
            bn2_beta: Tensor::zeros(params.bn2.beta.shape()),
            classifier: Tensor::zeros(params.classifier.shape()),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 7] {
        [
            &self.conv1,
            &self.bn1_gamma,
            &self.bn1_beta,
            &self.conv2,
            &self.bn2_gamma,
            &self.bn2_beta,
            &self.classifier,
        ]
    }
}

impl ModelParams {
    /// Optimized tensors in the fixed order matching [`ParamGrads::tensors`].
    /// Running statistics are state, not parameters, and are excluded.
    pub fn opt_tensors_mut(&mut self) -> [&mut Tensor; 7] {
        [
            &mut self.conv1,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv2,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            &mut self.classifier,
        ]
    }

    pub fn opt_tensors(&self) -> [&Tensor; 7] {
        [
            &self.conv1,
            &self.bn1.gamma,
            &self.bn1.beta,
            &self.conv2,
            &self.bn2.gamma,
            &self.bn2.beta,
            &self.classifier,
        ]
    }

    pub fn feature_dim(&self) -> usize {
        self.classifier.shape()[0]
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.shape()[1]
    }

    fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("conv1", &self.conv1),
            ("bn1_gamma", &self.bn1.gamma),
            ("bn1_beta", &self.bn1.beta),
            ("bn1_running_mean", &self.bn1.running_mean),
            ("bn1_running_var", &self.bn1.running_var),
            ("conv2", &self.conv2),
            ("bn2_gamma", &self.bn2.gamma),
            ("bn2_beta", &self.bn2.beta),
            ("bn2_running_mean", &self.bn2.running_mean),
            ("bn2_running_var", &self.bn2.running_var),
            ("classifier", &self.classifier),
        ]
    }

    pub fn save(&self, path: &Path, seed: u64, epoch: usize) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "model",
            "config": self.config,
            "seed": seed,
            "epoch": epoch,
        });
        save_checkpoint(path, &meta, &self.named_tensors())
    }

    pub fn load(path: &Path) -> Result<(ModelParams, u64, usize)> {
        let mut ckpt = load_checkpoint(path)?;
        if ckpt.meta["kind"] != "model" {
            return Err(Error::Checkpoint(format!(
                "{} is not a model checkpoint",
                path.display()
            )));
        }
        let config: ModelConfig = serde_json::from_value(ckpt.meta["config"].clone())?;
        let seed = ckpt.meta["seed"].as_u64().unwrap_or(0);
        let epoch = ckpt.meta["epoch"].as_u64().unwrap_or(0) as usize;
        let params = ModelParams {
            config,
            conv1: ckpt.take_tensor("conv1")?,
            bn1: BnParams {
                gamma: ckpt.take_tensor("bn1_gamma")?,
                beta: ckpt.take_tensor("bn1_beta")?,
                running_mean: ckpt.take_tensor("bn1_running_mean")?,
                running_var: ckpt.take_tensor("bn1_running_var")?,
            },
            conv2: ckpt.take_tensor("conv2")?,
            bn2: BnParams {
                gamma: ckpt.take_tensor("bn2_gamma")?,
                beta: ckpt.take_tensor("bn2_beta")?,
                running_mean: ckpt.take_tensor("bn2_running_mean")?,
                running_var: ckpt.take_tensor("bn2_running_var")?,
            },
            classifier: ckpt.take_tensor("classifier")?,
        };
        Ok((params, seed, epoch))
    }
}

/// Deterministic seeded initialization: conv kernels and classifier weights
/// from a uniform fan-in-scaled distribution, gamma = 1, beta = 0.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    let d = config.feature_dim()?;
    let mut rng = crate::rng::Rng::derive(seed, "model.init", 0);
    let k = config.kernel_len;
    let bound1 = 1.0 / ((config.in_channels * k) as f64).sqrt();
    let conv1 = Tensor::uniform(&[config.channels_block1, config.in_channels, 1, k], bound1, &mut rng);
    let bound2 = 1.0 / ((config.channels_block1 * k) as f64).sqrt();
    let conv2 = Tensor::uniform(&[config.channels_block2, config.channels_block1, 1, k], bound2, &mut rng);
    let bound_w = 1.0 / (d as f64).sqrt();
    let classifier = Tensor::uniform(&[d, config.num_classes], bound_w, &mut rng);
    Ok(ModelParams {
        config: config.clone(),
        bn1: BnParams::new(config.channels_block1),
        bn2: BnParams::new(config.channels_block2),
        conv1,
        conv2,
        classifier,
    })
}

struct BlockCache {
    conv_input: Vec<Tensor>,
    conv_out: Vec<Tensor>,
    pool_argmax: Vec<Vec<usize>>,
    pool_input_shape: Vec<usize>,
    bn_cache: BnCache,
}

pub struct ForwardCache {
    block1: BlockCache,
    block2: BlockCache,
    /// Feature copies for the classifier backward.
    features: Tensor,
}

/// Batch-norm running-stat updates produced by a train-mode forward.
pub struct BnUpdates {
    pub bn1: (Tensor, Tensor),
    pub bn2: (Tensor, Tensor),
}

pub struct ForwardPass {
    /// `[N, D]` penultimate features.
    pub features: Tensor,
    /// `[N, C]` logits.
    pub logits: Tensor,
    pub cache: ForwardCache,
    pub bn_updates: Option<BnUpdates>,
}

struct BlockForward {
    output: Tensor,
    cache: BlockCache,
    stats_update: Option<(Tensor, Tensor)>,
}

#[allow(clippy::too_many_arguments)]
fn block_forward(
    batch: &Tensor,
    kernels: &Tensor,
    bn: &BnParams,
    activation: Activation,
    order: BlockOrder,
    mode: Mode,
) -> Result<BlockForward> {
    let n = batch.shape()[0];
    let mut conv_input = Vec::with_capacity(n);
    let mut conv_out = Vec::with_capacity(n);
    let mut staged = Vec::with_capacity(n);
    for i in 0..n {
        let x = batch.sample(i);
        let c = conv2d_forward(&x, kernels, 1)?;
        let a = activation_forward(activation, &c);
        conv_input.push(x);
        conv_out.push(c);
        staged.push(a);
    }
    match order {
        BlockOrder::PoolThenNorm => {
            let mut pooled = Vec::with_capacity(n);
            let mut pool_argmax = Vec::with_capacity(n);
            let pool_input_shape = staged[0].shape().to_vec();
            for a in &staged {
                let p = maxpool2d_forward(a, POOL_K, POOL_STRIDE)?;
                pooled.push(p.output);
                pool_argmax.push(p.argmax);
            }
            let stacked = Tensor::stack(&pooled)?;
            let fwd = batchnorm_forward(
                &stacked,
                &bn.gamma,
                &bn.beta,
                &bn.running_mean,
                &bn.running_var,
                mode,
                BN_MOMENTUM,
                BN_EPS,
            )?;
            Ok(BlockForward {
                output: fwd.output,
                cache: BlockCache {
                    conv_input,
                    conv_out,
                    pool_argmax,
                    pool_input_shape,
                    bn_cache: fwd.cache,
                },
                stats_update: fwd.stats_update,
            })
        }
        BlockOrder::NormThenPool => {
            let stacked = Tensor::stack(&staged)?;
            let fwd = batchnorm_forward(
                &stacked,
                &bn.gamma,
                &bn.beta,
                &bn.running_mean,
                &bn.running_var,
                mode,
                BN_MOMENTUM,
                BN_EPS,
            )?;
            let mut pooled = Vec::with_capacity(n);
            let mut pool_argmax = Vec::with_capacity(n);
            let pool_input_shape = staged[0].shape().to_vec();
            for i in 0..n {
                let p = maxpool2d_forward(&fwd.output.sample(i), POOL_K, POOL_STRIDE)?;
                pooled.push(p.output);
                pool_argmax.push(p.argmax);
            }
            Ok(BlockForward {
                output: Tensor::stack(&pooled)?,
                cache: BlockCache {
                    conv_input,
                    conv_out,
                    pool_argmax,
                    pool_input_shape,
                    bn_cache: fwd.cache,
                },
                stats_update: fwd.stats_update,
            })
        }
    }
}

/// Gradient of one block; returns the gradient at the block input and
/// accumulates kernel/affine gradients.
#[allow(clippy::too_many_arguments)]
fn block_backward(
    grad_out: &Tensor,
    cache: &BlockCache,
    kernels: &Tensor,
    bn: &BnParams,
    activation: Activation,
    order: BlockOrder,
    grad_kernels: &mut Tensor,
    grad_gamma: &mut Tensor,
    grad_beta: &mut Tensor,
) -> Result<Tensor> {
    let n = grad_out.shape()[0];
    let grad_at_staged: Vec<Tensor> = match order {
        BlockOrder::PoolThenNorm => {
            let (gx, gg, gb) = batchnorm_backward(grad_out, &cache.bn_cache, &bn.gamma)?;
            grad_gamma.add_scaled(&gg, 1.0);
            grad_beta.add_scaled(&gb, 1.0);
            (0..n)
                .map(|i| {
                    maxpool2d_backward(&gx.sample(i), &cache.pool_argmax[i], &cache.pool_input_shape)
                })
                .collect::<Result<_>>()?
        }
        BlockOrder::NormThenPool => {
            let unpooled: Vec<Tensor> = (0..n)
                .map(|i| {
                    maxpool2d_backward(
                        &grad_out.sample(i),
                        &cache.pool_argmax[i],
                        &cache.pool_input_shape,
                    )
                })
                .collect::<Result<_>>()?;
            let stacked = Tensor::stack(&unpooled)?;
            let (gx, gg, gb) = batchnorm_backward(&stacked, &cache.bn_cache, &bn.gamma)?;
            grad_gamma.add_scaled(&gg, 1.0);
            grad_beta.add_scaled(&gb, 1.0);
            (0..n).map(|i| gx.sample(i)).collect()
        }
    };

    let mut grad_inputs = Vec::with_capacity(n);
    for i in 0..n {
        let ga = activation_backward(activation, &grad_at_staged[i], &cache.conv_out[i]);
        let (gx, gk) = conv2d_backward(&ga, &cache.conv_input[i], kernels, 1)?;
        grad_kernels.add_scaled(&gk, 1.0);
        grad_inputs.push(gx);
    }
    Tensor::stack(&grad_inputs)
}

/// Runs the extractor and classifier on a `[N, C_in, 1, T]` batch.
///
/// Pure: train mode reports running-stat updates in the result instead of
/// mutating `params`; commit them with [`apply_bn_updates`].
pub fn forward(params: &ModelParams, batch: &Tensor, mode: Mode) -> Result<ForwardPass> {
    let cfg = &params.config;
    let sh = batch.shape();
    if sh.len() != 4 || sh[1] != cfg.in_channels || sh[2] != 1 || sh[3] != cfg.window_len {
        return Err(Error::shape(
            "model::forward",
            format!("[N, {}, 1, {}]", cfg.in_channels, cfg.window_len),
            format!("{sh:?}"),
        ));
    }
    let n = sh[0];
    if n == 0 {
        return Err(Error::EmptyInput {
            context: "model::forward".into(),
        });
    }

    let b1 = block_forward(batch, &params.conv1, &params.bn1, cfg.activation, cfg.block_order, mode)?;
    let b2 = block_forward(&b1.output, &params.conv2, &params.bn2, cfg.activation, cfg.block_order, mode)?;

    let d = params.feature_dim();
    let features = b2.output.clone().reshaped(&[n, d])?;
    features.check_finite("model::forward features")?;

    let mut logit_rows = Vec::with_capacity(n);
    for i in 0..n {
        logit_rows.push(linear_forward(&features.sample(i), &params.classifier)?);
    }
    let logits = Tensor::stack(&logit_rows)?;

    let bn_updates = match (b1.stats_update, b2.stats_update) {
        (Some(u1), Some(u2)) => Some(BnUpdates { bn1: u1, bn2: u2 }),
        _ => None,
    };

    Ok(ForwardPass {
        features: features.clone(),
        logits,
        cache: ForwardCache {
            block1: b1.cache,
            block2: b2.cache,
            features,
        },
        bn_updates,
    })
}

/// Commits the running-stat updates of a train-mode forward.
pub fn apply_bn_updates(params: &mut ModelParams, updates: BnUpdates) {
    params.bn1.running_mean = updates.bn1.0;
    params.bn1.running_var = updates.bn1.1;
    params.bn2.running_mean = updates.bn2.0;
    params.bn2.running_var = updates.bn2.1;
}

/// Backpropagates gradients arriving at both the features (`grad_features`,
/// e.g. from an invariance regularizer) and the logits (`grad_logits`, from
/// cross-entropy), accumulating both paths into parameter gradients.
///
/// Regularizers that differentiate the classifier weights directly add their
/// own term to `classifier` in the returned grads.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    grad_features: &Tensor,
    grad_logits: &Tensor,
) -> Result<ParamGrads> {
    let n = cache.features.shape()[0];
    let d = params.feature_dim();
    let c = params.num_classes();
    if grad_features.shape() != [n, d] {
        return Err(Error::shape("model::backward", format!("[{n}, {d}]"), format!("{:?}", grad_features.shape())));
    }
    if grad_logits.shape() != [n, c] {
        return Err(Error::shape("model::backward", format!("[{n}, {c}]"), format!("{:?}", grad_logits.shape())));
    }

    let mut grads = ParamGrads::zeros_like(params);

    // Classifier path: grad_z accumulates W * grad_o on top of the direct
    // feature gradient.
    let mut gz_rows = Vec::with_capacity(n);
    for i in 0..n {
        let (gz, gw) = linear_backward(&grad_logits.sample(i), &cache.features.sample(i), &params.classifier)?;
        grads.classifier.add_scaled(&gw, 1.0);
        let mut total = grad_features.sample(i);
        total.add_scaled(&gz, 1.0);
        gz_rows.push(total);
    }
    let cfg = &params.config;
    let (_, _, _, p2) = cfg.stage_lens()?;
    let gz = Tensor::stack(&gz_rows)?.reshaped(&[n, cfg.channels_block2, 1, p2])?;

    let g_block1_out = block_backward(
        &gz,
        &cache.block2,
        &params.conv2,
        &params.bn2,
        cfg.activation,
        cfg.block_order,
        &mut grads.conv2,
        &mut grads.bn2_gamma,
        &mut grads.bn2_beta,
    )?;
    let _ = block_backward(
        &g_block1_out,
        &cache.block1,
        &params.conv1,
        &params.bn1,
        cfg.activation,
        cfg.block_order,
        &mut grads.conv1,
        &mut grads.bn1_gamma,
        &mut grads.bn1_beta,
    )?;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::softmax_cross_entropy;
    use crate::rng::Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            in_channels: 2,
            window_len: 16,
            kernel_len: 3,
            channels_block1: 3,
            channels_block2: 4,
            num_classes: 3,
            activation: Activation::Relu,
            block_order: BlockOrder::PoolThenNorm,
        }
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = tiny_config();
        let a = build_model(&cfg, 99).unwrap();
        let b = build_model(&cfg, 99).unwrap();
        assert_eq!(a, b);
        let c = build_model(&cfg, 100).unwrap();
        assert_ne!(a.conv1, c.conv1);
    }

    #[test]
    fn dsads_preset_shapes() {
        let cfg = ModelConfig::preset("dsads").unwrap();
        assert_eq!(cfg.feature_dim().unwrap(), 800);
        let params = build_model(&cfg, 1).unwrap();
        let batch = Tensor::zeros(&[2, 45, 1, 125]);
        let fwd = forward(&params, &batch, Mode::Train).unwrap();
        assert_eq!(fwd.logits.shape(), &[2, 19]);
    }

    #[test]
    fn feature_dim_matches_actual_flatten_for_all_presets() {
        for name in ["dsads", "pamap2", "usc-had", "cross-position", "cross-dataset", "uci-har", "synth"] {
            let cfg = ModelConfig::preset(name).unwrap();
            let d = cfg.feature_dim().unwrap();
            let params = build_model(&cfg, 3).unwrap();
            let batch = Tensor::zeros(&[2, cfg.in_channels, 1, cfg.window_len]);
            let fwd = forward(&params, &batch, Mode::Eval).unwrap();
            assert_eq!(fwd.features.shape(), &[2, d], "preset {name}");
        }
    }

    #[test]
    fn window_shorter_than_kernel_is_an_error() {
        let mut cfg = tiny_config();
        cfg.window_len = 2;
        assert!(build_model(&cfg, 0).is_err());
    }

    #[test]
    fn zero_input_eval_gives_zero_outputs() {
        let cfg = tiny_config();
        let params = build_model(&cfg, 7).unwrap();
        let batch = Tensor::zeros(&[1, 2, 1, 16]);
        let fwd = forward(&params, &batch, Mode::Eval).unwrap();
        // Zero running mean, beta = 0: the extractor maps zero to zero.
        assert!(fwd.features.data().iter().all(|&v| v == 0.0));
        assert!(fwd.logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logits_equal_classifier_product() {
        let cfg = tiny_config();
        let params = build_model(&cfg, 8).unwrap();
        let mut rng = Rng::seed_from_u64(12);
        let batch = Tensor::uniform(&[3, 2, 1, 16], 1.0, &mut rng);
        let fwd = forward(&params, &batch, Mode::Train).unwrap();
        let d = params.feature_dim();
        let c = params.num_classes();
        for i in 0..3 {
            for k in 0..c {
                let mut want = 0.0;
                for j in 0..d {
                    want += params.classifier.data()[j * c + k] * fwd.features.data()[i * d + j];
                }
                let got = fwd.logits.data()[i * c + k];
                assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn eval_forward_is_pure_and_train_reports_updates() {
        let cfg = tiny_config();
        let params = build_model(&cfg, 9).unwrap();
        let snapshot = params.clone();
        let mut rng = Rng::seed_from_u64(13);
        let batch = Tensor::uniform(&[2, 2, 1, 16], 1.0, &mut rng);
        let eval = forward(&params, &batch, Mode::Eval).unwrap();
        assert!(eval.bn_updates.is_none());
        let train = forward(&params, &batch, Mode::Train).unwrap();
        assert!(train.bn_updates.is_some());
        assert_eq!(params, snapshot);
    }

    /// End-to-end finite differences through conv, pool, batch norm, linear,
    /// and cross-entropy for every parameter tensor.
    #[test]
    fn composed_backward_matches_finite_differences() {
        for order in [BlockOrder::PoolThenNorm, BlockOrder::NormThenPool] {
            let mut cfg = tiny_config();
            cfg.block_order = order;
            let params = build_model(&cfg, 17).unwrap();
            let mut rng = Rng::seed_from_u64(18);
            let batch = Tensor::uniform(&[2, 2, 1, 16], 1.0, &mut rng);
            let labels = vec![0usize, 2usize];

            let loss_of = |p: &ModelParams| -> f64 {
                let fwd = forward(p, &batch, Mode::Train).unwrap();
                softmax_cross_entropy(&fwd.logits, &labels).unwrap().0
            };

            let fwd = forward(&params, &batch, Mode::Train).unwrap();
            let (_, grad_logits) = softmax_cross_entropy(&fwd.logits, &labels).unwrap();
            let grad_features = Tensor::zeros(fwd.features.shape());
            let grads = backward(&params, &fwd.cache, &grad_features, &grad_logits).unwrap();

            let h = 1e-5;
            let names = ["conv1", "bn1_gamma", "bn1_beta", "conv2", "bn2_gamma", "bn2_beta", "classifier"];
            for (ti, name) in names.iter().enumerate() {
                let analytic = grads.tensors()[ti].clone();
                for i in 0..analytic.len() {
                    let mut pp = params.clone();
                    pp.opt_tensors_mut()[ti].data_mut()[i] += h;
                    let fp = loss_of(&pp);
                    let mut pm = params.clone();
                    pm.opt_tensors_mut()[ti].data_mut()[i] -= h;
                    let fm = loss_of(&pm);
                    let num = (fp - fm) / (2.0 * h);
                    let a = analytic.data()[i];
                    let denom = 1.0f64.max(a.abs()).max(num.abs());
                    assert!(
                        ((a - num) / denom).abs() < 1e-4,
                        "{order:?} {name}[{i}]: analytic {a} vs numeric {num}"
                    );
                }
            }
        }
    }

    /// The two gradient entry points accumulate: a pure classifier-path
    /// backward plus a pure feature-path backward equals the combined call,
    /// so either reduction is exact when the other input is zero.
    #[test]
    fn backward_paths_are_additive() {
        let cfg = tiny_config();
        let params = build_model(&cfg, 41).unwrap();
        let mut rng = Rng::seed_from_u64(42);
        let batch = Tensor::uniform(&[2, 2, 1, 16], 1.0, &mut rng);
        let fwd = forward(&params, &batch, Mode::Train).unwrap();
        let d = params.feature_dim();
        let c = params.num_classes();
        let gz = Tensor::uniform(&[2, d], 1.0, &mut rng);
        let go = Tensor::uniform(&[2, c], 1.0, &mut rng);
        let zeros_z = Tensor::zeros(&[2, d]);
        let zeros_o = Tensor::zeros(&[2, c]);

        let only_ce = backward(&params, &fwd.cache, &zeros_z, &go).unwrap();
        let only_features = backward(&params, &fwd.cache, &gz, &zeros_o).unwrap();
        let combined = backward(&params, &fwd.cache, &gz, &go).unwrap();
        for ((a, b), c) in only_ce
            .tensors()
            .iter()
            .zip(only_features.tensors())
            .zip(combined.tensors())
        {
            for ((x, y), z) in a.data().iter().zip(b.data()).zip(c.data()) {
                assert!((x + y - z).abs() < 1e-9, "{x} + {y} != {z}");
            }
        }
        // With no feature-side gradient, the feature path contributes nothing.
        let null = backward(&params, &fwd.cache, &zeros_z, &zeros_o).unwrap();
        assert!(null.tensors().iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = tiny_config();
        let mut params = build_model(&cfg, 23).unwrap();
        // Touch running stats so they differ from init.
        params.bn1.running_mean.data_mut()[0] = 0.25;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        params.save(&path, 23, 5).unwrap();
        let (loaded, seed, epoch) = ModelParams::load(&path).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(seed, 23);
        assert_eq!(epoch, 5);
    }
}
