//! The combined objective `L = L_CE + alpha * L_reg` with gradients for
//! every parameter, for any of the invariance regularizers.

use crate::concept::{
    batch_concept_matrices, cms_loss, feature_invariance_loss, logit_invariance_loss, ConceptMatrix,
    MeanBank, RegularizerKind,
};
use crate::error::{Error, Result};
use crate::model::{backward, forward, BnUpdates, ForwardPass, ModelParams, ParamGrads};
use crate::nn::{softmax_cross_entropy, Mode};
use crate::tensor::Tensor;

/// Forward pass plus the cross-entropy terms and, when a regularizer is
/// active, the per-sample items the mean bank tracks.
pub struct BatchEval {
    pub fwd: ForwardPass,
    pub loss_ce: f64,
    pub grad_logits: Tensor,
    matrices: Option<Vec<ConceptMatrix>>,
}

impl BatchEval {
    /// Per-sample tensors for `MeanBank::update`, matching the regularizer:
    /// concept matrices, feature rows, or logit rows.
    pub fn bank_items(&self, kind: RegularizerKind) -> Vec<Tensor> {
        match kind {
            RegularizerKind::ConceptMatrix => self
                .matrices
                .as_ref()
                .map(|ms| ms.iter().map(|m| m.entries.clone()).collect())
                .unwrap_or_default(),
            RegularizerKind::FeatureInvariance => {
                let n = self.fwd.features.shape()[0];
                (0..n).map(|i| self.fwd.features.sample(i)).collect()
            }
            RegularizerKind::LogitInvariance => {
                let n = self.fwd.logits.shape()[0];
                (0..n).map(|i| self.fwd.logits.sample(i)).collect()
            }
            RegularizerKind::None => Vec::new(),
        }
    }
}

/// Runs the model and cross-entropy; builds concept matrices when the
/// concept regularizer is active.
pub fn eval_batch(
    params: &ModelParams,
    batch: &Tensor,
    labels: &[usize],
    kind: RegularizerKind,
    regularize: bool,
    mode: Mode,
) -> Result<BatchEval> {
    let fwd = forward(params, batch, mode)?;
    let (loss_ce, grad_logits) = softmax_cross_entropy(&fwd.logits, labels)?;
    let matrices = if regularize && kind == RegularizerKind::ConceptMatrix {
        Some(batch_concept_matrices(&fwd.features, &params.classifier)?)
    } else {
        None
    };
    Ok(BatchEval {
        fwd,
        loss_ce,
        grad_logits,
        matrices,
    })
}

pub struct LossOutput {
    pub total: f64,
    pub loss_ce: f64,
    pub loss_reg: f64,
    pub grads: ParamGrads,
    pub bn_updates: Option<BnUpdates>,
    /// Samples excluded from the regularizer (uninitialized class means).
    pub excluded: usize,
}

/// Combines cross-entropy and regularizer gradients through the model.
/// The bank is read-only here; updating it is the training step's job.
pub fn finish_loss(
    params: &ModelParams,
    comp: BatchEval,
    labels: &[usize],
    bank: Option<&MeanBank>,
    alpha: f64,
    kind: RegularizerKind,
) -> Result<LossOutput> {
    let n = comp.fwd.features.shape()[0];
    let d = params.feature_dim();
    let c = params.num_classes();
    let regularize = alpha > 0.0 && kind != RegularizerKind::None;

    let mut grad_features = Tensor::zeros(&[n, d]);
    let mut grad_logits = comp.grad_logits.clone();
    let mut grad_weights_reg: Option<Tensor> = None;
    let mut loss_reg = 0.0;
    let mut excluded = 0;

    if regularize {
        let bank = bank.ok_or_else(|| Error::Config("regularizer active but no mean bank given".into()))?;
        match kind {
            RegularizerKind::ConceptMatrix => {
                let matrices = comp.matrices.as_ref().expect("matrices built when regularizing");
                let out = cms_loss(matrices, labels, bank, &params.classifier, &comp.fwd.features)?;
                loss_reg = out.loss;
                excluded = out.excluded;
                grad_features = out.grad_features;
                grad_features.scale(alpha);
                let mut gw = out.grad_weights;
                gw.scale(alpha);
                grad_weights_reg = Some(gw);
            }
            RegularizerKind::FeatureInvariance => {
                let out = feature_invariance_loss(&comp.fwd.features, labels, bank)?;
                loss_reg = out.loss;
                excluded = out.excluded;
                grad_features = out.grad;
                grad_features.scale(alpha);
            }
            RegularizerKind::LogitInvariance => {
                let out = logit_invariance_loss(&comp.fwd.logits, labels, bank)?;
                loss_reg = out.loss;
                excluded = out.excluded;
                grad_logits.add_scaled(&out.grad, alpha);
            }
            RegularizerKind::None => unreachable!(),
        }
        debug_assert_eq!(grad_logits.shape(), [n, c]);
    }

    let mut grads = backward(params, &comp.fwd.cache, &grad_features, &grad_logits)?;
    if let Some(gw) = grad_weights_reg {
        grads.classifier.add_scaled(&gw, 1.0);
    }

    let total = comp.loss_ce + alpha * loss_reg;
    if !total.is_finite() {
        return Err(Error::NonFinite {
            context: "total_loss".into(),
        });
    }
    Ok(LossOutput {
        total,
        loss_ce: comp.loss_ce,
        loss_reg,
        grads,
        bn_updates: comp.fwd.bn_updates,
        excluded,
    })
}

/// `L = L_CE + alpha * L_reg` and all parameter gradients, against a fixed
/// bank snapshot. With `alpha = 0` the regularizer path is skipped entirely
/// and this is exact cross-entropy training.
pub fn total_loss(
    params: &ModelParams,
    batch: &Tensor,
    labels: &[usize],
    bank: Option<&MeanBank>,
    alpha: f64,
    kind: RegularizerKind,
    mode: Mode,
) -> Result<LossOutput> {
    let regularize = alpha > 0.0 && kind != RegularizerKind::None;
    let comp = eval_batch(params, batch, labels, kind, regularize, mode)?;
    finish_loss(params, comp, labels, bank, alpha, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, BlockOrder, ModelConfig};
    use crate::nn::Activation;
    use crate::rng::Rng;

    fn tiny() -> (ModelParams, Tensor, Vec<usize>) {
        let cfg = ModelConfig {
            in_channels: 2,
            window_len: 14,
            kernel_len: 3,
            channels_block1: 3,
            channels_block2: 3,
            num_classes: 3,
            activation: Activation::Relu,
            block_order: BlockOrder::PoolThenNorm,
        };
        let params = build_model(&cfg, 31).unwrap();
        let mut rng = Rng::seed_from_u64(32);
        let batch = Tensor::uniform(&[3, 2, 1, 14], 1.0, &mut rng);
        (params, batch, vec![0, 1, 2])
    }

    fn warm_bank(params: &ModelParams, batch: &Tensor, labels: &[usize], kind: RegularizerKind) -> MeanBank {
        let comp = eval_batch(params, batch, labels, kind, true, Mode::Train).unwrap();
        let items = comp.bank_items(kind);
        let shape = items[0].shape().to_vec();
        let mut bank = MeanBank::new(params.num_classes(), &shape, 0.9);
        let refs: Vec<&Tensor> = items.iter().collect();
        bank.update(&refs, labels).unwrap();
        // Perturb so the loss is nonzero.
        bank
    }

    #[test]
    fn alpha_zero_equals_plain_cross_entropy() {
        let (params, batch, labels) = tiny();
        let a = total_loss(&params, &batch, &labels, None, 0.0, RegularizerKind::ConceptMatrix, Mode::Train).unwrap();
        let b = total_loss(&params, &batch, &labels, None, 0.0, RegularizerKind::None, Mode::Train).unwrap();
        assert_eq!(a.total, b.total);
        assert_eq!(a.total, a.loss_ce);
        assert_eq!(a.loss_reg, 0.0);
        for (x, y) in a.grads.tensors().iter().zip(b.grads.tensors()) {
            assert_eq!(**x, *y);
        }
    }

    #[test]
    fn fixed_point_batch_reduces_to_cross_entropy_loss() {
        // Bank means equal to this batch's matrices: L = L_CE at alpha = 1.
        let (params, batch, labels) = tiny();
        let bank = warm_bank(&params, &batch, &labels, RegularizerKind::ConceptMatrix);
        let out = total_loss(&params, &batch, &labels, Some(&bank), 1.0, RegularizerKind::ConceptMatrix, Mode::Train).unwrap();
        assert!((out.total - out.loss_ce).abs() < 1e-12);
        assert_eq!(out.loss_reg, 0.0);
    }

    /// End-to-end finite differences of the combined objective for every
    /// regularizer kind.
    #[test]
    fn combined_gradients_match_finite_differences() {
        for kind in [
            RegularizerKind::ConceptMatrix,
            RegularizerKind::FeatureInvariance,
            RegularizerKind::LogitInvariance,
        ] {
            let (params, batch, labels) = tiny();
            let mut bank = warm_bank(&params, &batch, &labels, kind);
            // Shift the bank away from the fixed point.
            if let Some(m) = bank.mean(0) {
                let mut shifted = m.clone();
                shifted.scale(0.5);
                let refs = [&shifted];
                bank.momentum = 1.0;
                bank.update(&refs[..1], &[0]).unwrap();
            }
            let alpha = 0.7;

            let loss_of = |p: &ModelParams| {
                total_loss(p, &batch, &labels, Some(&bank), alpha, kind, Mode::Train)
                    .unwrap()
                    .total
            };
            let out = total_loss(&params, &batch, &labels, Some(&bank), alpha, kind, Mode::Train).unwrap();

            let h = 1e-5;
            for ti in 0..7 {
                let analytic = out.grads.tensors()[ti].clone();
                for i in 0..analytic.len() {
                    let mut pp = params.clone();
                    pp.opt_tensors_mut()[ti].data_mut()[i] += h;
                    let mut pm = params.clone();
                    pm.opt_tensors_mut()[ti].data_mut()[i] -= h;
                    let num = (loss_of(&pp) - loss_of(&pm)) / (2.0 * h);
                    let a = analytic.data()[i];
                    let denom = 1.0f64.max(a.abs()).max(num.abs());
                    assert!(
                        ((a - num) / denom).abs() < 1e-4,
                        "{kind:?} tensor {ti} [{i}]: analytic {a} vs numeric {num}"
                    );
                }
            }
        }
    }
}
