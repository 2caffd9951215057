//! Concept matrices and categorical invariance regularizers.
//!
//! A concept matrix decomposes each logit into its per-feature
//! contributions: `M[j,c] = W[j,c] * z[j]`, so every column sums to the
//! corresponding logit. The concept-matrix-similarity (CMS) loss pulls each
//! sample's matrix toward a momentum-tracked mean of its class, constraining
//! feature and logit behavior jointly. Feature-only and logit-only variants
//! of the same construction are provided for ablation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which invariance regularizer an experiment trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    /// Full concept-matrix similarity.
    ConceptMatrix,
    /// Pull features `z` toward class means.
    FeatureInvariance,
    /// Pull logits `o` toward class means.
    LogitInvariance,
    /// Plain cross-entropy training.
    None,
}

impl RegularizerKind {
    /// Short method label used in result tables.
    pub fn label(&self) -> &'static str {
        match self {
            RegularizerKind::ConceptMatrix => "ccil",
            RegularizerKind::FeatureInvariance => "w_fea",
            RegularizerKind::LogitInvariance => "w_log",
            RegularizerKind::None => "erm",
        }
    }
}

/// Per-sample `[D, C]` matrix of element-wise logit contributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptMatrix {
    pub entries: Tensor,
}

impl ConceptMatrix {
    /// Column sums, which reproduce the logits exactly.
    pub fn column_sums(&self) -> Vec<f64> {
        let [d, c] = [self.entries.shape()[0], self.entries.shape()[1]];
        let mut sums = vec![0.0; c];
        for j in 0..d {
            for (k, s) in sums.iter_mut().enumerate() {
                *s += self.entries.data()[j * c + k];
            }
        }
        sums
    }
}

/// `M[j,c] = W[j,c] * z[j]`.
pub fn build_concept_matrix(features: &Tensor, weights: &Tensor) -> Result<ConceptMatrix> {
    let wsh = weights.shape();
    if wsh.len() != 2 {
        return Err(Error::shape("build_concept_matrix", "[D, C]", format!("{wsh:?}")));
    }
    let (d, c) = (wsh[0], wsh[1]);
    if features.shape() != [d] {
        return Err(Error::shape(
            "build_concept_matrix",
            format!("[{d}] features"),
            format!("{:?}", features.shape()),
        ));
    }
    let mut entries = Tensor::zeros(&[d, c]);
    for j in 0..d {
        let zj = features.data()[j];
        for k in 0..c {
            entries.data_mut()[j * c + k] = weights.data()[j * c + k] * zj;
        }
    }
    Ok(ConceptMatrix { entries })
}

/// One matrix per row of a `[N, D]` feature batch.
pub fn batch_concept_matrices(features: &Tensor, weights: &Tensor) -> Result<Vec<ConceptMatrix>> {
    let n = features.shape()[0];
    (0..n)
        .map(|i| build_concept_matrix(&features.sample(i), weights))
        .collect()
}

/// Momentum-tracked per-class means.
///
/// A class mean starts uninitialized; the first batch containing the class
/// sets it to that batch's class mean outright, and later batches blend by
/// `new = old + momentum * (batch_mean - old)`. Uninitialized classes are
/// excluded from every loss.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanBank {
    shape: Vec<usize>,
    means: Vec<Tensor>,
    initialized: Vec<bool>,
    pub momentum: f64,
}

impl MeanBank {
    pub fn new(num_classes: usize, shape: &[usize], momentum: f64) -> MeanBank {
        MeanBank {
            shape: shape.to_vec(),
            means: (0..num_classes).map(|_| Tensor::zeros(shape)).collect(),
            initialized: vec![false; num_classes],
            momentum,
        }
    }

    /// Reassembles a bank from serialized parts.
    pub fn from_parts(means: Vec<Tensor>, initialized: Vec<bool>, momentum: f64) -> Result<MeanBank> {
        let shape = means
            .first()
            .map(|t| t.shape().to_vec())
            .ok_or(Error::EmptyInput {
                context: "MeanBank::from_parts".into(),
            })?;
        if means.len() != initialized.len() {
            return Err(Error::shape(
                "MeanBank::from_parts",
                format!("{} flags", means.len()),
                format!("{}", initialized.len()),
            ));
        }
        if means.iter().any(|t| t.shape() != shape.as_slice()) {
            return Err(Error::shape("MeanBank::from_parts", format!("{shape:?}"), "mixed shapes"));
        }
        Ok(MeanBank {
            shape,
            means,
            initialized,
            momentum,
        })
    }

    /// Raw mean storage (zeros for uninitialized classes), for serialization.
    pub fn raw_mean(&self, class: usize) -> &Tensor {
        &self.means[class]
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn entry_shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn is_initialized(&self, class: usize) -> bool {
        self.initialized.get(class).copied().unwrap_or(false)
    }

    /// The tracked mean, if the class has been seen.
    pub fn mean(&self, class: usize) -> Option<&Tensor> {
        if self.is_initialized(class) {
            Some(&self.means[class])
        } else {
            None
        }
    }

    /// Applies the momentum update with this batch's per-class means.
    /// Classes absent from the batch keep their previous mean.
    pub fn update(&mut self, items: &[&Tensor], labels: &[usize]) -> Result<()> {
        if items.len() != labels.len() {
            return Err(Error::shape(
                "MeanBank::update",
                format!("{} labels", items.len()),
                format!("{}", labels.len()),
            ));
        }
        let c = self.means.len();
        let mut sums: Vec<Option<Tensor>> = vec![None; c];
        let mut counts = vec![0usize; c];
        for (item, &y) in items.iter().zip(labels) {
            if y >= c {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    num_classes: c,
                });
            }
            if item.shape() != self.shape.as_slice() {
                return Err(Error::shape(
                    "MeanBank::update",
                    format!("{:?}", self.shape),
                    format!("{:?}", item.shape()),
                ));
            }
            let sum = sums[y].get_or_insert_with(|| Tensor::zeros(&self.shape));
            sum.add_scaled(item, 1.0);
            counts[y] += 1;
        }
        for (y, sum) in sums.into_iter().enumerate() {
            let Some(mut batch_mean) = sum else { continue };
            batch_mean.scale(1.0 / counts[y] as f64);
            batch_mean.check_finite("MeanBank::update batch mean")?;
            if !self.initialized[y] {
                self.means[y] = batch_mean;
                self.initialized[y] = true;
            } else if self.momentum == 1.0 {
                self.means[y] = batch_mean;
            } else if self.momentum == 0.0 {
                // Frozen after initialization.
            } else {
                let old = self.means[y].clone();
                let m = &mut self.means[y];
                for ((v, &new), &prev) in
                    m.data_mut().iter_mut().zip(batch_mean.data()).zip(old.data())
                {
                    *v = prev + self.momentum * (new - prev);
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "mean_bank",
            "shape": self.shape,
            "initialized": self.initialized,
            "momentum": self.momentum,
        });
        let named: Vec<(String, &Tensor)> = self
            .means
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("mean_{i}"), t))
            .collect();
        let refs: Vec<(&str, &Tensor)> = named.iter().map(|(n, t)| (n.as_str(), *t)).collect();
        save_checkpoint(path, &meta, &refs)
    }

    pub fn load(path: &Path) -> Result<MeanBank> {
        let mut ckpt = load_checkpoint(path)?;
        if ckpt.meta["kind"] != "mean_bank" {
            return Err(Error::Checkpoint(format!(
                "{} is not a mean-bank checkpoint",
                path.display()
            )));
        }
        let shape: Vec<usize> = serde_json::from_value(ckpt.meta["shape"].clone())?;
        let initialized: Vec<bool> = serde_json::from_value(ckpt.meta["initialized"].clone())?;
        let momentum = ckpt.meta["momentum"].as_f64().unwrap_or(0.0);
        let means = (0..initialized.len())
            .map(|i| ckpt.take_tensor(&format!("mean_{i}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(MeanBank {
            shape,
            means,
            initialized,
            momentum,
        })
    }
}

/// Loss and gradients of the concept-matrix-similarity regularizer.
pub struct CmsLoss {
    pub loss: f64,
    /// `[N, D]` gradient entering the features.
    pub grad_features: Tensor,
    /// `[D, C]` direct gradient on the classifier weights.
    pub grad_weights: Tensor,
    /// Samples excluded because their class mean is uninitialized.
    pub excluded: usize,
}

/// Mean squared Frobenius distance between each sample's concept matrix and
/// its class mean: `(1/N_b) * sum_i ||M_i - bank[y_i]||^2`.
///
/// Bank means are constants (no gradient flows into them). Samples of
/// uninitialized classes contribute zero loss and zero gradient; `excluded`
/// reports how many, so a caller can flag an all-uninitialized batch.
pub fn cms_loss(
    matrices: &[ConceptMatrix],
    labels: &[usize],
    bank: &MeanBank,
    weights: &Tensor,
    features: &Tensor,
) -> Result<CmsLoss> {
    let n = matrices.len();
    if labels.len() != n {
        return Err(Error::shape("cms_loss", format!("{n} labels"), format!("{}", labels.len())));
    }
    if n == 0 {
        return Err(Error::EmptyInput {
            context: "cms_loss".into(),
        });
    }
    let (d, c) = (weights.shape()[0], weights.shape()[1]);
    if features.shape() != [n, d] {
        return Err(Error::shape("cms_loss", format!("[{n}, {d}] features"), format!("{:?}", features.shape())));
    }

    let scale = 2.0 / n as f64;
    let mut loss = 0.0;
    let mut grad_features = Tensor::zeros(&[n, d]);
    let mut grad_weights = Tensor::zeros(&[d, c]);
    let mut excluded = 0usize;

    for (i, (matrix, &y)) in matrices.iter().zip(labels).enumerate() {
        if y >= bank.num_classes() {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes: bank.num_classes(),
            });
        }
        let Some(mean) = bank.mean(y) else {
            excluded += 1;
            continue;
        };
        loss += matrix.entries.sq_distance(mean);
        let m = matrix.entries.data();
        let mm = mean.data();
        let w = weights.data();
        let z = features.sample_slice(i);
        let gz = grad_features.sample_slice_mut(i);
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..c {
                let diff = m[j * c + k] - mm[j * c + k];
                acc += diff * w[j * c + k];
                grad_weights.data_mut()[j * c + k] += scale * diff * z[j];
            }
            gz[j] = scale * acc;
        }
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "cms_loss".into(),
        });
    }
    Ok(CmsLoss {
        loss,
        grad_features,
        grad_weights,
        excluded,
    })
}

/// Loss and gradient of a vector-valued invariance regularizer.
pub struct VectorInvarianceLoss {
    pub loss: f64,
    /// `[N, dim]` gradient at the regularized vectors.
    pub grad: Tensor,
    pub excluded: usize,
}

fn vector_invariance_loss(rows: &Tensor, labels: &[usize], bank: &MeanBank, context: &str) -> Result<VectorInvarianceLoss> {
    let sh = rows.shape();
    if sh.len() != 2 {
        return Err(Error::shape(context, "[N, dim]", format!("{sh:?}")));
    }
    let (n, dim) = (sh[0], sh[1]);
    if labels.len() != n {
        return Err(Error::shape(context, format!("{n} labels"), format!("{}", labels.len())));
    }
    if n == 0 {
        return Err(Error::EmptyInput {
            context: context.into(),
        });
    }
    if bank.entry_shape() != [dim] {
        return Err(Error::shape(context, format!("bank of [{dim}]"), format!("{:?}", bank.entry_shape())));
    }

    let scale = 2.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&[n, dim]);
    let mut excluded = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        if y >= bank.num_classes() {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes: bank.num_classes(),
            });
        }
        let Some(mean) = bank.mean(y) else {
            excluded += 1;
            continue;
        };
        let row = rows.sample_slice(i);
        let grow = grad.sample_slice_mut(i);
        for j in 0..dim {
            let diff = row[j] - mean.data()[j];
            loss += diff * diff;
            grow[j] = scale * diff;
        }
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: context.into(),
        });
    }
    Ok(VectorInvarianceLoss {
        loss,
        grad,
        excluded,
    })
}

/// Feature-invariance ablation: `(1/N_b) * sum_i ||z_i - bank[y_i]||^2`.
pub fn feature_invariance_loss(features: &Tensor, labels: &[usize], bank: &MeanBank) -> Result<VectorInvarianceLoss> {
    vector_invariance_loss(features, labels, bank, "feature_invariance_loss")
}

/// Logit-invariance ablation: `(1/N_b) * sum_i ||o_i - bank[y_i]||^2`.
pub fn logit_invariance_loss(logits: &Tensor, labels: &[usize], bank: &MeanBank) -> Result<VectorInvarianceLoss> {
    vector_invariance_loss(logits, labels, bank, "logit_invariance_loss")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::linear_forward;
    use crate::rng::Rng;

    fn bank_with(means: Vec<Tensor>, momentum: f64) -> MeanBank {
        let shape = means[0].shape().to_vec();
        let n = means.len();
        MeanBank {
            shape,
            means,
            initialized: vec![true; n],
            momentum,
        }
    }

    #[test]
    fn identity_weights_example() {
        let z = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = build_concept_matrix(&z, &w).unwrap();
        assert_eq!(m.entries.data(), &[1.0, 0.0, 0.0, 2.0]);
        assert_eq!(m.column_sums(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_features_zero_matrix() {
        let z = Tensor::zeros(&[3]);
        let mut rng = Rng::seed_from_u64(1);
        let w = Tensor::uniform(&[3, 2], 1.0, &mut rng);
        let m = build_concept_matrix(&z, &w).unwrap();
        assert!(m.entries.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn column_sums_match_linear_forward() {
        let mut rng = Rng::seed_from_u64(2);
        for _ in 0..20 {
            let z = Tensor::uniform(&[6], 2.0, &mut rng);
            let w = Tensor::uniform(&[6, 4], 2.0, &mut rng);
            let m = build_concept_matrix(&z, &w).unwrap();
            let o = linear_forward(&z, &w).unwrap();
            for (s, &l) in m.column_sums().iter().zip(o.data()) {
                assert!((s - l).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cms_zero_at_class_mean_fixed_point() {
        let mut rng = Rng::seed_from_u64(3);
        let w = Tensor::uniform(&[3, 2], 1.0, &mut rng);
        let features = Tensor::uniform(&[2, 3], 1.0, &mut rng);
        let matrices = batch_concept_matrices(&features, &w).unwrap();
        let bank = bank_with(vec![matrices[0].entries.clone(), matrices[1].entries.clone()], 0.9);
        let out = cms_loss(&matrices, &[0, 1], &bank, &w, &features).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_features.data().iter().all(|&v| v == 0.0));
        assert!(out.grad_weights.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cms_one_by_one_arithmetic() {
        // D = C = 1: z = (2), W = (0.5) -> M = (1); mean 0 -> loss 1,
        // grad_z = 2 * (M - 0) * W = 1, grad_W = 2 * (M - 0) * z = 4.
        let z = Tensor::from_vec(&[1, 1], vec![2.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1], vec![0.5]).unwrap();
        let matrices = batch_concept_matrices(&z, &w).unwrap();
        assert_eq!(matrices[0].entries.data(), &[1.0]);
        let bank = bank_with(vec![Tensor::zeros(&[1, 1])], 0.9);
        let out = cms_loss(&matrices, &[0], &bank, &w, &z).unwrap();
        assert!((out.loss - 1.0).abs() < 1e-15);
        assert!((out.grad_features.data()[0] - 1.0).abs() < 1e-15);
        assert!((out.grad_weights.data()[0] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn cms_matches_naive_sum_and_finite_differences() {
        let mut rng = Rng::seed_from_u64(4);
        let (n, d, c) = (4usize, 3usize, 2usize);
        let w = Tensor::uniform(&[d, c], 1.0, &mut rng);
        let features = Tensor::uniform(&[n, d], 1.0, &mut rng);
        let labels = vec![0, 1, 0, 1];
        let means = vec![
            Tensor::uniform(&[d, c], 1.0, &mut rng),
            Tensor::uniform(&[d, c], 1.0, &mut rng),
        ];
        let bank = bank_with(means.clone(), 0.9);

        // Naive reference: materialize every matrix and sum squared diffs.
        let naive = |features: &Tensor, w: &Tensor| -> f64 {
            let mut total = 0.0;
            for i in 0..n {
                let m = build_concept_matrix(&features.sample(i), w).unwrap();
                total += m.entries.sq_distance(&means[labels[i]]);
            }
            total / n as f64
        };

        let matrices = batch_concept_matrices(&features, &w).unwrap();
        let out = cms_loss(&matrices, &labels, &bank, &w, &features).unwrap();
        assert!((out.loss - naive(&features, &w)).abs() < 1e-12);

        let h = 1e-6;
        for i in 0..features.len() {
            let mut fp = features.clone();
            fp.data_mut()[i] += h;
            let mut fm = features.clone();
            fm.data_mut()[i] -= h;
            let num = (naive(&fp, &w) - naive(&fm, &w)) / (2.0 * h);
            let a = out.grad_features.data()[i];
            let denom = 1.0f64.max(a.abs()).max(num.abs());
            assert!(((a - num) / denom).abs() < 1e-6, "z[{i}]: {a} vs {num}");
        }
        for i in 0..w.len() {
            let mut wp = w.clone();
            wp.data_mut()[i] += h;
            let mut wm = w.clone();
            wm.data_mut()[i] -= h;
            let num = (naive(&features, &wp) - naive(&features, &wm)) / (2.0 * h);
            let a = out.grad_weights.data()[i];
            let denom = 1.0f64.max(a.abs()).max(num.abs());
            assert!(((a - num) / denom).abs() < 1e-6, "W[{i}]: {a} vs {num}");
        }
    }

    #[test]
    fn uninitialized_classes_are_excluded() {
        let mut rng = Rng::seed_from_u64(5);
        let w = Tensor::uniform(&[2, 2], 1.0, &mut rng);
        let features = Tensor::uniform(&[2, 2], 1.0, &mut rng);
        let matrices = batch_concept_matrices(&features, &w).unwrap();
        let bank = MeanBank::new(2, &[2, 2], 0.9);
        let out = cms_loss(&matrices, &[0, 1], &bank, &w, &features).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.excluded, 2);
        assert!(out.grad_features.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bank_momentum_identities() {
        // momentum = 1: mean becomes the batch mean exactly.
        let item = Tensor::from_vec(&[1, 1], vec![3.0]).unwrap();
        let mut bank = MeanBank::new(1, &[1, 1], 1.0);
        bank.update(&[&Tensor::from_vec(&[1, 1], vec![1.0]).unwrap()], &[0]).unwrap();
        bank.update(&[&item], &[0]).unwrap();
        assert_eq!(bank.mean(0).unwrap().data(), &[3.0]);

        // momentum = 0: frozen after initialization.
        let mut bank = MeanBank::new(1, &[1, 1], 0.0);
        bank.update(&[&Tensor::from_vec(&[1, 1], vec![1.0]).unwrap()], &[0]).unwrap();
        bank.update(&[&item], &[0]).unwrap();
        assert_eq!(bank.mean(0).unwrap().data(), &[1.0]);

        // momentum = 0.9 blends: 0 -> 0.9 * 1.
        let mut bank = MeanBank::new(1, &[1, 1], 0.9);
        bank.update(&[&Tensor::zeros(&[1, 1])], &[0]).unwrap();
        bank.update(&[&Tensor::from_vec(&[1, 1], vec![1.0]).unwrap()], &[0]).unwrap();
        assert!((bank.mean(0).unwrap().data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn bank_fixed_point_for_any_momentum() {
        let mut rng = Rng::seed_from_u64(6);
        for &momentum in &[0.0, 0.3, 0.9, 0.99, 1.0] {
            let item = Tensor::uniform(&[2, 2], 1.0, &mut rng);
            let mut bank = MeanBank::new(1, &[2, 2], momentum);
            bank.update(&[&item], &[0]).unwrap();
            let before = bank.mean(0).unwrap().clone();
            bank.update(&[&item, &item], &[0, 0]).unwrap();
            assert_eq!(bank.mean(0).unwrap(), &before, "momentum {momentum}");
        }
    }

    #[test]
    fn bank_first_occurrence_initializes_regardless_of_momentum() {
        let item = Tensor::from_vec(&[1], vec![5.0]).unwrap();
        for &momentum in &[0.0, 0.5, 1.0] {
            let mut bank = MeanBank::new(2, &[1], momentum);
            assert!(bank.mean(1).is_none());
            bank.update(&[&item], &[1]).unwrap();
            assert_eq!(bank.mean(1).unwrap().data(), &[5.0]);
            assert!(bank.mean(0).is_none(), "absent class stays uninitialized");
        }
    }

    #[test]
    fn bank_absent_class_keeps_previous_mean() {
        let mut bank = MeanBank::new(2, &[1], 0.9);
        let a = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let b = Tensor::from_vec(&[1], vec![2.0]).unwrap();
        bank.update(&[&a, &b], &[0, 1]).unwrap();
        let mean1_before = bank.mean(1).unwrap().clone();
        bank.update(&[&Tensor::from_vec(&[1], vec![9.0]).unwrap()], &[0]).unwrap();
        assert_eq!(bank.mean(1).unwrap(), &mean1_before);
    }

    #[test]
    fn feature_invariance_arithmetic() {
        // N = 1, z = (3), mean = (1): loss 4, grad 4.
        let z = Tensor::from_vec(&[1, 1], vec![3.0]).unwrap();
        let bank = bank_with(vec![Tensor::from_vec(&[1], vec![1.0]).unwrap()], 0.9);
        let out = feature_invariance_loss(&z, &[0], &bank).unwrap();
        assert!((out.loss - 4.0).abs() < 1e-15);
        assert!((out.grad.data()[0] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn logit_invariance_arithmetic() {
        // N = 1, o = (0, 2), mean = (0, 0): loss 4.
        let o = Tensor::from_vec(&[1, 2], vec![0.0, 2.0]).unwrap();
        let bank = bank_with(vec![Tensor::zeros(&[2])], 0.9);
        let out = logit_invariance_loss(&o, &[0], &bank).unwrap();
        assert!((out.loss - 4.0).abs() < 1e-15);
        assert_eq!(out.grad.data(), &[0.0, 4.0]);
    }

    #[test]
    fn vector_loss_zero_at_mean() {
        let rows = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 1.0, 2.0]).unwrap();
        let bank = bank_with(vec![Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap()], 0.9);
        let out = feature_invariance_loss(&rows, &[0, 0], &bank).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn vector_loss_matches_finite_differences() {
        let mut rng = Rng::seed_from_u64(7);
        let rows = Tensor::uniform(&[3, 4], 1.0, &mut rng);
        let labels = vec![0, 1, 0];
        let means = vec![Tensor::uniform(&[4], 1.0, &mut rng), Tensor::uniform(&[4], 1.0, &mut rng)];
        let bank = bank_with(means.clone(), 0.9);
        let out = feature_invariance_loss(&rows, &labels, &bank).unwrap();
        let f = |rows: &Tensor| -> f64 {
            let mut total = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                total += Tensor::from_vec(&[4], rows.sample_slice(i).to_vec())
                    .unwrap()
                    .sq_distance(&means[y]);
            }
            total / 3.0
        };
        let h = 1e-6;
        for i in 0..rows.len() {
            let mut rp = rows.clone();
            rp.data_mut()[i] += h;
            let mut rm = rows.clone();
            rm.data_mut()[i] -= h;
            let num = (f(&rp) - f(&rm)) / (2.0 * h);
            let a = out.grad.data()[i];
            let denom = 1.0f64.max(a.abs()).max(num.abs());
            assert!(((a - num) / denom).abs() < 1e-6);
        }
    }

    /// With C = 1 and all-ones W, the concept matrix is the feature vector,
    /// so the two losses coincide.
    #[test]
    fn cms_reduces_to_feature_invariance_for_ones_weights() {
        let mut rng = Rng::seed_from_u64(8);
        for _ in 0..100 {
            let d = 1 + rng.below(6);
            let n = 1 + rng.below(4);
            let w = Tensor::filled(&[d, 1], 1.0);
            let features = Tensor::uniform(&[n, d], 2.0, &mut rng);
            let labels: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
            let means: Vec<Tensor> = (0..2).map(|_| Tensor::uniform(&[d], 2.0, &mut rng)).collect();
            let matrix_bank = bank_with(
                means.iter().map(|m| Tensor::from_vec(&[d, 1], m.data().to_vec()).unwrap()).collect(),
                0.9,
            );
            let vector_bank = bank_with(means, 0.9);
            let matrices = batch_concept_matrices(&features, &w).unwrap();
            let a = cms_loss(&matrices, &labels, &matrix_bank, &w, &features).unwrap();
            let b = feature_invariance_loss(&features, &labels, &vector_bank).unwrap();
            assert!((a.loss - b.loss).abs() < 1e-12);
            for (x, y) in a.grad_features.data().iter().zip(b.grad.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    /// For fixed W and bank, the loss in one sample's features is a convex
    /// quadratic whose analytic minimizer zeroes the gradient.
    #[test]
    fn cms_coordinatewise_minimizer_zeroes_gradient() {
        let mut rng = Rng::seed_from_u64(9);
        let (d, c) = (4usize, 3usize);
        let w = Tensor::uniform(&[d, c], 1.0, &mut rng);
        let mean = Tensor::uniform(&[d, c], 1.0, &mut rng);
        let bank = bank_with(vec![mean.clone()], 0.9);

        // Minimizer per coordinate: z*[j] = sum_c W[j,c]*mean[j,c] / sum_c W[j,c]^2.
        let mut z_star = Tensor::zeros(&[1, d]);
        for j in 0..d {
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..c {
                num += w.data()[j * c + k] * mean.data()[j * c + k];
                den += w.data()[j * c + k] * w.data()[j * c + k];
            }
            assert!(den > 0.0);
            z_star.data_mut()[j] = num / den;
        }
        let matrices = batch_concept_matrices(&z_star, &w).unwrap();
        let out = cms_loss(&matrices, &[0], &bank, &w, &z_star).unwrap();
        for &g in out.grad_features.data() {
            assert!(g.abs() < 1e-12, "{g}");
        }

        // Convexity along each coordinate: midpoint below chord.
        let loss_at = |z: &Tensor| {
            let m = batch_concept_matrices(z, &w).unwrap();
            cms_loss(&m, &[0], &bank, &w, z).unwrap().loss
        };
        for j in 0..d {
            let mut za = z_star.clone();
            za.data_mut()[j] -= 1.0;
            let mut zb = z_star.clone();
            zb.data_mut()[j] += 1.0;
            let mut zm = z_star.clone();
            zm.data_mut()[j] += 0.0;
            let chord = 0.5 * (loss_at(&za) + loss_at(&zb));
            assert!(loss_at(&zm) <= chord + 1e-12);
        }
    }

    #[test]
    fn bank_checkpoint_round_trips() {
        let mut bank = MeanBank::new(3, &[2, 2], 0.9);
        let item = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        bank.update(&[&item], &[1]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.ckpt");
        bank.save(&path).unwrap();
        let loaded = MeanBank::load(&path).unwrap();
        assert_eq!(loaded, bank);
    }
}
