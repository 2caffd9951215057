//! The full finite-difference verification suite: every layer, every
//! regularizer, and the composed objective, each checked at many random
//! points against central differences.

use crate::concept::{batch_concept_matrices, cms_loss, MeanBank, RegularizerKind};
use crate::error::Result;
use crate::model::{build_model, BlockOrder, ModelConfig};
use crate::nn::{
    activation_backward, activation_forward, batchnorm_backward, batchnorm_forward, conv2d_backward,
    conv2d_forward, finite_diff_check, linear_backward, linear_forward, maxpool2d_backward,
    maxpool2d_forward, softmax_cross_entropy, Activation, Mode, DEFAULT_H,
};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::total_loss;

pub const TOLERANCE: f64 = 1e-4;
const H: f64 = DEFAULT_H;

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub points: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1.0f64.max(analytic.abs()).max(numeric.abs())
}

/// Central-difference check of `grad` against `f` at `point`.
fn check_tensor(f: &dyn Fn(&Tensor) -> f64, point: &Tensor, grad: &Tensor) -> f64 {
    finite_diff_check(&mut |x| Ok(f(x)), point, grad, H).expect("objective stays finite")
}

/// Weighted-sum objective so scalar checks exercise every output element.
fn weighted(output: &Tensor, weights: &[f64]) -> f64 {
    output.data().iter().zip(weights).map(|(o, w)| o * w).sum()
}

fn conv_entry(points: usize, rng: &mut Rng) -> SuiteEntry {
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let input = Tensor::uniform(&[2, 1, 10], 1.0, rng);
        let kernels = Tensor::uniform(&[3, 2, 1, 3], 1.0, rng);
        let out_len = 3 * 8;
        let w: Vec<f64> = (0..out_len).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let grad_out = Tensor::from_vec(&[3, 1, 8], w.clone()).unwrap();
        let (gx, gk) = conv2d_backward(&grad_out, &input, &kernels, 1).unwrap();
        worst = worst.max(check_tensor(
            &|x| weighted(&conv2d_forward(x, &kernels, 1).unwrap(), &w),
            &input,
            &gx,
        ));
        worst = worst.max(check_tensor(
            &|k| weighted(&conv2d_forward(&input, k, 1).unwrap(), &w),
            &kernels,
            &gk,
        ));
    }
    SuiteEntry {
        name: "conv2d".into(),
        points,
        max_rel_err: worst,
        pass: worst < TOLERANCE,
    }
}

fn pool_entry(points: usize, rng: &mut Rng) -> SuiteEntry {
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        // A strict ramp keeps every pooling window tie-free, and the
        // perturbation h cannot flip an argmax.
        let mut input = Tensor::uniform(&[2, 1, 8], 1.0, rng);
        for (i, v) in input.data_mut().iter_mut().enumerate() {
            *v += i as f64 * 0.01;
        }
        let p = maxpool2d_forward(&input, 2, 2).unwrap();
        let w: Vec<f64> = (0..p.output.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let grad_out = Tensor::from_vec(p.output.shape(), w.clone()).unwrap();
        let gx = maxpool2d_backward(&grad_out, &p.argmax, input.shape()).unwrap();
        worst = worst.max(check_tensor(
            &|x| weighted(&maxpool2d_forward(x, 2, 2).unwrap().output, &w),
            &input,
            &gx,
        ));
    }
    SuiteEntry {
        name: "maxpool2d".into(),
        points,
        max_rel_err: worst,
        pass: worst < TOLERANCE,
    }
}

fn relu_entry(points: usize, rng: &mut Rng) -> SuiteEntry {
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        // Keep points H-far from the kink at zero.
        let mut input = Tensor::uniform(&[12], 1.0, rng);
        for v in input.data_mut() {
            if v.abs() < 0.05 {
                *v += 0.1_f64.copysign(*v + 1e-12);
            }
        }
        let w: Vec<f64> = (0..input.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let grad_out = Tensor::from_vec(input.shape(), w.clone()).unwrap();
        let gx = activation_backward(Activation::Relu, &grad_out, &input);
        worst = worst.max(check_tensor(
            &|x| weighted(&activation_forward(Activation::Relu, x), &w),
            &input,
            &gx,
        ));
    }
    SuiteEntry {
        name: "relu".into(),
        points,
        max_rel_err: worst,
        pass: worst < TOLERANCE,
    }
}

fn batchnorm_entry(points: usize, rng: &mut Rng) -> SuiteEntry {
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let input = Tensor::uniform(&[3, 2, 1, 4], 1.0, rng);
        let gamma = Tensor::uniform(&[2], 1.0, rng);
        let beta = Tensor::uniform(&[2], 1.0, rng);
        let rm = Tensor::zeros(&[2]);
        let rv = Tensor::filled(&[2], 1.0);
        let w: Vec<f64> = (0..input.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let f = |x: &Tensor, g: &Tensor, b: &Tensor| {
            let fwd = batchnorm_forward(x, g, b, &rm, &rv, Mode::Train, 0.1, 1e-5).unwrap();
            weighted(&fwd.output, &w)
        };
        let fwd = batchnorm_forward(&input, &gamma, &beta, &rm, &rv, Mode::Train, 0.1, 1e-5).unwrap();
        let grad_out = Tensor::from_vec(input.shape(), w.clone()).unwrap();
        let (gx, gg, gb) = batchnorm_backward(&grad_out, &fwd.cache, &gamma).unwrap();
        worst = worst.max(check_tensor(&|x| f(x, &gamma, &beta), &input, &gx));
        worst = worst.max(check_tensor(&|g| f(&input, g, &beta), &gamma, &gg));
        worst = worst.max(check_tensor(&|b| f(&input, &gamma, b), &beta, &gb));
    }
    SuiteEntry {
        name: "batchnorm".into(),
        points,
        max_rel_err: worst,
        pass: worst < TOLERANCE,
    }
}

fn linear_entry(points: usize, rng: &mut Rng) -> SuiteEntry {
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let z = Tensor::uniform(&[5], 1.0, rng);
        let wmat = Tensor::uniform(&[5, 3], 1.0, rng);
        let w: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let grad_o = Tensor::from_vec(&[3], w.clone()).unwrap();
        let (gz, gw) = linear_backward(&grad_o, &z, &wmat).unwrap();
        worst = worst.max(check_tensor(
            &|zz| weighted(&linear_forward(zz, &wmat).unwrap(), &w),
            &z,
            &gz,
        ));
        worst = worst.max(check_tensor(
            &|ww| weighted(&linear_forward(&z, ww).unwrap(), &w),
            &wmat,
            &gw,
        ));
    }
    SuiteEntry {
        name: "linear".into(),
        points,
        max_rel_err: worst,
        pass: worst < TOLERANCE,
    }
}

fn softmax_ce_entry(points: usize, rng: &mut Rng) -> SuiteEntry {
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let logits = Tensor::uniform(&[4, 3], 2.0, rng);
        let labels: Vec<usize> = (0..4).map(|_| rng.below(3)).collect();
        let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        worst = worst.max(check_tensor(
            &|l| softmax_cross_entropy(l, &labels).unwrap().0,
            &logits,
            &grad,
        ));
    }
    SuiteEntry {
        name: "softmax_cross_entropy".into(),
        points,
        max_rel_err: worst,
        pass: worst < TOLERANCE,
    }
}

fn cms_entry(points: usize, rng: &mut Rng) -> SuiteEntry {
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let (n, d, c) = (3usize, 4usize, 2usize);
        let wmat = Tensor::uniform(&[d, c], 1.0, rng);
        let features = Tensor::uniform(&[n, d], 1.0, rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let mut bank = MeanBank::new(c, &[d, c], 1.0);
        for y in 0..c {
            let m = Tensor::uniform(&[d, c], 1.0, rng);
            bank.update(&[&m], &[y]).unwrap();
        }
        let loss_of = |features: &Tensor, wmat: &Tensor| {
            let ms = batch_concept_matrices(features, wmat).unwrap();
            cms_loss(&ms, &labels, &bank, wmat, features).unwrap().loss
        };
        let ms = batch_concept_matrices(&features, &wmat).unwrap();
        let out = cms_loss(&ms, &labels, &bank, &wmat, &features).unwrap();
        worst = worst.max(check_tensor(&|f| loss_of(f, &wmat), &features, &out.grad_features));
        worst = worst.max(check_tensor(&|w| loss_of(&features, w), &wmat, &out.grad_weights));
    }
    SuiteEntry {
        name: "cms_loss".into(),
        points,
        max_rel_err: worst,
        pass: worst < TOLERANCE,
    }
}

fn vector_loss_entry(name: &str, points: usize, rng: &mut Rng) -> SuiteEntry {
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let (n, dim, c) = (3usize, 5usize, 2usize);
        let rows = Tensor::uniform(&[n, dim], 1.0, rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let mut bank = MeanBank::new(c, &[dim], 1.0);
        for y in 0..c {
            let m = Tensor::uniform(&[dim], 1.0, rng);
            bank.update(&[&m], &[y]).unwrap();
        }
        let f = |rows: &Tensor| match name {
            "feature_invariance" => crate::concept::feature_invariance_loss(rows, &labels, &bank)
                .unwrap()
                .loss,
            _ => crate::concept::logit_invariance_loss(rows, &labels, &bank).unwrap().loss,
        };
        let out = match name {
            "feature_invariance" => {
                crate::concept::feature_invariance_loss(&rows, &labels, &bank).unwrap()
            }
            _ => crate::concept::logit_invariance_loss(&rows, &labels, &bank).unwrap(),
        };
        worst = worst.max(check_tensor(&f, &rows, &out.grad));
    }
    SuiteEntry {
        name: name.into(),
        points,
        max_rel_err: worst,
        pass: worst < TOLERANCE,
    }
}

fn total_loss_entry(kind: RegularizerKind, points: usize, rng: &mut Rng) -> SuiteEntry {
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
    let mut worst: f64 = 0.0;
    for point in 0..points {
        let params = build_model(&cfg, 7000 + point as u64).unwrap();
        let batch = Tensor::uniform(&[2, 2, 1, 14], 1.0, rng);
        let labels = vec![rng.below(3), rng.below(3)];
        let d = params.feature_dim();
        let c = params.num_classes();
        let shape = match kind {
            RegularizerKind::ConceptMatrix => vec![d, c],
            RegularizerKind::FeatureInvariance => vec![d],
            RegularizerKind::LogitInvariance => vec![c],
            RegularizerKind::None => vec![1],
        };
        let mut bank = MeanBank::new(c, &shape, 1.0);
        for y in 0..c {
            let m = Tensor::uniform(&shape, 0.5, rng);
            bank.update(&[&m], &[y]).unwrap();
        }
        let alpha = 0.7;
        let out = total_loss(&params, &batch, &labels, Some(&bank), alpha, kind, Mode::Train).unwrap();
        for ti in 0..7 {
            let analytic = out.grads.tensors()[ti];
            let mut p = params.clone();
            for i in 0..analytic.len() {
                let orig = p.opt_tensors()[ti].data()[i];
                p.opt_tensors_mut()[ti].data_mut()[i] = orig + H;
                let fp = total_loss(&p, &batch, &labels, Some(&bank), alpha, kind, Mode::Train)
                    .unwrap()
                    .total;
                p.opt_tensors_mut()[ti].data_mut()[i] = orig - H;
                let fm = total_loss(&p, &batch, &labels, Some(&bank), alpha, kind, Mode::Train)
                    .unwrap()
                    .total;
                p.opt_tensors_mut()[ti].data_mut()[i] = orig;
                worst = worst.max(rel_err(analytic.data()[i], (fp - fm) / (2.0 * H)));
            }
        }
    }
    SuiteEntry {
        name: format!("total_loss[{}]", kind.label()),
        points,
        max_rel_err: worst,
        pass: worst < TOLERANCE,
    }
}

/// Runs the whole suite. Layer and regularizer entries use `points` random
/// instances each; the composed objective uses fewer (each instance checks
/// every parameter coordinate end to end).
pub fn run_full_suite(seed: u64, points: usize, composed_points: usize) -> Result<Vec<SuiteEntry>> {
    let mut rng = Rng::derive(seed, "gradsuite", 0);
    Ok(vec![
        conv_entry(points, &mut rng),
        pool_entry(points, &mut rng),
        relu_entry(points, &mut rng),
        batchnorm_entry(points, &mut rng),
        linear_entry(points, &mut rng),
        softmax_ce_entry(points, &mut rng),
        cms_entry(points, &mut rng),
        vector_loss_entry("feature_invariance", points, &mut rng),
        vector_loss_entry("logit_invariance", points, &mut rng),
        total_loss_entry(RegularizerKind::ConceptMatrix, composed_points, &mut rng),
        total_loss_entry(RegularizerKind::FeatureInvariance, composed_points, &mut rng),
        total_loss_entry(RegularizerKind::LogitInvariance, composed_points, &mut rng),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        let entries = run_full_suite(1, 3, 1).unwrap();
        for e in &entries {
            assert!(e.pass, "{} failed with max rel err {}", e.name, e.max_rel_err);
        }
        assert_eq!(entries.len(), 12);
    }
}
