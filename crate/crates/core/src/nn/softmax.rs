//! Softmax cross-entropy over a batch of logits, with max-subtraction for
//! numerical stability.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of `[N, C]` logits.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let sh = logits.shape();
    if sh.len() != 2 {
        return Err(Error::shape("softmax", "[N, C]", format!("{sh:?}")));
    }
    let (n, c) = (sh[0], sh[1]);
    let mut out = Tensor::zeros(sh);
    for i in 0..n {
        let row = &logits.data()[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let orow = &mut out.data_mut()[i * c..(i + 1) * c];
        let mut sum = 0.0;
        for (o, &l) in orow.iter_mut().zip(row) {
            *o = (l - max).exp();
            sum += *o;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    Ok(out)
}

/// Mean negative log-likelihood and its gradient `(softmax - onehot) / N`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let sh = logits.shape();
    if sh.len() != 2 {
        return Err(Error::shape("softmax_cross_entropy", "[N, C]", format!("{sh:?}")));
    }
    let (n, c) = (sh[0], sh[1]);
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{n} labels"),
            format!("{}", labels.len()),
        ));
    }
    if n == 0 {
        return Err(Error::EmptyInput {
            context: "softmax_cross_entropy".into(),
        });
    }
    for &y in labels {
        if y >= c {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes: c,
            });
        }
    }

    let probs = softmax(logits)?;
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        let p = probs.data()[i * c + y];
        // log of a stably-computed softmax entry; p > 0 because the max'd
        // logit contributes exp(0) = 1 to the denominator.
        loss -= p.ln();
        grad.data_mut()[i * c + y] -= 1.0;
    }
    loss /= n as f64;
    grad.scale(1.0 / n as f64);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "softmax_cross_entropy loss".into(),
        });
    }
    Ok((loss, grad))
}

/// Index of the row maximum; ties break toward the lowest index.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = Tensor::zeros(&[2, 4]);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 3]).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn dominant_true_logit_drives_loss_to_zero() {
        let logits = Tensor::from_vec(&[1, 3], vec![40.0, 0.0, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss < 1e-12, "{loss}");
    }

    #[test]
    fn large_logits_stay_stable() {
        let logits = Tensor::from_vec(&[1, 2], vec![1000.0, 999.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.is_finite());
        assert!(grad.is_finite());
    }

    #[test]
    fn label_out_of_range_errors() {
        let logits = Tensor::zeros(&[1, 3]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn loss_is_nonnegative() {
        let mut rng = Rng::seed_from_u64(9);
        for _ in 0..50 {
            let logits = Tensor::uniform(&[4, 5], 3.0, &mut rng);
            let labels: Vec<usize> = (0..4).map(|_| rng.below(5)).collect();
            let (loss, _) = softmax_cross_entropy(&logits, &labels).unwrap();
            assert!(loss >= 0.0);
        }
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = Rng::seed_from_u64(10);
        let logits = Tensor::uniform(&[5, 3], 2.0, &mut rng);
        let labels: Vec<usize> = (0..5).map(|_| rng.below(3)).collect();
        let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        let h = 1e-5;
        for i in 0..logits.len() {
            let mut lp = logits.clone();
            lp.data_mut()[i] += h;
            let mut lm = logits.clone();
            lm.data_mut()[i] -= h;
            let (fp, _) = softmax_cross_entropy(&lp, &labels).unwrap();
            let (fm, _) = softmax_cross_entropy(&lm, &labels).unwrap();
            let num = (fp - fm) / (2.0 * h);
            let a = grad.data()[i];
            let denom = 1.0f64.max(a.abs()).max(num.abs());
            assert!(((a - num) / denom).abs() < 1e-6, "idx {i}: {a} vs {num}");
        }
    }

    #[test]
    fn argmax_ties_break_low() {
        assert_eq!(argmax_row(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax_row(&[2.0, 1.0]), 0);
    }
}
