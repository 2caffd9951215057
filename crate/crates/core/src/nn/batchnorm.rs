//! Batch normalization over `[N, C, 1, T]` with per-channel statistics.
//!
//! Train mode normalizes with biased batch statistics and reports updated
//! running statistics; eval mode normalizes with the running statistics.
//! The forward is pure — the caller decides when to commit the running-stat
//! update, which keeps gradient checking and snapshot/resume exact.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

pub struct BnCache {
    mode: Mode,
    /// x - mean used for normalization, `[N, C, 1, T]`.
    centered: Tensor,
    /// 1 / sqrt(var + eps) per channel.
    inv_std: Vec<f64>,
}

pub struct BnForward {
    pub output: Tensor,
    pub cache: BnCache,
    /// `(new_running_mean, new_running_var)`, present in train mode.
    pub stats_update: Option<(Tensor, Tensor)>,
}

fn check_input(input: &Tensor, channels: usize) -> Result<(usize, usize)> {
    let sh = input.shape();
    if sh.len() != 4 || sh[2] != 1 || sh[1] != channels {
        return Err(Error::shape(
            "batchnorm",
            format!("[N, {channels}, 1, T]"),
            format!("{sh:?}"),
        ));
    }
    Ok((sh[0], sh[3]))
}

#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    mode: Mode,
    momentum: f64,
    eps: f64,
) -> Result<BnForward> {
    let channels = gamma.len();
    let (n, t) = check_input(input, channels)?;
    if eps <= 0.0 {
        return Err(Error::Config("batchnorm eps must be > 0".into()));
    }
    if mode == Mode::Train && n < 2 {
        return Err(Error::degenerate(
            "batchnorm",
            format!("train mode needs a batch of >= 2 samples, got {n}"),
        ));
    }

    let m = (n * t) as f64;
    let x = input.data();
    let chan_stride = t; // within one sample
    let sample_stride = channels * t;

    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0f64; channels];
            let mut var = vec![0.0f64; channels];
            for c in 0..channels {
                let mut acc = 0.0;
                for ni in 0..n {
                    let row = &x[ni * sample_stride + c * chan_stride..][..t];
                    acc += row.iter().sum::<f64>();
                }
                mean[c] = acc / m;
                let mut sq = 0.0;
                for ni in 0..n {
                    let row = &x[ni * sample_stride + c * chan_stride..][..t];
                    sq += row.iter().map(|v| (v - mean[c]) * (v - mean[c])).sum::<f64>();
                }
                var[c] = sq / m;
            }
            (mean, var)
        }
        Mode::Eval => (running_mean.data().to_vec(), running_var.data().to_vec()),
    };

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

    let mut centered = Tensor::zeros(input.shape());
    let mut output = Tensor::zeros(input.shape());
    for ni in 0..n {
        for c in 0..channels {
            let off = ni * sample_stride + c * chan_stride;
            let (g, b) = (gamma.data()[c], beta.data()[c]);
            for j in 0..t {
                let ctr = x[off + j] - mean[c];
                centered.data_mut()[off + j] = ctr;
                output.data_mut()[off + j] = g * ctr * inv_std[c] + b;
            }
        }
    }
    output.check_finite("batchnorm_forward output")?;

    let stats_update = match mode {
        Mode::Train => {
            let mut new_mean = running_mean.clone();
            let mut new_var = running_var.clone();
            for c in 0..channels {
                new_mean.data_mut()[c] = (1.0 - momentum) * running_mean.data()[c] + momentum * mean[c];
                new_var.data_mut()[c] = (1.0 - momentum) * running_var.data()[c] + momentum * var[c];
            }
            Some((new_mean, new_var))
        }
        Mode::Eval => None,
    };

    Ok(BnForward {
        output,
        cache: BnCache {
            mode,
            centered,
            inv_std,
        },
        stats_update,
    })
}

/// Gradients with respect to input, gamma, and beta.
pub fn batchnorm_backward(
    grad_out: &Tensor,
    cache: &BnCache,
    gamma: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let channels = gamma.len();
    let (n, t) = check_input(grad_out, channels)?;
    if grad_out.shape() != cache.centered.shape() {
        return Err(Error::shape(
            "batchnorm_backward",
            format!("{:?}", cache.centered.shape()),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let m = (n * t) as f64;
    let sample_stride = channels * t;
    let dy = grad_out.data();
    let ctr = cache.centered.data();

    let mut grad_input = Tensor::zeros(grad_out.shape());
    let mut grad_gamma = Tensor::zeros(&[channels]);
    let mut grad_beta = Tensor::zeros(&[channels]);

    for c in 0..channels {
        let istd = cache.inv_std[c];
        let g = gamma.data()[c];
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for ni in 0..n {
            let off = ni * sample_stride + c * t;
            for j in 0..t {
                sum_dy += dy[off + j];
                sum_dy_xhat += dy[off + j] * ctr[off + j] * istd;
            }
        }
        grad_beta.data_mut()[c] = sum_dy;
        grad_gamma.data_mut()[c] = sum_dy_xhat;

        match cache.mode {
            Mode::Train => {
                // dvar and dmean terms of the batch-statistics path.
                let mut dvar = 0.0;
                for ni in 0..n {
                    let off = ni * sample_stride + c * t;
                    for j in 0..t {
                        dvar += dy[off + j] * g * ctr[off + j];
                    }
                }
                dvar *= -0.5 * istd * istd * istd;
                let mut sum_ctr = 0.0;
                for ni in 0..n {
                    let off = ni * sample_stride + c * t;
                    for j in 0..t {
                        sum_ctr += ctr[off + j];
                    }
                }
                let dmean = -istd * g * sum_dy + dvar * (-2.0 / m) * sum_ctr;
                for ni in 0..n {
                    let off = ni * sample_stride + c * t;
                    for j in 0..t {
                        grad_input.data_mut()[off + j] =
                            dy[off + j] * g * istd + dvar * 2.0 * ctr[off + j] / m + dmean / m;
                    }
                }
            }
            Mode::Eval => {
                // Running statistics are constants.
                for ni in 0..n {
                    let off = ni * sample_stride + c * t;
                    for j in 0..t {
                        grad_input.data_mut()[off + j] = dy[off + j] * g * istd;
                    }
                }
            }
        }
    }
    Ok((grad_input, grad_gamma, grad_beta))
}
