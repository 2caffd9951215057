//! Max pooling over the time axis with recorded argmax indices for the
//! backward pass. Ties break toward the lowest index.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn maxpool2d_output_len(t: usize, k: usize, stride: usize) -> Option<usize> {
    if k == 0 || k > t || stride == 0 {
        return None;
    }
    Some((t - k) / stride + 1)
}

pub struct PoolOutput {
    pub output: Tensor,
    /// Flat index into the input per output element, `[C * T_out]`.
    pub argmax: Vec<usize>,
}

pub fn maxpool2d_forward(input: &Tensor, k: usize, stride: usize) -> Result<PoolOutput> {
    let ish = input.shape();
    if ish.len() != 3 || ish[1] != 1 {
        return Err(Error::shape("maxpool2d", "[C, 1, T]", format!("{ish:?}")));
    }
    let (c, t) = (ish[0], ish[2]);
    let t_out = maxpool2d_output_len(t, k, stride).ok_or_else(|| {
        Error::degenerate("maxpool2d", format!("window {k} stride {stride} on length {t}"))
    })?;
    let x = input.data();
    let mut out = vec![0.0f64; c * t_out];
    let mut argmax = vec![0usize; c * t_out];
    for ci in 0..c {
        let row = &x[ci * t..(ci + 1) * t];
        for to in 0..t_out {
            let base = to * stride;
            let mut best = row[base];
            let mut best_j = base;
            for j in base + 1..base + k {
                if row[j] > best {
                    best = row[j];
                    best_j = j;
                }
            }
            out[ci * t_out + to] = best;
            argmax[ci * t_out + to] = ci * t + best_j;
        }
    }
    Ok(PoolOutput {
        output: Tensor::from_vec(&[c, 1, t_out], out)?,
        argmax,
    })
}

/// Routes each output gradient to the recorded argmax position.
pub fn maxpool2d_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::shape(
            "maxpool2d_backward",
            format!("{} argmax entries", grad_out.len()),
            format!("{}", argmax.len()),
        ));
    }
    let mut gx = Tensor::zeros(input_shape);
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gx.data_mut()[idx] += g;
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pools_pairs() {
        let input = Tensor::from_vec(&[1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = maxpool2d_forward(&input, 2, 2).unwrap();
        assert_eq!(p.output.data(), &[2.0, 4.0]);
        assert_eq!(p.argmax, vec![1, 3]);
    }

    #[test]
    fn constant_input_ties_break_to_first_index() {
        let input = Tensor::from_vec(&[1, 1, 4], vec![5.0, 5.0, 5.0, 5.0]).unwrap();
        let p = maxpool2d_forward(&input, 2, 2).unwrap();
        assert_eq!(p.output.data(), &[5.0, 5.0]);
        assert_eq!(p.argmax, vec![0, 2]);
    }

    #[test]
    fn odd_tail_is_dropped() {
        let input = Tensor::from_vec(&[1, 1, 5], vec![1.0, 0.0, 3.0, 0.0, 9.0]).unwrap();
        let p = maxpool2d_forward(&input, 2, 2).unwrap();
        assert_eq!(p.output.shape(), &[1, 1, 2]);
        assert_eq!(p.output.data(), &[1.0, 3.0]);
    }

    #[test]
    fn window_longer_than_input_errors() {
        let input = Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        assert!(maxpool2d_forward(&input, 2, 2).is_err());
    }

    #[test]
    fn backward_routes_to_argmax_only() {
        let input = Tensor::from_vec(&[1, 1, 4], vec![1.0, 2.0, 4.0, 3.0]).unwrap();
        let p = maxpool2d_forward(&input, 2, 2).unwrap();
        let grad_out = Tensor::from_vec(&[1, 1, 2], vec![10.0, 20.0]).unwrap();
        let gx = maxpool2d_backward(&grad_out, &p.argmax, input.shape()).unwrap();
        assert_eq!(gx.data(), &[0.0, 10.0, 20.0, 0.0]);
    }
}
