//! Bias-free linear classifier: `o_c = sum_j W[j,c] * z[j]`.
//!
//! The missing bias is load-bearing: it keeps every logit an exact sum of
//! per-feature contributions, which the concept-matrix column-sum identity
//! depends on.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check(z: &Tensor, w: &Tensor) -> Result<(usize, usize)> {
    let wsh = w.shape();
    if wsh.len() != 2 {
        return Err(Error::shape("linear", "[D, C] weights", format!("{wsh:?}")));
    }
    if z.shape().len() != 1 || z.len() != wsh[0] {
        return Err(Error::shape(
            "linear",
            format!("[{}] features", wsh[0]),
            format!("{:?}", z.shape()),
        ));
    }
    Ok((wsh[0], wsh[1]))
}

pub fn linear_forward(z: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (d, c) = check(z, w)?;
    let mut o = vec![0.0f64; c];
    for j in 0..d {
        let zj = z.data()[j];
        let wrow = &w.data()[j * c..(j + 1) * c];
        for (oc, &wjc) in o.iter_mut().zip(wrow) {
            *oc += wjc * zj;
        }
    }
    let out = Tensor::from_vec(&[c], o)?;
    out.check_finite("linear_forward output")?;
    Ok(out)
}

/// `grad_z = W * grad_o`, `grad_W = z (outer) grad_o`.
pub fn linear_backward(grad_o: &Tensor, z: &Tensor, w: &Tensor) -> Result<(Tensor, Tensor)> {
    let (d, c) = check(z, w)?;
    if grad_o.len() != c {
        return Err(Error::shape("linear_backward", format!("[{c}]"), format!("{:?}", grad_o.shape())));
    }
    let mut gz = vec![0.0f64; d];
    let mut gw = vec![0.0f64; d * c];
    for j in 0..d {
        let wrow = &w.data()[j * c..(j + 1) * c];
        let zj = z.data()[j];
        let mut acc = 0.0;
        for k in 0..c {
            let go = grad_o.data()[k];
            acc += wrow[k] * go;
            gw[j * c + k] = zj * go;
        }
        gz[j] = acc;
    }
    Ok((Tensor::from_vec(&[d], gz)?, Tensor::from_vec(&[d, c], gw)?))
}
