//! Valid (no-padding) cross-correlation along the time axis, plus its exact
//! backward pass.
//!
//! Layout: input `[C_in, 1, T]`, kernels `[C_out, C_in, 1, k]`,
//! output `[C_out, 1, T_out]` with `T_out = (T - k) / stride + 1`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn conv2d_output_len(t: usize, k: usize, stride: usize) -> Option<usize> {
    if k == 0 || k > t || stride == 0 {
        return None;
    }
    Some((t - k) / stride + 1)
}

fn check_shapes(input: &Tensor, kernels: &Tensor, stride: usize) -> Result<(usize, usize, usize, usize, usize)> {
    let ish = input.shape();
    let ksh = kernels.shape();
    if ish.len() != 3 || ish[1] != 1 {
        return Err(Error::shape("conv2d", "[C_in, 1, T]", format!("{ish:?}")));
    }
    if ksh.len() != 4 || ksh[2] != 1 {
        return Err(Error::shape("conv2d", "[C_out, C_in, 1, k]", format!("{ksh:?}")));
    }
    if ksh[1] != ish[0] {
        return Err(Error::shape(
            "conv2d",
            format!("kernel C_in = {}", ish[0]),
            format!("kernel C_in = {}", ksh[1]),
        ));
    }
    if stride == 0 {
        return Err(Error::Config("conv2d stride must be >= 1".into()));
    }
    let (c_in, t) = (ish[0], ish[2]);
    let (c_out, k) = (ksh[0], ksh[3]);
    if k > t {
        return Err(Error::degenerate(
            "conv2d",
            format!("kernel length {k} exceeds input length {t}"),
        ));
    }
    let t_out = (t - k) / stride + 1;
    Ok((c_in, t, c_out, k, t_out))
}

pub fn conv2d_forward(input: &Tensor, kernels: &Tensor, stride: usize) -> Result<Tensor> {
    let (c_in, t, c_out, k, t_out) = check_shapes(input, kernels, stride)?;
    let x = input.data();
    let w = kernels.data();
    let mut out = vec![0.0f64; c_out * t_out];
    for co in 0..c_out {
        for ci in 0..c_in {
            let wrow = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
            let xrow = &x[ci * t..(ci + 1) * t];
            for to in 0..t_out {
                let base = to * stride;
                let mut acc = 0.0;
                for (j, &wj) in wrow.iter().enumerate() {
                    acc += xrow[base + j] * wj;
                }
                out[co * t_out + to] += acc;
            }
        }
    }
    let result = Tensor::from_vec(&[c_out, 1, t_out], out)?;
    result.check_finite("conv2d_forward output")?;
    Ok(result)
}

/// Exact partial derivatives of [`conv2d_forward`] with respect to the input
/// and the kernels.
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
) -> Result<(Tensor, Tensor)> {
    let (c_in, t, c_out, k, t_out) = check_shapes(input, kernels, stride)?;
    if grad_out.shape() != [c_out, 1, t_out] {
        return Err(Error::shape(
            "conv2d_backward",
            format!("[{c_out}, 1, {t_out}]"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let x = input.data();
    let w = kernels.data();
    let g = grad_out.data();
    let mut gx = vec![0.0f64; c_in * t];
    let mut gw = vec![0.0f64; c_out * c_in * k];
    for co in 0..c_out {
        let grow = &g[co * t_out..(co + 1) * t_out];
        for ci in 0..c_in {
            let wrow = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
            let xrow = &x[ci * t..(ci + 1) * t];
            let gxrow = &mut gx[ci * t..(ci + 1) * t];
            let gwrow = &mut gw[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
            for (to, &go) in grow.iter().enumerate() {
                let base = to * stride;
                for j in 0..k {
                    gxrow[base + j] += go * wrow[j];
                    gwrow[j] += go * xrow[base + j];
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(&[c_in, 1, t], gx)?,
        Tensor::from_vec(&[c_out, c_in, 1, k], gw)?,
    ))
}
