//! Fixed-length sliding-window segmentation of continuous multichannel
//! series.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Window start stride for a window length and overlap rate.
pub fn window_stride(window: usize, overlap: f64) -> usize {
    ((window as f64 * (1.0 - overlap)).round() as usize).max(1)
}

/// Cuts `[C, L]` series into `[C, 1, window]` windows starting every
/// `round(window * (1 - overlap))` steps. A trailing partial window is
/// dropped; a series shorter than the window yields no windows rather than
/// an error, so short recordings degrade gracefully.
pub fn sliding_window(series: &Tensor, window: usize, overlap: f64) -> Result<Vec<Tensor>> {
    let sh = series.shape();
    if sh.len() != 2 {
        return Err(Error::shape("sliding_window", "[C, L]", format!("{sh:?}")));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Config(format!(
            "overlap must be in [0, 1), got {overlap}"
        )));
    }
    if window == 0 {
        return Err(Error::Config("window must be positive".into()));
    }
    let (c, l) = (sh[0], sh[1]);
    if window > l {
        return Ok(Vec::new());
    }
    let stride = window_stride(window, overlap);
    let mut out = Vec::new();
    let mut start = 0;
    while start + window <= l {
        let mut data = Vec::with_capacity(c * window);
        for ch in 0..c {
            data.extend_from_slice(&series.data()[ch * l + start..ch * l + start + window]);
        }
        out.push(Tensor::from_vec(&[c, 1, window], data)?);
        start += stride;
    }
    Ok(out)
}

/// Same segmentation over raw per-channel f32 rows, used by ingestion.
pub fn sliding_window_f32(rows: &[Vec<f32>], window: usize, overlap: f64) -> Result<Vec<Vec<f32>>> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Config(format!(
            "overlap must be in [0, 1), got {overlap}"
        )));
    }
    let c = rows.len();
    let l = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != l) {
        return Err(Error::shape(
            "sliding_window",
            format!("all {c} channels of length {l}"),
            "ragged channels",
        ));
    }
    if window == 0 {
        return Err(Error::Config("window must be positive".into()));
    }
    if window > l {
        return Ok(Vec::new());
    }
    let stride = window_stride(window, overlap);
    let mut out = Vec::new();
    let mut start = 0;
    while start + window <= l {
        let mut data = Vec::with_capacity(c * window);
        for row in rows {
            data.extend_from_slice(&row[start..start + window]);
        }
        out.push(data);
        start += stride;
    }
    Ok(out)
}
