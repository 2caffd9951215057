//! Eval-mode inference: accuracy measurement and feature export. Nothing in
//! this module mutates parameters or mean banks.

use std::io::Write;
use std::path::Path;

use crate::data::{ChannelStats, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::{forward, ModelParams};
use crate::nn::{argmax_row, Mode};
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 256;

/// Predicted class per indexed sample, eval mode. Argmax ties break toward
/// the lowest class index.
pub fn predictions(
    params: &ModelParams,
    ds: &WindowedDataset,
    stats: Option<&ChannelStats>,
    indices: &[usize],
) -> Result<Vec<usize>> {
    if indices.is_empty() {
        return Err(Error::EmptyInput {
            context: "predictions".into(),
        });
    }
    let c = params.num_classes();
    let mut preds = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = ds.batch_tensor(chunk, stats)?;
        let fwd = forward(params, &batch, Mode::Eval)?;
        for i in 0..chunk.len() {
            preds.push(argmax_row(&fwd.logits.data()[i * c..(i + 1) * c]));
        }
    }
    Ok(preds)
}

/// Accuracy percentage of predictions against labels.
pub fn accuracy_from_predictions(preds: &[usize], labels: &[usize]) -> f64 {
    debug_assert_eq!(preds.len(), labels.len());
    if preds.is_empty() {
        return 0.0;
    }
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    100.0 * hits as f64 / preds.len() as f64
}

/// `100 * #(argmax(o) == y) / N` over the indexed samples.
pub fn evaluate(
    params: &ModelParams,
    ds: &WindowedDataset,
    stats: Option<&ChannelStats>,
    indices: &[usize],
) -> Result<f64> {
    let preds = predictions(params, ds, stats, indices)?;
    let labels = ds.labels_for(indices);
    Ok(accuracy_from_predictions(&preds, &labels))
}

/// Writes `sample_id, domain, class, z_1..z_D` rows for the indexed
/// samples. Values use shortest-round-trip formatting, so a reader
/// recovers the exact f64 features.
pub fn export_features(
    params: &ModelParams,
    ds: &WindowedDataset,
    stats: Option<&ChannelStats>,
    indices: &[usize],
    out: &Path,
) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::EmptyInput {
            context: "export_features".into(),
        });
    }
    let d = params.feature_dim();
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(out)?);
    write!(w, "sample_id,domain,class")?;
    for j in 1..=d {
        write!(w, ",z_{j}")?;
    }
    writeln!(w)?;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = ds.batch_tensor(chunk, stats)?;
        let fwd = forward(params, &batch, Mode::Eval)?;
        for (row, &i) in chunk.iter().enumerate() {
            write!(w, "{i},{},{}", ds.domain_label(i), ds.class_label(i))?;
            for j in 0..d {
                write!(w, ",{}", fwd.features.data()[row * d + j])?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Recomputes features for the indexed samples, in index order — used to
/// cross-check exports.
pub fn compute_features(
    params: &ModelParams,
    ds: &WindowedDataset,
    stats: Option<&ChannelStats>,
    indices: &[usize],
) -> Result<Tensor> {
    let d = params.feature_dim();
    let mut rows = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = ds.batch_tensor(chunk, stats)?;
        let fwd = forward(params, &batch, Mode::Eval)?;
        for i in 0..chunk.len() {
            rows.push(Tensor::from_vec(&[d], fwd.features.sample_slice(i).to_vec())?);
        }
    }
    Tensor::stack(&rows)
}
