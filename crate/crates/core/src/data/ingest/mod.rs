//! Ingestion of the public HAR benchmarks into the canonical windowed
//! format.
//!
//! Each reader exposes the raw distribution as continuous multichannel
//! streams with native class and subject labels; windowing, channel
//! selection, and resampling are applied on top. Windows containing
//! non-finite values (sensor dropouts) are discarded.

mod cross_dataset;
mod dsads;
mod pamap2;
mod uci_har;
mod usc_had;

pub use cross_dataset::{ingest_cross_dataset, CrossDatasetMapping, CrossDatasetRaw, DEFAULT_CROSS_DATASET_MAPPING};
pub use dsads::{ingest_dsads, ingest_dsads_cross_position};
pub use pamap2::ingest_pamap2;
pub use uci_har::ingest_uci_har;
pub use usc_had::ingest_usc_had;

use std::path::Path;

use crate::data::window::sliding_window_f32;
use crate::data::{DatasetMeta, WindowedDataset};
use crate::error::{Error, Result};

/// One continuous recording: per-channel series plus native labels.
pub(crate) struct RawStream {
    pub channels: Vec<Vec<f32>>,
    pub native_class: usize,
    pub subject: usize,
}

pub(crate) fn parse_error(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Parses one whitespace- or comma-separated numeric row.
pub(crate) fn parse_row(file: &Path, line_no: usize, line: &str, sep_comma: bool) -> Result<Vec<f32>> {
    let fields: Vec<&str> = if sep_comma {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    };
    fields
        .iter()
        .enumerate()
        .map(|(col, f)| {
            f.parse::<f32>()
                .map_err(|_| parse_error(file, line_no, format!("column {} is not a number: '{f}'", col + 1)))
        })
        .collect()
}

/// Sorted listing of directory entries whose names satisfy `keep`.
pub(crate) fn sorted_entries(dir: &Path, keep: impl Fn(&str) -> bool) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if keep(&name) {
            out.push(entry.path());
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Config(format!("no matching files under {}", dir.display())));
    }
    Ok(out)
}

/// Boxcar low-pass then integer decimation: output[t] = mean(x[f*t .. f*t+f]).
pub(crate) fn decimate(series: &[f32], factor: usize) -> Vec<f32> {
    if factor <= 1 {
        return series.to_vec();
    }
    let out_len = series.len() / factor;
    let mut out = Vec::with_capacity(out_len);
    for t in 0..out_len {
        let chunk = &series[t * factor..(t + 1) * factor];
        out.push(chunk.iter().sum::<f32>() / factor as f32);
    }
    out
}

/// Windows every stream and assembles a dataset. `relabel` maps native class
/// labels to output classes (returning None drops the stream); `domain_of`
/// assigns the output domain. Windows with non-finite values are skipped.
pub(crate) struct AssembleSpec<'a> {
    pub name: &'a str,
    pub window: usize,
    pub overlap: f64,
    pub class_names: Vec<String>,
    pub domain_names: Vec<String>,
    pub sampling_rate_hz: f64,
    pub provenance: String,
}

pub(crate) fn assemble_windows(
    streams: &[RawStream],
    spec: AssembleSpec<'_>,
    relabel: impl Fn(usize) -> Option<usize>,
    domain_of: impl Fn(&RawStream) -> usize,
) -> Result<WindowedDataset> {
    let channels = streams
        .first()
        .map(|s| s.channels.len())
        .ok_or_else(|| Error::EmptyInput {
            context: format!("{} ingestion found no streams", spec.name),
        })?;
    let mut samples = Vec::new();
    let mut class_labels = Vec::new();
    let mut domain_labels = Vec::new();
    for stream in streams {
        let Some(class) = relabel(stream.native_class) else {
            continue;
        };
        let domain = domain_of(stream);
        for win in sliding_window_f32(&stream.channels, spec.window, spec.overlap)? {
            if win.iter().any(|v| !v.is_finite()) {
                continue;
            }
            samples.extend_from_slice(&win);
            class_labels.push(class as u32);
            domain_labels.push(domain as u32);
        }
    }
    let n = class_labels.len();
    let meta = DatasetMeta {
        version: 1,
        name: spec.name.to_string(),
        num_samples: n,
        channels,
        window: spec.window,
        class_names: spec.class_names,
        domain_names: spec.domain_names,
        sampling_rate_hz: spec.sampling_rate_hz,
        normalization: None,
        provenance: spec.provenance,
    };
    WindowedDataset::new(meta, samples, class_labels, domain_labels)
}
