//! Windowed datasets: the canonical on-disk format, normalization, sliding
//! windows, domain splits, benchmark ingestion, and a synthetic
//! domain-shift generator.
//!
//! Canonical layout of a dataset directory:
//! * `meta.json`    — shapes, class/domain names, sampling rate, provenance,
//!   optional normalization statistics
//! * `samples.bin`  — little-endian f32, row-major `[N, C, 1, T]`
//! * `labels.bin`   — little-endian u32 class labels
//! * `domains.bin`  — little-endian u32 domain labels

pub mod ingest;
pub mod split;
pub mod synth;
pub mod window;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel z-score statistics, always computed from source-domain
/// training samples only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: u32,
    /// Dataset family name; split protocols key their domain groupings on it.
    pub name: String,
    pub num_samples: usize,
    pub channels: usize,
    pub window: usize,
    pub class_names: Vec<String>,
    pub domain_names: Vec<String>,
    pub sampling_rate_hz: f64,
    /// Populated by experiment runs, not by ingestion: statistics depend on
    /// the source-train split.
    #[serde(default)]
    pub normalization: Option<ChannelStats>,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub meta: DatasetMeta,
    samples: Vec<f32>,
    class_labels: Vec<u32>,
    domain_labels: Vec<u32>,
}

impl WindowedDataset {
    pub fn new(
        meta: DatasetMeta,
        samples: Vec<f32>,
        class_labels: Vec<u32>,
        domain_labels: Vec<u32>,
    ) -> Result<WindowedDataset> {
        let n = meta.num_samples;
        let per_sample = meta.channels * meta.window;
        if samples.len() != n * per_sample {
            return Err(Error::shape(
                "WindowedDataset",
                format!("{} sample values", n * per_sample),
                format!("{}", samples.len()),
            ));
        }
        if class_labels.len() != n || domain_labels.len() != n {
            return Err(Error::shape(
                "WindowedDataset",
                format!("{n} labels"),
                format!("{} classes / {} domains", class_labels.len(), domain_labels.len()),
            ));
        }
        let c = meta.class_names.len() as u32;
        let s = meta.domain_names.len() as u32;
        if let Some(&bad) = class_labels.iter().find(|&&y| y >= c) {
            return Err(Error::LabelOutOfRange {
                label: bad as usize,
                num_classes: c as usize,
            });
        }
        if let Some(&bad) = domain_labels.iter().find(|&&d| d >= s) {
            return Err(Error::LabelOutOfRange {
                label: bad as usize,
                num_classes: s as usize,
            });
        }
        for d in 0..s {
            if !domain_labels.contains(&d) {
                return Err(Error::Config(format!(
                    "declared domain {d} ('{}') contains no samples",
                    meta.domain_names[d as usize]
                )));
            }
        }
        Ok(WindowedDataset {
            meta,
            samples,
            class_labels,
            domain_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.meta.num_samples
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.meta.class_names.len()
    }

    pub fn num_domains(&self) -> usize {
        self.meta.domain_names.len()
    }

    pub fn class_label(&self, i: usize) -> usize {
        self.class_labels[i] as usize
    }

    pub fn domain_label(&self, i: usize) -> usize {
        self.domain_labels[i] as usize
    }

    pub fn class_labels(&self) -> &[u32] {
        &self.class_labels
    }

    pub fn domain_labels(&self) -> &[u32] {
        &self.domain_labels
    }

    pub fn raw_samples(&self) -> &[f32] {
        &self.samples
    }

    /// Widens sample `i` to f64 as `[C, 1, T]`, z-scoring per channel when
    /// statistics are given.
    pub fn sample_tensor(&self, i: usize, stats: Option<&ChannelStats>) -> Tensor {
        let (c, t) = (self.meta.channels, self.meta.window);
        let raw = &self.samples[i * c * t..(i + 1) * c * t];
        let mut data = Vec::with_capacity(c * t);
        match stats {
            Some(st) => {
                for ch in 0..c {
                    let (m, s) = (st.mean[ch], st.std[ch]);
                    for j in 0..t {
                        data.push((raw[ch * t + j] as f64 - m) / s);
                    }
                }
            }
            None => data.extend(raw.iter().map(|&v| v as f64)),
        }
        Tensor::from_vec(&[c, 1, t], data).expect("sample shape is consistent by construction")
    }

    /// Stacks the indexed samples into `[N, C, 1, T]`.
    pub fn batch_tensor(&self, indices: &[usize], stats: Option<&ChannelStats>) -> Result<Tensor> {
        if indices.is_empty() {
            return Err(Error::EmptyInput {
                context: "batch_tensor".into(),
            });
        }
        let items: Vec<Tensor> = indices.iter().map(|&i| self.sample_tensor(i, stats)).collect();
        Tensor::stack(&items)
    }

    pub fn labels_for(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.class_label(i)).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta_json = serde_json::to_vec_pretty(&self.meta)?;
        std::fs::write(dir.join("meta.json"), meta_json)?;

        let mut w = BufWriter::new(File::create(dir.join("samples.bin"))?);
        for v in &self.samples {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;

        write_u32s(&dir.join("labels.bin"), &self.class_labels)?;
        write_u32s(&dir.join("domains.bin"), &self.domain_labels)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<WindowedDataset> {
        let meta_bytes = std::fs::read(dir.join("meta.json"))?;
        let meta: DatasetMeta = serde_json::from_slice(&meta_bytes)?;

        let mut samples = Vec::with_capacity(meta.num_samples * meta.channels * meta.window);
        let mut r = BufReader::new(File::open(dir.join("samples.bin"))?);
        let mut buf = [0u8; 4];
        loop {
            match r.read_exact(&mut buf) {
                Ok(()) => samples.push(f32::from_le_bytes(buf)),
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
        }
        let class_labels = read_u32s(&dir.join("labels.bin"))?;
        let domain_labels = read_u32s(&dir.join("domains.bin"))?;
        WindowedDataset::new(meta, samples, class_labels, domain_labels)
    }

    /// Indices of every sample in the given domain.
    pub fn domain_indices(&self, domain: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.domain_label(i) == domain).collect()
    }
}

fn write_u32s(path: &Path, values: &[u32]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32s(path: &Path) -> Result<Vec<u32>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut buf = [0u8; 4];
    loop {
        match r.read_exact(&mut buf) {
            Ok(()) => out.push(u32::from_le_bytes(buf)),
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// Per-channel mean and standard deviation over the indexed samples.
/// Standard deviations are floored at 1e-8 so zero-variance channels stay
/// finite rather than exploding.
pub fn compute_channel_stats(ds: &WindowedDataset, indices: &[usize]) -> Result<ChannelStats> {
    if indices.is_empty() {
        return Err(Error::EmptyInput {
            context: "compute_channel_stats".into(),
        });
    }
    let (c, t) = (ds.meta.channels, ds.meta.window);
    let m = (indices.len() * t) as f64;
    let mut mean = vec![0.0f64; c];
    for &i in indices {
        let raw = &ds.samples[i * c * t..(i + 1) * c * t];
        for ch in 0..c {
            for j in 0..t {
                mean[ch] += raw[ch * t + j] as f64;
            }
        }
    }
    for v in &mut mean {
        *v /= m;
    }
    let mut var = vec![0.0f64; c];
    for &i in indices {
        let raw = &ds.samples[i * c * t..(i + 1) * c * t];
        for ch in 0..c {
            for j in 0..t {
                let d = raw[ch * t + j] as f64 - mean[ch];
                var[ch] += d * d;
            }
        }
    }
    let std = var.iter().map(|v| (v / m).sqrt().max(1e-8)).collect();
    Ok(ChannelStats { mean, std })
}
