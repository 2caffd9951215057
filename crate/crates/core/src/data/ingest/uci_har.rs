//! UCI-HAR smartphone dataset: 6 activities, 30 subjects, distributed
//! pre-windowed as 128-sample windows at 50 Hz with 50% overlap.
//!
//! Raw layout: `<raw>/{train,test}/Inertial Signals/<signal>_{train,test}.txt`
//! plus `y_*.txt` and `subject_*.txt`. The nine signals become channels in
//! the order body_acc xyz, body_gyro xyz, total_acc xyz; each distributed
//! window becomes one `(9, 1, 128)` sample.

use std::path::{Path, PathBuf};

use super::{assemble_windows, parse_error, parse_row, AssembleSpec, RawStream};
use crate::data::WindowedDataset;
use crate::error::{Error, Result};

pub(crate) const SIGNALS: [&str; 9] = [
    "body_acc_x",
    "body_acc_y",
    "body_acc_z",
    "body_gyro_x",
    "body_gyro_y",
    "body_gyro_z",
    "total_acc_x",
    "total_acc_y",
    "total_acc_z",
];
const WINDOW: usize = 128;
const SUBJECTS: usize = 30;
const CLASS_NAMES: [&str; 6] = [
    "walking",
    "walking_upstairs",
    "walking_downstairs",
    "sitting",
    "standing",
    "laying",
];

fn read_int_column(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| parse_error(path, i + 1, format!("expected an integer, got '{l}'")))
        })
        .collect()
}

fn read_signal_matrix(path: &Path) -> Result<Vec<Vec<f32>>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_row(path, i + 1, line, false)?;
        if row.len() != WINDOW {
            return Err(parse_error(
                path,
                i + 1,
                format!("expected {WINDOW} values per window, got {}", row.len()),
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// One stream per distributed window, from both partitions.
pub(crate) fn uci_har_streams(raw: &Path) -> Result<Vec<RawStream>> {
    let mut streams = Vec::new();
    for part in ["train", "test"] {
        let base: PathBuf = raw.join(part);
        let labels = read_int_column(&base.join(format!("y_{part}.txt")))?;
        let subjects = read_int_column(&base.join(format!("subject_{part}.txt")))?;
        if labels.len() != subjects.len() {
            return Err(Error::Config(format!(
                "uci-har {part}: {} labels vs {} subject rows",
                labels.len(),
                subjects.len()
            )));
        }
        let signals_dir = base.join("Inertial Signals");
        let mut matrices = Vec::with_capacity(SIGNALS.len());
        for sig in SIGNALS {
            let m = read_signal_matrix(&signals_dir.join(format!("{sig}_{part}.txt")))?;
            if m.len() != labels.len() {
                return Err(Error::Config(format!(
                    "uci-har {part}/{sig}: {} windows vs {} labels",
                    m.len(),
                    labels.len()
                )));
            }
            matrices.push(m);
        }
        for (i, (&label, &subject)) in labels.iter().zip(&subjects).enumerate() {
            if !(1..=6).contains(&label) || !(1..=SUBJECTS).contains(&subject) {
                return Err(Error::Config(format!(
                    "uci-har {part} row {}: label {label} / subject {subject} out of range",
                    i + 1
                )));
            }
            streams.push(RawStream {
                channels: matrices.iter().map(|m| m[i].clone()).collect(),
                native_class: label - 1,
                subject: subject - 1,
            });
        }
    }
    Ok(streams)
}

/// Canonical dataset: samples `(9, 1, 128)`, domains are the 30 subjects.
pub fn ingest_uci_har(raw: &Path, out: &Path) -> Result<WindowedDataset> {
    let streams = uci_har_streams(raw)?;
    let ds = assemble_windows(
        &streams,
        AssembleSpec {
            name: "uci_har",
            window: WINDOW,
            // Each pre-cut stream yields exactly its own window back.
            overlap: 0.5,
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            domain_names: (1..=SUBJECTS).map(|s| format!("s{s:02}")).collect(),
            sampling_rate_hz: 50.0,
            provenance: format!("uci-har raw at {}", raw.display()),
        },
        Some,
        |s| s.subject,
    )?;
    ds.save(out)?;
    Ok(ds)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Tiny fixture with `windows` rows per partition, cycling labels and
    /// subjects so that every declared value occurs.
    pub(crate) fn write_fixture(root: &Path, windows: usize) {
        for part in ["train", "test"] {
            let base = root.join(part);
            let signals = base.join("Inertial Signals");
            std::fs::create_dir_all(&signals).unwrap();
            let labels: Vec<usize> = (0..windows).map(|i| 1 + (i % 6)).collect();
            let subjects: Vec<usize> = (0..windows).map(|i| 1 + (i % 30)).collect();
            std::fs::write(
                base.join(format!("y_{part}.txt")),
                labels.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\n"),
            )
            .unwrap();
            std::fs::write(
                base.join(format!("subject_{part}.txt")),
                subjects.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\n"),
            )
            .unwrap();
            for (si, sig) in SIGNALS.iter().enumerate() {
                let mut text = String::new();
                for w in 0..windows {
                    let row: Vec<String> = (0..WINDOW)
                        .map(|t| format!("{:.4}", (si + 1) as f32 * 0.1 + w as f32 * 0.01 + (t as f32 * 0.37).sin()))
                        .collect();
                    text.push_str(&row.join(" "));
                    text.push('\n');
                }
                std::fs::write(signals.join(format!("{sig}_{part}.txt")), text).unwrap();
            }
        }
    }

    #[test]
    fn fixture_ingest_shapes() {
        let tmp = tempfile::tempdir().unwrap();
        let raw = tmp.path().join("raw");
        write_fixture(&raw, 30);
        let ds = ingest_uci_har(&raw, &tmp.path().join("out")).unwrap();
        assert_eq!(ds.len(), 60);
        assert_eq!(ds.meta.channels, 9);
        assert_eq!(ds.meta.window, 128);
        assert_eq!(ds.num_classes(), 6);
        assert_eq!(ds.num_domains(), 30);
    }

    #[test]
    fn mismatched_label_count_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let raw = tmp.path().join("raw");
        write_fixture(&raw, 30);
        // Drop one label line from train.
        let y = raw.join("train/y_train.txt");
        let text = std::fs::read_to_string(&y).unwrap();
        let trimmed: Vec<&str> = text.lines().take(29).collect();
        std::fs::write(&y, trimmed.join("\n")).unwrap();
        assert!(ingest_uci_har(&raw, &tmp.path().join("out")).is_err());
    }
}
