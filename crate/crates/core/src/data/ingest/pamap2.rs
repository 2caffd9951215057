//! PAMAP2 physical activity monitoring dataset: 9 subjects, 3 IMUs (hand,
//! chest, ankle) at 100 Hz, space-separated protocol files with one row per
//! timestep.
//!
//! Raw layout: `<raw>/Protocol/subject101.dat` ... `subject109.dat`. Of the
//! 54 columns we keep accelerometer (16g), gyroscope, and magnetometer from
//! each IMU: 27 channels. Rows with activity 0 (transient) are dropped;
//! consecutive rows with the same activity form one stream. Wireless
//! dropouts appear as NaN and windows containing them are discarded during
//! assembly.

use std::collections::BTreeSet;
use std::path::Path;

use super::{assemble_windows, parse_error, parse_row, sorted_entries, AssembleSpec, RawStream};
use crate::data::WindowedDataset;
use crate::error::Result;

const COLUMNS: usize = 54;
pub(crate) const CHANNELS: usize = 27;
const WINDOW: usize = 200;
const OVERLAP: f64 = 0.5;
/// Column offsets of one 17-column IMU block: acc16 xyz, gyro xyz, mag xyz.
const IMU_KEEP: [usize; 9] = [1, 2, 3, 7, 8, 9, 10, 11, 12];
/// Start column of each IMU block after time, activity, heart rate.
const IMU_STARTS: [usize; 3] = [3, 20, 37];

/// Streams are per (subject, activity run); `native_class` is the raw
/// activity ID, mapped to contiguous labels during assembly.
pub(crate) fn pamap2_streams(raw: &Path) -> Result<Vec<RawStream>> {
    let files = sorted_entries(&raw.join("Protocol"), |n| {
        n.starts_with("subject") && n.ends_with(".dat")
    })?;
    let mut streams = Vec::new();
    for (subject, file) in files.iter().enumerate() {
        let text = std::fs::read_to_string(file)?;
        let mut current: Option<(usize, Vec<Vec<f32>>)> = None;
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = parse_row(file, line_no + 1, line, false)?;
            if row.len() != COLUMNS {
                return Err(parse_error(
                    file,
                    line_no + 1,
                    format!("expected {COLUMNS} columns, got {}", row.len()),
                ));
            }
            let activity = row[1] as usize;
            if activity == 0 {
                if let Some((cls, channels)) = current.take() {
                    streams.push(RawStream {
                        channels,
                        native_class: cls,
                        subject,
                    });
                }
                continue;
            }
            let mut values = [0.0f32; CHANNELS];
            let mut vi = 0;
            for start in IMU_STARTS {
                for off in IMU_KEEP {
                    values[vi] = row[start + off];
                    vi += 1;
                }
            }
            match &mut current {
                Some((cls, channels)) if *cls == activity => {
                    for (ch, &v) in channels.iter_mut().zip(values.iter()) {
                        ch.push(v);
                    }
                }
                _ => {
                    if let Some((cls, channels)) = current.take() {
                        streams.push(RawStream {
                            channels,
                            native_class: cls,
                            subject,
                        });
                    }
                    let mut channels = vec![Vec::new(); CHANNELS];
                    for (ch, &v) in channels.iter_mut().zip(values.iter()) {
                        ch.push(v);
                    }
                    current = Some((activity, channels));
                }
            }
        }
        if let Some((cls, channels)) = current.take() {
            streams.push(RawStream {
                channels,
                native_class: cls,
                subject,
            });
        }
    }
    Ok(streams)
}

/// Canonical dataset: samples `(27, 1, 200)`, domains are the 9 subjects,
/// classes are the activity IDs present in the protocol files, in sorted
/// ID order.
pub fn ingest_pamap2(raw: &Path, out: &Path) -> Result<WindowedDataset> {
    let streams = pamap2_streams(raw)?;
    let ids: BTreeSet<usize> = streams.iter().map(|s| s.native_class).collect();
    let ids: Vec<usize> = ids.into_iter().collect();
    let class_of = |native: usize| ids.iter().position(|&id| id == native);

    let subjects: BTreeSet<usize> = streams.iter().map(|s| s.subject).collect();
    let num_subjects = subjects.len();

    let ds = assemble_windows(
        &streams,
        AssembleSpec {
            name: "pamap2",
            window: WINDOW,
            overlap: OVERLAP,
            class_names: ids.iter().map(|id| format!("activity_{id}")).collect(),
            domain_names: (0..num_subjects).map(|s| format!("s10{}", s + 1)).collect(),
            sampling_rate_hz: 100.0,
            provenance: format!("pamap2 raw at {}", raw.display()),
        },
        class_of,
        |s| s.subject,
    )?;
    ds.save(out)?;
    Ok(ds)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Fixture: `subjects` protocol files, each with `runs` activity runs of
    /// `rows_per_run` rows, cycling activity IDs over `ids`.
    pub(crate) fn write_fixture(root: &Path, subjects: usize, ids: &[usize], rows_per_run: usize) {
        let dir = root.join("Protocol");
        std::fs::create_dir_all(&dir).unwrap();
        for s in 0..subjects {
            let mut text = String::new();
            for (run, &id) in ids.iter().enumerate() {
                for r in 0..rows_per_run {
                    let mut cols: Vec<String> = Vec::with_capacity(COLUMNS);
                    cols.push(format!("{:.2}", r as f32 * 0.01)); // time
                    cols.push(format!("{id}")); // activity
                    cols.push("NaN".into()); // heart rate, mostly missing
                    for c in 3..COLUMNS {
                        cols.push(format!("{:.4}", (s + run + c) as f32 * 0.01 + (r as f32 * 0.17).sin()));
                    }
                    text.push_str(&cols.join(" "));
                    text.push('\n');
                }
                // Transient gap between runs.
                let zero_row: Vec<String> = (0..COLUMNS).map(|c| if c == 1 { "0".into() } else { "0.0".into() }).collect();
                text.push_str(&zero_row.join(" "));
                text.push('\n');
            }
            std::fs::write(dir.join(format!("subject10{}.dat", s + 1)), text).unwrap();
        }
    }

    #[test]
    fn fixture_ingest_shapes() {
        let tmp = tempfile::tempdir().unwrap();
        let raw = tmp.path().join("raw");
        write_fixture(&raw, 3, &[1, 4, 12], 450);
        let ds = ingest_pamap2(&raw, &tmp.path().join("out")).unwrap();
        assert_eq!(ds.meta.channels, 27);
        assert_eq!(ds.meta.window, 200);
        assert_eq!(ds.num_classes(), 3);
        assert_eq!(ds.num_domains(), 3);
        // 450 rows -> windows at stride 100: starts 0, 100, 200 -> 3 windows per run.
        assert_eq!(ds.len(), 3 * 3 * 3);
        assert_eq!(ds.meta.class_names, vec!["activity_1", "activity_4", "activity_12"]);
    }

    #[test]
    fn nan_windows_are_dropped() {
        let tmp = tempfile::tempdir().unwrap();
        let raw = tmp.path().join("raw");
        write_fixture(&raw, 1, &[1], 450);
        // Poison one sensor value inside the first window of the run.
        let file = raw.join("Protocol/subject101.dat");
        let text = std::fs::read_to_string(&file).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut cols: Vec<String> = lines[50].split_whitespace().map(String::from).collect();
        cols[5] = "NaN".into();
        lines[50] = cols.join(" ");
        std::fs::write(&file, lines.join("\n")).unwrap();
        let ds = ingest_pamap2(&raw, &tmp.path().join("out")).unwrap();
        // Window starting at 0 covers row 50 and is dropped; 100 and 200 survive.
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn short_runs_yield_no_windows() {
        let tmp = tempfile::tempdir().unwrap();
        let raw = tmp.path().join("raw");
        write_fixture(&raw, 1, &[1, 4], 150);
        // 150 < 200: every run is shorter than a window.
        let err = ingest_pamap2(&raw, &tmp.path().join("out"));
        // No windows at all -> zero samples; domain validation rejects it.
        assert!(err.is_err());
    }
}
