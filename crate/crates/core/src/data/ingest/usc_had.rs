//! USC-HAD dataset: 12 activities, 14 subjects, one hip-mounted IMU with 6
//! channels (acc xyz + gyro xyz) at 100 Hz, distributed as MATLAB 5 files.
//!
//! Raw layout: `<raw>/Subject1/a1t1.mat` ... `<raw>/Subject14/a12t5.mat`.
//! Each file holds a `sensor_readings` matrix of N rows x 6 columns
//! (column-major, as MATLAB stores it); activity and trial come from the
//! file name.

use std::path::Path;

use super::{assemble_windows, parse_error, sorted_entries, AssembleSpec, RawStream};
use crate::data::WindowedDataset;
use crate::error::{Error, Result};

pub(crate) const CHANNELS: usize = 6;
const WINDOW: usize = 200;
const OVERLAP: f64 = 0.5;
const ACTIVITIES: usize = 12;
const SUBJECTS: usize = 14;

/// `aXtY.mat` -> (activity X, trial Y).
fn parse_mat_name(name: &str) -> Option<(usize, usize)> {
    let stem = name.strip_suffix(".mat")?;
    let rest = stem.strip_prefix('a')?;
    let t_pos = rest.find('t')?;
    let activity: usize = rest[..t_pos].parse().ok()?;
    let trial: usize = rest[t_pos + 1..].parse().ok()?;
    Some((activity, trial))
}

fn read_sensor_readings(path: &Path) -> Result<Vec<Vec<f32>>> {
    let bytes = std::fs::read(path)?;
    let mat = matfile::MatFile::parse(bytes.as_slice())
        .map_err(|e| parse_error(path, 0, format!("mat parse failed: {e}")))?;
    let arr = mat
        .find_by_name("sensor_readings")
        .ok_or_else(|| parse_error(path, 0, "no 'sensor_readings' variable"))?;
    let size = arr.size();
    if size.len() != 2 || size[1] != CHANNELS {
        return Err(parse_error(
            path,
            0,
            format!("sensor_readings must be [N, {CHANNELS}], got {size:?}"),
        ));
    }
    let rows = size[0];
    let flat: Vec<f32> = match arr.data() {
        matfile::NumericData::Double { real, .. } => real.iter().map(|&v| v as f32).collect(),
        matfile::NumericData::Single { real, .. } => real.clone(),
        other => {
            return Err(parse_error(
                path,
                0,
                format!("sensor_readings has unsupported numeric type {other:?}"),
            ))
        }
    };
    if flat.len() != rows * CHANNELS {
        return Err(parse_error(path, 0, "sensor_readings size mismatch"));
    }
    // Column-major: channel j occupies flat[j*rows .. (j+1)*rows].
    Ok((0..CHANNELS).map(|j| flat[j * rows..(j + 1) * rows].to_vec()).collect())
}

/// One stream per trial file.
pub(crate) fn usc_had_streams(raw: &Path) -> Result<Vec<RawStream>> {
    let subject_dirs = sorted_entries(raw, |n| n.starts_with("Subject"))?;
    let mut streams = Vec::new();
    for dir in subject_dirs {
        let dname = dir.file_name().unwrap().to_string_lossy().to_string();
        let subject: usize = dname["Subject".len()..]
            .parse::<usize>()
            .map_err(|_| parse_error(&dir, 0, "subject directory must be SubjectN"))?;
        if !(1..=SUBJECTS).contains(&subject) {
            return Err(Error::Config(format!(
                "usc-had subject {subject} out of range 1..={SUBJECTS}"
            )));
        }
        for file in sorted_entries(&dir, |n| n.ends_with(".mat"))? {
            let fname = file.file_name().unwrap().to_string_lossy().to_string();
            let Some((activity, _trial)) = parse_mat_name(&fname) else {
                return Err(parse_error(&file, 0, "file name must be aXtY.mat"));
            };
            if !(1..=ACTIVITIES).contains(&activity) {
                return Err(Error::Config(format!(
                    "usc-had activity {activity} out of range 1..={ACTIVITIES}"
                )));
            }
            streams.push(RawStream {
                channels: read_sensor_readings(&file)?,
                native_class: activity - 1,
                subject: subject - 1,
            });
        }
    }
    Ok(streams)
}

/// Canonical dataset: samples `(6, 1, 200)`, one domain per subject present,
/// in subject-ID order (the full distribution yields all 14).
pub fn ingest_usc_had(raw: &Path, out: &Path) -> Result<WindowedDataset> {
    let mut streams = usc_had_streams(raw)?;
    let subjects: std::collections::BTreeSet<usize> = streams.iter().map(|s| s.subject).collect();
    let subjects: Vec<usize> = subjects.into_iter().collect();
    for stream in &mut streams {
        stream.subject = subjects.iter().position(|&s| s == stream.subject).unwrap();
    }
    let ds = assemble_windows(
        &streams,
        AssembleSpec {
            name: "usc_had",
            window: WINDOW,
            overlap: OVERLAP,
            class_names: (1..=ACTIVITIES).map(|a| format!("a{a}")).collect(),
            domain_names: subjects.iter().map(|s| format!("subject{}", s + 1)).collect(),
            sampling_rate_hz: 100.0,
            provenance: format!("usc-had raw at {}", raw.display()),
        },
        Some,
        |s| s.subject,
    )?;
    ds.save(out)?;
    Ok(ds)
}
