//! Daily and Sports Activities dataset: 19 activities, 8 subjects, 45
//! channels (5 body positions x 3 sensors x 3 axes) at 25 Hz, distributed
//! as 5-second segment files of 125 rows x 45 comma-separated columns.
//!
//! Raw layout: `<raw>/a01/p1/s01.txt` ... `<raw>/a19/p8/s60.txt`.

use std::path::Path;

use super::{assemble_windows, parse_error, parse_row, sorted_entries, AssembleSpec, RawStream};
use crate::data::WindowedDataset;
use crate::error::Result;

const CHANNELS: usize = 45;
const SEGMENT_LEN: usize = 125;
const WINDOW: usize = 125;
const OVERLAP: f64 = 0.5;
const ACTIVITIES: usize = 19;
const SUBJECTS: usize = 8;
/// Body position order of the 5 sensor units, 9 channels each.
const POSITIONS: [&str; 5] = ["torso", "right_arm", "left_arm", "right_leg", "left_leg"];

/// One stream per segment file.
pub(crate) fn dsads_streams(raw: &Path) -> Result<Vec<RawStream>> {
    let mut streams = Vec::new();
    let activity_dirs = sorted_entries(raw, |n| n.starts_with('a') && n.len() == 3)?;
    for adir in activity_dirs {
        let aname = adir.file_name().unwrap().to_string_lossy().to_string();
        let native_class: usize = aname[1..]
            .parse::<usize>()
            .map_err(|_| parse_error(&adir, 0, "activity directory must be aNN"))?
            - 1;
        let person_dirs = sorted_entries(&adir, |n| n.starts_with('p'))?;
        for pdir in person_dirs {
            let pname = pdir.file_name().unwrap().to_string_lossy().to_string();
            let subject: usize = pname[1..]
                .parse::<usize>()
                .map_err(|_| parse_error(&pdir, 0, "person directory must be pN"))?
                - 1;
            for file in sorted_entries(&pdir, |n| n.starts_with('s') && n.ends_with(".txt"))? {
                let text = std::fs::read_to_string(&file)?;
                let mut channels: Vec<Vec<f32>> =
                    (0..CHANNELS).map(|_| Vec::with_capacity(SEGMENT_LEN)).collect();
                let mut rows = 0usize;
                for (line_no, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let row = parse_row(&file, line_no + 1, line, true)?;
                    if row.len() != CHANNELS {
                        return Err(parse_error(
                            &file,
                            line_no + 1,
                            format!("expected {CHANNELS} columns, got {}", row.len()),
                        ));
                    }
                    for (ch, &v) in row.iter().enumerate() {
                        channels[ch].push(v);
                    }
                    rows += 1;
                }
                if rows != SEGMENT_LEN {
                    return Err(parse_error(
                        &file,
                        rows,
                        format!("expected {SEGMENT_LEN} rows per segment, got {rows}"),
                    ));
                }
                streams.push(RawStream {
                    channels,
                    native_class,
                    subject,
                });
            }
        }
    }
    Ok(streams)
}

/// Canonical cross-person dataset: samples `(45, 1, 125)`, domains are the
/// 8 subjects.
pub fn ingest_dsads(raw: &Path, out: &Path) -> Result<WindowedDataset> {
    let streams = dsads_streams(raw)?;
    let ds = assemble_windows(
        &streams,
        AssembleSpec {
            name: "dsads",
            window: WINDOW,
            overlap: OVERLAP,
            class_names: (1..=ACTIVITIES).map(|a| format!("a{a:02}")).collect(),
            domain_names: (1..=SUBJECTS).map(|p| format!("p{p}")).collect(),
            sampling_rate_hz: 25.0,
            provenance: format!("dsads raw at {}", raw.display()),
        },
        Some,
        |s| s.subject,
    )?;
    ds.save(out)?;
    Ok(ds)
}

/// Cross-position variant: each position's 9 channels become a separate
/// sample `(9, 1, 125)` and the position is the domain; subjects are pooled.
pub fn ingest_dsads_cross_position(raw: &Path, out: &Path) -> Result<WindowedDataset> {
    let streams = dsads_streams(raw)?;
    let mut position_streams = Vec::with_capacity(streams.len() * POSITIONS.len());
    for stream in &streams {
        for (pos, _) in POSITIONS.iter().enumerate() {
            position_streams.push(RawStream {
                channels: stream.channels[pos * 9..(pos + 1) * 9].to_vec(),
                native_class: stream.native_class,
                // Position stands in as the domain-bearing field.
                subject: pos,
            });
        }
    }
    let ds = assemble_windows(
        &position_streams,
        AssembleSpec {
            name: "dsads_position",
            window: WINDOW,
            overlap: OVERLAP,
            class_names: (1..=ACTIVITIES).map(|a| format!("a{a:02}")).collect(),
            domain_names: POSITIONS.iter().map(|p| p.to_string()).collect(),
            sampling_rate_hz: 25.0,
            provenance: format!("dsads raw at {} split by position", raw.display()),
        },
        Some,
        |s| s.subject,
    )?;
    ds.save(out)?;
    Ok(ds)
}
