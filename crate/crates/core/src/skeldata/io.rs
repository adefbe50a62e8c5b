//! Skeleton file formats.
//!
//! * `.jsonl`: one sequence per line,
//!   `{"id": <string|null>, "view": <string|null>, "frames": [[[x,y,z], ...], ...]}`.
//! * `.csv`: one frame per row, `seq_id,frame_idx,x0,y0,z0,...`. An optional
//!   header row starting with `seq_id` may name two extra columns
//!   `id,view` placed before the coordinates.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Point3, SkeletonFrame, SkeletonSequence};
use crate::error::{Error, Result};

/// What the loader expects of every record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetLayout {
    pub joints: usize,
}

#[derive(Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<serde_json::Value>,
    #[serde(default)]
    view: Option<serde_json::Value>,
    frames: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    id: Option<&'a str>,
    view: Option<&'a str>,
    frames: Vec<&'a [Point3]>,
}

/// Loads every sequence under `path` (a file, or a directory scanned
/// non-recursively for `.jsonl`, `.json` and `.csv` files in lexicographic order).
pub fn load_dataset(path: &Path, layout: &DatasetLayout) -> Result<Vec<SkeletonSequence>> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let files = if meta.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && format_of(p).is_some())
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };

    let mut out = Vec::new();
    for file in files {
        match format_of(&file) {
            Some(Format::Csv) => out.extend(load_csv(&file, layout)?),
            _ => out.extend(load_jsonl(&file, layout)?),
        }
    }
    Ok(out)
}

enum Format {
    Jsonl,
    Csv,
}

fn format_of(path: &Path) -> Option<Format> {
    match path.extension()?.to_str()? {
        "jsonl" | "json" => Some(Format::Jsonl),
        "csv" => Some(Format::Csv),
        _ => None,
    }
}

fn tag(value: Option<serde_json::Value>) -> Option<String> {
    match value? {
        serde_json::Value::Null => None,
        serde_json::Value::String(s) => Some(s),
        other => Some(other.to_string()),
    }
}

fn load_jsonl(file: &Path, layout: &DatasetLayout) -> Result<Vec<SkeletonSequence>> {
    let text = fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
    let parse_err = |line: usize, field: String, message: String| Error::Parse {
        file: file.to_path_buf(),
        line,
        field,
        message,
    };
    let mut out = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord =
            serde_json::from_str(raw_line).map_err(|e| parse_err(line, "record".into(), e.to_string()))?;
        if rec.frames.is_empty() {
            return Err(parse_err(line, "frames".into(), "no frames".into()));
        }
        let mut frames = Vec::with_capacity(rec.frames.len());
        for (t, raw) in rec.frames.into_iter().enumerate() {
            if raw.len() != layout.joints {
                return Err(Error::JointCount {
                    file: file.to_path_buf(),
                    line,
                    expected: layout.joints,
                    found: raw.len(),
                });
            }
            let mut joints = Vec::with_capacity(raw.len());
            for (j, p) in raw.into_iter().enumerate() {
                let field = || format!("frames[{t}][{j}]");
                let xyz: Point3 = p
                    .as_slice()
                    .try_into()
                    .map_err(|_| parse_err(line, field(), format!("expected 3 coordinates, got {}", p.len())))?;
                if xyz.iter().any(|v| !v.is_finite()) {
                    return Err(parse_err(line, field(), "non-finite coordinate".into()));
                }
                joints.push(xyz);
            }
            frames.push(SkeletonFrame::new(joints)?);
        }
        out.push(SkeletonSequence::new(frames, tag(rec.id), tag(rec.view))?);
    }
    Ok(out)
}

struct CsvSequence {
    identity: Option<String>,
    view: Option<String>,
    frames: Vec<(usize, usize, SkeletonFrame)>,
}

fn load_csv(file: &Path, layout: &DatasetLayout) -> Result<Vec<SkeletonSequence>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(file)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(file, io),
            other => Error::Parse {
                file: file.to_path_buf(),
                line: 0,
                field: "file".into(),
                message: format!("{other:?}"),
            },
        })?;
    let parse_err = |line: usize, field: String, message: String| Error::Parse {
        file: file.to_path_buf(),
        line,
        field,
        message,
    };

    let mut labeled = false;
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, CsvSequence> = HashMap::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(idx + 1, |p| p.line() as usize);
        if idx == 0 && record.get(0) == Some("seq_id") {
            labeled = record.get(2) == Some("id") && record.get(3) == Some("view");
            continue;
        }
        let coord_start = if labeled { 4 } else { 2 };
        let n_coords = record.len().saturating_sub(coord_start);
        if n_coords % 3 != 0 || record.len() < coord_start {
            return Err(parse_err(
                line,
                "coordinates".into(),
                format!("{n_coords} values is not a whole number of 3D joints"),
            ));
        }
        if n_coords / 3 != layout.joints {
            return Err(Error::JointCount {
                file: file.to_path_buf(),
                line,
                expected: layout.joints,
                found: n_coords / 3,
            });
        }
        let seq_id = record[0].to_owned();
        let frame_idx: usize = record[1]
            .parse()
            .map_err(|e| parse_err(line, "frame_idx".into(), format!("{e}")))?;
        let mut joints = Vec::with_capacity(layout.joints);
        for j in 0..layout.joints {
            let mut xyz = [0.0f64; 3];
            for (d, v) in xyz.iter_mut().enumerate() {
                let col = coord_start + 3 * j + d;
                let field = || format!("column {} (joint {j})", col + 1);
                *v = record[col]
                    .parse()
                    .map_err(|e| parse_err(line, field(), format!("{e}")))?;
                if !v.is_finite() {
                    return Err(parse_err(
                        line,
                        field(),
                        format!("non-finite coordinate in frame {frame_idx} of `{seq_id}`"),
                    ));
                }
            }
            joints.push(xyz);
        }
        let non_empty = |s: &str| (!s.is_empty()).then(|| s.to_owned());
        let group = groups.entry(seq_id.clone()).or_insert_with(|| {
            order.push(seq_id.clone());
            CsvSequence {
                identity: if labeled { non_empty(&record[2]) } else { None },
                view: if labeled { non_empty(&record[3]) } else { None },
                frames: Vec::new(),
            }
        });
        group.frames.push((frame_idx, line, SkeletonFrame::new(joints)?));
    }

    let mut out = Vec::with_capacity(order.len());
    for seq_id in order {
        let mut group = groups.remove(&seq_id).expect("grouped above");
        group.frames.sort_by_key(|f| f.0);
        for (expected, (idx, line, _)) in group.frames.iter().enumerate() {
            if *idx != expected {
                return Err(parse_err(
                    *line,
                    "frame_idx".into(),
                    format!("sequence `{seq_id}` expects frame {expected}, found {idx}"),
                ));
            }
        }
        let frames = group.frames.into_iter().map(|f| f.2).collect();
        out.push(SkeletonSequence::new(frames, group.identity, group.view)?);
    }
    Ok(out)
}

/// Writes sequences as line-delimited JSON records.
pub fn write_jsonl(path: &Path, sequences: &[SkeletonSequence]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for seq in sequences {
        let rec = OutRecord {
            id: seq.identity.as_deref(),
            view: seq.view.as_deref(),
            frames: seq.frames().iter().map(|f| f.joints()).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
