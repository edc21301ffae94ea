//! Files: marker CSV, skeleton TOML, JSON artifacts.
//!
//! Marker CSV columns are `frame,time,<joint>_x,<joint>_y,<joint>_z,...`
//! with coordinates in meters.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kinematics::{JointSpec, Skeleton};
use crate::motion::{MotionSequence, Space};
use crate::stats;

const AXES: [&str; 3] = ["x", "y", "z"];

fn parse_err(path: &Path, row: usize, column: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), row, column: column.into(), message: message.into() }
}

/// Reads a marker CSV. Rows are numbered from 1 for the header line. The
/// frame rate is the reciprocal of the median time step, rounded to
/// micro-hertz.
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<MotionSequence> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_err(path, 1, "", e.to_string()))?,
        None => return Err(parse_err(path, 1, "", "empty file")),
    };
    let header: Vec<String> = header.iter().map(str::to_string).collect();
    let joints = parse_header(path, &header)?;

    let mut data = Vec::new();
    let mut times = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| parse_err(path, row, "", e.to_string()))?;
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                row,
                "",
                format!("expected {} columns, found {}", header.len(), rec.len()),
            ));
        }
        for (c, cell) in rec.iter().enumerate().skip(1) {
            if cell.is_empty() {
                return Err(parse_err(path, row, &header[c], "missing value"));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(path, row, &header[c], format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, row, &header[c], format!("non-finite value {cell}")));
            }
            if c == 1 {
                times.push(v);
            } else {
                data.push(v);
            }
        }
    }
    if times.is_empty() {
        return Err(parse_err(path, 2, "", "no data rows"));
    }
    let frame_rate = estimate_rate(&times)
        .ok_or_else(|| parse_err(path, 2, &header[1], "time column must increase to give a frame rate"))?;
    MotionSequence::new(Space::Cartesian, joints, frame_rate, data)
}

fn parse_header(path: &Path, header: &[String]) -> Result<Vec<String>> {
    if header.len() < 5 || header[0] != "frame" || header[1] != "time" {
        return Err(parse_err(
            path,
            1,
            "",
            "header must start with frame,time followed by <joint>_x,<joint>_y,<joint>_z triples",
        ));
    }
    let coords = &header[2..];
    if !coords.len().is_multiple_of(3) {
        return Err(parse_err(path, 1, "", "coordinate columns do not come in triples"));
    }
    let mut joints = Vec::new();
    for triple in coords.chunks(3) {
        let name = triple[0]
            .strip_suffix("_x")
            .ok_or_else(|| parse_err(path, 1, &triple[0], "expected a <joint>_x column"))?;
        for (col, axis) in triple.iter().zip(AXES) {
            if *col != format!("{name}_{axis}") {
                return Err(parse_err(path, 1, col, format!("expected {name}_{axis}")));
            }
        }
        if joints.iter().any(|j| j == name) {
            return Err(parse_err(path, 1, &triple[0], format!("joint {name} repeated")));
        }
        joints.push(name.to_string());
    }
    Ok(joints)
}

fn estimate_rate(times: &[f64]) -> Option<f64> {
    if times.len() < 2 {
        return Some(60.0);
    }
    let steps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    if steps.iter().any(|&d| !(d > 0.0)) {
        return None;
    }
    let rate = 1.0 / stats::median(&steps);
    Some((rate * 1e6).round() / 1e6)
}

/// Writes a Cartesian sequence in the marker CSV layout; values use the
/// shortest representation that parses back to the same float.
pub fn write_csv(path: impl AsRef<Path>, seq: &MotionSequence) -> Result<()> {
    let path = path.as_ref();
    if seq.space() != Space::Cartesian {
        return Err(invalid!("marker CSV holds Cartesian coordinates"));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header = vec!["frame".to_string(), "time".to_string()];
    for j in seq.joints() {
        header.extend(AXES.iter().map(|a| format!("{j}_{a}")));
    }
    w.write_record(&header).map_err(|e| csv_io(path, e))?;
    for t in 0..seq.frames() {
        let mut row = vec![t.to_string(), (t as f64 / seq.frame_rate()).to_string()];
        row.extend(seq.frame(t).iter().map(f64::to_string));
        w.write_record(&row).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

#[derive(Serialize, Deserialize)]
struct SkeletonFile {
    joint: Vec<JointSpec>,
}

/// Parses a skeleton from TOML `[[joint]]` tables with `name`, optional
/// `parent` and optional `length` in meters.
pub fn parse_skeleton(text: &str) -> Result<Skeleton> {
    let file: SkeletonFile = toml::from_str(text).map_err(|e| Error::Format(format!("skeleton: {e}")))?;
    Skeleton::new(file.joint)
}

pub fn skeleton_to_toml(skel: &Skeleton) -> Result<String> {
    toml::to_string(&SkeletonFile { joint: skel.specs() })
        .map_err(|e| Error::Format(format!("skeleton: {e}")))
}

pub fn load_skeleton(path: impl AsRef<Path>) -> Result<Skeleton> {
    let path = path.as_ref();
    parse_skeleton(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_skeleton(path: impl AsRef<Path>, skel: &Skeleton) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, skeleton_to_toml(skel)?).map_err(|e| Error::io(path, e))
}

pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::synth::{generate_motion, SynthConfig};

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn small_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "a.csv",
            "frame,time,a_x,a_y,a_z,b_x,b_y,b_z\n0,0,1,2,3,4,5,6\n1,0.01,1.5,2,3,4,5,6.5\n",
        );
        let seq = ingest_csv(&p).unwrap();
        assert_eq!(seq.frames(), 2);
        assert_eq!(seq.joints(), ["a", "b"]);
        assert_eq!(seq.frame_rate(), 100.0);
        assert_eq!(seq.point(1, 1), [4.0, 5.0, 6.5]);
    }

    #[test]
    fn diagnostics_name_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "m.csv", "frame,time,a_x,a_y,a_z\n0,0,1,2,3\n1,0.1,1,,3\n");
        match ingest_csv(&p) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "a_y");
            }
            other => panic!("{other:?}"),
        }
        let p = write(&dir, "n.csv", "frame,time,a_x,a_y,a_z\n0,0,1,NaN,3\n");
        assert!(matches!(ingest_csv(&p), Err(Error::Parse { row: 2, .. })));
        let p = write(&dir, "c.csv", "frame,time,a_x,a_y,a_z\n0,0,1,2\n");
        assert!(matches!(ingest_csv(&p), Err(Error::Parse { row: 2, .. })));
        let p = write(&dir, "h.csv", "frame,time,a_x,a_y,b_z\n0,0,1,2,3\n");
        assert!(matches!(ingest_csv(&p), Err(Error::Parse { row: 1, .. })));
        let p = write(&dir, "t.csv", "frame,time,a_x,a_y,a_z\n0,0,1,x,3\n");
        let msg = ingest_csv(&p).unwrap_err().to_string();
        assert!(msg.contains(":2:a_y:"), "{msg}");
        assert!(ingest_csv(dir.path().join("missing.csv")).is_err());
    }

    #[test]
    fn export_ingest_round_trip() {
        let m =
            generate_motion(&SynthConfig { cycle_count: 2, base_period_frames: 30, ..Default::default() })
                .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_csv(&p, &m.sequence).unwrap();
        let back = ingest_csv(&p).unwrap();
        assert_eq!(back, m.sequence);
    }

    #[test]
    fn skeleton_toml_round_trip() {
        let skel = Skeleton::upper_body();
        let text = skeleton_to_toml(&skel).unwrap();
        assert_eq!(parse_skeleton(&text).unwrap(), skel);
        let custom = parse_skeleton(
            "[[joint]]\nname = \"root\"\n[[joint]]\nname = \"tip\"\nparent = \"root\"\nlength = 0.5\n",
        )
        .unwrap();
        assert_eq!(custom.segment_names(), ["tip"]);
        assert!(parse_skeleton("[[joint]]\nname = 3\n").is_err());
    }
}
