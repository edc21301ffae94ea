//! Report files. Every CSV is a header line followed by rows of one of the
//! record types below; field order is column order.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::io::csv_io;
use super::metrics::{see, Summary, CM_PER_M};
use crate::error::{shape_err, Error, Result};
use crate::kinematics::Skeleton;
use crate::motion::{MotionSequence, Space};
use crate::predictor::{PredictionBatch, PredictionFrame};
use crate::uncertainty::{band_to_coordinates, ModelBand, LEVELS};

/// Frame range `[start, end)` of one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleRow {
    pub cycle: usize,
    pub start: usize,
    pub end: usize,
}

/// One predicted joint position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub stamp: u64,
    pub horizon_frame: usize,
    pub target_frame: u64,
    pub model_index: usize,
    pub matched_end: usize,
    pub joint: String,
    pub pred_x: f64,
    pub pred_y: f64,
    pub pred_z: f64,
    pub truth_x: Option<f64>,
    pub truth_y: Option<f64>,
    pub truth_z: Option<f64>,
}

/// SEE of one batch at the report horizon, next to holding the last
/// observed pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeeRow {
    pub stamp: u64,
    pub target_frame: u64,
    /// Segmented cycle containing the target frame, when known.
    pub cycle: Option<usize>,
    pub model_index: usize,
    pub see_cm: f64,
    pub baseline_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub series: String,
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

impl SummaryRow {
    pub fn new(series: &str, values: &[f64]) -> Result<Self> {
        let s = Summary::of(values)?;
        Ok(Self {
            series: series.into(),
            count: values.len(),
            min: s.min,
            q1: s.q1,
            median: s.median,
            mean: s.mean,
            q3: s.q3,
            max: s.max,
        })
    }
}

/// Angle-space ensemble band of one model, per predicted frame and channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleBandRow {
    pub model_index: usize,
    pub time_index: usize,
    pub horizon_frame: usize,
    pub segment: String,
    pub axis: String,
    pub center: f64,
    pub std: f64,
    pub lower_1: f64,
    pub upper_1: f64,
    pub lower_2: f64,
    pub upper_2: f64,
    pub lower_3: f64,
    pub upper_3: f64,
    pub sphere_1: f64,
    pub sphere_2: f64,
    pub sphere_3: f64,
}

/// Coordinate-space band of one model, per predicted frame and joint, in
/// centimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateBandRow {
    pub model_index: usize,
    pub time_index: usize,
    pub horizon_frame: usize,
    pub joint: String,
    pub center_x: f64,
    pub center_y: f64,
    pub center_z: f64,
    pub dev_1_x: f64,
    pub dev_1_y: f64,
    pub dev_1_z: f64,
    pub radius_1_cm: f64,
    pub radius_2_cm: f64,
    pub radius_3_cm: f64,
}

/// Truth, prediction and band radii at the report horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub target_frame: u64,
    pub joint: String,
    pub truth_x: Option<f64>,
    pub truth_y: Option<f64>,
    pub truth_z: Option<f64>,
    pub pred_x: f64,
    pub pred_y: f64,
    pub pred_z: f64,
    pub radius_1_cm: Option<f64>,
    pub radius_2_cm: Option<f64>,
    pub radius_3_cm: Option<f64>,
}

pub fn write_rows<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                row: i + 2,
                column: String::new(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Column names of a record type, in order.
pub fn columns<T: Serialize>(sample: &T) -> Result<Vec<String>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(sample).map_err(|e| Error::Format(e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))?;
    Ok(text.lines().next().unwrap_or_default().split(',').map(str::to_string).collect())
}

/// Flattens batches to one row per predicted joint; truth columns are
/// filled where `truth` (skeleton joint order) covers the target frame.
pub fn prediction_rows(
    batches: &[PredictionBatch],
    skel: &Skeleton,
    truth: Option<&MotionSequence>,
) -> Vec<PredictionRow> {
    let mut rows = Vec::new();
    for b in batches {
        for f in &b.frames {
            let target = b.stamp + f.horizon_frame as u64;
            let truth_frame = truth.filter(|t| (target as usize) < t.frames());
            for (j, name) in skel.joints().iter().enumerate() {
                let p = f.coordinates[j];
                let t = truth_frame.map(|s| s.point(target as usize, j));
                rows.push(PredictionRow {
                    stamp: b.stamp,
                    horizon_frame: f.horizon_frame,
                    target_frame: target,
                    model_index: b.selection.model_index,
                    matched_end: b.selection.matched_end,
                    joint: name.clone(),
                    pred_x: p[0],
                    pred_y: p[1],
                    pred_z: p[2],
                    truth_x: t.map(|v| v[0]),
                    truth_y: t.map(|v| v[1]),
                    truth_z: t.map(|v| v[2]),
                });
            }
        }
    }
    rows
}

/// SEE at horizon frame `h` of every batch whose target lies inside
/// `truth`, with the hold-last-pose baseline.
pub fn horizon_see(batches: &[PredictionBatch], truth: &MotionSequence, h: usize) -> Result<Vec<SeeRow>> {
    let jc = truth.channels();
    let mut rows = Vec::new();
    let mut pred = Vec::new();
    let mut target_truth = Vec::new();
    let mut held = Vec::new();
    let mut kept = Vec::new();
    for b in batches {
        let target = b.stamp as usize + h;
        if target >= truth.frames() {
            continue;
        }
        let f =
            b.frames.get(h - 1).ok_or_else(|| shape_err!("batch at {} has no horizon frame {h}", b.stamp))?;
        if f.coordinates.len() * 3 != jc {
            return Err(shape_err!("prediction and truth joint counts differ"));
        }
        pred.extend(f.coordinates.iter().flatten());
        target_truth.extend_from_slice(truth.frame(target));
        held.extend_from_slice(truth.frame(b.stamp as usize));
        kept.push(b);
    }
    if kept.is_empty() {
        return Ok(rows);
    }
    let seq = |data: Vec<f64>| {
        MotionSequence::new(Space::Cartesian, truth.joints().to_vec(), truth.frame_rate(), data)
    };
    let t = seq(target_truth)?;
    let model = see(&t, &seq(pred)?)?;
    let baseline = see(&t, &seq(held)?)?;
    for ((b, m), z) in kept.iter().zip(&model.values).zip(&baseline.values) {
        rows.push(SeeRow {
            stamp: b.stamp,
            target_frame: b.stamp + h as u64,
            cycle: None,
            model_index: b.selection.model_index,
            see_cm: *m,
            baseline_cm: *z,
        });
    }
    Ok(rows)
}

/// Summaries of the model and baseline SEE over all rows, then per cycle
/// for rows that carry a cycle index.
pub fn summary_rows(see_rows: &[SeeRow]) -> Result<Vec<SummaryRow>> {
    let pair = |label: &str, rows: &[&SeeRow]| -> Result<[SummaryRow; 2]> {
        let model: Vec<f64> = rows.iter().map(|r| r.see_cm).collect();
        let base: Vec<f64> = rows.iter().map(|r| r.baseline_cm).collect();
        Ok([
            SummaryRow::new(&format!("model{label}"), &model)?,
            SummaryRow::new(&format!("zero_velocity{label}"), &base)?,
        ])
    };
    let all: Vec<&SeeRow> = see_rows.iter().collect();
    let mut out = pair("", &all)?.to_vec();
    let mut cycles: Vec<usize> = see_rows.iter().filter_map(|r| r.cycle).collect();
    cycles.sort_unstable();
    cycles.dedup();
    for c in cycles {
        let rows: Vec<&SeeRow> = see_rows.iter().filter(|r| r.cycle == Some(c)).collect();
        out.extend(pair(&format!("_cycle_{c}"), &rows)?);
    }
    Ok(out)
}

/// Fixed-width text rendering of summary rows.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:<22} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
        "series", "n", "min", "q1", "median", "mean", "q3", "max"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<22} {:>6} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
            r.series, r.count, r.min, r.q1, r.median, r.mean, r.q3, r.max
        );
    }
    out
}

pub fn angle_band_rows(bands: &[ModelBand]) -> Vec<AngleBandRow> {
    let mut rows = Vec::new();
    for mb in bands {
        let names = mb.band.joints();
        let c = names.len() * 3;
        let spheres: Vec<Vec<f64>> = LEVELS.iter().map(|&l| mb.band.sphere_radius(l)).collect();
        for t in 0..mb.band.frames() {
            for (s, name) in names.iter().enumerate() {
                for (a, axis) in ["x", "y", "z"].into_iter().enumerate() {
                    let i = t * c + s * 3 + a;
                    let (m, sd) = (mb.mean[i], mb.band.std()[i]);
                    rows.push(AngleBandRow {
                        model_index: mb.model_index,
                        time_index: mb.time_index,
                        horizon_frame: t + 1,
                        segment: name.clone(),
                        axis: axis.into(),
                        center: m,
                        std: sd,
                        lower_1: m - sd,
                        upper_1: m + sd,
                        lower_2: m - 2.0 * sd,
                        upper_2: m + 2.0 * sd,
                        lower_3: m - 3.0 * sd,
                        upper_3: m + 3.0 * sd,
                        sphere_1: spheres[0][t * names.len() + s],
                        sphere_2: spheres[1][t * names.len() + s],
                        sphere_3: spheres[2][t * names.len() + s],
                    });
                }
            }
        }
    }
    rows
}

/// Back-transforms each model's ensemble mean and its band edges; `roots`
/// holds one root position per band.
pub fn coordinate_band_rows(
    bands: &[ModelBand],
    skel: &Skeleton,
    roots: &[[f64; 3]],
) -> Result<Vec<CoordinateBandRow>> {
    if roots.len() != bands.len() {
        return Err(shape_err!("{} roots for {} bands", roots.len(), bands.len()));
    }
    let lengths = skel.fixed_lengths()?;
    let c = skel.segment_joints().len() * 3;
    let mut rows = Vec::new();
    for (mb, &root) in bands.iter().zip(roots) {
        let centers = (0..mb.band.frames())
            .map(|t| {
                let angles: Vec<f64> =
                    mb.mean[t * c..(t + 1) * c].iter().map(|a| a.clamp(0.0, std::f64::consts::PI)).collect();
                let coordinates = crate::kinematics::pose_from_angles(skel, &angles, root, &lengths)?;
                Ok(PredictionFrame { angles, coordinates, horizon_frame: t + 1, model_index: mb.model_index })
            })
            .collect::<Result<Vec<_>>>()?;
        let cb = band_to_coordinates(&mb.band, &centers, skel)?;
        let radii: Vec<Vec<f64>> = (0..LEVELS.len()).map(|l| cb.sphere_radius(l)).collect();
        let nj = skel.joints().len();
        for (t, f) in centers.iter().enumerate() {
            for (j, name) in skel.joints().iter().enumerate() {
                let d = &cb.deviation[0][(t * nj + j) * 3..(t * nj + j) * 3 + 3];
                rows.push(CoordinateBandRow {
                    model_index: mb.model_index,
                    time_index: mb.time_index,
                    horizon_frame: t + 1,
                    joint: name.clone(),
                    center_x: f.coordinates[j][0],
                    center_y: f.coordinates[j][1],
                    center_z: f.coordinates[j][2],
                    dev_1_x: d[0] * CM_PER_M,
                    dev_1_y: d[1] * CM_PER_M,
                    dev_1_z: d[2] * CM_PER_M,
                    radius_1_cm: radii[0][t * nj + j] * CM_PER_M,
                    radius_2_cm: radii[1][t * nj + j] * CM_PER_M,
                    radius_3_cm: radii[2][t * nj + j] * CM_PER_M,
                });
            }
        }
    }
    Ok(rows)
}

/// Joins predictions at horizon frame `h` with the coordinate band of the
/// model that produced them.
pub fn plot_rows(predictions: &[PredictionRow], bands: &[CoordinateBandRow], h: usize) -> Vec<PlotRow> {
    let index: HashMap<(usize, usize, &str), &CoordinateBandRow> =
        bands.iter().map(|b| ((b.model_index, b.horizon_frame, b.joint.as_str()), b)).collect();
    predictions
        .iter()
        .filter(|p| p.horizon_frame == h)
        .map(|p| {
            let band = index.get(&(p.model_index, p.horizon_frame, p.joint.as_str()));
            PlotRow {
                target_frame: p.target_frame,
                joint: p.joint.clone(),
                truth_x: p.truth_x,
                truth_y: p.truth_y,
                truth_z: p.truth_z,
                pred_x: p.pred_x,
                pred_y: p.pred_y,
                pred_z: p.pred_z,
                radius_1_cm: band.map(|b| b.radius_1_cm),
                radius_2_cm: band.map(|b| b.radius_2_cm),
                radius_3_cm: band.map(|b| b.radius_3_cm),
            }
        })
        .collect()
}
