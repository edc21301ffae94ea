//! Summed Euclidean error and the length-fixing error of the angle
//! transform. Inputs are in meters, reported distances in centimeters.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::kinematics::{
    fix_segment_lengths, from_joint_angles, segment_distances, to_joint_angles, Skeleton,
};
use crate::motion::{MotionSequence, Space};
use crate::stats;

pub const CM_PER_M: f64 = 100.0;

/// Six-number summary; quartiles interpolate linearly between order
/// statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid!("cannot summarize an empty series"));
        }
        let s = stats::sorted(values);
        Ok(Self {
            min: s[0],
            q1: stats::quantile_sorted(&s, 0.25),
            median: stats::quantile_sorted(&s, 0.5),
            mean: stats::mean(values),
            q3: stats::quantile_sorted(&s, 0.75),
            max: s[s.len() - 1],
        })
    }
}

/// Per-frame SEE in centimeters with its summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeeSeries {
    pub values: Vec<f64>,
    pub summary: Summary,
}

impl SeeSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let summary = Summary::of(&values)?;
        Ok(Self { values, summary })
    }
}

/// Per frame, the sum over joints of the distance between truth and
/// prediction.
pub fn see(truth: &MotionSequence, pred: &MotionSequence) -> Result<SeeSeries> {
    if truth.space() != Space::Cartesian || pred.space() != Space::Cartesian {
        return Err(invalid!("SEE compares Cartesian sequences"));
    }
    truth.check_layout(pred)?;
    if truth.frames() != pred.frames() {
        return Err(shape_err!("truth has {} frames, prediction {}", truth.frames(), pred.frames()));
    }
    let values = (0..truth.frames())
        .map(|t| {
            truth
                .frame(t)
                .chunks_exact(3)
                .zip(pred.frame(t).chunks_exact(3))
                .map(|(a, b)| {
                    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                    d.sqrt()
                })
                .sum::<f64>()
                * CM_PER_M
        })
        .collect();
    SeeSeries::new(values)
}

/// SEE between a recording and its reconstruction from joint angles with
/// every segment fixed to its median observed length.
pub fn backtransform_error(truth: &MotionSequence, skel: &Skeleton) -> Result<SeeSeries> {
    let angles = to_joint_angles(truth, skel)?.angles;
    let fixed = fix_segment_lengths(truth, skel)?;
    let rebuilt = from_joint_angles(&angles, &fixed)?;
    let ordered = to_skeleton_order(truth, skel)?;
    see(&ordered, &rebuilt)
}

/// Upper bound on [`backtransform_error`] per frame: a joint's error is at
/// most the summed length errors of the segments between it and the root.
pub fn path_sum_bound(truth: &MotionSequence, skel: &Skeleton) -> Result<Vec<f64>> {
    let fixed = fix_segment_lengths(truth, skel)?;
    let lengths = fixed.fixed_lengths()?;
    let d = segment_distances(truth, skel)?;
    let segments = skel.segment_joints();
    let n = segments.len();
    let mut slot = vec![usize::MAX; skel.joints().len()];
    for (s, &j) in segments.iter().enumerate() {
        slot[j] = s;
    }
    Ok((0..truth.frames())
        .map(|t| {
            (0..skel.joints().len())
                .map(|j| {
                    skel.path_to_root(j)
                        .into_iter()
                        .map(|k| (lengths[slot[k]] - d[t * n + slot[k]]).abs())
                        .sum::<f64>()
                })
                .sum::<f64>()
                * CM_PER_M
        })
        .collect())
}

/// `seq` with its joints in skeleton order.
/// The sequence with its joints rearranged into skeleton order.
pub fn to_skeleton_order(seq: &MotionSequence, skel: &Skeleton) -> Result<MotionSequence> {
    if seq.joints() == skel.joints() {
        return Ok(seq.clone());
    }
    let cols = skel
        .joints()
        .iter()
        .map(|name| seq.joint_index(name).ok_or_else(|| shape_err!("sequence lacks joint {name}")))
        .collect::<Result<Vec<_>>>()?;
    let data = (0..seq.frames()).flat_map(|t| cols.iter().flat_map(move |&c| seq.point(t, c))).collect();
    MotionSequence::new(Space::Cartesian, skel.joints().to_vec(), seq.frame_rate(), data)
}
