//! Time series of per-joint 3-vectors, either positions or direction-cosine
//! angles.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;

/// Angles may overshoot `[0, pi]` by this much from rounding before they
/// are rejected.
pub const ANGLE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Cartesian,
    JointAngle,
}

/// `frames x joints x 3` values stored frame-major: entry `(t, j, axis)` is at
/// `(t * joints + j) * 3 + axis`.
///
/// Angle sequences list only non-root joints and carry the root's absolute
/// trajectory separately in `root_track`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSequence")]
pub struct MotionSequence {
    space: Space,
    joints: Vec<String>,
    frame_rate: f64,
    data: Vec<f64>,
    root_track: Option<Vec<[f64; 3]>>,
}

#[derive(Deserialize)]
struct RawSequence {
    space: Space,
    joints: Vec<String>,
    frame_rate: f64,
    data: Vec<f64>,
    root_track: Option<Vec<[f64; 3]>>,
}

impl TryFrom<RawSequence> for MotionSequence {
    type Error = crate::error::Error;

    fn try_from(raw: RawSequence) -> Result<Self> {
        let seq = MotionSequence::new(raw.space, raw.joints, raw.frame_rate, raw.data)?;
        match raw.root_track {
            Some(track) => seq.with_root_track(track),
            None => Ok(seq),
        }
    }
}

impl MotionSequence {
    pub fn new(space: Space, joints: Vec<String>, frame_rate: f64, data: Vec<f64>) -> Result<Self> {
        if joints.is_empty() {
            return Err(invalid!("a motion sequence needs at least one joint"));
        }
        if !(frame_rate > 0.0) {
            return Err(invalid!("frame rate must be positive, got {frame_rate}"));
        }
        if !data.len().is_multiple_of(joints.len() * 3) {
            return Err(shape_err!(
                "{} values do not divide into frames of {} joints x 3",
                data.len(),
                joints.len()
            ));
        }
        if space == Space::JointAngle {
            if let Some(bad) = data
                .iter()
                .find(|&&a| !(-ANGLE_TOLERANCE..=std::f64::consts::PI + ANGLE_TOLERANCE).contains(&a))
            {
                return Err(invalid!("joint angle {bad} outside [0, pi]"));
            }
        }
        Ok(Self { space, joints, frame_rate, data, root_track: None })
    }

    /// Skips the angle range check, for perturbed copies of angle data.
    pub(crate) fn new_unchecked(space: Space, joints: Vec<String>, frame_rate: f64, data: Vec<f64>) -> Self {
        debug_assert!(data.len().is_multiple_of(joints.len() * 3));
        Self { space, joints, frame_rate, data, root_track: None }
    }

    pub fn with_root_track(mut self, track: Vec<[f64; 3]>) -> Result<Self> {
        if track.len() != self.frames() {
            return Err(shape_err!("root track has {} frames, sequence has {}", track.len(), self.frames()));
        }
        self.root_track = Some(track);
        Ok(self)
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn joints(&self) -> &[String] {
        &self.joints
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j == name)
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.channels()
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    /// Values per frame: joints x 3.
    pub fn channels(&self) -> usize {
        self.joints.len() * 3
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let c = self.channels();
        &self.data[t * c..(t + 1) * c]
    }

    pub fn get(&self, t: usize, joint: usize, axis: usize) -> f64 {
        self.data[(t * self.joints.len() + joint) * 3 + axis]
    }

    pub fn point(&self, t: usize, joint: usize) -> [f64; 3] {
        let o = (t * self.joints.len() + joint) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn root_track(&self) -> Option<&[[f64; 3]]> {
        self.root_track.as_deref()
    }

    /// One joint-axis channel over time.
    pub fn channel(&self, joint: usize, axis: usize) -> Vec<f64> {
        (0..self.frames()).map(|t| self.get(t, joint, axis)).collect()
    }

    /// Frames `range`, root track included.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start > range.end || range.end > self.frames() {
            return Err(shape_err!("frame range {:?} outside 0..{}", range, self.frames()));
        }
        let c = self.channels();
        Ok(Self {
            space: self.space,
            joints: self.joints.clone(),
            frame_rate: self.frame_rate,
            data: self.data[range.start * c..range.end * c].to_vec(),
            root_track: self.root_track.as_ref().map(|r| r[range].to_vec()),
        })
    }

    /// Concatenates sequences with identical layout. The root track is kept
    /// only if every part has one.
    pub fn concat(parts: &[&MotionSequence]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| invalid!("nothing to concatenate"))?;
        let mut data = Vec::new();
        let mut track = Some(Vec::new());
        for p in parts {
            first.check_layout(p)?;
            data.extend_from_slice(&p.data);
            track = match (track, p.root_track()) {
                (Some(mut acc), Some(r)) => {
                    acc.extend_from_slice(r);
                    Some(acc)
                }
                _ => None,
            };
        }
        Ok(Self {
            space: first.space,
            joints: first.joints.clone(),
            frame_rate: first.frame_rate,
            data,
            root_track: track,
        })
    }

    /// Errors unless `other` has the same space and joint layout.
    pub fn check_layout(&self, other: &MotionSequence) -> Result<()> {
        if self.space != other.space {
            return Err(shape_err!("mixed spaces: {:?} vs {:?}", self.space, other.space));
        }
        if self.joints != other.joints {
            return Err(shape_err!("joint layouts differ: {:?} vs {:?}", self.joints, other.joints));
        }
        Ok(())
    }

    /// Frames `start..start + len` as a `len x joints x 3` tensor (first
    /// index fastest), the layout the regression consumes.
    pub fn window_tensor(&self, start: usize, len: usize) -> Result<Tensor> {
        if len == 0 || start + len > self.frames() {
            return Err(shape_err!("window {}..{} outside 0..{}", start, start + len, self.frames()));
        }
        let j = self.joints.len();
        let mut out = vec![0.0; len * j * 3];
        for n in 0..len {
            let frame = self.frame(start + n);
            for jj in 0..j {
                for a in 0..3 {
                    out[n + len * (jj + j * a)] = frame[jj * 3 + a];
                }
            }
        }
        Tensor::new(vec![len, j, 3], out)
    }

    /// Inverse of [`MotionSequence::window_tensor`]: frame-major values of a
    /// `frames x joints x 3` tensor.
    pub fn frames_from_tensor(t: &Tensor) -> Result<Vec<f64>> {
        if t.order() != 3 || t.shape()[2] != 3 {
            return Err(shape_err!("expected a frames x joints x 3 tensor, got {:?}", t.shape()));
        }
        let (n, j) = (t.shape()[0], t.shape()[1]);
        let d = t.data();
        let mut out = vec![0.0; n * j * 3];
        for f in 0..n {
            for jj in 0..j {
                for a in 0..3 {
                    out[(f * j + jj) * 3 + a] = d[f + n * (jj + j * a)];
                }
            }
        }
        Ok(out)
    }
}
