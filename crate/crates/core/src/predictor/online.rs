use std::collections::VecDeque;

use super::{predict_batch, CoefficientCollection, PredictionBatch};
use crate::error::{invalid, shape_err, Error, Result};
use crate::kinematics::{to_joint_angles, Skeleton};
use crate::motion::{MotionSequence, Space};

/// Push-based streaming predictor. Keeps the last `L_f` frames as angles and
/// emits a batch once `L_f` frames have been seen and then every `u` frames.
#[derive(Debug)]
pub struct OnlinePredictor<'a> {
    coll: &'a CoefficientCollection,
    extended_ref: &'a MotionSequence,
    skel: &'a Skeleton,
    angles: VecDeque<Vec<f64>>,
    roots: VecDeque<[f64; 3]>,
    last_index: Option<u64>,
    seen: usize,
}

impl<'a> OnlinePredictor<'a> {
    pub fn new(
        coll: &'a CoefficientCollection,
        extended_ref: &'a MotionSequence,
        skel: &'a Skeleton,
    ) -> Result<Self> {
        if coll.joints() != skel.segment_names() {
            return Err(shape_err!(
                "collection channels {:?} do not match skeleton segments {:?}",
                coll.joints(),
                skel.segment_names()
            ));
        }
        if extended_ref.joints() != coll.joints() {
            return Err(shape_err!("extended reference and collection use different joints"));
        }
        let lf = coll.config().past_frames();
        Ok(Self {
            coll,
            extended_ref,
            skel,
            angles: VecDeque::with_capacity(lf),
            roots: VecDeque::with_capacity(lf),
            last_index: None,
            seen: 0,
        })
    }

    /// Frames observed so far.
    pub fn frames_seen(&self) -> usize {
        self.seen
    }

    /// Feeds one Cartesian frame (`joints x 3` in skeleton joint order) with
    /// its stream index. Indices must be consecutive.
    pub fn push(&mut self, index: u64, points: &[f64]) -> Result<Option<PredictionBatch>> {
        if let Some(last) = self.last_index {
            if index <= last {
                return Err(invalid!("frame {index} arrived after frame {last}"));
            }
            if index > last + 1 {
                return Err(Error::StreamGap { after: last, gap: index - last - 1 });
            }
        }
        let frame = MotionSequence::new(
            Space::Cartesian,
            self.skel.joints().to_vec(),
            self.coll.config().frame_rate,
            points.to_vec(),
        )?;
        if frame.frames() != 1 {
            return Err(shape_err!(
                "expected one frame of {} values, got {}",
                self.skel.joints().len() * 3,
                points.len()
            ));
        }
        let conv = to_joint_angles(&frame, self.skel)?;
        let lf = self.coll.config().past_frames();
        if self.angles.len() == lf {
            self.angles.pop_front();
            self.roots.pop_front();
        }
        self.angles.push_back(conv.angles.data().to_vec());
        self.roots.push_back(conv.angles.root_track().expect("angle conversion sets a root track")[0]);
        self.last_index = Some(index);
        self.seen += 1;

        let u = self.coll.config().update_stride_frames;
        if self.seen < lf || !(self.seen - lf).is_multiple_of(u) {
            return Ok(None);
        }
        let window = MotionSequence::new(
            Space::JointAngle,
            self.coll.joints().to_vec(),
            self.coll.config().frame_rate,
            self.angles.iter().flatten().copied().collect(),
        )?
        .with_root_track(self.roots.iter().copied().collect())?;
        predict_batch(&window, index, self.extended_ref, self.coll, self.skel).map(Some)
    }
}

/// Drives an [`OnlinePredictor`] over a whole stream and collects the
/// batches in emission order.
pub fn run_online<I, F>(
    stream: I,
    coll: &CoefficientCollection,
    extended_ref: &MotionSequence,
    skel: &Skeleton,
) -> Result<Vec<PredictionBatch>>
where
    I: IntoIterator<Item = (u64, F)>,
    F: AsRef<[f64]>,
{
    let mut online = OnlinePredictor::new(coll, extended_ref, skel)?;
    let mut out = Vec::new();
    for (index, frame) in stream {
        if let Some(batch) = online.push(index, frame.as_ref())? {
            out.push(batch);
        }
    }
    Ok(out)
}
