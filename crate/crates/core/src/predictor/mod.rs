//! The coefficient collection along the extended reference and window-level
//! prediction with it.
//!
//! Model positions are indexed by the last frame of their input window: the
//! model at `t` regresses frames `t + 1 - L_f ..= t` onto frames
//! `t + 1 - L_f + K_f ..= t + K_f` of the extended reference.

mod online;
mod persist;

pub use online::{run_online, OnlinePredictor};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::alignment::locate_in_reference;
use crate::error::{invalid, shape_err, Result};
use crate::kinematics::{pose_from_angles, Skeleton};
use crate::motion::{MotionSequence, Space};
use crate::regression::{self, RegressionConfig};
use crate::tensor::CpFactors;

/// How the root joint moves over the prediction horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootPolicy {
    /// Keep the last observed root position.
    #[default]
    Hold,
    /// Continue the last observed root velocity.
    LinearExtrapolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// `l`: seconds of past motion fed to each model.
    pub past_seconds: f64,
    /// `k`: seconds predicted.
    pub future_seconds: f64,
    /// `m`: frames between consecutive models.
    pub model_stride_frames: usize,
    /// `u`: frames between online updates.
    pub update_stride_frames: usize,
    pub regression: RegressionConfig,
    pub frame_rate: f64,
    #[serde(default)]
    pub root_policy: RootPolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            past_seconds: 4.0,
            future_seconds: 1.0,
            model_stride_frames: 2,
            update_stride_frames: 60,
            regression: RegressionConfig::default(),
            frame_rate: 60.0,
            root_policy: RootPolicy::Hold,
        }
    }
}

fn seconds_to_frames(seconds: f64, rate: f64) -> usize {
    (seconds * rate).round() as usize
}

impl PipelineConfig {
    /// `L_f`, the window length in frames.
    pub fn past_frames(&self) -> usize {
        seconds_to_frames(self.past_seconds, self.frame_rate)
    }

    /// `K_f`, the horizon in frames.
    pub fn future_frames(&self) -> usize {
        seconds_to_frames(self.future_seconds, self.frame_rate)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate > 0.0) || !self.frame_rate.is_finite() {
            return Err(invalid!("frame rate must be positive, got {}", self.frame_rate));
        }
        if !(self.future_seconds > 0.0) || self.future_frames() == 0 {
            return Err(invalid!(
                "future horizon must span at least one frame, got {} s",
                self.future_seconds
            ));
        }
        if !(self.future_seconds <= self.past_seconds) || self.future_frames() > self.past_frames() {
            return Err(invalid!(
                "future horizon {} s exceeds past window {} s",
                self.future_seconds,
                self.past_seconds
            ));
        }
        if self.model_stride_frames == 0 {
            return Err(invalid!("model stride must be at least 1 frame"));
        }
        if self.update_stride_frames == 0 || self.update_stride_frames > self.future_frames() {
            return Err(invalid!(
                "update stride must lie in 1..={} frames, got {}",
                self.future_frames(),
                self.update_stride_frames
            ));
        }
        self.regression.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectionEntry {
    /// Extended-reference frame that ends the model's input window.
    pub time_index: usize,
    pub factors: CpFactors,
}

/// Models fitted every `m` frames along one extended reference. Immutable
/// once built.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientCollection {
    config: PipelineConfig,
    /// Angle channel names the models were fitted on.
    joints: Vec<String>,
    entries: Vec<CollectionEntry>,
}

impl CoefficientCollection {
    pub fn new(config: PipelineConfig, joints: Vec<String>, entries: Vec<CollectionEntry>) -> Result<Self> {
        config.validate()?;
        if entries.is_empty() {
            return Err(invalid!("a collection needs at least one model"));
        }
        let m = config.model_stride_frames;
        for w in entries.windows(2) {
            if w[1].time_index != w[0].time_index + m {
                return Err(shape_err!(
                    "time indices {} and {} are not {m} frames apart",
                    w[0].time_index,
                    w[1].time_index
                ));
            }
        }
        let shape = entries[0].factors.shape();
        let rank = entries[0].factors.rank();
        let expected = [joints.len(), 3, joints.len(), 3];
        if shape != expected {
            return Err(shape_err!("factor shape {:?} does not fit {} joints x 3", shape, joints.len()));
        }
        if let Some(bad) = entries.iter().find(|e| e.factors.shape() != shape || e.factors.rank() != rank) {
            return Err(shape_err!(
                "model at frame {} has factor shape {:?} rank {}, expected {:?} rank {}",
                bad.time_index,
                bad.factors.shape(),
                bad.factors.rank(),
                shape,
                rank
            ));
        }
        Ok(Self { config, joints, entries })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn joints(&self) -> &[String] {
        &self.joints
    }

    pub fn entries(&self) -> &[CollectionEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn time_indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.time_index).collect()
    }

    /// Index of the entry whose time index is closest to `frame`; ties go
    /// to the earlier entry.
    pub fn nearest(&self, frame: usize) -> usize {
        let mut best = 0;
        for (i, e) in self.entries.iter().enumerate() {
            if e.time_index.abs_diff(frame) < self.entries[best].time_index.abs_diff(frame) {
                best = i;
            }
        }
        best
    }
}

/// Last-frame indices of every model position in an extended reference of
/// `frames` frames.
pub fn model_positions(frames: usize, cfg: &PipelineConfig) -> Vec<usize> {
    let (lf, kf) = (cfg.past_frames(), cfg.future_frames());
    if lf == 0 || frames < lf + kf {
        return Vec::new();
    }
    (lf - 1..frames - kf).step_by(cfg.model_stride_frames).collect()
}

/// Fits one model per position, each warm-started from its predecessor.
pub fn build_collection(
    extended_ref: &MotionSequence,
    cfg: &PipelineConfig,
) -> Result<CoefficientCollection> {
    build_collection_with(extended_ref, cfg, |_, _| {})
}

/// [`build_collection`] with a callback receiving `(done, total)` after
/// every fit.
pub fn build_collection_with(
    extended_ref: &MotionSequence,
    cfg: &PipelineConfig,
    mut progress: impl FnMut(usize, usize),
) -> Result<CoefficientCollection> {
    cfg.validate()?;
    if extended_ref.space() != Space::JointAngle {
        return Err(invalid!("the extended reference must hold joint angles"));
    }
    let (lf, kf) = (cfg.past_frames(), cfg.future_frames());
    let positions = model_positions(extended_ref.frames(), cfg);
    if positions.is_empty() {
        return Err(shape_err!(
            "reference of {} frames is shorter than one window pair ({} + {} frames)",
            extended_ref.frames(),
            lf,
            kf
        ));
    }
    let mut entries: Vec<CollectionEntry> = Vec::with_capacity(positions.len());
    for (i, &t) in positions.iter().enumerate() {
        let start = t + 1 - lf;
        let x = extended_ref.window_tensor(start, lf)?;
        let y = extended_ref.window_tensor(start + kf, lf)?;
        let init = entries.last().map(|e| &e.factors);
        let fit = regression::fit_from(&x, &y, &cfg.regression, init)?;
        entries.push(CollectionEntry { time_index: t, factors: fit.factors });
        progress(i + 1, positions.len());
    }
    CoefficientCollection::new(cfg.clone(), extended_ref.joints().to_vec(), entries)
}

/// Which model was chosen for a window and why.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub model_index: usize,
    pub time_index: usize,
    /// Extended-reference frame matched to the window's last frame.
    pub matched_end: usize,
}

pub fn select_coefficient<'c>(
    window: &MotionSequence,
    extended_ref: &MotionSequence,
    coll: &'c CoefficientCollection,
) -> Result<(Selection, &'c CpFactors)> {
    if coll.is_empty() {
        return Err(invalid!("empty coefficient collection"));
    }
    let matched_end = locate_in_reference(window, extended_ref)?;
    let model_index = coll.nearest(matched_end);
    let entry = &coll.entries[model_index];
    Ok((Selection { model_index, time_index: entry.time_index, matched_end }, &entry.factors))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFrame {
    /// Segment angles, `segments x 3`, after clamping to `[0, pi]`.
    pub angles: Vec<f64>,
    /// Every skeleton joint, in skeleton order.
    pub coordinates: Vec<[f64; 3]>,
    /// Frames after the last observed frame, starting at 1.
    pub horizon_frame: usize,
    pub model_index: usize,
}

/// One update's predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    /// Index of the last observed frame; horizon frame `h` predicts frame
    /// `stamp + h`.
    pub stamp: u64,
    pub selection: Selection,
    pub frames: Vec<PredictionFrame>,
    /// Predicted angles that fell outside `[0, pi]` before clamping.
    pub clamp_count: usize,
}

/// Contracts `window` with the model's coefficient tensor and returns the
/// last `K_f` frames, clamped and back-transformed with the skeleton's
/// fixed lengths. The root follows `cfg.root_policy` from the window's root
/// track.
pub fn predict_window(
    window: &MotionSequence,
    factors: &CpFactors,
    skel: &Skeleton,
    cfg: &PipelineConfig,
    model_index: usize,
) -> Result<(Vec<PredictionFrame>, usize)> {
    let (lf, kf) = (cfg.past_frames(), cfg.future_frames());
    if window.space() != Space::JointAngle {
        return Err(invalid!("prediction windows must hold joint angles"));
    }
    if window.frames() != lf {
        return Err(shape_err!("window has {} frames, the models expect {lf}", window.frames()));
    }
    if window.joints() != skel.segment_names() {
        return Err(shape_err!(
            "window channels {:?} do not match skeleton segments {:?}",
            window.joints(),
            skel.segment_names()
        ));
    }
    let track = window.root_track().ok_or_else(|| invalid!("prediction windows need a root track"))?;
    let lengths = skel.fixed_lengths()?;

    let x = window.window_tensor(0, lf)?;
    let y = regression::predict(&x, factors)?;
    let values = MotionSequence::frames_from_tensor(&y)?;
    let c = window.channels();

    let last = track[lf - 1];
    let velocity = if lf > 1 {
        let prev = track[lf - 2];
        [0, 1, 2].map(|a| last[a] - prev[a])
    } else {
        [0.0; 3]
    };

    let mut clamp_count = 0;
    let mut frames = Vec::with_capacity(kf);
    for h in 1..=kf {
        let row = &values[(lf - kf + h - 1) * c..(lf - kf + h) * c];
        let angles: Vec<f64> = row
            .iter()
            .map(|&a| {
                let clamped = a.clamp(0.0, PI);
                if clamped != a {
                    clamp_count += 1;
                }
                clamped
            })
            .collect();
        let root = match cfg.root_policy {
            RootPolicy::Hold => last,
            RootPolicy::LinearExtrapolation => [0, 1, 2].map(|a| last[a] + h as f64 * velocity[a]),
        };
        let coordinates = pose_from_angles(skel, &angles, root, &lengths)?;
        frames.push(PredictionFrame { angles, coordinates, horizon_frame: h, model_index });
    }
    Ok((frames, clamp_count))
}

/// Selection plus prediction for one window; the offline counterpart of an
/// online update.
pub fn predict_batch(
    window: &MotionSequence,
    stamp: u64,
    extended_ref: &MotionSequence,
    coll: &CoefficientCollection,
    skel: &Skeleton,
) -> Result<PredictionBatch> {
    let (selection, factors) = select_coefficient(window, extended_ref, coll)?;
    let (frames, clamp_count) = predict_window(window, factors, skel, coll.config(), selection.model_index)?;
    Ok(PredictionBatch { stamp, selection, frames, clamp_count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{to_joint_angles, JointSpec};
    use crate::regression::fit;

    fn chirp(t: usize) -> f64 {
        let t = t as f64;
        0.3 * t + 0.004 * t * t
    }

    fn chain() -> Skeleton {
        Skeleton::new(vec![
            JointSpec { name: "root".into(), parent: None, length: None },
            JointSpec { name: "a".into(), parent: Some("root".into()), length: Some(0.5) },
            JointSpec { name: "b".into(), parent: Some("a".into()), length: Some(0.4) },
        ])
        .unwrap()
    }

    fn small_cfg(l: f64, k: f64, m: usize) -> PipelineConfig {
        PipelineConfig {
            past_seconds: l,
            future_seconds: k,
            model_stride_frames: m,
            update_stride_frames: 1,
            regression: RegressionConfig { rank: 3, penalty: 0.5, max_sweeps: 50, ..Default::default() },
            frame_rate: 10.0,
            root_policy: RootPolicy::Hold,
        }
    }

    /// Smooth angle trajectory for the two segments of [`chain`].
    fn angle_ref(frames: usize) -> MotionSequence {
        let data: Vec<f64> = (0..frames)
            .flat_map(|t| {
                let p = chirp(t);
                let a = [0.8 + 0.3 * p.sin(), 1.2 + 0.2 * p.cos(), 1.0 + 0.1 * p.sin()];
                let b = [1.5 + 0.2 * p.cos(), 0.9 + 0.3 * p.sin(), 1.3 - 0.2 * p.cos()];
                a.into_iter().chain(b)
            })
            .collect();
        MotionSequence::new(Space::JointAngle, vec!["a".into(), "b".into()], 10.0, data)
            .unwrap()
            .with_root_track(vec![[0.0; 3]; frames])
            .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        assert_eq!(PipelineConfig::default().past_frames(), 240);
        let mut c = small_cfg(1.0, 2.0, 1);
        assert!(c.validate().is_err());
        c = small_cfg(1.0, 0.5, 0);
        assert!(c.validate().is_err());
        c = small_cfg(1.0, 0.5, 1);
        c.update_stride_frames = 6;
        assert!(c.validate().is_err());
    }

    #[test]
    fn position_count_matches_enumeration() {
        for frames in [5, 14, 15, 16, 40, 41] {
            for m in 1..6 {
                let cfg = small_cfg(1.0, 0.5, m);
                let (lf, kf) = (10, 5);
                let enumerated =
                    (0..frames).filter(|&t| t + 1 >= lf && t + kf < frames && (t + 1 - lf) % m == 0).count();
                let formula = if frames < lf + kf { 0 } else { (frames - lf - kf) / m + 1 };
                assert_eq!(model_positions(frames, &cfg).len(), enumerated);
                assert_eq!(enumerated, formula);
            }
        }
        // Stride equal to the reference length: a single model.
        assert_eq!(model_positions(40, &small_cfg(1.0, 0.5, 40)).len(), 1);
    }

    #[test]
    fn window_bookkeeping() {
        let cfg = PipelineConfig::default();
        let pos = model_positions(300 + 240, &cfg);
        assert_eq!(pos[0], 239);
        assert_eq!(pos[1] - pos[0], 2);
        assert_eq!(*pos.last().unwrap() + cfg.future_frames(), 539);
    }

    #[test]
    fn reference_too_short() {
        let r = angle_ref(14);
        assert!(build_collection(&r, &small_cfg(1.0, 0.5, 1)).is_err());
        assert!(build_collection(&angle_ref(15), &small_cfg(1.0, 0.5, 1)).is_ok());
    }

    #[test]
    fn constant_reference_reproduced() {
        let frames = 30;
        let pose = [0.7, 1.1, 1.3, 1.6, 0.9, 1.2];
        let data: Vec<f64> = (0..frames).flat_map(|_| pose).collect();
        let r = MotionSequence::new(Space::JointAngle, vec!["a".into(), "b".into()], 10.0, data)
            .unwrap()
            .with_root_track(vec![[0.0; 3]; frames])
            .unwrap();
        let mut cfg = small_cfg(1.0, 0.5, 3);
        cfg.regression.penalty = 1e-6;
        cfg.regression.max_sweeps = 500;
        cfg.regression.tolerance = 1e-14;
        let coll = build_collection(&r, &cfg).unwrap();
        let skel = chain();
        for (i, e) in coll.entries().iter().enumerate() {
            let w = r.slice(e.time_index + 1 - 10..e.time_index + 1).unwrap();
            let (frames, clamps) = predict_window(&w, &e.factors, &skel, &cfg, i).unwrap();
            assert_eq!(clamps, 0);
            assert_eq!(frames.len(), 5);
            for f in &frames {
                for (a, b) in f.angles.iter().zip(pose) {
                    assert!((a - b).abs() < 1e-6, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn collection_is_deterministic_and_strided() {
        let r = angle_ref(40);
        let cfg = small_cfg(1.0, 0.5, 2);
        let a = build_collection(&r, &cfg).unwrap();
        let b = build_collection(&r, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.time_indices(), model_positions(40, &cfg));
        let mut calls = 0;
        build_collection_with(&r, &cfg, |_, _| calls += 1).unwrap();
        assert_eq!(calls, a.len());
    }

    #[test]
    fn nearest_breaks_ties_low() {
        let r = angle_ref(40);
        let coll = build_collection(&r, &small_cfg(1.0, 0.5, 2)).unwrap();
        // Time indices 9, 11, 13, ...
        assert_eq!(coll.entries()[coll.nearest(11)].time_index, 11);
        assert_eq!(coll.entries()[coll.nearest(12)].time_index, 11);
        assert_eq!(coll.entries()[coll.nearest(0)].time_index, 9);
        assert_eq!(coll.entries()[coll.nearest(1000)].time_index, 33);
    }

    #[test]
    fn selection_of_verbatim_windows() {
        let r = angle_ref(40);
        let cfg = small_cfg(1.0, 0.5, 3);
        let coll = build_collection(&r, &cfg).unwrap();
        for end in 9..35 {
            let w = r.slice(end + 1 - 10..end + 1).unwrap();
            let (sel, _) = select_coefficient(&w, &r, &coll).unwrap();
            assert_eq!(sel.matched_end, end);
            if end <= *coll.time_indices().last().unwrap() {
                assert!(sel.time_index.abs_diff(end) <= 3 / 2 + 3 % 2);
            }
        }
    }

    #[test]
    fn training_window_reproduction() {
        let r = angle_ref(40);
        let mut cfg = small_cfg(1.0, 0.5, 2);
        cfg.regression.rank = 6;
        cfg.regression.penalty = 0.01;
        let coll = build_collection(&r, &cfg).unwrap();
        let skel = chain();
        let e = &coll.entries()[5];
        let start = e.time_index + 1 - 10;
        let x = r.window_tensor(start, 10).unwrap();
        let y = r.window_tensor(start + 5, 10).unwrap();
        let refit = fit(&x, &y, &cfg.regression).unwrap();
        let w = r.slice(start..start + 10).unwrap();
        let (frames, _) = predict_window(&w, &e.factors, &skel, &cfg, 5).unwrap();
        let residual = regression::predict(&x, &e.factors).unwrap().sub(&y).unwrap().frobenius_norm()
            / (y.len() as f64).sqrt();
        assert!(refit.residual_variance.is_finite());
        for f in &frames {
            let truth = r.frame(e.time_index + f.horizon_frame);
            let rmse = (f.angles.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 6.0).sqrt();
            assert!(rmse < 3.0 * residual + 1e-6, "{rmse} vs {residual}");
        }
    }

    #[test]
    fn zero_window_clamps_to_zero() {
        let r = angle_ref(40);
        let cfg = small_cfg(1.0, 0.5, 2);
        let coll = build_collection(&r, &cfg).unwrap();
        let w = MotionSequence::new(Space::JointAngle, vec!["a".into(), "b".into()], 10.0, vec![0.0; 60])
            .unwrap()
            .with_root_track(vec![[1.0, 2.0, 3.0]; 10])
            .unwrap();
        let (frames, _) = predict_window(&w, &coll.entries()[0].factors, &chain(), &cfg, 0).unwrap();
        for f in frames {
            assert!(f.angles.iter().all(|&a| a == 0.0));
            assert_eq!(f.coordinates[0], [1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn root_policies() {
        let r = angle_ref(40);
        let mut cfg = small_cfg(1.0, 0.5, 2);
        let coll = build_collection(&r, &cfg).unwrap();
        let track: Vec<[f64; 3]> = (0..10).map(|t| [t as f64, 0.0, -(t as f64)]).collect();
        let w = r.slice(0..10).unwrap().with_root_track(track).unwrap();
        let f = &coll.entries()[0].factors;
        let (held, _) = predict_window(&w, f, &chain(), &cfg, 0).unwrap();
        assert!(held.iter().all(|p| p.coordinates[0] == [9.0, 0.0, -9.0]));
        cfg.root_policy = RootPolicy::LinearExtrapolation;
        let (moved, _) = predict_window(&w, f, &chain(), &cfg, 0).unwrap();
        assert_eq!(moved[2].coordinates[0], [12.0, 0.0, -12.0]);
        assert!(predict_window(&r.slice(0..9).unwrap(), f, &chain(), &cfg, 0).is_err());
    }

    #[test]
    fn predictions_follow_skeleton_layout() {
        let skel = chain();
        let cart: Vec<f64> = (0..40)
            .flat_map(|t| {
                let p = chirp(t);
                [0.0, 0.0, 0.0, 0.5 * p.cos(), 0.5 * p.sin(), 0.0, 0.5 * p.cos(), 0.5 * p.sin(), 0.4]
            })
            .collect();
        let seq = MotionSequence::new(Space::Cartesian, skel.joints().to_vec(), 10.0, cart).unwrap();
        let angles = to_joint_angles(&seq, &skel).unwrap().angles;
        let coll = build_collection(&angles, &small_cfg(1.0, 0.5, 2)).unwrap();
        let w = angles.slice(20..30).unwrap();
        let batch = predict_batch(&w, 29, &angles, &coll, &skel).unwrap();
        assert_eq!(batch.frames.len(), 5);
        assert_eq!(batch.selection.matched_end, 29);
        for f in &batch.frames {
            assert_eq!(f.coordinates.len(), 3);
            let d: f64 = (0..3).map(|a| (f.coordinates[2][a] - f.coordinates[1][a]).powi(2)).sum();
            assert!(f.angles.iter().all(|a| (0.0..=PI).contains(a)));
            assert!(d.sqrt() <= 0.4 * 3f64.sqrt() + 1e-12);
        }
    }
}
