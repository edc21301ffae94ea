//! Cartesian <-> direction-cosine angle transforms over a skeleton tree.
//!
//! Each non-root joint `J` with predecessor `P` is described by the three
//! angles between the segment `P -> J` and the fixed x, y and z axes:
//! `alpha_v = acos((J_v - P_v) / |J - P|)`. Going back, `J` is placed at
//! `P + d * (cos alpha_x, cos alpha_y, cos alpha_z)` walking down from the
//! root, with `d` either a fixed segment length or a per-frame distance.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::motion::{MotionSequence, Space, ANGLE_TOLERANCE};
use crate::stats;

/// One joint of a skeleton definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    /// Segment length to the parent, in meters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
}

/// A joint tree with a single root and optional fixed segment lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joints: Vec<String>,
    parent: Vec<Option<usize>>,
    lengths: Vec<Option<f64>>,
    root: usize,
    /// Joints ordered so that every parent precedes its children.
    order: Vec<usize>,
}

impl Skeleton {
    pub fn new(specs: Vec<JointSpec>) -> Result<Self> {
        let joints: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
        for (i, name) in joints.iter().enumerate() {
            if joints[..i].contains(name) {
                return Err(invalid!("joint {name} defined twice"));
            }
        }
        let mut parent = Vec::with_capacity(specs.len());
        let mut lengths = Vec::with_capacity(specs.len());
        for s in &specs {
            let p = match &s.parent {
                Some(p) => Some(
                    joints
                        .iter()
                        .position(|j| j == p)
                        .ok_or_else(|| invalid!("joint {} has unknown parent {p}", s.name))?,
                ),
                None => None,
            };
            parent.push(p);
            if let Some(len) = s.length {
                if !(len > 0.0) || !len.is_finite() {
                    return Err(invalid!("segment length of {} must be positive", s.name));
                }
            }
            lengths.push(if p.is_some() { s.length } else { None });
        }
        let roots: Vec<usize> = (0..joints.len()).filter(|&j| parent[j].is_none()).collect();
        if roots.len() != 1 {
            return Err(invalid!("a skeleton needs exactly one root, found {}", roots.len()));
        }
        let root = roots[0];

        // Breadth-first from the root; anything unreached sits on a cycle.
        let mut order = vec![root];
        let mut head = 0;
        while head < order.len() {
            let p = order[head];
            head += 1;
            order.extend((0..joints.len()).filter(|&c| parent[c] == Some(p)));
        }
        if order.len() != joints.len() {
            return Err(invalid!("joint predecessor map contains a cycle"));
        }
        Ok(Self { joints, parent, lengths, root, order })
    }

    /// The ten-joint upper-body tree: hip -> spine -> neck -> head, and
    /// neck -> shoulder -> elbow -> hand on both sides.
    pub fn upper_body() -> Self {
        let spec = |name: &str, parent: Option<&str>, length: f64| JointSpec {
            name: name.into(),
            parent: parent.map(Into::into),
            length: parent.map(|_| length),
        };
        Self::new(vec![
            spec("hip", None, 0.0),
            spec("spine", Some("hip"), 0.45),
            spec("neck", Some("spine"), 0.20),
            spec("head", Some("neck"), 0.15),
            spec("left_shoulder", Some("neck"), 0.18),
            spec("right_shoulder", Some("neck"), 0.18),
            spec("left_elbow", Some("left_shoulder"), 0.30),
            spec("right_elbow", Some("right_shoulder"), 0.30),
            spec("left_hand", Some("left_elbow"), 0.27),
            spec("right_hand", Some("right_elbow"), 0.27),
        ])
        .expect("built-in skeleton is valid")
    }

    pub fn specs(&self) -> Vec<JointSpec> {
        (0..self.joints.len())
            .map(|j| JointSpec {
                name: self.joints[j].clone(),
                parent: self.parent[j].map(|p| self.joints[p].clone()),
                length: self.lengths[j],
            })
            .collect()
    }

    pub fn joints(&self) -> &[String] {
        &self.joints
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn root_name(&self) -> &str {
        &self.joints[self.root]
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parent[joint]
    }

    pub fn length(&self, joint: usize) -> Option<f64> {
        self.lengths[joint]
    }

    /// All joints, every parent before its children.
    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    /// Non-root joints in definition order; this is the joint layout of
    /// angle sequences.
    pub fn segment_joints(&self) -> Vec<usize> {
        (0..self.joints.len()).filter(|&j| j != self.root).collect()
    }

    pub fn segment_names(&self) -> Vec<String> {
        self.segment_joints().into_iter().map(|j| self.joints[j].clone()).collect()
    }

    /// Joints on the path from `joint` up to (excluding) the root.
    pub fn path_to_root(&self, joint: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut j = joint;
        while let Some(p) = self.parent[j] {
            path.push(j);
            j = p;
        }
        path
    }

    pub fn with_lengths(&self, lengths: &[(usize, f64)]) -> Result<Self> {
        let mut out = self.clone();
        for &(j, len) in lengths {
            if j == self.root {
                return Err(invalid!("the root has no segment length"));
            }
            if !(len > 0.0) || !len.is_finite() {
                return Err(invalid!("segment length of {} must be positive, got {len}", self.joints[j]));
            }
            out.lengths[j] = Some(len);
        }
        Ok(out)
    }

    /// Maps each skeleton joint to its column in `seq`.
    fn columns_in(&self, seq: &MotionSequence) -> Result<Vec<usize>> {
        self.joints
            .iter()
            .map(|name| {
                seq.joint_index(name).ok_or_else(|| Error::Kinematics(format!("sequence lacks joint {name}")))
            })
            .collect()
    }

    pub fn fixed_lengths(&self) -> Result<Vec<f64>> {
        self.segment_joints()
            .into_iter()
            .map(|j| {
                self.lengths[j]
                    .ok_or_else(|| Error::Kinematics(format!("no segment length for {}", self.joints[j])))
            })
            .collect()
    }
}

impl Default for Skeleton {
    fn default() -> Self {
        Self::upper_body()
    }
}

/// Result of [`to_joint_angles`].
#[derive(Debug, Clone, PartialEq)]
pub struct AngleConversion {
    pub angles: MotionSequence,
    /// Per-frame segment lengths, `frames x segments`, in
    /// [`Skeleton::segment_joints`] order.
    pub distances: Vec<f64>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn checked_acos(c: f64) -> Result<f64> {
    if c.abs() > 1.0 + ANGLE_TOLERANCE {
        return Err(Error::Kinematics(format!("direction cosine {c} outside [-1, 1]")));
    }
    Ok(c.clamp(-1.0, 1.0).acos())
}

pub fn to_joint_angles(seq: &MotionSequence, skel: &Skeleton) -> Result<AngleConversion> {
    if seq.space() != Space::Cartesian {
        return Err(invalid!("expected Cartesian input"));
    }
    let cols = skel.columns_in(seq)?;
    let segments = skel.segment_joints();
    let frames = seq.frames();
    let mut angles = Vec::with_capacity(frames * segments.len() * 3);
    let mut distances = Vec::with_capacity(frames * segments.len());
    let mut root = Vec::with_capacity(frames);
    for t in 0..frames {
        root.push(seq.point(t, cols[skel.root]));
        for &j in &segments {
            let p = skel.parent[j].expect("segment joints have parents");
            let d = sub(seq.point(t, cols[j]), seq.point(t, cols[p]));
            let len = norm(d);
            if !(len > 0.0) {
                return Err(Error::Kinematics(format!(
                    "joints {} and {} coincide in frame {t}",
                    skel.joints[j], skel.joints[p]
                )));
            }
            for v in d {
                angles.push(checked_acos(v / len)?);
            }
            distances.push(len);
        }
    }
    let angles = MotionSequence::new(Space::JointAngle, skel.segment_names(), seq.frame_rate(), angles)?
        .with_root_track(root)?;
    Ok(AngleConversion { angles, distances })
}

/// Places every joint for one frame. `angles` holds `segments x 3` angles in
/// segment order and `lengths` one length per segment.
pub fn pose_from_angles(
    skel: &Skeleton,
    angles: &[f64],
    root: [f64; 3],
    lengths: &[f64],
) -> Result<Vec<[f64; 3]>> {
    let segments = skel.segment_joints();
    if angles.len() != segments.len() * 3 || lengths.len() != segments.len() {
        return Err(Error::Kinematics(format!(
            "expected {} segments, got {} angles and {} lengths",
            segments.len(),
            angles.len(),
            lengths.len()
        )));
    }
    let mut slot = vec![usize::MAX; skel.joints.len()];
    for (s, &j) in segments.iter().enumerate() {
        slot[j] = s;
    }
    let mut pos = vec![[0.0; 3]; skel.joints.len()];
    pos[skel.root] = root;
    for &j in &skel.order[1..] {
        let p = skel.parent[j].expect("non-root joints have parents");
        let s = slot[j];
        let base = pos[p];
        let mut out = [0.0; 3];
        for a in 0..3 {
            let alpha = angles[s * 3 + a];
            if !(-ANGLE_TOLERANCE..=std::f64::consts::PI + ANGLE_TOLERANCE).contains(&alpha) {
                return Err(Error::Kinematics(format!(
                    "angle {alpha} of {} outside [0, pi]",
                    skel.joints[j]
                )));
            }
            let alpha = alpha.clamp(0.0, std::f64::consts::PI);
            out[a] = base[a] + lengths[s] * alpha.cos();
        }
        pos[j] = out;
    }
    Ok(pos)
}

/// Back-transform with the skeleton's fixed segment lengths.
pub fn from_joint_angles(seq: &MotionSequence, skel: &Skeleton) -> Result<MotionSequence> {
    let lengths = skel.fixed_lengths()?;
    back_transform(seq, skel, |_| &lengths)
}

/// Back-transform with explicit per-frame lengths (`frames x segments`), e.g.
/// the distances returned by [`to_joint_angles`].
pub fn from_joint_angles_with_lengths(
    seq: &MotionSequence,
    skel: &Skeleton,
    distances: &[f64],
) -> Result<MotionSequence> {
    let n = skel.segment_joints().len();
    if distances.len() != seq.frames() * n {
        return Err(Error::Kinematics(format!(
            "{} distances for {} frames of {} segments",
            distances.len(),
            seq.frames(),
            n
        )));
    }
    back_transform(seq, skel, |t| &distances[t * n..(t + 1) * n])
}

fn back_transform<'a>(
    seq: &MotionSequence,
    skel: &Skeleton,
    lengths: impl Fn(usize) -> &'a [f64],
) -> Result<MotionSequence> {
    if seq.space() != Space::JointAngle {
        return Err(invalid!("expected joint-angle input"));
    }
    if seq.joints() != skel.segment_names() {
        return Err(Error::Kinematics(format!(
            "angle layout {:?} does not match skeleton segments {:?}",
            seq.joints(),
            skel.segment_names()
        )));
    }
    let root =
        seq.root_track().ok_or_else(|| Error::Kinematics("angle sequence has no root track".into()))?;
    let mut data = Vec::with_capacity(seq.frames() * skel.joints.len() * 3);
    for (t, &origin) in root.iter().enumerate() {
        let pose = pose_from_angles(skel, seq.frame(t), origin, lengths(t))?;
        data.extend(pose.iter().flatten());
    }
    MotionSequence::new(Space::Cartesian, skel.joints.clone(), seq.frame_rate(), data)
}

/// Per-frame segment lengths, `frames x segments`.
pub fn segment_distances(seq: &MotionSequence, skel: &Skeleton) -> Result<Vec<f64>> {
    let cols = skel.columns_in(seq)?;
    let segments = skel.segment_joints();
    let mut out = Vec::with_capacity(seq.frames() * segments.len());
    for t in 0..seq.frames() {
        for &j in &segments {
            let p = skel.parent[j].expect("segment joints have parents");
            out.push(norm(sub(seq.point(t, cols[j]), seq.point(t, cols[p]))));
        }
    }
    Ok(out)
}

/// Sets every segment length to the median observed distance over all
/// frames (midpoint of the two middle values for an even frame count).
pub fn fix_segment_lengths(seq: &MotionSequence, skel: &Skeleton) -> Result<Skeleton> {
    if seq.space() != Space::Cartesian {
        return Err(invalid!("expected Cartesian input"));
    }
    if seq.frames() == 0 {
        return Err(invalid!("cannot fix lengths from an empty sequence"));
    }
    let d = segment_distances(seq, skel)?;
    let segments = skel.segment_joints();
    let n = segments.len();
    let fixed: Vec<(usize, f64)> = segments
        .iter()
        .enumerate()
        .map(|(s, &j)| {
            let column: Vec<f64> = d.iter().skip(s).step_by(n).copied().collect();
            (j, stats::median(&column))
        })
        .collect();
    skel.with_lengths(&fixed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn two_joint() -> Skeleton {
        Skeleton::new(vec![
            JointSpec { name: "a".into(), parent: None, length: None },
            JointSpec { name: "b".into(), parent: Some("a".into()), length: Some(1.0) },
        ])
        .unwrap()
    }

    fn cartesian(names: &[String], frames: Vec<Vec<[f64; 3]>>) -> MotionSequence {
        let data = frames.iter().flatten().flatten().copied().collect();
        MotionSequence::new(Space::Cartesian, names.to_vec(), 60.0, data).unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng, skel: &Skeleton) -> Vec<[f64; 3]> {
        let mut pos = vec![[0.0; 3]; skel.joints().len()];
        pos[skel.root()] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0];
        for &j in &skel.order[1..] {
            let p = skel.parent(j).unwrap();
            let d: [f64; 3] =
                [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
            pos[j] = [pos[p][0] + d[0], pos[p][1] + d[1], pos[p][2] + d[2]];
        }
        pos
    }

    #[test]
    fn axis_aligned_and_diagonal_segments() {
        let skel = two_joint();
        let d = 0.7;
        let seq = cartesian(skel.joints(), vec![vec![[1.0, 2.0, 3.0], [1.0 + d, 2.0, 3.0]]]);
        let a = to_joint_angles(&seq, &skel).unwrap();
        assert_eq!(a.angles.frame(0), &[0.0, FRAC_PI_2, FRAC_PI_2]);
        assert!((a.distances[0] - d).abs() < 1e-15);

        let s = d / 3f64.sqrt();
        let seq = cartesian(skel.joints(), vec![vec![[0.0; 3], [s, s, s]]]);
        let a = to_joint_angles(&seq, &skel).unwrap();
        let expected = (1.0 / 3f64.sqrt()).acos();
        for &v in a.angles.frame(0) {
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn random_poses_match_direct_formula() {
        let skel = Skeleton::upper_body();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let poses: Vec<_> = (0..20).map(|_| random_pose(&mut rng, &skel)).collect();
        let seq = cartesian(skel.joints(), poses.clone());
        let a = to_joint_angles(&seq, &skel).unwrap();
        for (t, pose) in poses.iter().enumerate() {
            for (s, j) in skel.segment_joints().into_iter().enumerate() {
                let p = skel.parent(j).unwrap();
                let v = [pose[j][0] - pose[p][0], pose[j][1] - pose[p][1], pose[j][2] - pose[p][2]];
                let d = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                let mut cos2 = 0.0;
                for (ax, comp) in v.iter().enumerate() {
                    let got = a.angles.get(t, s, ax);
                    assert!((got - (comp / d).acos()).abs() < 1e-12);
                    cos2 += got.cos().powi(2);
                }
                assert!((cos2 - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn round_trip_with_true_distances() {
        let skel = Skeleton::upper_body();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seq = cartesian(skel.joints(), (0..50).map(|_| random_pose(&mut rng, &skel)).collect());
        let a = to_joint_angles(&seq, &skel).unwrap();
        let back = from_joint_angles_with_lengths(&a.angles, &skel, &a.distances).unwrap();
        for (x, y) in back.data().iter().zip(seq.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn chain_placement() {
        let skel = Skeleton::new(vec![
            JointSpec { name: "r".into(), parent: None, length: None },
            JointSpec { name: "a".into(), parent: Some("r".into()), length: Some(1.0) },
            JointSpec { name: "b".into(), parent: Some("a".into()), length: Some(1.0) },
        ])
        .unwrap();
        let angles = MotionSequence::new(
            Space::JointAngle,
            skel.segment_names(),
            60.0,
            vec![0.0, FRAC_PI_2, FRAC_PI_2, 0.0, FRAC_PI_2, FRAC_PI_2],
        )
        .unwrap()
        .with_root_track(vec![[0.0; 3]])
        .unwrap();
        let c = from_joint_angles(&angles, &skel).unwrap();
        let close = |p: [f64; 3], q: [f64; 3]| (0..3).all(|i| (p[i] - q[i]).abs() < 1e-15);
        assert!(close(c.point(0, 1), [1.0, 0.0, 0.0]));
        assert!(close(c.point(0, 2), [2.0, 0.0, 0.0]));
    }

    #[test]
    fn errors() {
        let skel = two_joint();
        let seq = cartesian(skel.joints(), vec![vec![[1.0; 3], [1.0; 3]]]);
        assert!(matches!(to_joint_angles(&seq, &skel), Err(Error::Kinematics(_))));

        let no_root =
            MotionSequence::new(Space::JointAngle, skel.segment_names(), 60.0, vec![1.0; 3]).unwrap();
        assert!(from_joint_angles(&no_root, &skel).is_err());

        let pose = pose_from_angles(&skel, &[PI + 1e-6, 1.0, 1.0], [0.0; 3], &[1.0]);
        assert!(pose.is_err());
        let pose = pose_from_angles(&skel, &[PI + 1e-12, 1.0, 1.0], [0.0; 3], &[1.0]);
        assert!(pose.is_ok());
    }

    #[test]
    fn skeleton_validation() {
        let cyc = Skeleton::new(vec![
            JointSpec { name: "r".into(), parent: None, length: None },
            JointSpec { name: "a".into(), parent: Some("b".into()), length: Some(1.0) },
            JointSpec { name: "b".into(), parent: Some("a".into()), length: Some(1.0) },
        ]);
        assert!(cyc.is_err());
        let two_roots = Skeleton::new(vec![
            JointSpec { name: "r".into(), parent: None, length: None },
            JointSpec { name: "s".into(), parent: None, length: None },
        ]);
        assert!(two_roots.is_err());
        let bad_len = Skeleton::new(vec![
            JointSpec { name: "r".into(), parent: None, length: None },
            JointSpec { name: "a".into(), parent: Some("r".into()), length: Some(0.0) },
        ]);
        assert!(bad_len.is_err());
        assert_eq!(Skeleton::upper_body().joints().len(), 10);
        assert_eq!(Skeleton::upper_body().segment_joints().len(), 9);
    }

    #[test]
    fn sibling_order_does_not_matter() {
        let skel = Skeleton::upper_body();
        let mut specs = skel.specs();
        specs.swap(4, 5);
        specs.swap(6, 7);
        let swapped = Skeleton::new(specs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let seq = cartesian(skel.joints(), (0..5).map(|_| random_pose(&mut rng, &skel)).collect());
        let a = from_joint_angles(&to_joint_angles(&seq, &skel).unwrap().angles, &skel).unwrap();
        let b = from_joint_angles(&to_joint_angles(&seq, &swapped).unwrap().angles, &swapped).unwrap();
        for (j, name) in skel.joints().iter().enumerate() {
            let k = b.joint_index(name).unwrap();
            for t in 0..5 {
                assert_eq!(a.point(t, j), b.point(t, k));
            }
        }
    }

    #[test]
    fn median_lengths() {
        let skel = two_joint();
        let lens = [0.9, 1.1, 0.9, 1.1];
        let seq = cartesian(skel.joints(), lens.iter().map(|&l| vec![[0.0; 3], [0.0, l, 0.0]]).collect());
        let fixed = fix_segment_lengths(&seq, &skel).unwrap();
        assert!((fixed.length(1).unwrap() - 1.0).abs() < 1e-15);

        let seq = cartesian(skel.joints(), vec![vec![[0.0; 3], [0.0, 0.0, 0.42]]; 3]);
        assert_eq!(fix_segment_lengths(&seq, &skel).unwrap().length(1), Some(0.42));

        // sort-and-pick on an odd count
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lens: Vec<f64> = (0..7).map(|_| rng.random_range(0.5..1.5)).collect();
        let seq = cartesian(skel.joints(), lens.iter().map(|&l| vec![[0.0; 3], [l, 0.0, 0.0]]).collect());
        let mut sorted = lens.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(fix_segment_lengths(&seq, &skel).unwrap().length(1), Some(sorted[3]));
    }
}
