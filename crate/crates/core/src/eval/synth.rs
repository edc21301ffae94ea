//! Seeded quasi-periodic skeleton motion with known cycle boundaries.
//!
//! Every segment points along a rest direction perturbed by the first two
//! harmonics of the cycle phase, so each cycle is one smooth loop whose
//! duration varies with the period jitter. The root sways slightly around a
//! fixed point.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kinematics::{JointSpec, Skeleton};
use crate::motion::{MotionSequence, Space};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub cycle_count: usize,
    pub base_period_frames: usize,
    /// Each cycle lasts `base * (1 + e)` frames with `e` uniform in
    /// `[-jitter, jitter]`.
    pub period_jitter_fraction: f64,
    /// Standard deviation of the Gaussian noise added to every coordinate.
    pub noise_std_cm: f64,
    /// Each frame scales every segment by `1 + e`, `e` uniform in
    /// `[-jitter, jitter]`, imitating marker placement error.
    #[serde(default)]
    pub length_jitter_fraction: f64,
    pub skeleton: Vec<JointSpec>,
    pub frame_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            cycle_count: 8,
            base_period_frames: 300,
            period_jitter_fraction: 0.1,
            noise_std_cm: 0.5,
            length_jitter_fraction: 0.0,
            skeleton: Skeleton::upper_body().specs(),
            frame_rate: 60.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cycle_count == 0 {
            return Err(invalid!("cycle_count must be at least 1"));
        }
        if self.base_period_frames < 4 {
            return Err(invalid!("base period must be at least 4 frames"));
        }
        if !(0.0..0.5).contains(&self.period_jitter_fraction) {
            return Err(invalid!("period jitter must lie in [0, 0.5), got {}", self.period_jitter_fraction));
        }
        if !(0.0..0.5).contains(&self.length_jitter_fraction) {
            return Err(invalid!("length jitter must lie in [0, 0.5), got {}", self.length_jitter_fraction));
        }
        if !(self.noise_std_cm >= 0.0) || !self.noise_std_cm.is_finite() {
            return Err(invalid!("noise must be finite and >= 0, got {}", self.noise_std_cm));
        }
        if !(self.frame_rate > 0.0) {
            return Err(invalid!("frame rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthMotion {
    pub sequence: MotionSequence,
    /// Start frame of every cycle followed by the end of the last one.
    pub boundaries: Vec<usize>,
}

/// Per-segment motion parameters.
struct SegmentPath {
    rest: [f64; 3],
    amp: [[f64; 3]; 2],
    phase: [[f64; 3]; 2],
}

impl SegmentPath {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut rest = [0.0; 3];
        for v in &mut rest {
            *v = rng.random_range(-1.0..1.0);
        }
        let n = norm(rest).max(1e-3);
        rest = rest.map(|v| v / n);
        let mut amp = [[0.0; 3]; 2];
        let mut phase = [[0.0; 3]; 2];
        for a in 0..3 {
            amp[0][a] = rng.random_range(0.2..0.5);
            amp[1][a] = rng.random_range(0.0..0.2) * amp[0][a];
            phase[0][a] = rng.random_range(0.0..TAU);
            phase[1][a] = rng.random_range(0.0..TAU);
        }
        Self { rest, amp, phase }
    }

    fn direction(&self, phi: f64) -> [f64; 3] {
        let mut d = self.rest;
        for (h, (amp, phase)) in self.amp.iter().zip(&self.phase).enumerate() {
            let w = TAU * (h + 1) as f64 * phi;
            for a in 0..3 {
                d[a] += amp[a] * (w + phase[a]).sin();
            }
        }
        let n = norm(d);
        d.map(|v| v / n)
    }
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn generate_motion(cfg: &SynthConfig) -> Result<SynthMotion> {
    cfg.validate()?;
    let skel = Skeleton::new(cfg.skeleton.clone())?;
    let lengths = skel.fixed_lengths()?;
    let segments = skel.segment_joints();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let paths: Vec<SegmentPath> = segments.iter().map(|_| SegmentPath::random(&mut rng)).collect();
    let sway_phase: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(0.0..TAU));

    let base = cfg.base_period_frames as f64;
    let j = cfg.period_jitter_fraction;
    let (shortest, longest) = ((base * (1.0 - j)).ceil(), (base * (1.0 + j)).floor());
    let mut boundaries = vec![0];
    for _ in 0..cfg.cycle_count {
        let e = if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
        let len = (base * (1.0 + e)).round().clamp(shortest, longest) as usize;
        boundaries.push(boundaries.last().unwrap() + len);
    }

    let noise = Normal::new(0.0, cfg.noise_std_cm / 100.0).map_err(|e| invalid!("noise: {e}"))?;
    let lj = cfg.length_jitter_fraction;
    let mut slot = vec![usize::MAX; skel.joints().len()];
    for (s, &jt) in segments.iter().enumerate() {
        slot[jt] = s;
    }
    let order = skel.topological_order();
    let frames = *boundaries.last().unwrap();
    let mut data = Vec::with_capacity(frames * skel.joints().len() * 3);
    let mut pos = vec![[0.0; 3]; skel.joints().len()];
    for w in boundaries.windows(2) {
        let len = (w[1] - w[0]) as f64;
        for t in 0..w[1] - w[0] {
            let phi = t as f64 / len;
            pos[skel.root()] =
                [0, 1, 2].map(|a| [0.0, 0.0, 1.0][a] + 0.02 * (TAU * phi + sway_phase[a]).sin());
            for &jt in &order[1..] {
                let s = slot[jt];
                let p = pos[skel.parent(jt).expect("non-root joints have parents")];
                let scale = if lj > 0.0 { 1.0 + rng.random_range(-lj..=lj) } else { 1.0 };
                let d = paths[s].direction(phi);
                pos[jt] = [0, 1, 2].map(|a| p[a] + lengths[s] * scale * d[a]);
            }
            for p in &pos {
                for &v in p {
                    let n = if cfg.noise_std_cm > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    data.push(v + n);
                }
            }
        }
    }
    let sequence = MotionSequence::new(Space::Cartesian, skel.joints().to_vec(), cfg.frame_rate, data)?;
    Ok(SynthMotion { sequence, boundaries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exactly_periodic_without_jitter_or_noise() {
        let cfg = SynthConfig {
            cycle_count: 3,
            base_period_frames: 50,
            period_jitter_fraction: 0.0,
            noise_std_cm: 0.0,
            ..Default::default()
        };
        let m = generate_motion(&cfg).unwrap();
        assert_eq!(m.boundaries, vec![0, 50, 100, 150]);
        for t in 0..100 {
            for (a, b) in m.sequence.frame(t).iter().zip(m.sequence.frame(t + 50)) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn jittered_lengths_stay_in_range() {
        let cfg = SynthConfig { cycle_count: 40, base_period_frames: 100, ..Default::default() };
        let m = generate_motion(&cfg).unwrap();
        let lens: Vec<usize> = m.boundaries.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(lens.iter().all(|&l| (90..=110).contains(&l)), "{lens:?}");
        assert!(lens.iter().any(|&l| l != 100));
        assert_eq!(m.sequence.frames(), *m.boundaries.last().unwrap());
    }

    #[test]
    fn deterministic_and_rigid() {
        let cfg = SynthConfig {
            cycle_count: 2,
            base_period_frames: 40,
            noise_std_cm: 0.0,
            seed: 3,
            ..Default::default()
        };
        let a = generate_motion(&cfg).unwrap();
        assert_eq!(a, generate_motion(&cfg).unwrap());
        let other = generate_motion(&SynthConfig { seed: 4, ..cfg.clone() }).unwrap();
        assert_ne!(a.sequence, other.sequence);
        let skel = Skeleton::upper_body();
        let d = crate::kinematics::segment_distances(&a.sequence, &skel).unwrap();
        let lengths = skel.fixed_lengths().unwrap();
        for (i, v) in d.iter().enumerate() {
            assert!((v - lengths[i % lengths.len()]).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let bad = [
            SynthConfig { cycle_count: 0, ..Default::default() },
            SynthConfig { period_jitter_fraction: 0.5, ..Default::default() },
            SynthConfig { noise_std_cm: -1.0, ..Default::default() },
            SynthConfig { length_jitter_fraction: -0.1, ..Default::default() },
        ];
        for c in bad {
            assert!(generate_motion(&c).is_err());
        }
    }
}
