//! Prediction uncertainty: ensembles of perturbed references pushed through
//! the fitted models, Gibbs posterior predictive intervals, and their
//! summaries as per-axis bands and per-joint spheres.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cycle::{wrap_extend, ReferenceCycle};
use crate::error::{invalid, shape_err, Result};
use crate::kinematics::{pose_from_angles, Skeleton};
use crate::motion::{MotionSequence, Space};
use crate::predictor::{CoefficientCollection, PredictionFrame};
use crate::regression::{self, gibbs_sample, GibbsConfig, RegressionConfig};
use crate::stats;
use crate::tensor::Tensor;

pub const DEFAULT_SAMPLES: usize = 1000;

/// Band widths are these multiples of the standard deviation.
pub const LEVELS: [f64; 3] = [1.0, 2.0, 3.0];

/// Per-frame, per-joint, per-axis standard deviations, frame-major like
/// [`MotionSequence`].
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyBand {
    joints: Vec<String>,
    std: Vec<f64>,
}

impl UncertaintyBand {
    pub fn new(joints: Vec<String>, std: Vec<f64>) -> Result<Self> {
        if joints.is_empty() || !std.len().is_multiple_of(joints.len() * 3) {
            return Err(shape_err!(
                "{} deviations do not divide into frames of {} joints x 3",
                std.len(),
                joints.len()
            ));
        }
        if let Some(bad) = std.iter().find(|s| !(**s >= 0.0)) {
            return Err(invalid!("standard deviation {bad} is negative or NaN"));
        }
        Ok(Self { joints, std })
    }

    pub fn joints(&self) -> &[String] {
        &self.joints
    }

    pub fn frames(&self) -> usize {
        self.std.len() / (self.joints.len() * 3)
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    /// Half-width `level * std` of every entry.
    pub fn half_width(&self, level: f64) -> Vec<f64> {
        self.std.iter().map(|s| level * s).collect()
    }

    /// `frames x joints`: the largest per-axis half-width at `level`.
    pub fn sphere_radius(&self, level: f64) -> Vec<f64> {
        sphere_radii(&self.half_width(level))
    }
}

/// Maximum over each consecutive triple of axis values.
pub fn sphere_radii(per_axis: &[f64]) -> Vec<f64> {
    per_axis.chunks_exact(3).map(|c| c[0].max(c[1]).max(c[2])).collect()
}

/// Ensemble spread of one model's prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBand {
    pub model_index: usize,
    pub time_index: usize,
    /// Ensemble mean of the predicted angles, `K_f x channels`.
    pub mean: Vec<f64>,
    pub band: UncertaintyBand,
}

/// Welford accumulator over equally shaped vectors.
struct Moments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self { n: 0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    /// Sample standard deviation (divides by `n - 1`).
    fn std(&self) -> Vec<f64> {
        let denom = (self.n - 1) as f64;
        self.m2.iter().map(|s| (s.max(0.0) / denom).sqrt()).collect()
    }
}

/// Perturbs the reference `n_samples` times with `std * N(0, 1)` noise per
/// frame, joint and axis, extends each copy like the training reference and
/// pushes it through every model. Returns each model's per-entry sample
/// standard deviation over its `K_f` predicted frames.
///
/// Noise is drawn sample by sample in frame-major order from a ChaCha8
/// stream seeded with `seed`.
pub fn predictive_variation(
    reference: &ReferenceCycle,
    coll: &CoefficientCollection,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<ModelBand>> {
    if n_samples < 2 {
        return Err(invalid!("predictive variation needs at least 2 samples, got {n_samples}"));
    }
    let angles = &reference.angles;
    if reference.per_timestep_std.len() != angles.data().len() {
        return Err(shape_err!(
            "per-timestep std has {} entries, reference has {}",
            reference.per_timestep_std.len(),
            angles.data().len()
        ));
    }
    if angles.joints() != coll.joints() {
        return Err(shape_err!("reference and collection use different joints"));
    }
    let cfg = coll.config();
    let (lf, kf) = (cfg.past_frames(), cfg.future_frames());
    let c = angles.channels();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut moments: Vec<Moments> = (0..coll.len()).map(|_| Moments::new(kf * c)).collect();
    for _ in 0..n_samples {
        let noisy: Vec<f64> = angles
            .data()
            .iter()
            .zip(&reference.per_timestep_std)
            .map(|(&a, &s)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                a + s * z
            })
            .collect();
        // Perturbed angles may leave [0, pi]; the linear model takes them as is.
        let copy = MotionSequence::new_unchecked(
            Space::JointAngle,
            angles.joints().to_vec(),
            angles.frame_rate(),
            noisy,
        );
        let extended = wrap_extend(&copy, lf)?;
        for (acc, entry) in moments.iter_mut().zip(coll.entries()) {
            // Frame n of the output depends on frame n of the input only,
            // so the last K_f input frames give the predicted frames.
            let x = extended.window_tensor(entry.time_index + 1 - kf, kf)?;
            let y = regression::predict(&x, &entry.factors)?;
            acc.push(&MotionSequence::frames_from_tensor(&y)?);
        }
    }
    coll.entries()
        .iter()
        .enumerate()
        .zip(moments)
        .map(|((i, e), m)| {
            Ok(ModelBand {
                model_index: i,
                time_index: e.time_index,
                band: UncertaintyBand::new(angles.joints().to_vec(), m.std())?,
                mean: m.mean,
            })
        })
        .collect()
}

/// Posterior predictive summary of every entry of `x_new`'s response.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorBand {
    pub mean: Tensor,
    /// Sample standard deviation over the draws.
    pub std: Tensor,
    pub lower: Tensor,
    pub upper: Tensor,
    pub credibility: f64,
}

impl PosteriorBand {
    /// Half-width of each credible interval.
    pub fn half_width(&self) -> Vec<f64> {
        self.upper.data().iter().zip(self.lower.data()).map(|(u, l)| 0.5 * (u - l)).collect()
    }

    /// Axis-maximum interval half-width per observation and joint, for a
    /// response of shape `N x joints x 3`; laid out `N x joints`.
    pub fn sphere_radii(&self) -> Result<Vec<f64>> {
        let shape = self.upper.shape();
        if shape.len() != 3 || shape[2] != 3 {
            return Err(shape_err!("sphere radii need an N x joints x 3 response, got {:?}", shape));
        }
        let frame_major =
            MotionSequence::frames_from_tensor(&Tensor::new(shape.to_vec(), self.half_width())?)?;
        Ok(sphere_radii(&frame_major))
    }
}

/// Runs the Gibbs sampler and summarizes every response entry by its sample
/// mean and the equal-tailed interval holding `credibility` of the draws.
pub fn posterior_predictive(
    x: &Tensor,
    y: &Tensor,
    cfg: &RegressionConfig,
    gibbs: &GibbsConfig,
    x_new: &Tensor,
    credibility: f64,
) -> Result<PosteriorBand> {
    if !(0.0..=1.0).contains(&credibility) {
        return Err(invalid!("credibility must lie in [0, 1], got {credibility}"));
    }
    let draws = gibbs_sample(x, y, cfg, gibbs, x_new)?;
    let shape = draws[0].shape().to_vec();
    let len = draws[0].len();
    let n = draws.len();
    let (lo_p, hi_p) = ((1.0 - credibility) / 2.0, (1.0 + credibility) / 2.0);
    let mut mean = Vec::with_capacity(len);
    let mut std = Vec::with_capacity(len);
    let mut lower = Vec::with_capacity(len);
    let mut upper = Vec::with_capacity(len);
    let mut column = Vec::with_capacity(n);
    for i in 0..len {
        column.clear();
        column.extend(draws.iter().map(|d| d.data()[i]));
        let m = stats::mean(&column);
        let var =
            if n > 1 { column.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        let sorted = stats::sorted(&column);
        mean.push(m);
        std.push(var.sqrt());
        lower.push(stats::quantile_sorted(&sorted, lo_p));
        upper.push(stats::quantile_sorted(&sorted, hi_p));
    }
    Ok(PosteriorBand {
        mean: Tensor::new(shape.clone(), mean)?,
        std: Tensor::new(shape.clone(), std)?,
        lower: Tensor::new(shape.clone(), lower)?,
        upper: Tensor::new(shape, upper)?,
        credibility,
    })
}

/// Coordinate-space deviations of the band edges, per level.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateBand {
    /// Every skeleton joint.
    pub joints: Vec<String>,
    /// For each entry of [`LEVELS`], `frames x joints x 3` absolute
    /// deviations of the farther edge from the back-transformed center.
    pub deviation: Vec<Vec<f64>>,
}

impl CoordinateBand {
    pub fn frames(&self) -> usize {
        self.deviation[0].len() / (self.joints.len() * 3)
    }

    /// `frames x joints` radii for level index `level` (into [`LEVELS`]).
    pub fn sphere_radius(&self, level: usize) -> Vec<f64> {
        sphere_radii(&self.deviation[level])
    }
}

/// Moves every angle of a center frame to `center +- level * std` (clamped
/// to `[0, pi]`), back-transforms both edges with the skeleton's fixed
/// lengths from the center's root position, and records per joint and axis
/// the larger distance of the two edges from the center pose.
pub fn band_to_coordinates(
    band: &UncertaintyBand,
    center: &[PredictionFrame],
    skel: &Skeleton,
) -> Result<CoordinateBand> {
    if band.frames() != center.len() {
        return Err(shape_err!("band has {} frames, center has {}", band.frames(), center.len()));
    }
    if band.joints() != skel.segment_names() {
        return Err(shape_err!(
            "band channels {:?} do not match skeleton segments {:?}",
            band.joints(),
            skel.segment_names()
        ));
    }
    let lengths = skel.fixed_lengths()?;
    let c = band.joints().len() * 3;
    let root = skel.root();
    let mut deviation = vec![Vec::with_capacity(center.len() * skel.joints().len() * 3); LEVELS.len()];
    for (t, frame) in center.iter().enumerate() {
        if frame.angles.len() != c || frame.coordinates.len() != skel.joints().len() {
            return Err(shape_err!("center frame {t} does not match the skeleton"));
        }
        let std = &band.std()[t * c..(t + 1) * c];
        let origin = frame.coordinates[root];
        let base = pose_from_angles(skel, &frame.angles, origin, &lengths)?;
        for (li, &level) in LEVELS.iter().enumerate() {
            let edge = |sign: f64| -> Result<Vec<[f64; 3]>> {
                let shifted: Vec<f64> = frame
                    .angles
                    .iter()
                    .zip(std)
                    .map(|(a, s)| (a + sign * level * s).clamp(0.0, std::f64::consts::PI))
                    .collect();
                pose_from_angles(skel, &shifted, origin, &lengths)
            };
            let (hi, lo) = (edge(1.0)?, edge(-1.0)?);
            for j in 0..base.len() {
                for a in 0..3 {
                    let d = (hi[j][a] - base[j][a]).abs().max((lo[j][a] - base[j][a]).abs());
                    deviation[li].push(d);
                }
            }
        }
    }
    Ok(CoordinateBand { joints: skel.joints().to_vec(), deviation })
}
