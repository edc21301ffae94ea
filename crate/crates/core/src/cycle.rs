//! Splitting a recording into repetitions and averaging them into a
//! reference cycle.

use std::ops::Range;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::motion::{MotionSequence, Space};
use crate::stats;

/// Default fraction of the spectrum kept by [`smooth_signal`].
pub const DEFAULT_CUTOFF: f64 = 0.05;

/// Averaged repetition plus its per-timestep spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCycle {
    pub angles: MotionSequence,
    pub length_frames: usize,
    pub source_cycle_count: usize,
    /// Population standard deviation across the resampled cycles, in the
    /// same frame-major layout as `angles`.
    pub per_timestep_std: Vec<f64>,
}

/// Low-pass filter: zeroes every Fourier bin whose frequency index exceeds
/// `cutoff * T / 2` (rounded down; DC is always kept) and transforms back.
pub fn smooth_signal(signal: &[f64], cutoff: f64) -> Result<Vec<f64>> {
    let n = signal.len();
    if n < 4 {
        return Err(invalid!("need at least 4 samples to smooth, got {n}"));
    }
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(invalid!("cutoff must lie in (0, 1], got {cutoff}"));
    }
    let keep = (cutoff * (n / 2) as f64).floor() as usize;
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        if k.min(n - k) > keep {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    Ok(buf.iter().map(|c| c.re / n as f64).collect())
}

/// Period (in samples) of the strongest non-DC Fourier component.
pub fn dominant_period(signal: &[f64]) -> Option<f64> {
    let n = signal.len();
    if n < 4 {
        return None;
    }
    let m = stats::mean(signal);
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v - m, 0.0)).collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    let (k, power) =
        (1..=n / 2)
            .map(|k| (k, buf[k].norm_sqr()))
            .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    (k > 0 && power > 0.0).then(|| n as f64 / k as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleDetection {
    pub peaks_per_cycle: usize,
    /// Peaks must exceed `mean + threshold_std * std` of the signal.
    pub threshold_std: f64,
    /// Minimum spacing between peaks; defaults to a quarter of the
    /// signal's dominant period.
    pub min_distance: Option<usize>,
}

impl CycleDetection {
    pub fn new(peaks_per_cycle: usize) -> Self {
        Self { peaks_per_cycle, threshold_std: 0.5, min_distance: None }
    }
}

/// Local maxima above the adaptive threshold, thinned to the minimum spacing
/// (taller peaks win), in time order.
pub fn find_peaks(signal: &[f64], cfg: &CycleDetection) -> Vec<usize> {
    let n = signal.len();
    if n < 3 {
        return Vec::new();
    }
    let mean = stats::mean(signal);
    let threshold = mean + cfg.threshold_std * stats::population_std(signal);
    let min_distance = cfg
        .min_distance
        .unwrap_or_else(|| dominant_period(signal).map(|p| (0.25 * p).floor() as usize).unwrap_or(1));
    let mut candidates: Vec<usize> = (1..n - 1)
        .filter(|&i| signal[i] > signal[i - 1] && signal[i] >= signal[i + 1] && signal[i] > threshold)
        .collect();
    candidates.sort_by(|&a, &b| signal[b].total_cmp(&signal[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| k.abs_diff(c) >= min_distance.max(1)) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}

/// Splits a smoothed signal into complete cycles.
///
/// Peaks are grouped `peaks_per_cycle` at a time. A cycle starts at the last
/// frame at or below the signal mean before its first peak (where the
/// signal rises through its midline) and ends where the next cycle starts.
/// When the signal does not dip below the midline between two groups the
/// lowest frame between them is used instead. The first cycle needs a
/// midline frame before its first peak and the last one needs the signal to
/// fall back to the midline after its closing peak, in which case it runs to
/// the end of the signal; otherwise they are dropped as incomplete.
pub fn detect_cycles(signal: &[f64], cfg: &CycleDetection) -> Result<Vec<Range<usize>>> {
    if cfg.peaks_per_cycle == 0 {
        return Err(invalid!("peaks_per_cycle must be at least 1"));
    }
    let peaks = find_peaks(signal, cfg);
    let k = cfg.peaks_per_cycle;
    if peaks.len() < k {
        return Err(Error::Segmentation(format!("found {} peaks, one cycle needs {k}", peaks.len())));
    }
    let n = signal.len();
    let mid = stats::mean(signal) + 1e-9 * stats::population_std(signal);
    let below = |t: usize| signal[t] <= mid;

    // Boundary between a group ending at `prev` and one starting at `next`.
    let between = |prev: usize, next: usize| -> usize {
        (prev + 1..next).rev().find(|&t| below(t)).unwrap_or_else(|| {
            (prev + 1..next).min_by(|&a, &b| signal[a].total_cmp(&signal[b])).unwrap_or(next)
        })
    };

    let groups = peaks.len() / k;
    let mut out = Vec::new();
    for g in 0..groups {
        let first = peaks[g * k];
        let last = peaks[g * k + k - 1];
        let start = if g == 0 {
            match (0..first).rev().find(|&t| below(t)) {
                Some(t) => t,
                None => continue,
            }
        } else {
            between(peaks[g * k - 1], first)
        };
        let end = match peaks.get((g + 1) * k) {
            Some(&next) => between(last, next),
            None => {
                if (last + 1..n).any(below) {
                    n
                } else {
                    continue;
                }
            }
        };
        if end > start {
            out.push(start..end);
        }
    }
    if out.is_empty() {
        return Err(Error::Segmentation("no complete cycle found".into()));
    }
    Ok(out)
}

/// Median cycle length, rounded to the nearest frame.
pub fn median_length(cycles: &[Range<usize>]) -> usize {
    let lens: Vec<f64> = cycles.iter().map(|r| r.len() as f64).collect();
    stats::median(&lens).round() as usize
}

/// Linear interpolation of every channel (and the root track) onto
/// `target_frames` equispaced points spanning the cycle; both endpoints are
/// reproduced exactly.
pub fn resample_cycle(cycle: &MotionSequence, target_frames: usize) -> Result<MotionSequence> {
    if target_frames < 2 {
        return Err(invalid!("target length must be at least 2, got {target_frames}"));
    }
    let frames = cycle.frames();
    if frames < 2 {
        return Err(invalid!("a cycle needs at least 2 frames, got {frames}"));
    }
    if frames == target_frames {
        return Ok(cycle.clone());
    }
    let c = cycle.channels();
    let step = (frames - 1) as f64 / (target_frames - 1) as f64;
    let sample_at = |j: usize| -> (usize, f64) {
        if j == target_frames - 1 {
            return (frames - 1, 0.0);
        }
        let pos = j as f64 * step;
        let lo = (pos.floor() as usize).min(frames - 2);
        (lo, pos - lo as f64)
    };
    let mut data = Vec::with_capacity(target_frames * c);
    for j in 0..target_frames {
        let (lo, frac) = sample_at(j);
        let a = cycle.frame(lo);
        if frac == 0.0 {
            data.extend_from_slice(a);
        } else {
            let b = cycle.frame(lo + 1);
            data.extend(a.iter().zip(b).map(|(&x, &y)| x + frac * (y - x)));
        }
    }
    let out = MotionSequence::new(cycle.space(), cycle.joints().to_vec(), cycle.frame_rate(), data)?;
    match cycle.root_track() {
        Some(track) => {
            let resampled = (0..target_frames)
                .map(|j| {
                    let (lo, frac) = sample_at(j);
                    let a = track[lo];
                    if frac == 0.0 {
                        a
                    } else {
                        let b = track[lo + 1];
                        [0, 1, 2].map(|i| a[i] + frac * (b[i] - a[i]))
                    }
                })
                .collect();
            out.with_root_track(resampled)
        }
        None => Ok(out),
    }
}

/// Resamples every cycle to `target_frames` and takes the per-timestep mean
/// and population standard deviation.
pub fn build_reference(cycles: &[MotionSequence], target_frames: usize) -> Result<ReferenceCycle> {
    let first = cycles.first().ok_or_else(|| invalid!("need at least one cycle"))?;
    if first.space() != Space::JointAngle {
        return Err(shape_err!("reference cycles must be joint angles"));
    }
    for c in cycles {
        first.check_layout(c)?;
    }
    let resampled = cycles.iter().map(|c| resample_cycle(c, target_frames)).collect::<Result<Vec<_>>>()?;
    let n = resampled.len() as f64;
    let len = resampled[0].data().len();
    let mut mean = vec![0.0; len];
    for r in &resampled {
        for (m, v) in mean.iter_mut().zip(r.data()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; len];
    for r in &resampled {
        for ((s, v), m) in var.iter_mut().zip(r.data()).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    let std: Vec<f64> = var.into_iter().map(|s| (s / n).sqrt()).collect();

    let mut angles =
        MotionSequence::new(Space::JointAngle, first.joints().to_vec(), first.frame_rate(), mean)?;
    if resampled.iter().all(|r| r.root_track().is_some()) {
        let mut track = vec![[0.0; 3]; target_frames];
        for r in &resampled {
            for (acc, p) in track.iter_mut().zip(r.root_track().unwrap()) {
                for i in 0..3 {
                    acc[i] += p[i] / n;
                }
            }
        }
        angles = angles.with_root_track(track)?;
    }
    Ok(ReferenceCycle {
        angles,
        length_frames: target_frames,
        source_cycle_count: cycles.len(),
        per_timestep_std: std,
    })
}

/// Prepends the last `l_frames` frames of `seq` to it.
pub fn wrap_extend(seq: &MotionSequence, l_frames: usize) -> Result<MotionSequence> {
    let t = seq.frames();
    if l_frames > t {
        return Err(invalid!("cannot extend a {t}-frame reference by {l_frames} frames"));
    }
    let head = seq.slice(t - l_frames..t)?;
    MotionSequence::concat(&[&head, seq])
}

/// The reference with its last `l_frames` frames duplicated at the front.
pub fn extend_reference(reference: &ReferenceCycle, l_frames: usize) -> Result<MotionSequence> {
    wrap_extend(&reference.angles, l_frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sine(period: f64, n: usize) -> Vec<f64> {
        (0..n).map(|t| (2.0 * PI * t as f64 / period).sin()).collect()
    }

    fn angle_seq(data: Vec<f64>) -> MotionSequence {
        MotionSequence::new(Space::JointAngle, vec!["j".into()], 60.0, data).unwrap()
    }

    #[test]
    fn smoothing_keeps_in_band_content() {
        let s = sine(100.0, 400);
        let out = smooth_signal(&s, 0.05).unwrap();
        for (a, b) in out.iter().zip(&s) {
            assert!((a - b).abs() < 1e-9);
        }
        let c = vec![2.5; 64];
        for v in smooth_signal(&c, 0.1).unwrap() {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_removes_out_of_band_content() {
        // Bins 4 and 50 of a 400-sample window; cutoff keeps bins <= 10.
        let low = sine(100.0, 400);
        let high: Vec<f64> = (0..400).map(|t| 0.3 * (2.0 * PI * 50.0 * t as f64 / 400.0).cos()).collect();
        let mixed: Vec<f64> = low.iter().zip(&high).map(|(a, b)| a + b).collect();
        let out = smooth_signal(&mixed, 0.05).unwrap();
        for (a, b) in out.iter().zip(&low) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(smooth_signal(&[1.0, 2.0, 3.0], 0.5).is_err());
        assert!(smooth_signal(&mixed, 0.0).is_err());
    }

    #[test]
    fn sine_cycles() {
        let s = smooth_signal(&sine(100.0, 400), 0.05).unwrap();
        let one = detect_cycles(&s, &CycleDetection::new(1)).unwrap();
        assert_eq!(one.len(), 4);
        for r in &one {
            assert!((r.len() as i64 - 100).abs() <= 1, "{r:?}");
        }
        let two = detect_cycles(&s, &CycleDetection::new(2)).unwrap();
        assert_eq!(two.len(), 2);
        for r in &two {
            assert!((r.len() as i64 - 200).abs() <= 1, "{r:?}");
        }
        for w in one.windows(2) {
            assert!(w[0].end <= w[1].start);
        }
        assert!(detect_cycles(&s, &CycleDetection::new(5)).is_err());
    }

    #[test]
    fn jittered_cycles_found_near_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // Lead-in from a trough, then cycles whose rising midline crossing is
        // the true boundary.
        let mut signal: Vec<f64> = (0..25).map(|t| (2.0 * PI * (t as f64 - 25.0) / 100.0).sin()).collect();
        let mut bounds = vec![signal.len()];
        for _ in 0..6 {
            let len = (100.0 * (1.0 + rng.random_range(-0.1f64..0.1))).round() as usize;
            signal.extend((0..len).map(|t| (2.0 * PI * t as f64 / len as f64).sin()));
            bounds.push(signal.len());
        }
        let smooth = smooth_signal(&signal, 0.1).unwrap();
        let cycles = detect_cycles(&smooth, &CycleDetection::new(1)).unwrap();
        assert_eq!(cycles.len(), 6);
        for (c, w) in cycles.iter().zip(bounds.windows(2)) {
            assert!(c.start.abs_diff(w[0]) <= 5, "{c:?} vs {w:?}");
            assert!(c.end.abs_diff(w[1]) <= 5, "{c:?} vs {w:?}");
        }
    }

    #[test]
    fn resample_cases() {
        let ramp = angle_seq((0..30).map(|t| 0.1 * t as f64 / 10.0).collect());
        assert_eq!(resample_cycle(&ramp, 10).unwrap(), ramp);
        let r = resample_cycle(&ramp, 17).unwrap();
        assert_eq!(r.frames(), 17);
        assert_eq!(r.data()[0], ramp.data()[0]);
        assert_eq!(r.data()[50], ramp.data()[29]);
        let d = r.data();
        let step = d[3] - d[0];
        for t in 1..17 {
            assert!((d[t * 3] - d[(t - 1) * 3] - step).abs() < 1e-12);
        }
        assert!(resample_cycle(&ramp, 1).is_err());

        let s: Vec<f64> = (0..100)
            .flat_map(|t| {
                let v = 1.5 + (2.0 * PI * t as f64 / 99.0).sin();
                [v, v, v]
            })
            .collect();
        let seq = angle_seq(s);
        let back = resample_cycle(&resample_cycle(&seq, 150).unwrap(), 100).unwrap();
        for t in 0..100 {
            let expected = 1.5 + (2.0 * PI * t as f64 / 99.0).sin();
            assert!((back.get(t, 0, 0) - expected).abs() < 1e-2);
        }
    }

    #[test]
    fn reference_statistics() {
        let base: Vec<f64> = (0..30).map(|i| 1.0 + 0.01 * i as f64).collect();
        let single = build_reference(&[angle_seq(base.clone())], 10).unwrap();
        assert_eq!(single.angles.data(), &base[..]);
        assert!(single.per_timestep_std.iter().all(|&s| s == 0.0));

        let delta = 0.125;
        let up = angle_seq(base.iter().map(|v| v + delta).collect());
        let down = angle_seq(base.iter().map(|v| v - delta).collect());
        let r = build_reference(&[up, down], 10).unwrap();
        for (a, b) in r.angles.data().iter().zip(&base) {
            assert!((a - b).abs() < 1e-15);
        }
        for s in &r.per_timestep_std {
            assert!((s - delta).abs() < 1e-15);
        }
        assert!(build_reference(&[], 10).is_err());

        let cart = MotionSequence::new(Space::Cartesian, vec!["j".into()], 60.0, base.clone()).unwrap();
        assert!(build_reference(&[angle_seq(base), cart], 10).is_err());
    }

    #[test]
    fn extension_index_arithmetic() {
        let data: Vec<f64> = (0..4200 * 3).map(|i| (i % 300) as f64 / 100.0).collect();
        let reference = build_reference(&[angle_seq(data)], 4200).unwrap();
        assert_eq!(extend_reference(&reference, 0).unwrap(), reference.angles);
        let ext = extend_reference(&reference, 240).unwrap();
        assert_eq!(ext.frames(), 4440);
        assert_eq!(ext.frame(0), reference.angles.frame(3960));
        assert_eq!(ext.slice(240..4440).unwrap(), reference.angles);
        let full = extend_reference(&reference, 4200).unwrap();
        assert_eq!(full.slice(0..4200).unwrap(), reference.angles);
        assert!(extend_reference(&reference, 4201).is_err());
    }
}
