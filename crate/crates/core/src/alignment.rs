//! Dynamic time warping with the symmetric unit-weight step pattern
//! `{(1,0), (0,1), (1,1)}` and Euclidean per-frame cost.
//!
//! Sequences are flat frame-major slices with a channel count.

use crate::error::{invalid, shape_err, Result};
use crate::motion::MotionSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    /// Accumulated cost along the optimal path.
    pub distance: f64,
    /// `(query_frame, reference_frame)` pairs from the first to the last query frame.
    pub path: Vec<(usize, usize)>,
    /// Reference frame paired with the last query frame.
    pub matched_end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DtwOptions {
    /// The query may start at any reference frame.
    pub open_begin: bool,
    /// The query may end at any reference frame.
    pub open_end: bool,
    /// Sakoe-Chiba half-width around the diagonal of the cost matrix, in
    /// reference frames. Ignored with `open_begin`.
    pub band: Option<usize>,
}

fn frame_cost(q: &[f64], r: &[f64]) -> f64 {
    q.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn check(query: &[f64], reference: &[f64], channels: usize) -> Result<(usize, usize)> {
    if channels == 0 {
        return Err(invalid!("channel count must be positive"));
    }
    if query.is_empty() || reference.is_empty() {
        return Err(invalid!("cannot align an empty sequence"));
    }
    if !query.len().is_multiple_of(channels) || !reference.len().is_multiple_of(channels) {
        return Err(shape_err!(
            "sequence lengths {} and {} are not multiples of {} channels",
            query.len(),
            reference.len(),
            channels
        ));
    }
    Ok((query.len() / channels, reference.len() / channels))
}

/// Closed-begin alignment; `open_end` frees the final reference frame.
pub fn dtw(query: &[f64], reference: &[f64], channels: usize, open_end: bool) -> Result<WarpResult> {
    dtw_with(query, reference, channels, &DtwOptions { open_end, ..Default::default() })
}

/// Full alignment with path. Ties between equal-cost end frames go to the
/// smaller reference index; ties while tracing back prefer the diagonal,
/// then the query step, then the reference step.
pub fn dtw_with(query: &[f64], reference: &[f64], channels: usize, opts: &DtwOptions) -> Result<WarpResult> {
    let (nq, nr) = check(query, reference, channels)?;
    let frame = |s: &[f64], i: usize| -> Vec<f64> { s[i * channels..(i + 1) * channels].to_vec() };
    let allowed = |i: usize, j: usize| -> bool {
        match opts.band {
            Some(w) if !opts.open_begin => {
                let diag = if nq > 1 { i as f64 * (nr - 1) as f64 / (nq - 1) as f64 } else { 0.0 };
                (j as f64 - diag).abs() <= w as f64
            }
            _ => true,
        }
    };

    let mut acc = vec![f64::INFINITY; nq * nr];
    let at = |i: usize, j: usize| i * nr + j;
    for i in 0..nq {
        let q = frame(query, i);
        for j in 0..nr {
            if !allowed(i, j) {
                continue;
            }
            let c = frame_cost(&q, &reference[j * channels..(j + 1) * channels]);
            let best = if i == 0 {
                if opts.open_begin || j == 0 {
                    0.0
                } else {
                    acc[at(0, j - 1)]
                }
            } else {
                let mut b = acc[at(i - 1, j)];
                if j > 0 {
                    b = b.min(acc[at(i - 1, j - 1)]).min(acc[at(i, j - 1)]);
                }
                b
            };
            acc[at(i, j)] = c + best;
        }
    }

    let last = nq - 1;
    let end = if opts.open_end {
        (0..nr).fold(0, |best, j| if acc[at(last, j)] < acc[at(last, best)] { j } else { best })
    } else {
        nr - 1
    };
    let distance = acc[at(last, end)];
    if !distance.is_finite() {
        return Err(invalid!("band too narrow: no admissible warping path"));
    }

    let mut path = vec![(last, end)];
    let (mut i, mut j) = (last, end);
    while i > 0 || (j > 0 && !opts.open_begin) {
        let (ni, nj) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[at(i - 1, j - 1)];
            let up = acc[at(i - 1, j)];
            let left = acc[at(i, j - 1)];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        i = ni;
        j = nj;
        path.push((i, j));
    }
    path.reverse();
    Ok(WarpResult { distance, path, matched_end: end })
}

/// Cost and end frame of the best free-start, free-end match of `query`
/// inside `reference`. Same recursion as [`dtw_with`] but keeps only two
/// rows, so it runs in `O(reference)` memory.
pub fn subsequence_match(query: &[f64], reference: &[f64], channels: usize) -> Result<(f64, usize)> {
    let (nq, nr) = check(query, reference, channels)?;
    let mut prev = vec![0.0f64; nr];
    let mut cur = vec![0.0f64; nr];
    for i in 0..nq {
        let q = &query[i * channels..(i + 1) * channels];
        for j in 0..nr {
            let c = frame_cost(q, &reference[j * channels..(j + 1) * channels]);
            let best = if i == 0 {
                0.0
            } else if j == 0 {
                prev[0]
            } else {
                prev[j].min(prev[j - 1]).min(cur[j - 1])
            };
            cur[j] = c + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let end = (0..nr).fold(0, |best, j| if prev[j] < prev[best] { j } else { best });
    Ok((prev[end], end))
}

/// Reference frame matching the last frame of `window`, by free-start,
/// free-end alignment against `extended_ref`.
pub fn locate_in_reference(window: &MotionSequence, extended_ref: &MotionSequence) -> Result<usize> {
    window.check_layout(extended_ref)?;
    if window.frames() > extended_ref.frames() {
        return Err(shape_err!(
            "window of {} frames is longer than the {}-frame reference",
            window.frames(),
            extended_ref.frames()
        ));
    }
    let (_, end) = subsequence_match(window.data(), extended_ref.data(), window.channels())?;
    Ok(end)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_alignment_is_free_and_diagonal() {
        let s = [0.0, 1.0, 3.0, 2.0, 2.0, 5.0];
        let w = dtw(&s, &s, 1, false).unwrap();
        assert_eq!(w.distance, 0.0);
        assert_eq!(w.matched_end, 5);
        assert_eq!(w.path, (0..6).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn open_end_tie_goes_to_smallest_index() {
        let q = [2.0, 2.0, 2.0];
        let r = [2.0, 2.0, 2.0, 2.0, 2.0, 7.0];
        let w = dtw(&q, &r, 1, true).unwrap();
        assert_eq!(w.distance, 0.0);
        assert_eq!(w.matched_end, 0);
    }

    #[test]
    fn path_steps_are_monotone() {
        let q = [0.0, 0.0, 1.0, 2.0, 2.0, 1.0, 0.0];
        let r = [0.0, 1.0, 1.0, 2.0, 1.0];
        for open_end in [false, true] {
            let w = dtw(&q, &r, 1, open_end).unwrap();
            assert_eq!(w.path[0], (0, 0));
            assert_eq!(w.path.last().unwrap().0, q.len() - 1);
            for s in w.path.windows(2) {
                let d = (s[1].0 - s[0].0, s[1].1 - s[0].1);
                assert!(matches!(d, (1, 0) | (0, 1) | (1, 1)));
            }
        }
    }

    #[test]
    fn multichannel_and_errors() {
        let q = [0.0, 0.0, 3.0, 4.0];
        let r = [0.0, 0.0];
        let w = dtw(&q, &r, 2, false).unwrap();
        assert_eq!(w.distance, 5.0);
        assert!(dtw(&q, &[0.0, 0.0, 0.0], 2, false).is_err());
        assert!(dtw(&[], &r, 2, false).is_err());
    }

    #[test]
    fn band_restricts_path() {
        let q = [0.0, 1.0, 2.0, 3.0];
        let r = [0.0, 1.0, 2.0, 3.0];
        let w = dtw_with(&q, &r, 1, &DtwOptions { band: Some(0), ..Default::default() }).unwrap();
        assert_eq!(w.distance, 0.0);
        assert!(w.path.iter().all(|(i, j)| i == j));
    }

    #[test]
    fn subsequence_matches_full_variant() {
        let q = [1.0, 2.0, 3.0];
        let r = [0.0, 5.0, 1.0, 2.0, 3.0, 9.0, 1.0];
        let full = dtw_with(&q, &r, 1, &DtwOptions { open_begin: true, open_end: true, band: None }).unwrap();
        let (d, end) = subsequence_match(&q, &r, 1).unwrap();
        assert_eq!(d, full.distance);
        assert_eq!(end, full.matched_end);
        assert_eq!(end, 4);
        assert_eq!(full.path[0], (0, 2));
    }
}
