//! Independent reference implementations shared by the integration and
//! acceptance tests. Nothing here calls the library routine it checks.
#![allow(dead_code)]

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use totr_core::kinematics::JointSpec;
use totr_core::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect();
    Tensor::new(shape, data).unwrap()
}

/// `(X'X + penalty I)^{-1} X'Y` by Cholesky.
pub fn ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, penalty: f64) -> DMatrix<f64> {
    let p = x.ncols();
    let a = x.transpose() * x + DMatrix::identity(p, p) * penalty;
    a.cholesky().expect("positive definite").solve(&(x.transpose() * y))
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

// ---------------------------------------------------------------- DTW

fn cost(q: &[f64], r: &[f64], ch: usize, i: usize, j: usize) -> f64 {
    (0..ch).map(|c| (q[i * ch + c] - r[j * ch + c]).powi(2)).sum::<f64>().sqrt()
}

/// Minimum accumulated cost over every monotone path from `(0, 0)` to
/// `(nq - 1, nr - 1)` with steps (1,0), (0,1), (1,1), found by depth-first
/// enumeration of all such paths.
pub fn dtw_enumerate(q: &[f64], r: &[f64], ch: usize) -> f64 {
    let (nq, nr) = (q.len() / ch, r.len() / ch);
    let c: Vec<f64> = (0..nq * nr).map(|k| cost(q, r, ch, k / nr, k % nr)).collect();
    let mut best = f64::INFINITY;
    let mut stack = vec![(0usize, 0usize, c[0])];
    while let Some((i, j, acc)) = stack.pop() {
        if i == nq - 1 && j == nr - 1 {
            best = best.min(acc);
            continue;
        }
        if i + 1 < nq {
            stack.push((i + 1, j, acc + c[(i + 1) * nr + j]));
        }
        if j + 1 < nr {
            stack.push((i, j + 1, acc + c[i * nr + j + 1]));
        }
        if i + 1 < nq && j + 1 < nr {
            stack.push((i + 1, j + 1, acc + c[(i + 1) * nr + j + 1]));
        }
    }
    best
}

/// Closed-end DTW by memoized recursion on the last cell.
pub fn dtw_recursive(q: &[f64], r: &[f64], ch: usize) -> f64 {
    fn go(
        i: usize,
        j: usize,
        q: &[f64],
        r: &[f64],
        ch: usize,
        memo: &mut HashMap<(usize, usize), f64>,
    ) -> f64 {
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let c = cost(q, r, ch, i, j);
        let v = match (i, j) {
            (0, 0) => c,
            (0, _) => c + go(0, j - 1, q, r, ch, memo),
            (_, 0) => c + go(i - 1, 0, q, r, ch, memo),
            _ => {
                let a = go(i - 1, j - 1, q, r, ch, memo);
                let b = go(i - 1, j, q, r, ch, memo);
                let d = go(i, j - 1, q, r, ch, memo);
                c + a.min(b).min(d)
            }
        };
        memo.insert((i, j), v);
        v
    }
    let mut memo = HashMap::new();
    go(q.len() / ch - 1, r.len() / ch - 1, q, r, ch, &mut memo)
}

/// Open-end DTW by restarting a closed-end alignment against every
/// reference prefix; ties go to the shorter prefix.
pub fn dtw_open_end_restart(q: &[f64], r: &[f64], ch: usize) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for end in 0..r.len() / ch {
        let d = dtw_recursive(q, &r[..(end + 1) * ch], ch);
        if d < best.0 {
            best = (d, end);
        }
    }
    best
}

/// Accumulated cost of an explicit path, after checking that it starts at
/// `(0, start)`, ends at the last query frame and moves by unit steps.
pub fn path_cost(q: &[f64], r: &[f64], ch: usize, path: &[(usize, usize)]) -> Result<f64, String> {
    let nq = q.len() / ch;
    if path.first().map(|p| p.0) != Some(0) || path.last().map(|p| p.0) != Some(nq - 1) {
        return Err(format!("path does not span the query: {path:?}"));
    }
    for w in path.windows(2) {
        let (di, dj) = (w[1].0 as i64 - w[0].0 as i64, w[1].1 as i64 - w[0].1 as i64);
        if !matches!((di, dj), (1, 0) | (0, 1) | (1, 1)) {
            return Err(format!("illegal step {:?} -> {:?}", w[0], w[1]));
        }
    }
    Ok(path.iter().map(|&(i, j)| cost(q, r, ch, i, j)).sum())
}

/// Every sequence over `alphabet` of length `len`, in lexicographic order.
pub fn all_sequences(alphabet: &[f64], len: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                alphabet.iter().map(move |&a| {
                    let mut t = s.clone();
                    t.push(a);
                    t
                })
            })
            .collect();
    }
    out
}

// ---------------------------------------------------------------- skeletons

/// A random tree of `joints` joints: joint `k > 0` hangs from a uniformly
/// chosen earlier joint with a length in `[0.1, 0.6]`.
pub fn random_tree(rng: &mut ChaCha8Rng, joints: usize) -> Vec<JointSpec> {
    (0..joints)
        .map(|k| JointSpec {
            name: format!("j{k}"),
            parent: (k > 0).then(|| format!("j{}", rng.random_range(0..k))),
            length: (k > 0).then(|| rng.random_range(0.1..0.6)),
        })
        .collect()
}

/// Random Cartesian poses for `specs` (listed parents first): each segment
/// gets a random direction and a per-frame length within `jitter` of its
/// nominal value.
pub fn random_poses(rng: &mut ChaCha8Rng, specs: &[JointSpec], frames: usize, jitter: f64) -> Vec<f64> {
    let index: HashMap<&str, usize> = specs.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();
    let mut data = Vec::with_capacity(frames * specs.len() * 3);
    for _ in 0..frames {
        let mut pos = vec![[0.0f64; 3]; specs.len()];
        for (k, s) in specs.iter().enumerate() {
            match &s.parent {
                None => pos[k] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0],
                Some(p) => {
                    let mut d: [f64; 3] = [0.0; 3];
                    while (d.iter().map(|v| v * v).sum::<f64>()) < 1e-4 {
                        d = [0, 1, 2].map(|_| StandardNormal.sample(&mut *rng));
                    }
                    let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let scale = if jitter > 0.0 { 1.0 + rng.random_range(-jitter..=jitter) } else { 1.0 };
                    let len = s.length.unwrap() * scale;
                    let base = pos[index[p.as_str()]];
                    pos[k] = [0, 1, 2].map(|a| base[a] + len * d[a] / n);
                }
            }
        }
        data.extend(pos.iter().flatten());
    }
    data
}

/// Per frame, `100 * sum over joints of sum over the segments between the
/// joint and the root of |fixed length - observed length|`, where the fixed
/// length is the per-segment median of the observed lengths. `data` lists
/// joints in `specs` order.
pub fn path_sum_oracle(specs: &[JointSpec], data: &[f64]) -> Vec<f64> {
    let nj = specs.len();
    let frames = data.len() / (nj * 3);
    let index: HashMap<&str, usize> = specs.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();
    let parent: Vec<Option<usize>> =
        specs.iter().map(|s| s.parent.as_ref().map(|p| index[p.as_str()])).collect();
    let dist = |t: usize, a: usize, b: usize| -> f64 {
        (0..3).map(|c| (data[(t * nj + a) * 3 + c] - data[(t * nj + b) * 3 + c]).powi(2)).sum::<f64>().sqrt()
    };
    let median = |mut v: Vec<f64>| -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    let fixed: Vec<f64> = (0..nj)
        .map(|k| parent[k].map_or(0.0, |p| median((0..frames).map(|t| dist(t, k, p)).collect())))
        .collect();
    (0..frames)
        .map(|t| {
            let mut total = 0.0;
            for k in 0..nj {
                let mut j = k;
                while let Some(p) = parent[j] {
                    total += (fixed[j] - dist(t, j, p)).abs();
                    j = p;
                }
            }
            100.0 * total
        })
        .collect()
}

// ---------------------------------------------------------------- statistics

/// Sample standard deviation (divisor `n - 1`) by the two-pass formula.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Type-7 quantile of `values` by sorting.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

// ---------------------------------------------------------------- uncertainty

/// Predictive variation recomputed from scratch: every perturbed reference
/// is extended, each model's full `L_f`-frame output window is evaluated
/// with the explicitly assembled coefficient, and the last `K_f` frames are
/// kept. Returns per model the ensemble mean and the two-pass sample std,
/// both `K_f x channels` frame-major.
pub fn variation_oracle(
    reference: &totr_core::cycle::ReferenceCycle,
    coll: &totr_core::predictor::CoefficientCollection,
    n_samples: usize,
    seed: u64,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let angles = reference.angles.data();
    let segs = reference.angles.joints().len();
    let c = segs * 3;
    let t_ref = reference.angles.frames();
    let (lf, kf) = (coll.config().past_frames(), coll.config().future_frames());

    let coefficients: Vec<Vec<f64>> = coll.entries().iter().map(|e| assemble(&e.factors, segs)).collect();
    let mut samples: Vec<Vec<Vec<f64>>> = vec![Vec::new(); coll.len()];
    let mut rng = rng(seed);
    for _ in 0..n_samples {
        let noisy: Vec<f64> = angles
            .iter()
            .zip(&reference.per_timestep_std)
            .map(|(&a, &s)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                a + s * z
            })
            .collect();
        let mut extended = noisy[(t_ref - lf) * c..].to_vec();
        extended.extend_from_slice(&noisy);
        for (m, e) in coll.entries().iter().enumerate() {
            let start = e.time_index + 1 - lf;
            let b = &coefficients[m];
            let mut out = Vec::with_capacity(kf * c);
            for n in lf - kf..lf {
                let x = &extended[(start + n) * c..(start + n + 1) * c];
                for o in 0..c {
                    out.push((0..c).map(|i| x[i] * b[i * c + o]).sum::<f64>());
                }
            }
            samples[m].push(out);
        }
    }
    samples
        .into_iter()
        .map(|s| {
            let len = s[0].len();
            let column = |k: usize| -> Vec<f64> { s.iter().map(|v| v[k]).collect() };
            let mean = (0..len).map(|k| column(k).iter().sum::<f64>() / s.len() as f64).collect();
            let std = (0..len).map(|k| sample_std(&column(k))).collect();
            (mean, std)
        })
        .collect()
}

/// Coefficient of a `[J, 3, J, 3]` CP model as a `(3J) x (3J)` matrix in
/// frame layout: entry `[(j*3 + a) * 3J + (j'*3 + a')]`.
pub fn assemble(f: &totr_core::tensor::CpFactors, joints: usize) -> Vec<f64> {
    let (u1, u2) = (&f.input()[0], &f.input()[1]);
    let (v1, v2) = (&f.output()[0], &f.output()[1]);
    let c = joints * 3;
    let mut b = vec![0.0; c * c];
    for j in 0..joints {
        for a in 0..3 {
            for jo in 0..joints {
                for ao in 0..3 {
                    let mut s = 0.0;
                    for r in 0..f.rank() {
                        s += u1[(j, r)] * u2[(a, r)] * v1[(jo, r)] * v2[(ao, r)];
                    }
                    b[(j * 3 + a) * c + jo * 3 + ao] = s;
                }
            }
        }
    }
    b
}
