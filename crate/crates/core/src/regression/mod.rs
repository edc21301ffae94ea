//! Penalized CP-constrained tensor-on-tensor regression.
//!
//! The model is `Y = <X, B>_L + E` with `X` of shape `N x P_1 x .. x P_L`,
//! `Y` of shape `N x Q_1 x .. x Q_M` and `B` a rank-`R` CP tensor. Fitting
//! minimizes `||Y - <X, B>_L||_F^2 + penalty * ||B||_F^2` by alternating
//! least squares: every factor matrix in turn is replaced by the exact
//! minimizer of the objective with all other factors held fixed.
//!
//! For an input factor `U_l` the prediction is linear in `vec(U_l)`
//! (column-major, `P_l` fastest) through a design matrix `C` whose block for
//! component `r` is `Z_r (x) v_r`, where `Z_r = X` contracted against the
//! `r`-th columns of the other input factors and `v_r` is the `r`-th column of
//! the Khatri-Rao product of the output factors. The penalty is
//! `vec(U_l)' (W (x) I) vec(U_l)` with `W` the Hadamard product of the Gram
//! matrices of all other factors, giving
//! `(C'C + penalty * W (x) I) vec(U_l) = C' vec(Y)`.
//!
//! For an output factor `V_m` the mode-`m` unfolding of the prediction is
//! `V_m D'`, with `D` the Khatri-Rao product of `X`'s input contraction and the
//! other output factors, so `(D'D + penalty * W) V_m' = D' Y_(m)'`.

mod gibbs;

pub use gibbs::{gibbs_sample, GibbsConfig};

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::{contracted_product, khatri_rao, CpFactors, Tensor};

/// Pivots (and eigenvalues) below this fraction of the largest diagonal entry
/// count as zero.
const SINGULAR_RTOL: f64 = 1e-13;

/// Which block of factors a sweep visits first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOrder {
    #[default]
    InputsFirst,
    OutputsFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    pub rank: usize,
    pub penalty: f64,
    pub max_sweeps: usize,
    /// Relative objective decrease below which a fit is considered converged.
    pub tolerance: f64,
    pub seed: u64,
    #[serde(default)]
    pub sweep_order: SweepOrder,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            rank: 13,
            penalty: 50.0,
            max_sweeps: 500,
            tolerance: 1e-8,
            seed: 0,
            sweep_order: SweepOrder::InputsFirst,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(invalid!("rank must be at least 1"));
        }
        if !(self.penalty >= 0.0) || !self.penalty.is_finite() {
            return Err(invalid!("penalty must be finite and >= 0, got {}", self.penalty));
        }
        if !(self.tolerance > 0.0) {
            return Err(invalid!("tolerance must be > 0, got {}", self.tolerance));
        }
        if self.max_sweeps == 0 {
            return Err(invalid!("max_sweeps must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub factors: CpFactors,
    /// Objective after each completed sweep.
    pub objective_trace: Vec<f64>,
    /// Mean squared residual over all entries of `Y`.
    pub residual_variance: f64,
}

impl FitResult {
    pub fn sweeps(&self) -> usize {
        self.objective_trace.len()
    }
}

/// Fits from a seeded random start.
pub fn fit(x: &Tensor, y: &Tensor, cfg: &RegressionConfig) -> Result<FitResult> {
    fit_from(x, y, cfg, None)
}

/// Fits starting from `init` when given (shapes and rank must match), else
/// from i.i.d. standard normal factors scaled by `1/sqrt(rank)`.
pub fn fit_from(
    x: &Tensor,
    y: &Tensor,
    cfg: &RegressionConfig,
    init: Option<&CpFactors>,
) -> Result<FitResult> {
    cfg.validate()?;
    let problem = Problem::new(x, y, cfg.penalty)?;
    let mut factors = match init {
        Some(f) => {
            if f.rank() != cfg.rank
                || f.input_shape() != problem.input_shape
                || f.output_shape() != problem.output_shape
            {
                return Err(shape_err!(
                    "warm start factors {:?} rank {} do not match problem {:?}x{:?} rank {}",
                    f.shape(),
                    f.rank(),
                    problem.input_shape,
                    problem.output_shape,
                    cfg.rank
                ));
            }
            f.clone()
        }
        None => problem.random_factors(cfg.rank, cfg.seed)?,
    };

    let order = problem.sweep_order(cfg.sweep_order);
    let mut trace = Vec::new();
    let mut previous = problem.objective(&factors);
    for _ in 0..cfg.max_sweeps {
        for &k in &order {
            problem.update_factor(&mut factors, k)?;
        }
        let current = problem.objective(&factors);
        trace.push(current);
        let decrease = (previous - current) / previous.max(f64::MIN_POSITIVE);
        if current <= 0.0 || decrease < cfg.tolerance {
            break;
        }
        previous = current;
    }

    let residual_variance = problem.rss(&factors) / problem.y.len() as f64;
    Ok(FitResult { factors, objective_trace: trace, residual_variance })
}

/// `<x_new, B>_L` with `B` reconstructed from `factors`.
pub fn predict(x_new: &Tensor, factors: &CpFactors) -> Result<Tensor> {
    let input = factors.input_shape();
    if x_new.order() != input.len() + 1 || x_new.shape()[1..] != input[..] {
        return Err(shape_err!(
            "input of shape {:?} does not match coefficient input extents {:?}",
            x_new.shape(),
            input
        ));
    }
    contracted_product(x_new, &factors.reconstruct(), input.len())
}

/// `||y - <x, B>_L||_F^2 + penalty * ||B||_F^2`.
pub fn objective(x: &Tensor, y: &Tensor, factors: &CpFactors, penalty: f64) -> Result<f64> {
    let problem = Problem::new(x, y, penalty)?;
    problem.check_factors(factors)?;
    Ok(problem.objective(factors))
}

/// Shared state of one regression problem: the unfoldings of `X` and `Y`.
pub(crate) struct Problem<'a> {
    y: &'a Tensor,
    /// `X` as an `N x prod(P)` matrix.
    x_mat: DMatrix<f64>,
    /// `Y` as an `N x prod(Q)` matrix.
    y_mat: DMatrix<f64>,
    /// `X'X`.
    gram: DMatrix<f64>,
    /// `X'Y`.
    cross: DMatrix<f64>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    penalty: f64,
}

impl<'a> Problem<'a> {
    pub(crate) fn new(x: &Tensor, y: &'a Tensor, penalty: f64) -> Result<Self> {
        if x.order() < 2 || y.order() < 2 {
            return Err(shape_err!(
                "predictor and response need an observation mode plus at least one more; got orders {} and {}",
                x.order(),
                y.order()
            ));
        }
        let n = x.shape()[0];
        if y.shape()[0] != n {
            return Err(shape_err!("observation counts differ: {} vs {}", n, y.shape()[0]));
        }
        let p: usize = x.shape()[1..].iter().product();
        let q: usize = y.shape()[1..].iter().product();
        let x_mat = DMatrix::from_column_slice(n, p, x.data());
        let y_mat = DMatrix::from_column_slice(n, q, y.data());
        Ok(Self {
            y,
            gram: x_mat.tr_mul(&x_mat),
            cross: x_mat.tr_mul(&y_mat),
            x_mat,
            y_mat,
            input_shape: x.shape()[1..].to_vec(),
            output_shape: y.shape()[1..].to_vec(),
            penalty,
        })
    }

    pub(crate) fn entries(&self) -> usize {
        self.y.len()
    }

    fn check_factors(&self, f: &CpFactors) -> Result<()> {
        if f.input_shape() != self.input_shape || f.output_shape() != self.output_shape {
            return Err(shape_err!(
                "factors of shape {:?} do not match problem {:?} -> {:?}",
                f.shape(),
                self.input_shape,
                self.output_shape
            ));
        }
        Ok(())
    }

    fn random_factors(&self, rank: usize, seed: u64) -> Result<CpFactors> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (rank as f64).sqrt();
        let mut draw = |rows: usize| {
            DMatrix::from_fn(rows, rank, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
        };
        let input = self.input_shape.iter().map(|&p| draw(p)).collect();
        let output = self.output_shape.iter().map(|&q| draw(q)).collect();
        CpFactors::new(input, output)
    }

    pub(crate) fn sweep_order(&self, order: SweepOrder) -> Vec<usize> {
        let l = self.input_shape.len();
        let total = l + self.output_shape.len();
        match order {
            SweepOrder::InputsFirst => (0..total).collect(),
            SweepOrder::OutputsFirst => (l..total).chain(0..l).collect(),
        }
    }

    /// `x * B` for an input matrix with `prod(P)` columns.
    pub(crate) fn apply(&self, x: &DMatrix<f64>, b: &Tensor) -> DMatrix<f64> {
        let p: usize = self.input_shape.iter().product();
        let q: usize = self.output_shape.iter().product();
        x * nalgebra::DMatrixView::from_slice(b.data(), p, q)
    }

    fn rss_of(&self, b: &Tensor) -> f64 {
        (&self.y_mat - self.apply(&self.x_mat, b)).norm_squared()
    }

    pub(crate) fn rss(&self, f: &CpFactors) -> f64 {
        self.rss_of(&f.reconstruct())
    }

    pub(crate) fn objective(&self, f: &CpFactors) -> f64 {
        let b = f.reconstruct();
        self.rss_of(&b) + self.penalty * b.frobenius_norm().powi(2)
    }

    /// Hadamard product of the Gram matrices of every factor except `skip`.
    fn penalty_weights(f: &CpFactors, skip: usize) -> DMatrix<f64> {
        let r = f.rank();
        let mut w = DMatrix::from_element(r, r, 1.0);
        for (k, m) in f.all().enumerate() {
            if k != skip {
                w.component_mul_assign(&(m.transpose() * m));
            }
        }
        w
    }

    /// Normal equations for factor `k`. The solution has one column per right-hand side:
    /// a single column holding `vec(U_l)` for inputs, `V_m'` for outputs.
    pub(crate) fn normal_equations(&self, f: &CpFactors, k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        if k < self.input_shape.len() {
            self.input_equations(f, k)
        } else {
            self.output_equations(f, k - self.input_shape.len())
        }
    }

    fn input_equations(&self, f: &CpFactors, l: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let rank = f.rank();
        let pl = self.input_shape[l];
        let np = self.gram.nrows();
        let split = ModeSplit::new(&self.input_shape, l);
        // Row o holds the product of the other input factors' rows for the
        // combined index o, one column per component.
        let others = khatri_rao(f.input().iter().enumerate().filter(|&(j, _)| j != l).map(|(_, u)| u), rank);

        // Z'Z = E' G E, where E (P x pl*R) scatters the products above into
        // column (p_l + pl * r). E is never formed: each row has R entries.
        let mut ge = DMatrix::<f64>::zeros(np, pl * rank);
        for p in 0..np {
            let (a, o) = split.at(p);
            let g = self.gram.column(p);
            for r in 0..rank {
                let w = others[(o, r)];
                if w != 0.0 {
                    ge.column_mut(a + pl * r).axpy(w, &g, 1.0);
                }
            }
        }
        let mut a_mat = DMatrix::<f64>::zeros(pl * rank, pl * rank);
        for col in 0..pl * rank {
            let src = ge.column(col);
            let mut dst = a_mat.column_mut(col);
            for p in 0..np {
                let (a, o) = split.at(p);
                let v = src[p];
                for r in 0..rank {
                    dst[a + pl * r] += others[(o, r)] * v;
                }
            }
        }

        let out_grams = f
            .output()
            .iter()
            .fold(DMatrix::from_element(rank, rank, 1.0), |acc, v| acc.component_mul(&(v.transpose() * v)));
        let weights = Self::penalty_weights(f, l);
        for s in 0..rank {
            for r in 0..rank {
                let mut block = a_mat.view_mut((pl * r, pl * s), (pl, pl));
                block *= out_grams[(r, s)];
                if self.penalty != 0.0 {
                    for d in 0..pl {
                        block[(d, d)] += self.penalty * weights[(r, s)];
                    }
                }
            }
        }

        // Z_r' (Y v_r) = E' (X'Y) v_r, column by column.
        let cv = &self.cross * khatri_rao(f.output(), rank);
        let mut b = DMatrix::zeros(pl * rank, 1);
        for p in 0..np {
            let (a, o) = split.at(p);
            for r in 0..rank {
                b[(a + pl * r, 0)] += others[(o, r)] * cv[(p, r)];
            }
        }
        (a_mat, b)
    }

    fn output_equations(&self, f: &CpFactors, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let rank = f.rank();
        let qm = self.output_shape[m];
        let kr_in = khatri_rao(f.input(), rank);
        // D'D = (G_in' G_in) .* Grams of the other outputs, G_in = X KR(inputs).
        let mut a = kr_in.transpose() * &self.gram * &kr_in;
        for (j, v) in f.output().iter().enumerate() {
            if j != m {
                a.component_mul_assign(&(v.transpose() * v));
            }
        }
        if self.penalty != 0.0 {
            a += Self::penalty_weights(f, self.input_shape.len() + m) * self.penalty;
        }

        // (Y_(m) D)[q_m, r] = sum over the other output indices o of
        // (Y' G_in)[(q_m, o), r] times the other outputs' rows at o.
        let h = self.cross.transpose() * &kr_in;
        let others = khatri_rao(f.output().iter().enumerate().filter(|&(j, _)| j != m).map(|(_, v)| v), rank);
        let split = ModeSplit::new(&self.output_shape, m);
        let mut rhs = DMatrix::<f64>::zeros(rank, qm);
        for q in 0..h.nrows() {
            let (a_idx, o) = split.at(q);
            for r in 0..rank {
                rhs[(r, a_idx)] += h[(q, r)] * others[(o, r)];
            }
        }
        (a, rhs)
    }

    pub(crate) fn factor_name(&self, k: usize) -> String {
        let l = self.input_shape.len();
        if k < l {
            format!("input factor {k}")
        } else {
            format!("output factor {}", k - l)
        }
    }

    /// Factorizes a normal matrix. Singular systems are an error without a
    /// penalty; with one they fall back to a minimum-norm eigen solve, which
    /// is still an exact minimizer because the right-hand side lies in the
    /// range of the matrix.
    pub(crate) fn factorize(&self, a: DMatrix<f64>, k: usize) -> Result<NormalSolver> {
        let scale = a.diagonal().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let singular = || Error::Singular { factor: self.factor_name(k), penalty: self.penalty };
        if !scale.is_finite() {
            return Err(singular());
        }
        if scale > 0.0 {
            if let Some(chol) = Cholesky::new(a.clone()) {
                // A positive but vanishing pivot means the system is singular
                // to working precision.
                let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, &v| m.min(v * v));
                if min_pivot > scale * SINGULAR_RTOL {
                    return Ok(NormalSolver::Cholesky(chol));
                }
            }
        }
        if self.penalty == 0.0 {
            return Err(singular());
        }
        Ok(NormalSolver::pseudo(a))
    }

    /// Writes a solution back into factor `k`.
    pub(crate) fn store(&self, f: &mut CpFactors, k: usize, solution: &DMatrix<f64>) {
        let l = self.input_shape.len();
        let rank = f.rank();
        let target = f.factor_mut(k);
        if k < l {
            let rows = target.nrows();
            for r in 0..rank {
                for p in 0..rows {
                    target[(p, r)] = solution[(p + rows * r, 0)];
                }
            }
        } else {
            target.copy_from(&solution.transpose());
        }
    }

    fn update_factor(&self, f: &mut CpFactors, k: usize) -> Result<()> {
        let (a, b) = self.normal_equations(f, k);
        let chol = self.factorize(a, k)?;
        let solution = chol.solve(&b);
        self.store(f, k, &solution);
        Ok(())
    }

    pub(crate) fn x_new_matrix(&self, x_new: &Tensor) -> Result<DMatrix<f64>> {
        if x_new.order() != self.input_shape.len() + 1 || x_new.shape()[1..] != self.input_shape[..] {
            return Err(shape_err!(
                "new input of shape {:?} does not match predictor extents {:?}",
                x_new.shape(),
                self.input_shape
            ));
        }
        let n = x_new.shape()[0];
        Ok(DMatrix::from_column_slice(n, self.x_mat.ncols(), x_new.data()))
    }

    pub(crate) fn output_tensor(&self, n: usize, data: &DMatrix<f64>) -> Tensor {
        let mut shape = vec![n];
        shape.extend(&self.output_shape);
        Tensor::new(shape, data.as_slice().to_vec()).expect("output shape is consistent")
    }
}

/// Splits a first-index-fastest linear index over `shape` into the index of
/// one mode and the combined index of all the others (same ordering).
struct ModeSplit {
    stride: usize,
    extent: usize,
}

impl ModeSplit {
    fn new(shape: &[usize], mode: usize) -> Self {
        Self { stride: shape[..mode].iter().product(), extent: shape[mode] }
    }

    fn at(&self, i: usize) -> (usize, usize) {
        let (lo, hi) = (i % self.stride, i / self.stride);
        (hi % self.extent, lo + self.stride * (hi / self.extent))
    }
}

/// Solver for a symmetric positive semidefinite normal matrix `A`.
pub(crate) enum NormalSolver {
    Cholesky(Cholesky<f64, Dyn>),
    /// Eigenvectors and pseudo-inverse square roots of the eigenvalues.
    Pseudo {
        vectors: DMatrix<f64>,
        inv_sqrt: Vec<f64>,
    },
}

impl NormalSolver {
    fn pseudo(a: DMatrix<f64>) -> Self {
        let eig = a.symmetric_eigen();
        let top = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
        let inv_sqrt = eig
            .eigenvalues
            .iter()
            .map(|&v| if top > 0.0 && v > top * SINGULAR_RTOL { 1.0 / v.sqrt() } else { 0.0 })
            .collect();
        NormalSolver::Pseudo { vectors: eig.eigenvectors, inv_sqrt }
    }

    /// `A^+ b`.
    pub(crate) fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            NormalSolver::Cholesky(c) => c.solve(b),
            NormalSolver::Pseudo { vectors, inv_sqrt } => {
                let mut proj = vectors.transpose() * b;
                for (mut row, s) in proj.row_iter_mut().zip(inv_sqrt) {
                    row *= s * s;
                }
                vectors * proj
            }
        }
    }

    /// Maps standard normal `z` to a draw from `N(0, A^+)`.
    pub(crate) fn color(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            NormalSolver::Cholesky(c) => {
                c.l().transpose().solve_upper_triangular(z).expect("Cholesky factor has a nonzero diagonal")
            }
            NormalSolver::Pseudo { vectors, inv_sqrt } => {
                let mut scaled = z.clone();
                for (mut row, s) in scaled.row_iter_mut().zip(inv_sqrt) {
                    row *= *s;
                }
                vectors * scaled
            }
        }
    }
}
