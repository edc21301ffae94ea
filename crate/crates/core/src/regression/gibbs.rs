//! Gibbs sampling from the posterior predictive of the CP regression.
//!
//! Errors are i.i.d. `N(0, sigma^2)`. The penalty acts as a spherical
//! Gaussian prior on `B` with precision `penalty / sigma^2`, so each factor's
//! full conditional is Gaussian with mean equal to its ALS update and
//! covariance `sigma^2` times the inverse of the ALS normal matrix. With a
//! Jeffreys prior on the error variance, `sigma^2 | B` is inverse gamma with
//! shape `n/2` and scale `RSS/2`, `n` being the number of response entries.
//!
//! The chain starts from the ALS point estimate. Each retained iteration
//! yields `<x_new, B^(t)>_L + E^(t)_new` with `E^(t)_new` drawn at the current
//! `sigma^2`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{fit, Problem, RegressionConfig};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsConfig {
    pub n_samples: usize,
    /// Discarded iterations; defaults to a quarter of `n_samples`, i.e. 20%
    /// of all iterations.
    pub burn_in: Option<usize>,
    pub thin: usize,
    pub seed: u64,
}

impl GibbsConfig {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self { n_samples, burn_in: None, thin: 1, seed }
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.n_samples / 4)
    }
}

/// Draws `gibbs.n_samples` posterior predictive tensors for `x_new`.
pub fn gibbs_sample(
    x: &Tensor,
    y: &Tensor,
    cfg: &RegressionConfig,
    gibbs: &GibbsConfig,
    x_new: &Tensor,
) -> Result<Vec<Tensor>> {
    if gibbs.n_samples == 0 {
        return Err(invalid!("n_samples must be at least 1"));
    }
    if gibbs.thin == 0 {
        return Err(invalid!("thin must be at least 1"));
    }
    let point = fit(x, y, cfg)?;
    let problem = Problem::new(x, y, cfg.penalty)?;
    let x_new_mat = problem.x_new_matrix(x_new)?;
    let n_new = x_new.shape()[0];

    let mut rng = ChaCha8Rng::seed_from_u64(gibbs.seed);
    let mut factors = point.factors;
    let order = problem.sweep_order(cfg.sweep_order);
    let shape = problem.entries() as f64 / 2.0;
    let gamma = Gamma::new(shape, 1.0).map_err(|e| invalid!("variance prior: {e}"))?;

    let total = gibbs.burn_in() + gibbs.n_samples * gibbs.thin;
    let mut draws = Vec::with_capacity(gibbs.n_samples);
    for iter in 0..total {
        let rss = problem.rss(&factors);
        let g: f64 = gamma.sample(&mut rng);
        let sigma = ((rss / 2.0) / g).sqrt();

        for &k in &order {
            let (a, b) = problem.normal_equations(&factors, k);
            let solver = problem.factorize(a, k)?;
            let mean = solver.solve(&b);
            let z = DMatrix::from_fn(mean.nrows(), mean.ncols(), |_, _| StandardNormal.sample(&mut rng));
            let draw = mean + solver.color(&z) * sigma;
            problem.store(&mut factors, k, &draw);
        }

        let kept = iter + 1 - gibbs.burn_in().min(iter + 1);
        if iter >= gibbs.burn_in() && (kept - 1).is_multiple_of(gibbs.thin) {
            let b = factors.reconstruct();
            let mean = problem.apply(&x_new_mat, &b);
            let noisy = DMatrix::from_fn(mean.nrows(), mean.ncols(), |i, j| {
                let e: f64 = StandardNormal.sample(&mut rng);
                mean[(i, j)] + sigma * e
            });
            draws.push(problem.output_tensor(n_new, &noisy));
        }
    }
    Ok(draws)
}
