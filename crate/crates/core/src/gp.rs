//! Fixed-hyperparameter Gaussian-process reference model.
//!
//! RBF kernel with signal variance 1.0, length scale 1.0, nugget 1e-6; no
//! hyperparameter optimization and no target standardization, so every
//! derived quantity is a deterministic function of the conditioning set.
//! Multi-dimensional inputs are expected pre-scaled to the unit square by the
//! caller; the kernel is isotropic.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::families::ObservationSet;
use crate::{Error, Result};

/// Kernel signal variance (amplitude).
pub const GP_AMPLITUDE: f64 = 1.0;
/// Kernel length scale.
pub const GP_LENGTH_SCALE: f64 = 1.0;
/// Diagonal nugget added to the training covariance.
pub const GP_NUGGET: f64 = 1e-6;
/// Largest jitter tried when the Cholesky factorization fails.
pub const GP_MAX_JITTER: f64 = 1e-2;
/// Predictive standard deviations below this are floored and flagged.
pub const GP_SIGMA_FLOOR: f64 = 1e-9;

const HALF_LOG_TAU: f64 = 0.918_938_533_204_672_7; // 0.5 * ln(2*pi)

/// Squared-exponential covariance between two points.
pub fn kernel(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    GP_AMPLITUDE * (-sq / (2.0 * GP_LENGTH_SCALE * GP_LENGTH_SCALE)).exp()
}

/// Gaussian negative log density of `y` under N(mu, sigma^2), with the
/// sigma floor applied. Returns (nll, floored).
pub fn gaussian_nll(mu: f64, sigma: f64, y: f64) -> (f64, bool) {
    let floored = sigma < GP_SIGMA_FLOOR;
    let s = if floored { GP_SIGMA_FLOOR } else { sigma };
    let z = (y - mu) / s;
    (HALF_LOG_TAU + s.ln() + 0.5 * z * z, floored)
}

/// Log of the maximum attainable predictive density, -ln(sigma * sqrt(2*pi)).
pub fn max_density_log_for(sigma: f64) -> f64 {
    let s = sigma.max(GP_SIGMA_FLOOR);
    -(HALF_LOG_TAU + s.ln())
}

/// Try a Cholesky factorization of `k`, escalating the diagonal jitter by
/// factors of 10 from `start` up to [`GP_MAX_JITTER`]. Returns the factor and
/// the jitter that succeeded.
pub(crate) fn cholesky_with_jitter(
    k: &DMatrix<f64>,
    start: f64,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    let mut jitter = start;
    loop {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(kj) {
            return Ok((chol, jitter));
        }
        jitter *= 10.0;
        if jitter > GP_MAX_JITTER * (1.0 + 1e-12) {
            return Err(Error::NumericalFailure(format!(
                "covariance factorization failed with jitter up to {GP_MAX_JITTER}"
            )));
        }
    }
}

/// A GP conditioned on zero or more observations.
#[derive(Debug, Clone)]
pub struct GpModel {
    xs: Vec<Vec<f64>>,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpModel {
    /// Condition on d-dimensional points. An empty slice yields the prior.
    pub fn fit(points: &[(Vec<f64>, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Ok(GpModel {
                xs: Vec::new(),
                chol: None,
                alpha: DVector::zeros(0),
                jitter: GP_NUGGET,
            });
        }
        let dim = points[0].0.len();
        for (x, y) in points {
            if x.len() != dim {
                return Err(Error::InvalidInput("mixed input dimensions".into()));
            }
            if x.iter().any(|v| !v.is_finite()) || !y.is_finite() {
                return Err(Error::InvalidInput("non-finite training point".into()));
            }
        }
        let n = points.len();
        let k = DMatrix::from_fn(n, n, |i, j| kernel(&points[i].0, &points[j].0));
        let (chol, jitter) = cholesky_with_jitter(&k, GP_NUGGET)?;
        let y = DVector::from_iterator(n, points.iter().map(|p| p.1));
        let alpha = chol.solve(&y);
        Ok(GpModel {
            xs: points.iter().map(|p| p.0.clone()).collect(),
            chol: Some(chol),
            alpha,
            jitter,
        })
    }

    /// Condition on scalar observations.
    pub fn fit_1d(obs: &ObservationSet) -> Result<Self> {
        let points: Vec<(Vec<f64>, f64)> =
            obs.points().iter().map(|&(x, y)| (vec![x], y)).collect();
        GpModel::fit(&points)
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Jitter actually used; equals [`GP_NUGGET`] unless escalation was needed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Predictive mean and standard deviation at `x`.
    /// The prior (no observations) returns (0, 1).
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let prior_var = kernel(x, x); // equals GP_AMPLITUDE
        let Some(chol) = &self.chol else {
            return (0.0, prior_var.sqrt());
        };
        let n = self.xs.len();
        let kstar = DVector::from_iterator(n, self.xs.iter().map(|xi| kernel(xi, x)));
        let mu = kstar.dot(&self.alpha);
        let kinv_kstar = chol.solve(&kstar);
        let var = (prior_var - kstar.dot(&kinv_kstar)).max(0.0);
        (mu, var.sqrt())
    }

    pub fn posterior_1d(&self, x: f64) -> (f64, f64) {
        self.posterior(&[x])
    }

    /// Posterior over a slice of scalar locations.
    pub fn posterior_grid(&self, xs: &[f64]) -> Vec<(f64, f64)> {
        xs.iter().map(|&x| self.posterior_1d(x)).collect()
    }

    /// Negative log predictive density of observing `y` at `x`.
    /// Returns (nll, sigma_floored).
    pub fn predictive_nll(&self, x: &[f64], y: f64) -> (f64, bool) {
        let (mu, sigma) = self.posterior(x);
        gaussian_nll(mu, sigma, y)
    }

    /// Log of the peak predictive density at `x`.
    pub fn max_density_log(&self, x: &[f64]) -> f64 {
        let (_, sigma) = self.posterior(x);
        max_density_log_for(sigma)
    }
}
