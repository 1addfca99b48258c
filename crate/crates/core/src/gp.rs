//! Gaussian-process regression with a squared-exponential kernel.
//!
//! Prior mean is zero; callers that want centered data subtract the
//! sample mean before fitting. The posterior follows the standard
//! noisy-observation formulas
//!
//! ```text
//!   mu(x)     = k(x, X) (K + sn^2 I)^{-1} y
//!   sigma2(x) = k(x, x) - k(x, X) (K + sn^2 I)^{-1} k(X, x)
//! ```
//!
//! computed through a cached Cholesky factor.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    #[error("kernel matrix is not positive definite even after jitter")]
    IllConditionedKernel,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("duplicate training inputs with zero observation noise")]
    DuplicateInputs,
    #[error("hyperparameters out of range: {0}")]
    InvalidHyperParams(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpHyperParams {
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise_variance: f64,
}

/// Squared-exponential kernel value for a pair of points.
pub fn kernel(a: &[f64], b: &[f64], signal_variance: f64, length_scale: f64) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    signal_variance * (-sq / (2.0 * length_scale * length_scale)).exp()
}

#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: DMatrix<f64>,
    pub hyper: GpHyperParams,
    chol: Cholesky<f64, Dyn>,
    /// (K + sn^2 I)^{-1} y
    weights: DVector<f64>,
    /// Jitter that had to be added to make the factorization succeed.
    pub jitter: f64,
}

impl GpModel {
    /// Fits the posterior for the given training set.
    ///
    /// `inputs` is n x d (one row per training point).
    pub fn fit(
        inputs: DMatrix<f64>,
        targets: DVector<f64>,
        hyper: GpHyperParams,
    ) -> Result<Self, GpError> {
        let n = inputs.nrows();
        if n == 0 {
            return Err(GpError::EmptyTrainingSet);
        }
        if targets.len() != n {
            return Err(GpError::DimensionMismatch { expected: n, got: targets.len() });
        }
        if !(hyper.length_scale > 0.0) {
            return Err(GpError::InvalidHyperParams("length_scale must be positive"));
        }
        if !(hyper.signal_variance > 0.0) {
            return Err(GpError::InvalidHyperParams("signal_variance must be positive"));
        }
        if hyper.noise_variance < 0.0 {
            return Err(GpError::InvalidHyperParams("noise_variance must be nonnegative"));
        }
        if hyper.noise_variance == 0.0 && has_duplicate_rows(&inputs) {
            return Err(GpError::DuplicateInputs);
        }

        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = kernel(
                    inputs.row(i).transpose().as_slice(),
                    inputs.row(j).transpose().as_slice(),
                    hyper.signal_variance,
                    hyper.length_scale,
                );
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        for i in 0..n {
            k[(i, i)] += hyper.noise_variance;
        }

        let mut jitter = 0.0;
        let mut chol = Cholesky::new(k.clone());
        for attempt in 0..3 {
            if chol.is_some() {
                break;
            }
            jitter = hyper.signal_variance * 10f64.powi(-10 + 2 * attempt);
            let mut kj = k.clone();
            for i in 0..n {
                kj[(i, i)] += jitter;
            }
            chol = Cholesky::new(kj);
        }
        let chol = chol.ok_or(GpError::IllConditionedKernel)?;
        let weights = chol.solve(&targets);
        Ok(Self { inputs, hyper, chol, weights, jitter })
    }

    pub fn n_train(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Posterior mean and variance at a query point.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let n = self.n_train();
        let kx = DVector::from_fn(n, |i, _| {
            kernel(
                self.inputs.row(i).transpose().as_slice(),
                x,
                self.hyper.signal_variance,
                self.hyper.length_scale,
            )
        });
        let mean = kx.dot(&self.weights);
        let v = self.chol.l_dirty().solve_lower_triangular(&kx).expect("triangular solve");
        let variance = self.hyper.signal_variance - v.norm_squared();
        (mean, variance.max(0.0))
    }

    /// Log marginal likelihood of the training targets.
    pub fn log_marginal_likelihood(&self, targets: &DVector<f64>) -> f64 {
        let n = self.n_train() as f64;
        let log_det: f64 = (0..self.n_train())
            .map(|i| self.chol.l_dirty()[(i, i)].ln())
            .sum();
        -0.5 * targets.dot(&self.weights)
            - log_det
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

fn has_duplicate_rows(inputs: &DMatrix<f64>) -> bool {
    let n = inputs.nrows();
    for i in 0..n {
        for j in 0..i {
            if inputs.row(i) == inputs.row(j) {
                return true;
            }
        }
    }
    false
}

/// Grid search for hyperparameters by log marginal likelihood.
///
/// Length scales are log-spaced around the median pairwise distance,
/// signal and noise variances scale with the target variance. Ties pick
/// the smallest length scale; constant targets short-circuit to it.
pub fn select_hyperparams(inputs: &DMatrix<f64>, targets: &DVector<f64>) -> GpHyperParams {
    let n = inputs.nrows();
    assert!(n >= 3, "hyperparameter selection needs at least 3 points");

    let mean = targets.sum() / n as f64;
    let var = targets.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n as f64;
    let var = var.max(1e-12);

    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in 0..i {
            dists.push((inputs.row(i) - inputs.row(j)).norm());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = dists[dists.len() / 2].max(1e-8);

    let length_scales: Vec<f64> = (0..10)
        .map(|k| median * 0.05 * (5.0f64 / 0.05).powf(k as f64 / 9.0))
        .collect();
    let signal_vars = [0.25 * var, var, 4.0 * var];
    let noise_vars = [1e-6 * var, 1e-4 * var, 1e-2 * var];

    let constant_targets = targets.iter().all(|y| *y == targets[0]);
    if constant_targets {
        return GpHyperParams {
            signal_variance: signal_vars[0],
            length_scale: length_scales[0],
            noise_variance: noise_vars[0],
        };
    }

    let mut best: Option<(f64, GpHyperParams)> = None;
    for &l in &length_scales {
        for &sv in &signal_vars {
            for &nv in &noise_vars {
                let hyper =
                    GpHyperParams { signal_variance: sv, length_scale: l, noise_variance: nv };
                let Ok(model) = GpModel::fit(inputs.clone(), targets.clone(), hyper) else {
                    continue;
                };
                let lml = model.log_marginal_likelihood(targets);
                if best.as_ref().map_or(true, |(b, _)| lml > *b) {
                    best = Some((lml, hyper));
                }
            }
        }
    }
    best.map(|(_, h)| h).unwrap_or(GpHyperParams {
        signal_variance: var,
        length_scale: median,
        noise_variance: 1e-6 * var,
    })
}
