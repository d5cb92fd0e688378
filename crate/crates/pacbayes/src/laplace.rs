//! Diagonal-free Laplace machinery: scalar curvature summaries, the
//! tempered-posterior variance, and the feature second-moment estimate.
//!
//! The tempered posterior over weights is isotropic Gaussian
//! `ρ̂ = N(w_ρ̂, σ²_ρ̂ I)` whose variance solves a precision update
//!
//! `σ²_ρ̂(λ) = 1 / (λ h / d + 1 / σ²_π)`,
//!
//! where `h` is a trace-of-curvature summary of the loss at the MAP
//! estimate and `d` the parameter count. For regression (unit-variance
//! Gaussian likelihood) `h = Σᵢ ‖∇_w f(xᵢ)‖²`; for classification it is the
//! Gauss–Newton trace with diagonal weighting
//! `h = Σᵢ Σₖ p_ik (1 − p_ik) ‖∇_w f_k(xᵢ)‖²` (exact for models whose
//! per-class gradients occupy disjoint coordinates, e.g. linear logits).

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nnet::{
    forward, per_sample_gradient, FlatParams, LossKind, NetError, OutputHead, Sample,
};
use crate::util::pairwise_sum;

/// Errors from curvature and variance estimation.
#[derive(Debug, Error)]
pub enum LaplaceError {
    /// Curvature or feature moments over an empty dataset are undefined.
    #[error("cannot summarize an empty dataset")]
    EmptyData,
    /// The network head does not match the requested task.
    #[error("task mismatch: {0}")]
    TaskMismatch(String),
    /// Underlying network evaluation failed.
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Learning task, determined by the network's output head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

/// Scalar curvature summary `h` with the context it was computed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureSummary {
    /// Trace-style curvature total (not averaged over samples).
    pub h: f64,
    /// Number of samples summed over.
    pub n_samples: usize,
    /// Parameter count of the model.
    pub d: usize,
    pub task: Task,
}

/// Isotropic Gaussian distribution over flat parameter vectors.
///
/// Invariant: `variance` is finite and strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotropicGaussian {
    mean: FlatParams,
    variance: f64,
}

impl IsotropicGaussian {
    /// Builds `N(mean, variance · I)`; the variance must be finite and > 0.
    pub fn new(mean: FlatParams, variance: f64) -> Result<Self, LaplaceError> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(LaplaceError::TaskMismatch(format!(
                "variance must be finite and positive, got {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }

    #[must_use]
    pub fn mean(&self) -> &FlatParams {
        &self.mean
    }

    #[must_use]
    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Dimension of the parameter space.
    #[must_use]
    pub fn dim(&self) -> usize {
        self.mean.param_count()
    }

    /// Draws one parameter vector `mean + σ z`, `z ~ N(0, I)`.
    #[must_use]
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> FlatParams {
        let sigma = self.variance.sqrt();
        let values: Vec<f64> = self
            .mean
            .values()
            .iter()
            .map(|&m| {
                let z: f64 = StandardNormal.sample(rng);
                m + sigma * z
            })
            .collect();
        FlatParams::new(self.mean.arch().clone(), values).expect("finite Gaussian draw")
    }
}

/// Regression curvature `h = Σᵢ ‖∇_w f(xᵢ)‖²` at the given parameters.
///
/// Requires an identity-head network with scalar output and nonempty data.
/// Accumulated with fixed-order pairwise summation, so the result is
/// invariant (up to rounding) under permutations of `data`.
pub fn curvature_regression(
    params: &FlatParams,
    data: &[Sample],
) -> Result<CurvatureSummary, LaplaceError> {
    if data.is_empty() {
        return Err(LaplaceError::EmptyData);
    }
    if params.arch().output_head() != OutputHead::Identity || params.arch().output_dim() != 1 {
        return Err(LaplaceError::TaskMismatch(
            "regression curvature needs a scalar identity-head network".into(),
        ));
    }
    let mut contributions = Vec::with_capacity(data.len());
    for sample in data {
        let g = per_sample_gradient(params, sample, LossKind::RawOutput(0))?;
        contributions.push(g.iter().map(|v| v * v).sum());
    }
    Ok(CurvatureSummary {
        h: pairwise_sum(&contributions),
        n_samples: data.len(),
        d: params.param_count(),
        task: Task::Regression,
    })
}

/// Classification curvature
/// `h = Σᵢ Σₖ p_ik (1 − p_ik) ‖∇_w f_k(xᵢ)‖²`
/// where `p_i` is the softmax predictive at `xᵢ` and `f_k` the k-th logit.
///
/// The diagonal weighting `p(1 − p)` matches the Gauss–Newton trace exactly
/// when per-class logit gradients occupy disjoint parameter coordinates
/// (linear logit models); saturated predictions (`p → 0` or `1`) contribute
/// vanishing curvature.
pub fn curvature_classification(
    params: &FlatParams,
    data: &[Sample],
) -> Result<CurvatureSummary, LaplaceError> {
    if data.is_empty() {
        return Err(LaplaceError::EmptyData);
    }
    if params.arch().output_head() != OutputHead::Softmax {
        return Err(LaplaceError::TaskMismatch(
            "classification curvature needs a softmax-head network".into(),
        ));
    }
    let k_out = params.arch().output_dim();
    let mut contributions = Vec::with_capacity(data.len());
    for sample in data {
        let p = forward(params, &sample.features)?;
        let mut acc = 0.0;
        for k in 0..k_out {
            let g = per_sample_gradient(params, sample, LossKind::RawOutput(k))?;
            let sq: f64 = g.iter().map(|v| v * v).sum();
            acc += p[k] * (1.0 - p[k]) * sq;
        }
        contributions.push(acc);
    }
    Ok(CurvatureSummary {
        h: pairwise_sum(&contributions),
        n_samples: data.len(),
        d: params.param_count(),
        task: Task::Classification,
    })
}

/// Tempered-posterior variance from the precision update
/// `σ²_ρ̂ = 1 / (λ h / d + 1 / σ²_π)`.
///
/// As `λ → 0` the prior variance is recovered; increasing `λ`, `h` or
/// decreasing `σ²_π` strictly shrinks the result.
#[must_use]
pub fn posterior_variance(lambda: f64, curvature: &CurvatureSummary, prior_var: f64) -> f64 {
    posterior_variance_parts(lambda, curvature.h, curvature.d, prior_var)
}

/// [`posterior_variance`] from raw `h` and `d` (used where no
/// [`CurvatureSummary`] has been materialized).
#[must_use]
pub fn posterior_variance_parts(lambda: f64, h: f64, d: usize, prior_var: f64) -> f64 {
    assert!(lambda > 0.0, "temperature must be positive");
    assert!(prior_var > 0.0, "prior variance must be positive");
    assert!(h >= 0.0 && d > 0, "curvature must be nonnegative over d > 0");
    1.0 / (lambda * h / d as f64 + 1.0 / prior_var)
}

/// Feature second-moment estimate
/// `σ²ₓ = (1 / (|Z| d)) Σᵢ Σₖ ‖∇_w f_k(xᵢ)‖²`
/// over a reference dataset, where the sum runs over all pre-head outputs.
/// For the pure linear model this is the mean squared feature entry.
pub fn gradient_variance(params: &FlatParams, z_true: &[Sample]) -> Result<f64, LaplaceError> {
    if z_true.is_empty() {
        return Err(LaplaceError::EmptyData);
    }
    let k_out = params.arch().output_dim();
    let mut contributions = Vec::with_capacity(z_true.len());
    for sample in z_true {
        let mut acc = 0.0;
        for k in 0..k_out {
            let g = per_sample_gradient(params, sample, LossKind::RawOutput(k))?;
            acc += g.iter().map(|v| v * v).sum::<f64>();
        }
        contributions.push(acc);
    }
    let d = params.param_count() as f64;
    Ok(pairwise_sum(&contributions) / (z_true.len() as f64 * d))
}
