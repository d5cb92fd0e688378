//! PAC-Bayes bound algebra: KL divergence, empirical-risk and log-moment
//! terms (closed form and Monte Carlo), the three bound evaluators, the
//! analytic single-dimension curve, and the tempered ELBO.
//!
//! All three bounds share the decomposition
//!
//! `total = empirical_risk + (KL + ln(1/δ)) / (λn) + moment`
//!
//! where `moment = Ψ / (λn)` and
//! `Ψ = ln E_{f∼π} E_{X′Y′∼Dⁿ} exp[λn (L_D(f) − L̂_{X′Y′}(f))]`.
//!
//! The closed moment form (canonical) comes from the linear-Gaussian
//! analysis: with `c = 2 n σ²ₓ σ²_π`, for `λ < 1/c`
//!
//! `moment = σ²ₓ (σ²_π d + ‖w_*‖²-term) / (2 − 2 λ n · 2 σ²ₓ σ²_π) + σ²_ε/2`.
//!
//! A main-text compatibility form doubles both the fraction and the noise
//! term: `σ²ₓ (σ²_π d + ‖w_*‖²-term) / (1 − λc) + σ²_ε`.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::laplace::{posterior_variance_parts, IsotropicGaussian};
use crate::nnet::{nll_loss, FlatParams, NetError, Sample, HALF_LN_2PI};
use crate::util::{logsumexp, mean, mix_seed, rng_from_seed, sample_std};

/// Sub-seed tags so that the moment estimator sees identical randomness in
/// the original and mixed bounds while the empirical estimator differs.
const SEED_TAG_EMPIRICAL: u64 = 0x45_52;
const SEED_TAG_MOMENT: u64 = 0x4d_4f;

/// Errors from bound evaluation.
#[derive(Debug, Error)]
pub enum BoundsError {
    /// Posterior and prior live in different parameter spaces.
    #[error("posterior dimension {post} does not match prior dimension {prior}")]
    DimensionMismatch { post: usize, prior: usize },
    /// The closed moment form's geometric series diverges:
    /// requires `λ < 1/c` with `c = 2 n σ²ₓ σ²_π`.
    #[error("moment term undefined: λ = {lambda} outside (0, 1/c) with c = {c}")]
    MomentDomain { lambda: f64, c: f64 },
    /// The single-dimension analytic curve requires `λ ∈ (0, ½)`.
    #[error("analytic curve undefined at λ = {lambda}: requires 0 < λ < 0.5")]
    CurveDomain { lambda: f64 },
    /// A parameter that must be strictly positive (or in (0, 1]) is not.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// The bound needs at least one evaluation sample.
    #[error("cannot evaluate a bound on an empty dataset")]
    EmptyData,
    /// Underlying network evaluation failed.
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Which of the three bounds a breakdown belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    /// Fully closed form; valid only for `λ < 1/c`.
    Approximate,
    /// Closed-form empirical term, Monte Carlo moment.
    Mixed,
    /// Monte Carlo empirical term and moment.
    Original,
}

/// Monte Carlo budget actually used by a bound evaluation (zeros for closed
/// forms).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EstimatorMeta {
    /// Posterior draws in the empirical-risk estimate.
    pub m_empirical: usize,
    /// Prior draws in the moment estimate.
    pub m_prior: usize,
    /// Fresh datasets per prior draw in the moment estimate.
    pub m_data: usize,
}

/// One evaluated bound: the three additive terms, their exact sum, and the
/// evaluation context. `kl_term` already includes `ln(1/δ)` and the
/// `1/(λn)` scaling; `moment` is `Ψ/(λn)`.
///
/// Invariant: `total` is constructed as `empirical_risk + kl_term + moment`,
/// so recomposition is bit-exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundBreakdown {
    pub kind: BoundKind,
    pub lambda: f64,
    pub delta: f64,
    pub empirical_risk: f64,
    pub kl_term: f64,
    pub moment: f64,
    pub total: f64,
    /// Standard error of the empirical-risk estimate (0 for closed forms).
    pub empirical_se: f64,
    /// Standard error of the moment estimate (0 for closed forms).
    pub moment_se: f64,
    pub meta: EstimatorMeta,
}

impl BoundBreakdown {
    fn assemble(
        kind: BoundKind,
        lambda: f64,
        delta: f64,
        empirical: McEstimate,
        kl_term: f64,
        moment: McEstimate,
        meta: EstimatorMeta,
    ) -> Self {
        Self {
            kind,
            lambda,
            delta,
            empirical_risk: empirical.value,
            kl_term,
            moment: moment.value,
            total: empirical.value + kl_term + moment.value,
            empirical_se: empirical.std_error,
            moment_se: moment.std_error,
            meta,
        }
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

impl McEstimate {
    /// An exactly known (closed-form) value.
    #[must_use]
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
        }
    }
}

/// Which algebraic shape the closed moment term takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentForm {
    /// Canonical: `σ²ₓ(σ²_π d + w⋆) / (2(1 − λc)) + σ²_ε/2`.
    Appendix,
    /// Compatibility: `σ²ₓ(σ²_π d + w⋆) / (1 − λc) + σ²_ε`.
    MainText,
}

impl Default for MomentForm {
    fn default() -> Self {
        MomentForm::Appendix
    }
}

/// Inputs of the closed moment term.
///
/// `w_star_norm2` is the plug-in estimate for the unobservable `w_*` term of
/// the numerator (the squared distance from the prior mean to the generating
/// weights in the canonical form); by protocol it defaults to `‖w_π‖²`.
/// Invariant: `m_prior · m_data` is the total Monte Carlo moment budget used
/// when this configuration is estimated instead of evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentConfig {
    /// Dataset size the bound is evaluated on.
    pub n: usize,
    pub m_prior: usize,
    pub m_data: usize,
    /// Feature second moment `σ²ₓ`.
    pub sigma_x2: f64,
    /// Observation-noise variance `σ²_ε`.
    pub sigma_eps2: f64,
    /// Plug-in for the `w_*` numerator term (see type docs).
    pub w_star_norm2: f64,
    pub form: MomentForm,
}

/// KL divergence between isotropic Gaussians of common dimension `d`:
///
/// `KL = ½ (d σ²_ρ̂/σ²_π + ‖w_ρ̂ − w_π‖²/σ²_π − d − d ln(σ²_ρ̂/σ²_π))`.
///
/// Nonnegative; exactly 0 iff the distributions coincide.
pub fn kl_gaussian_iso(
    post: &IsotropicGaussian,
    prior: &IsotropicGaussian,
) -> Result<f64, BoundsError> {
    if post.dim() != prior.dim() {
        return Err(BoundsError::DimensionMismatch {
            post: post.dim(),
            prior: prior.dim(),
        });
    }
    let d = post.dim() as f64;
    let ratio = post.variance() / prior.variance();
    let gap = post.mean().squared_distance(prior.mean());
    let kl = 0.5 * (d * ratio + gap / prior.variance() - d - d * ratio.ln());
    // Mathematically ≥ 0; clamp away −ε from rounding near identity.
    Ok(kl.max(0.0))
}

/// Closed-form Gibbs empirical risk of an isotropic posterior under the
/// local quadratic expansion:
///
/// `E_ρ̂ L̂ = mse_sum/(2n) + σ²_ρ̂ h / (2n) + ½ ln 2π`.
///
/// Exact for linear models; for ReLU networks it is the Laplace
/// approximation. Value is at least `½ ln 2π`. Scale-free in the sense that
/// doubling `mse_sum`, `h` and `n` together leaves it unchanged.
#[must_use]
pub fn empirical_risk_closed(map_mse_sum: f64, n: usize, post_var: f64, h: f64) -> f64 {
    assert!(n > 0, "empirical risk over an empty dataset");
    assert!(map_mse_sum >= 0.0 && post_var >= 0.0 && h >= 0.0);
    let n = n as f64;
    map_mse_sum / (2.0 * n) + post_var * h / (2.0 * n) + HALF_LN_2PI
}

/// Second-order (Taylor) Gibbs empirical risk around the MAP value for an
/// arbitrary per-sample loss mean: `L̂(w_ρ̂) + σ²_ρ̂ h / (2n)`. For the
/// Gaussian likelihood this coincides with [`empirical_risk_closed`].
#[must_use]
pub fn empirical_risk_taylor(map_mean_loss: f64, n: usize, post_var: f64, h: f64) -> f64 {
    assert!(n > 0, "empirical risk over an empty dataset");
    map_mean_loss + post_var * h / (2.0 * n as f64)
}

/// Monte Carlo Gibbs empirical risk: the mean over `m` posterior draws of
/// the mean per-sample NLL on `data`. Deterministic given `rng_seed`.
pub fn empirical_risk_mc(
    post: &IsotropicGaussian,
    data: &[Sample],
    m: usize,
    rng_seed: u64,
) -> Result<McEstimate, BoundsError> {
    if data.is_empty() {
        return Err(BoundsError::EmptyData);
    }
    if m == 0 {
        return Err(BoundsError::InvalidParameter(
            "empirical-risk estimator needs m ≥ 1 draws".into(),
        ));
    }
    let mut rng = rng_from_seed(rng_seed);
    let mut per_draw = Vec::with_capacity(m);
    for _ in 0..m {
        let w = post.draw(&mut rng);
        per_draw.push(mean_nll(&w, data)?);
    }
    Ok(McEstimate {
        value: mean(&per_draw),
        std_error: sample_std(&per_draw) / (m as f64).sqrt(),
    })
}

/// Mean per-sample NLL of fixed parameters on a dataset.
pub fn mean_nll(params: &FlatParams, data: &[Sample]) -> Result<f64, BoundsError> {
    let mut losses = Vec::with_capacity(data.len());
    for s in data {
        losses.push(nll_loss(params, s)?);
    }
    Ok(mean(&losses))
}

/// Closed-form moment term `Ψ/(λn)` of the linear-Gaussian analysis.
///
/// With `c = 2 n σ²ₓ σ²_π` the term is finite only for `λ < 1/c`; outside
/// that region the error carries `c` so callers can report the admissible
/// boundary. `σ²ₓ = 0` collapses the term to the pure noise floor.
pub fn moment_closed(
    lambda: f64,
    cfg: &MomentConfig,
    prior_var: f64,
    d: usize,
) -> Result<f64, BoundsError> {
    if lambda <= 0.0 {
        return Err(BoundsError::InvalidParameter(format!(
            "temperature must be positive, got {lambda}"
        )));
    }
    let c = 2.0 * cfg.n as f64 * cfg.sigma_x2 * prior_var;
    if lambda * c >= 1.0 {
        return Err(BoundsError::MomentDomain { lambda, c });
    }
    let numerator = cfg.sigma_x2 * (prior_var * d as f64 + cfg.w_star_norm2);
    Ok(match cfg.form {
        MomentForm::Appendix => numerator / (2.0 * (1.0 - lambda * c)) + cfg.sigma_eps2 / 2.0,
        MomentForm::MainText => numerator / (1.0 - lambda * c) + cfg.sigma_eps2,
    })
}

/// The admissible-region constant `c = 2 n σ²ₓ σ²_π` of the closed moment.
#[must_use]
pub fn moment_domain_constant(n: usize, sigma_x2: f64, prior_var: f64) -> f64 {
    2.0 * n as f64 * sigma_x2 * prior_var
}

/// Monte Carlo moment term `Ψ̂/(λn)` with
///
/// `Ψ̂ = ln[(1/(m_p m_d)) Σᵢ Σⱼ exp(λn (L_D(fᵢ) − L̂ⱼ(fᵢ)))]`,
///
/// over `m_prior` prior draws `fᵢ` and, for each, `m_data` fresh size-`n`
/// datasets. `true_risk` evaluates (an approximation of) `L_D`;
/// `fresh_dataset` must return a new size-`n` dataset each call. Computed
/// via log-sum-exp, so the result is finite whenever every exponent is.
/// Deterministic given `rng_seed`.
pub fn moment_mc<F, G>(
    lambda: f64,
    n: usize,
    prior: &IsotropicGaussian,
    mut true_risk: F,
    mut fresh_dataset: G,
    m_prior: usize,
    m_data: usize,
    rng_seed: u64,
) -> Result<McEstimate, BoundsError>
where
    F: FnMut(&FlatParams) -> Result<f64, BoundsError>,
    G: FnMut(&mut ChaCha8Rng) -> Vec<Sample>,
{
    if lambda <= 0.0 || n == 0 {
        return Err(BoundsError::InvalidParameter(format!(
            "moment estimator needs λ > 0 and n ≥ 1, got λ = {lambda}, n = {n}"
        )));
    }
    if m_prior == 0 || m_data == 0 {
        return Err(BoundsError::InvalidParameter(
            "moment estimator needs m_prior ≥ 1 and m_data ≥ 1".into(),
        ));
    }
    let scale = lambda * n as f64;
    let mut rng = rng_from_seed(rng_seed);
    let mut exponents = Vec::with_capacity(m_prior * m_data);
    for _ in 0..m_prior {
        let f_i = prior.draw(&mut rng);
        let l_d = true_risk(&f_i)?;
        for _ in 0..m_data {
            let dataset = fresh_dataset(&mut rng);
            assert_eq!(dataset.len(), n, "fresh dataset has the wrong size");
            let l_hat = mean_nll(&f_i, &dataset)?;
            exponents.push(scale * (l_d - l_hat));
        }
    }
    let m_total = exponents.len() as f64;
    let psi_hat = logsumexp(&exponents) - m_total.ln();
    // Delta-method standard error of ln(mean exp): sd(exp shifted) over
    // (√m · mean(exp shifted)), all relative to the max exponent.
    let peak = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = exponents.iter().map(|&e| (e - peak).exp()).collect();
    let mu = mean(&shifted);
    let se_ln = if mu > 0.0 {
        sample_std(&shifted) / (m_total.sqrt() * mu)
    } else {
        0.0
    };
    Ok(McEstimate {
        value: psi_hat / scale,
        std_error: se_ln / scale,
    })
}

/// Shared context for the theorem-form and mixed bounds.
#[derive(Debug, Clone, Copy)]
pub struct BoundSettings {
    pub lambda: f64,
    /// Confidence level δ ∈ (0, 1].
    pub delta: f64,
    /// Posterior draws for the Monte Carlo empirical term.
    pub m_empirical: usize,
    /// Prior draws for the Monte Carlo moment term.
    pub m_prior: usize,
    /// Fresh datasets per prior draw for the Monte Carlo moment term.
    pub m_data: usize,
    /// Cell seed; the Monte Carlo empirical-risk estimator draws from a
    /// sub-stream derived from it.
    pub seed: u64,
    /// Seed of the moment estimator's stream, shared bit-exactly between the
    /// theorem-form and mixed bounds. Callers sweeping a temperature grid
    /// should derive it independently of the grid position so that all cells
    /// of one curve score the same prior draws and fresh datasets (common
    /// random numbers): on a fixed sample the moment statistic
    /// `(ln mean exp(λn·X) )/(λn)` is non-decreasing in λ, so sharing the
    /// stream removes spurious non-monotone jitter between neighbouring
    /// cells. Set it equal to `seed` when no such coupling is wanted.
    pub moment_seed: u64,
}

impl BoundSettings {
    fn validate(&self) -> Result<(), BoundsError> {
        if self.lambda <= 0.0 {
            return Err(BoundsError::InvalidParameter(format!(
                "temperature must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(BoundsError::InvalidParameter(format!(
                "confidence δ must lie in (0, 1], got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

fn kl_term_value(
    post: &IsotropicGaussian,
    prior: &IsotropicGaussian,
    lambda: f64,
    delta: f64,
    n: usize,
) -> Result<f64, BoundsError> {
    let kl = kl_gaussian_iso(post, prior)?;
    Ok((kl + (1.0 / delta).ln()) / (lambda * n as f64))
}

/// Theorem-form bound: Monte Carlo empirical risk plus
/// `(KL + ln(1/δ))/(λn)` plus the Monte Carlo moment term. Valid for every
/// `λ > 0`. The moment estimator's stream depends only on
/// `settings.moment_seed`, so original and mixed share moment draws exactly.
pub fn bound_original<F, G>(
    settings: &BoundSettings,
    post: &IsotropicGaussian,
    prior: &IsotropicGaussian,
    data: &[Sample],
    true_risk: F,
    fresh_dataset: G,
) -> Result<BoundBreakdown, BoundsError>
where
    F: FnMut(&FlatParams) -> Result<f64, BoundsError>,
    G: FnMut(&mut ChaCha8Rng) -> Vec<Sample>,
{
    settings.validate()?;
    if data.is_empty() {
        return Err(BoundsError::EmptyData);
    }
    let n = data.len();
    let empirical = empirical_risk_mc(
        post,
        data,
        settings.m_empirical,
        mix_seed(settings.seed, &[SEED_TAG_EMPIRICAL]),
    )?;
    let kl_term = kl_term_value(post, prior, settings.lambda, settings.delta, n)?;
    let moment = moment_mc(
        settings.lambda,
        n,
        prior,
        true_risk,
        fresh_dataset,
        settings.m_prior,
        settings.m_data,
        mix_seed(settings.moment_seed, &[SEED_TAG_MOMENT]),
    )?;
    Ok(BoundBreakdown::assemble(
        BoundKind::Original,
        settings.lambda,
        settings.delta,
        empirical,
        kl_term,
        moment,
        EstimatorMeta {
            m_empirical: settings.m_empirical,
            m_prior: settings.m_prior,
            m_data: settings.m_data,
        },
    ))
}

/// Mixed bound: closed-form empirical term (quadratic expansion with
/// curvature `h` around the posterior mean), Monte Carlo moment term with
/// the same seed derivation as [`bound_original`].
///
/// `map_loss` is the loss of the posterior mean on `data`: the summed
/// squared residuals for the Gaussian likelihood (`empirical_risk_closed`)
/// or the mean NLL for other likelihoods (`empirical_risk_taylor`).
pub fn bound_mixed<F, G>(
    settings: &BoundSettings,
    post: &IsotropicGaussian,
    prior: &IsotropicGaussian,
    data: &[Sample],
    map_loss: MapLoss,
    h: f64,
    true_risk: F,
    fresh_dataset: G,
) -> Result<BoundBreakdown, BoundsError>
where
    F: FnMut(&FlatParams) -> Result<f64, BoundsError>,
    G: FnMut(&mut ChaCha8Rng) -> Vec<Sample>,
{
    settings.validate()?;
    if data.is_empty() {
        return Err(BoundsError::EmptyData);
    }
    let n = data.len();
    let empirical = match map_loss {
        MapLoss::GaussianMseSum(mse_sum) => {
            empirical_risk_closed(mse_sum, n, post.variance(), h)
        }
        MapLoss::MeanLoss(mean_loss) => empirical_risk_taylor(mean_loss, n, post.variance(), h),
    };
    let kl_term = kl_term_value(post, prior, settings.lambda, settings.delta, n)?;
    let moment = moment_mc(
        settings.lambda,
        n,
        prior,
        true_risk,
        fresh_dataset,
        settings.m_prior,
        settings.m_data,
        mix_seed(settings.moment_seed, &[SEED_TAG_MOMENT]),
    )?;
    Ok(BoundBreakdown::assemble(
        BoundKind::Mixed,
        settings.lambda,
        settings.delta,
        McEstimate::exact(empirical),
        kl_term,
        moment,
        EstimatorMeta {
            m_empirical: 0,
            m_prior: settings.m_prior,
            m_data: settings.m_data,
        },
    ))
}

/// MAP-loss input of the mixed/approximate empirical term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MapLoss {
    /// Summed squared residuals of the posterior mean (Gaussian likelihood).
    GaussianMseSum(f64),
    /// Mean per-sample loss of the posterior mean (e.g. cross-entropy).
    MeanLoss(f64),
}

/// Inputs of the fully closed-form bound.
#[derive(Debug, Clone, Copy)]
pub struct ApproxBoundInputs {
    pub lambda: f64,
    /// Evaluation dataset size.
    pub n: usize,
    /// Parameter count.
    pub d: usize,
    /// Curvature summary at the posterior mean.
    pub h: f64,
    pub prior_var: f64,
    /// Summed squared residuals of the posterior mean on the dataset.
    pub map_mse_sum: f64,
    pub sigma_x2: f64,
    pub sigma_eps2: f64,
    /// Plug-in for the unobservable `w_*` term of the moment numerator.
    pub w_star_norm2: f64,
    /// Squared distance ‖w_ρ̂ − w_π‖² entering the KL (0 when the posterior
    /// is centred at the prior mean).
    pub w_gap_norm2: f64,
    pub delta: f64,
    pub moment_form: MomentForm,
}

/// Fully closed-form bound: posterior variance from the precision update,
/// closed empirical term, isotropic KL, closed moment term. Errors with the
/// admissible-region constant when `λ ≥ 1/c`.
pub fn bound_approximate(inputs: &ApproxBoundInputs) -> Result<BoundBreakdown, BoundsError> {
    if inputs.lambda <= 0.0 {
        return Err(BoundsError::InvalidParameter(format!(
            "temperature must be positive, got {}",
            inputs.lambda
        )));
    }
    if !(inputs.delta > 0.0 && inputs.delta <= 1.0) {
        return Err(BoundsError::InvalidParameter(format!(
            "confidence δ must lie in (0, 1], got {}",
            inputs.delta
        )));
    }
    if inputs.n == 0 {
        return Err(BoundsError::EmptyData);
    }
    let post_var = posterior_variance_parts(inputs.lambda, inputs.h, inputs.d, inputs.prior_var);
    let empirical = empirical_risk_closed(inputs.map_mse_sum, inputs.n, post_var, inputs.h);
    let d = inputs.d as f64;
    let ratio = post_var / inputs.prior_var;
    let kl = 0.5
        * (d * ratio + inputs.w_gap_norm2 / inputs.prior_var - d - d * ratio.ln())
            .max(0.0);
    let kl_term = (kl + (1.0 / inputs.delta).ln()) / (inputs.lambda * inputs.n as f64);
    let cfg = MomentConfig {
        n: inputs.n,
        m_prior: 0,
        m_data: 0,
        sigma_x2: inputs.sigma_x2,
        sigma_eps2: inputs.sigma_eps2,
        w_star_norm2: inputs.w_star_norm2,
        form: inputs.moment_form,
    };
    let moment = moment_closed(inputs.lambda, &cfg, inputs.prior_var, inputs.d)?;
    Ok(BoundBreakdown::assemble(
        BoundKind::Approximate,
        inputs.lambda,
        inputs.delta,
        McEstimate::exact(empirical),
        kl_term,
        McEstimate::exact(moment),
        EstimatorMeta::default(),
    ))
}

/// One point of the analytic single-dimension curve (all structural
/// constants set to 1, `σ²_ε = 0`, constants dropped):
///
/// `B(λ) = ½/(λ+1) + 2/(1−2λ) + (1/λ)[½(1/(λ+1) − ln 1/(λ+1)) + ln(1/δ)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorollaryPoint {
    pub lambda: f64,
    pub empirical_risk: f64,
    pub moment: f64,
    pub kl: f64,
    pub total: f64,
}

/// Evaluates the analytic curve at one temperature; `λ` must lie in
/// `(0, ½)` (the moment pole) and `δ` in `(0, 1]`.
pub fn corollary1_point(lambda: f64, delta: f64) -> Result<CorollaryPoint, BoundsError> {
    if !(lambda > 0.0 && lambda < 0.5) {
        return Err(BoundsError::CurveDomain { lambda });
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(BoundsError::InvalidParameter(format!(
            "confidence δ must lie in (0, 1], got {delta}"
        )));
    }
    let post_var = 1.0 / (lambda + 1.0);
    let empirical_risk = 0.5 * post_var;
    let moment = 2.0 / (1.0 - 2.0 * lambda);
    let kl = (0.5 * (post_var - post_var.ln()) + (1.0 / delta).ln()) / lambda;
    Ok(CorollaryPoint {
        lambda,
        empirical_risk,
        moment,
        kl,
        total: empirical_risk + moment + kl,
    })
}

/// Evaluates the analytic curve on a grid; every grid point must be
/// admissible.
pub fn corollary1_curve(lambda_grid: &[f64], delta: f64) -> Result<Vec<CorollaryPoint>, BoundsError> {
    lambda_grid
        .iter()
        .map(|&l| corollary1_point(l, delta))
        .collect()
}

/// Tempered evidence lower bound `−E_ρ̂ L̂ − KL/(λn)` with the empirical
/// term estimated by Monte Carlo. Deterministic given `rng_seed`.
pub fn elbo(
    post: &IsotropicGaussian,
    prior: &IsotropicGaussian,
    data: &[Sample],
    lambda: f64,
    m: usize,
    rng_seed: u64,
) -> Result<f64, BoundsError> {
    if lambda <= 0.0 {
        return Err(BoundsError::InvalidParameter(format!(
            "temperature must be positive, got {lambda}"
        )));
    }
    if data.is_empty() {
        return Err(BoundsError::EmptyData);
    }
    let er = empirical_risk_mc(post, data, m, rng_seed)?;
    let kl = kl_gaussian_iso(post, prior)?;
    Ok(-er.value - kl / (lambda * data.len() as f64))
}
