//! PAC-Bayes generalization bounds for tempered (cold/warm) isotropic-Gaussian
//! posteriors over small feed-forward networks.
//!
//! The library evaluates three bounds on the expected population risk
//! `E_ρ̂ L_D` of a Gibbs-style posterior `ρ̂ = N(w_ρ̂, σ²_ρ̂ I)` centred at a
//! MAP estimate, where the posterior temperature is controlled by a scalar
//! `λ > 0`:
//!
//! * **original** — the theorem-form bound
//!   `E_ρ̂ L̂ + (KL(ρ̂‖π) + ln(1/δ) + Ψ) / (λn)`, with the empirical term and
//!   the log-moment `Ψ` estimated by Monte Carlo;
//! * **mixed** — the empirical term replaced by its closed form under a local
//!   quadratic (Laplace) expansion, the moment still Monte Carlo;
//! * **approximate** — fully closed form under a linearized-network model
//!   with Gaussian features, valid only for `λ < 1/c` where
//!   `c = 2 n σ²ₓ σ²_π`.
//!
//! Modules follow the pipeline: [`nnet`] (networks, per-sample gradients),
//! [`laplace`] (curvature and posterior variance), [`bounds`] (the bound
//! algebra and estimators), [`data`] (ingestion, splits, synthetic oracle),
//! [`eval`] (MAP training and predictive metrics), [`config`] (TOML run
//! descriptions), [`sweep`] (grid drivers), and [`report`] (deterministic
//! CSV/JSON artifacts used by the CLI).

pub mod bounds;
pub mod config;
pub mod data;
pub mod eval;
pub mod laplace;
pub mod nnet;
pub mod report;
pub mod sweep;
pub mod util;

pub use bounds::{
    bound_approximate, bound_mixed, bound_original, corollary1_curve, corollary1_point, elbo,
    empirical_risk_closed, empirical_risk_mc, empirical_risk_taylor, kl_gaussian_iso, mean_nll,
    moment_closed, moment_domain_constant, moment_mc, ApproxBoundInputs, BoundBreakdown,
    BoundKind, BoundSettings, BoundsError, CorollaryPoint, EstimatorMeta, MapLoss, McEstimate,
    MomentConfig, MomentForm,
};
pub use config::{
    ConfigError, DataSection, GridsSection, SourceKind, SweepConfig, SynthGenConfig,
    SyntheticSection, ValidityConfig,
};
pub use data::{
    load_csv, normalize, split, synthetic_draw, synthetic_draw_with, synthetic_risk_at,
    synthetic_true_risk, write_csv, CsvDataset, DataError, DatasetSplits, Normalizer, SplitCounts,
    SplitManifest, SyntheticOracleSpec,
};
pub use eval::{
    ece, predictive_and_gibbs_nll, predictive_nll, train_map, train_map_with_history, zero_one,
    EvalError, InitScheme, MetricReport, TrainConfig,
};
pub use laplace::{
    curvature_classification, curvature_regression, gradient_variance, posterior_variance,
    posterior_variance_parts, CurvatureSummary, IsotropicGaussian, LaplaceError, Task,
};
pub use nnet::{
    forward, linearized_forward, logits, nll_loss, per_sample_gradient, Activation, ArchSpec,
    FlatParams, LossKind, NetError, OutputHead, Sample, Target, HALF_LN_2PI,
};
pub use report::{Report, ReportError};
pub use sweep::{
    default_corollary_grid, run_corollary_demo, run_sweep, run_synth_gen, run_validity_study,
    wilson_lower, CellStatus, CorollaryOutcome, SweepError, SweepOutcome, SweepRow, SweepSummary,
    ValidityOutcome,
};
