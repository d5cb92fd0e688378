//! Run configuration: flat TOML files with sections, serde-backed, with
//! every knob defaulted to the standard protocol values. The resolved
//! configuration re-serializes deterministically and is embedded in report
//! headers for provenance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{BoundKind, MomentForm};
use crate::eval::InitScheme;
use crate::laplace::Task;
use crate::nnet::{ArchSpec, FlatParams, OutputHead};
use crate::util::{log_space, mix_seed, rng_from_seed};

/// Configuration-stage errors (malformed file, invalid values).
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_seed() -> u64 {
    42
}
fn default_n_seeds() -> usize {
    10
}
fn default_delta() -> f64 {
    0.05
}
fn default_output_dir() -> String {
    "out".into()
}
fn default_kinds() -> Vec<BoundKind> {
    vec![BoundKind::Approximate, BoundKind::Mixed, BoundKind::Original]
}

/// Where samples come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Csv,
    Synthetic,
}

/// `[data]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: SourceKind,
    /// CSV path (csv source only).
    pub path: String,
    pub target_column: String,
    /// Empty = every non-target column.
    pub feature_columns: Vec<String>,
    pub task: Task,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: SourceKind::Synthetic,
            path: String::new(),
            target_column: "y".into(),
            feature_columns: Vec::new(),
            task: Task::Regression,
        }
    }
}

/// `[synthetic]` section: the linear-Gaussian generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    /// Feature (= parameter) dimension.
    pub d: usize,
    pub sigma_x2: f64,
    pub sigma_eps2: f64,
    /// ‖w_*‖²; the direction is drawn from `seed` unless `w_star` is given.
    pub w_star_norm2: f64,
    /// Explicit generating weights (overrides `w_star_norm2`).
    pub w_star: Vec<f64>,
    /// Pool size for sweep datasets.
    pub n_samples: usize,
    /// Dataset size per oracle draw (validity studies, moment sampling).
    pub n_per_draw: usize,
    pub seed: u64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            d: 8,
            sigma_x2: 1.0,
            sigma_eps2: 0.25,
            w_star_norm2: 1.0,
            w_star: Vec::new(),
            n_samples: 4100,
            n_per_draw: 50,
            seed: 7,
        }
    }
}

impl SyntheticSection {
    /// Materializes the generating weights: explicit values if given, else a
    /// deterministic direction from `seed` scaled to `√w_star_norm2`.
    pub fn w_star_params(&self) -> Result<FlatParams, ConfigError> {
        let values = if !self.w_star.is_empty() {
            if self.w_star.len() != self.d {
                return Err(ConfigError::Invalid(format!(
                    "w_star has {} entries but d = {}",
                    self.w_star.len(),
                    self.d
                )));
            }
            self.w_star.clone()
        } else {
            use rand_distr::{Distribution, StandardNormal};
            let mut rng = rng_from_seed(mix_seed(self.seed, &[0x575f]));
            let raw: Vec<f64> = (0..self.d)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(ConfigError::Invalid("degenerate w_star direction".into()));
            }
            let scale = self.w_star_norm2.sqrt() / norm;
            raw.iter().map(|v| v * scale).collect()
        };
        FlatParams::new(ArchSpec::linear(self.d), values)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

/// `[splits]` section: five-way split sizes plus the shuffle seed base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitsSection {
    pub train: usize,
    pub test: usize,
    pub validation: usize,
    pub trainsuffix: usize,
    pub z_true: usize,
    pub seed: u64,
}

impl Default for SplitsSection {
    fn default() -> Self {
        Self {
            train: 751,
            test: 835,
            validation: 418,
            trainsuffix: 84,
            z_true: 2000,
            seed: 0,
        }
    }
}

/// `[arch]` section: hidden widths and output head; input and output
/// dimensions come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSection {
    pub hidden: Vec<usize>,
    pub head: HeadName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadName {
    Identity,
    Softmax,
}

impl Default for ArchSection {
    fn default() -> Self {
        Self {
            hidden: vec![8, 8],
            head: HeadName::Identity,
        }
    }
}

/// `[train]` section (flat keys; `init_scale` applies to the gaussian
/// scheme only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub step_size: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub init: InitName,
    pub init_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitName {
    UniformFanIn,
    Gaussian,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            epochs: 10,
            batch_size: 32,
            init: InitName::UniformFanIn,
            init_scale: 0.1,
        }
    }
}

impl TrainSection {
    #[must_use]
    pub fn init_scheme(&self) -> InitScheme {
        match self.init {
            InitName::UniformFanIn => InitScheme::UniformFanIn,
            InitName::Gaussian => InitScheme::Gaussian {
                scale: self.init_scale,
            },
        }
    }
}

/// `[grids]` section. Empty lists select the defaults: 15 log-spaced
/// temperatures in [1e-2, 1e5] and 20 log-spaced prior variances in
/// [1e-5, 1e-1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct GridsSection {
    pub lambda: Vec<f64>,
    pub prior_var: Vec<f64>,
}

impl GridsSection {
    #[must_use]
    pub fn lambda_grid(&self) -> Vec<f64> {
        if self.lambda.is_empty() {
            log_space(1e-2, 1e5, 15)
        } else {
            self.lambda.clone()
        }
    }

    #[must_use]
    pub fn prior_var_grid(&self) -> Vec<f64> {
        if self.prior_var.is_empty() {
            log_space(1e-5, 1e-1, 20)
        } else {
            self.prior_var.clone()
        }
    }
}

/// `[mc]` section: Monte Carlo budgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub m_empirical: usize,
    pub m_prior: usize,
    pub m_data: usize,
    /// Posterior draws for test metrics.
    pub metric_m: usize,
    pub ece_bins: usize,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            m_empirical: 100,
            m_prior: 10,
            m_data: 10,
            metric_m: 100,
            ece_bins: 15,
        }
    }
}

/// `[moment]` section: conventions for the closed moment term on observed
/// data. `w_star_norm2 = None` uses ‖w_π‖² per protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentSection {
    pub sigma_eps2: f64,
    pub w_star_norm2: Option<f64>,
    pub form: MomentForm,
}

impl Default for MomentSection {
    fn default() -> Self {
        Self {
            sigma_eps2: 1.0,
            w_star_norm2: None,
            form: MomentForm::Appendix,
        }
    }
}

/// Full sweep configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub seed: u64,
    pub n_seeds: usize,
    pub delta: f64,
    pub output_dir: String,
    pub kinds: Vec<BoundKind>,
    pub data: DataSection,
    pub synthetic: SyntheticSection,
    pub splits: SplitsSection,
    pub arch: ArchSection,
    pub train: TrainSection,
    pub grids: GridsSection,
    pub mc: McSection,
    pub moment: MomentSection,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            n_seeds: default_n_seeds(),
            delta: default_delta(),
            output_dir: default_output_dir(),
            kinds: default_kinds(),
            data: DataSection::default(),
            synthetic: SyntheticSection::default(),
            splits: SplitsSection::default(),
            arch: ArchSection::default(),
            train: TrainSection::default(),
            grids: GridsSection::default(),
            mc: McSection::default(),
            moment: MomentSection::default(),
        }
    }
}

impl SweepConfig {
    /// Parses a TOML document, leaving omitted keys at their defaults.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural validation beyond what serde can express.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_seeds == 0 {
            return Err(ConfigError::Invalid("n_seeds must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "delta must lie in (0, 1], got {}",
                self.delta
            )));
        }
        if self.kinds.is_empty() {
            return Err(ConfigError::Invalid("at least one bound kind is required".into()));
        }
        let lambda = self.grids.lambda_grid();
        if lambda.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return Err(ConfigError::Invalid(
                "lambda grid entries must be positive and finite".into(),
            ));
        }
        if lambda.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::Invalid(
                "lambda grid must be strictly increasing".into(),
            ));
        }
        let prior = self.grids.prior_var_grid();
        if prior.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(ConfigError::Invalid(
                "prior variance grid entries must be positive and finite".into(),
            ));
        }
        if self.splits.train == 0
            || self.splits.test == 0
            || self.splits.trainsuffix == 0
            || self.splits.z_true == 0
        {
            return Err(ConfigError::Invalid(
                "train, test, trainsuffix and z_true splits must be nonempty".into(),
            ));
        }
        if self.mc.m_empirical == 0 || self.mc.m_prior == 0 || self.mc.m_data == 0 {
            return Err(ConfigError::Invalid("Monte Carlo budgets must be positive".into()));
        }
        if self.mc.metric_m == 0 || self.mc.ece_bins == 0 {
            return Err(ConfigError::Invalid(
                "metric draw count and calibration bins must be positive".into(),
            ));
        }
        match self.data.source {
            SourceKind::Csv => {
                if self.data.path.is_empty() {
                    return Err(ConfigError::Invalid("csv source needs data.path".into()));
                }
                if self.data.target_column.is_empty() {
                    return Err(ConfigError::Invalid("csv source needs data.target_column".into()));
                }
            }
            SourceKind::Synthetic => {
                if self.data.task == Task::Classification || self.arch.head == HeadName::Softmax {
                    return Err(ConfigError::Invalid(
                        "the synthetic oracle generates regression targets only".into(),
                    ));
                }
                if self.synthetic.d == 0 {
                    return Err(ConfigError::Invalid("synthetic.d must be positive".into()));
                }
            }
        }
        let head = match self.arch.head {
            HeadName::Identity => Task::Regression,
            HeadName::Softmax => Task::Classification,
        };
        if head != self.data.task {
            return Err(ConfigError::Invalid(
                "arch.head must match data.task (identity↔regression, softmax↔classification)"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Network architecture for the given data dimensions.
    pub fn arch_for(&self, input_dim: usize, n_classes: Option<usize>) -> Result<ArchSpec, ConfigError> {
        let output_dim = match self.arch.head {
            HeadName::Identity => 1,
            HeadName::Softmax => n_classes.ok_or_else(|| {
                ConfigError::Invalid("classification needs class labels in the data".into())
            })?,
        };
        let head = match self.arch.head {
            HeadName::Identity => OutputHead::Identity,
            HeadName::Softmax => OutputHead::Softmax,
        };
        let mut widths = Vec::with_capacity(self.arch.hidden.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(&self.arch.hidden);
        widths.push(output_dim);
        ArchSpec::new(widths, head).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Deterministic TOML rendering of the fully resolved configuration.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Where the validity study centres its prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMean {
    Zeros,
    WStar,
}

/// Configuration of the bound-validity study on the synthetic oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidityConfig {
    pub seed: u64,
    pub trials: usize,
    pub lambda: f64,
    pub prior_var: f64,
    pub delta: f64,
    pub output_dir: String,
    pub z_true_size: usize,
    pub m_empirical: usize,
    pub m_prior: usize,
    pub m_data: usize,
    pub prior_mean: PriorMean,
    pub synthetic: SyntheticSection,
}

impl Default for ValidityConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            trials: 200,
            lambda: 0.5,
            prior_var: 0.05,
            delta: default_delta(),
            output_dir: default_output_dir(),
            z_true_size: 2000,
            m_empirical: 100,
            m_prior: 10,
            m_data: 10,
            prior_mean: PriorMean::Zeros,
            synthetic: SyntheticSection {
                d: 20,
                n_per_draw: 50,
                ..SyntheticSection::default()
            },
        }
    }
}

impl ValidityConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.trials == 0 {
            return Err(ConfigError::Invalid("trials must be at least 1".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(ConfigError::Invalid("lambda must be positive".into()));
        }
        if !(self.prior_var > 0.0 && self.prior_var.is_finite()) {
            return Err(ConfigError::Invalid("prior_var must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(ConfigError::Invalid("delta must lie in (0, 1]".into()));
        }
        if self.z_true_size == 0 {
            return Err(ConfigError::Invalid("z_true_size must be positive".into()));
        }
        if self.m_empirical == 0 || self.m_prior == 0 || self.m_data == 0 {
            return Err(ConfigError::Invalid("Monte Carlo budgets must be positive".into()));
        }
        if self.synthetic.d == 0 || self.synthetic.n_per_draw == 0 {
            return Err(ConfigError::Invalid(
                "synthetic.d and synthetic.n_per_draw must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Configuration of the synthetic dataset generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthGenConfig {
    /// Output CSV path.
    pub output: String,
    /// Number of samples to emit.
    pub n_samples: usize,
    pub synthetic: SyntheticSection,
}

impl Default for SynthGenConfig {
    fn default() -> Self {
        Self {
            output: "synthetic.csv".into(),
            n_samples: 4100,
            synthetic: SyntheticSection::default(),
        }
    }
}

impl SynthGenConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.output.is_empty() {
            return Err(ConfigError::Invalid("output path must not be empty".into()));
        }
        if self.n_samples == 0 {
            return Err(ConfigError::Invalid("n_samples must be positive".into()));
        }
        if self.synthetic.d == 0 {
            return Err(ConfigError::Invalid("synthetic.d must be positive".into()));
        }
        Ok(())
    }

    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
