//! Dataset handling: CSV ingestion, deterministic five-way splits with
//! reproducible manifests, train-set normalization, and the synthetic
//! linear-Gaussian oracle with its analytic risk.
//!
//! The five-way split (`train`, `test`, `validation`, `trainsuffix`,
//! `z_true`) supports the evaluation protocol where the prior mean is fit
//! on `train`, bound terms are evaluated on the held-out `trainsuffix`, and
//! `z_true` stands in for the data distribution when approximating
//! population quantities.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::laplace::{IsotropicGaussian, Task};
use crate::nnet::{FlatParams, Sample, Target, HALF_LN_2PI};
use crate::util::{mix_seed, rng_from_seed};

/// Errors from ingestion, splitting, normalization, and the oracle.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("column {name:?} not found in header {header:?}")]
    MissingColumn { name: String, header: Vec<String> },
    #[error("data row {row}: cannot parse {column:?} value {value:?} as a number")]
    BadCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("data row {row}: expected {expected} fields, got {got}")]
    RaggedRow {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("the file contains a header but no data rows")]
    NoRows,
    #[error("split needs {required} samples but only {available} are available")]
    InsufficientData { required: usize, available: usize },
    #[error("invalid split manifest: {0}")]
    BadManifest(String),
    #[error("cannot normalize or summarize an empty dataset")]
    EmptyData,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid synthetic oracle: {0}")]
    BadOracle(String),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// A loaded CSV dataset: samples plus the column metadata needed to
/// interpret them. For classification, `class_labels[i]` is the original
/// label string mapped to class index `i` (first-occurrence order).
#[derive(Debug, Clone)]
pub struct CsvDataset {
    pub samples: Vec<Sample>,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub class_labels: Option<Vec<String>>,
}

/// Loads a headed CSV file.
///
/// `feature_columns = None` selects every non-target column in header
/// order. Regression targets parse as numbers; classification targets are
/// arbitrary strings mapped to contiguous class indices in order of first
/// appearance. Parse failures report the 1-based data row.
pub fn load_csv(
    path: &Path,
    target_column: &str,
    feature_columns: Option<&[String]>,
    task: Task,
) -> Result<CsvDataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => DataError::Io {
                path: path.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
            },
            _ => DataError::Csv(e),
        })?;
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let find = |name: &str| -> Result<usize, DataError> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn {
                name: name.to_string(),
                header: header.clone(),
            })
    };
    let target_idx = find(target_column)?;
    let feature_idx: Vec<usize> = match feature_columns {
        Some(names) => names
            .iter()
            .map(|n| find(n))
            .collect::<Result<Vec<_>, _>>()?,
        None => (0..header.len()).filter(|&i| i != target_idx).collect(),
    };
    let feature_names: Vec<String> = feature_idx.iter().map(|&i| header[i].clone()).collect();

    let mut samples = Vec::new();
    let mut class_labels: Vec<String> = Vec::new();
    for (row_zero, record) in reader.records().enumerate() {
        let row = row_zero + 1;
        let record = record?;
        let expected = header.len();
        if record.len() != expected {
            return Err(DataError::RaggedRow {
                row,
                expected,
                got: record.len(),
            });
        }
        let mut features = Vec::with_capacity(feature_idx.len());
        for (&i, name) in feature_idx.iter().zip(&feature_names) {
            let raw = record.get(i).unwrap_or("").trim();
            let v: f64 = raw.parse().map_err(|_| DataError::BadCell {
                row,
                column: name.clone(),
                value: raw.to_string(),
            })?;
            features.push(v);
        }
        let raw_target = record.get(target_idx).unwrap_or("").trim();
        let target = match task {
            Task::Regression => {
                let y: f64 = raw_target.parse().map_err(|_| DataError::BadCell {
                    row,
                    column: target_column.to_string(),
                    value: raw_target.to_string(),
                })?;
                Target::Value(y)
            }
            Task::Classification => {
                let idx = match class_labels.iter().position(|l| l == raw_target) {
                    Some(i) => i,
                    None => {
                        class_labels.push(raw_target.to_string());
                        class_labels.len() - 1
                    }
                };
                Target::Class(idx)
            }
        };
        samples.push(Sample { features, target });
    }
    if samples.is_empty() {
        return Err(DataError::NoRows);
    }
    Ok(CsvDataset {
        samples,
        feature_names,
        target_name: target_column.to_string(),
        class_labels: match task {
            Task::Classification => Some(class_labels),
            Task::Regression => None,
        },
    })
}

/// Writes samples as a headed CSV. Floats use the shortest representation
/// that round-trips, so reloading reproduces every value exactly.
pub fn write_csv(
    path: &Path,
    samples: &[Sample],
    feature_names: &[String],
    target_name: &str,
) -> Result<(), DataError> {
    let mut out = String::new();
    out.push_str(&feature_names.join(","));
    out.push(',');
    out.push_str(target_name);
    out.push('\n');
    for s in samples {
        for f in &s.features {
            out.push_str(&format!("{f},"));
        }
        match s.target {
            Target::Value(y) => out.push_str(&format!("{y}")),
            Target::Class(c) => out.push_str(&format!("{c}")),
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(out.as_bytes()).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Requested sizes of the five splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
    pub validation: usize,
    pub trainsuffix: usize,
    pub z_true: usize,
}

impl SplitCounts {
    #[must_use]
    pub fn total(&self) -> usize {
        self.train + self.test + self.validation + self.trainsuffix + self.z_true
    }
}

/// Everything needed to reproduce a split exactly: the shuffle seed, the
/// requested counts, the source length, and the full permutation actually
/// applied. Serializable to JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub counts: SplitCounts,
    pub n_total: usize,
    pub permutation: Vec<usize>,
}

/// The five disjoint splits plus the manifest that reproduces them.
#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub trainsuffix: Vec<Sample>,
    pub z_true: Vec<Sample>,
    pub manifest: SplitManifest,
}

/// Shuffles indices with a seeded generator and assigns contiguous blocks
/// in the fixed order train → test → validation → trainsuffix → z_true.
/// Indices beyond the requested total are left unused. Deterministic given
/// `seed`.
pub fn split(data: &[Sample], counts: SplitCounts, seed: u64) -> Result<DatasetSplits, DataError> {
    let required = counts.total();
    if required > data.len() {
        return Err(DataError::InsufficientData {
            required,
            available: data.len(),
        });
    }
    let mut permutation: Vec<usize> = (0..data.len()).collect();
    permutation.shuffle(&mut rng_from_seed(seed));
    let manifest = SplitManifest {
        seed,
        counts,
        n_total: data.len(),
        permutation,
    };
    Ok(materialize(data, manifest))
}

/// Reapplies a recorded manifest to the same source data.
pub fn split_from_manifest(
    data: &[Sample],
    manifest: &SplitManifest,
) -> Result<DatasetSplits, DataError> {
    if manifest.n_total != data.len() {
        return Err(DataError::BadManifest(format!(
            "manifest was built for {} samples, got {}",
            manifest.n_total,
            data.len()
        )));
    }
    if manifest.permutation.len() != data.len() {
        return Err(DataError::BadManifest(
            "permutation length does not match the dataset".into(),
        ));
    }
    let mut seen = vec![false; data.len()];
    for &i in &manifest.permutation {
        if i >= data.len() || seen[i] {
            return Err(DataError::BadManifest(
                "permutation is not a bijection on the dataset indices".into(),
            ));
        }
        seen[i] = true;
    }
    if manifest.counts.total() > data.len() {
        return Err(DataError::BadManifest(
            "split counts exceed the dataset size".into(),
        ));
    }
    Ok(materialize(data, manifest.clone()))
}

fn materialize(data: &[Sample], manifest: SplitManifest) -> DatasetSplits {
    let take = |lo: usize, len: usize| -> Vec<Sample> {
        manifest.permutation[lo..lo + len]
            .iter()
            .map(|&i| data[i].clone())
            .collect()
    };
    let c = manifest.counts;
    let mut offset = 0;
    let mut next = |len: usize| {
        let block = take(offset, len);
        offset += len;
        block
    };
    DatasetSplits {
        train: next(c.train),
        test: next(c.test),
        validation: next(c.validation),
        trainsuffix: next(c.trainsuffix),
        z_true: next(c.z_true),
        manifest,
    }
}

/// Serializes a manifest as pretty JSON.
pub fn manifest_to_json(manifest: &SplitManifest) -> Result<String, DataError> {
    Ok(serde_json::to_string_pretty(manifest)?)
}

/// Parses a manifest from JSON.
pub fn manifest_from_json(json: &str) -> Result<SplitManifest, DataError> {
    Ok(serde_json::from_str(json)?)
}

/// Per-feature affine standardization fit on one dataset and applied to
/// others. Zero-variance features (and a zero-variance regression target)
/// pass through unchanged. Classification targets are never touched.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    feat_mean: Vec<f64>,
    feat_std: Vec<f64>,
    target_mean: f64,
    target_std: f64,
    task: Task,
}

impl Normalizer {
    /// Computes means and (population) standard deviations on the fitting
    /// set only.
    pub fn fit(fitting_set: &[Sample], task: Task) -> Result<Self, DataError> {
        if fitting_set.is_empty() {
            return Err(DataError::EmptyData);
        }
        let dim = fitting_set[0].features.len();
        let n = fitting_set.len() as f64;
        let mut feat_mean = vec![0.0; dim];
        for s in fitting_set {
            if s.features.len() != dim {
                return Err(DataError::DimensionMismatch {
                    expected: dim,
                    got: s.features.len(),
                });
            }
            for (m, f) in feat_mean.iter_mut().zip(&s.features) {
                *m += f / n;
            }
        }
        let mut feat_std = vec![0.0; dim];
        for s in fitting_set {
            for ((v, f), m) in feat_std.iter_mut().zip(&s.features).zip(&feat_mean) {
                *v += (f - m) * (f - m) / n;
            }
        }
        for v in &mut feat_std {
            *v = v.sqrt();
        }
        let (mut target_mean, mut target_std) = (0.0, 0.0);
        if task == Task::Regression {
            for s in fitting_set {
                if let Target::Value(y) = s.target {
                    target_mean += y / n;
                }
            }
            for s in fitting_set {
                if let Target::Value(y) = s.target {
                    target_std += (y - target_mean) * (y - target_mean) / n;
                }
            }
            target_std = target_std.sqrt();
        }
        Ok(Self {
            feat_mean,
            feat_std,
            target_mean,
            target_std,
            task,
        })
    }

    /// Standardizes a dataset with the fitted statistics.
    pub fn apply(&self, samples: &[Sample]) -> Result<Vec<Sample>, DataError> {
        let dim = self.feat_mean.len();
        samples
            .iter()
            .map(|s| {
                if s.features.len() != dim {
                    return Err(DataError::DimensionMismatch {
                        expected: dim,
                        got: s.features.len(),
                    });
                }
                let features: Vec<f64> = s
                    .features
                    .iter()
                    .enumerate()
                    .map(|(j, &f)| {
                        if self.feat_std[j] > 0.0 {
                            (f - self.feat_mean[j]) / self.feat_std[j]
                        } else {
                            f
                        }
                    })
                    .collect();
                let target = match (self.task, s.target) {
                    (Task::Regression, Target::Value(y)) if self.target_std > 0.0 => {
                        Target::Value((y - self.target_mean) / self.target_std)
                    }
                    (_, t) => t,
                };
                Ok(Sample { features, target })
            })
            .collect()
    }

    /// Mean of the regression target on the fitting set.
    #[must_use]
    pub fn target_mean(&self) -> f64 {
        self.target_mean
    }

    /// Standard deviation of the regression target on the fitting set.
    #[must_use]
    pub fn target_std(&self) -> f64 {
        self.target_std
    }
}

/// Convenience wrapper: fit on the fitting set, apply to it.
pub fn normalize(fitting_set: &[Sample], task: Task) -> Result<(Vec<Sample>, Normalizer), DataError> {
    let norm = Normalizer::fit(fitting_set, task)?;
    let out = norm.apply(fitting_set)?;
    Ok((out, norm))
}

/// The linear-Gaussian generating process: features `x ~ N(0, σ²ₓ I_d)`,
/// targets `y = w_*·x + ε` with `ε ~ N(0, σ²_ε)`.
///
/// `w_star` is a pure linear model ([`crate::nnet::ArchSpec::linear`]),
/// so its parameter count equals the feature dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOracleSpec {
    w_star: FlatParams,
    sigma_x2: f64,
    sigma_eps2: f64,
    n_per_draw: usize,
    seed: u64,
}

impl SyntheticOracleSpec {
    /// Validates and builds an oracle description. `sigma_x2` must be
    /// positive, `sigma_eps2` nonnegative, `n_per_draw ≥ 1`, and `w_star`
    /// must be a scalar-output linear model.
    pub fn new(
        w_star: FlatParams,
        sigma_x2: f64,
        sigma_eps2: f64,
        n_per_draw: usize,
        seed: u64,
    ) -> Result<Self, DataError> {
        if !(sigma_x2.is_finite() && sigma_x2 > 0.0) {
            return Err(DataError::BadOracle(format!(
                "feature variance must be positive, got {sigma_x2}"
            )));
        }
        if !(sigma_eps2.is_finite() && sigma_eps2 >= 0.0) {
            return Err(DataError::BadOracle(format!(
                "noise variance must be nonnegative, got {sigma_eps2}"
            )));
        }
        if n_per_draw == 0 {
            return Err(DataError::BadOracle("n_per_draw must be at least 1".into()));
        }
        if w_star.arch().has_bias()
            || w_star.arch().num_layers() != 1
            || w_star.arch().output_dim() != 1
        {
            return Err(DataError::BadOracle(
                "w_star must be a bias-free scalar linear model".into(),
            ));
        }
        Ok(Self {
            w_star,
            sigma_x2,
            sigma_eps2,
            n_per_draw,
            seed,
        })
    }

    /// Feature (and parameter) dimension `d`.
    #[must_use]
    pub fn d(&self) -> usize {
        self.w_star.param_count()
    }

    #[must_use]
    pub fn w_star(&self) -> &FlatParams {
        &self.w_star
    }

    #[must_use]
    pub fn sigma_x2(&self) -> f64 {
        self.sigma_x2
    }

    #[must_use]
    pub fn sigma_eps2(&self) -> f64 {
        self.sigma_eps2
    }

    #[must_use]
    pub fn n_per_draw(&self) -> usize {
        self.n_per_draw
    }

    #[must_use]
    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Draws one fresh size-`n_per_draw` dataset. Deterministic in
/// `(spec.seed, draw_index)`; distinct draw indices give independent
/// streams.
#[must_use]
pub fn synthetic_draw(spec: &SyntheticOracleSpec, draw_index: u64) -> Vec<Sample> {
    let mut rng = rng_from_seed(mix_seed(spec.seed, &[0x5359_4e54, draw_index]));
    synthetic_draw_with(spec, &mut rng)
}

/// Draws one fresh dataset from an explicit generator (used where a single
/// stream must thread through many draws, e.g. the moment estimator).
#[must_use]
pub fn synthetic_draw_with(
    spec: &SyntheticOracleSpec,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<Sample> {
    let d = spec.d();
    let sigma_x = spec.sigma_x2.sqrt();
    let sigma_eps = spec.sigma_eps2.sqrt();
    let w = spec.w_star.values();
    (0..spec.n_per_draw)
        .map(|_| {
            let features: Vec<f64> = (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    sigma_x * z
                })
                .collect();
            let noise: f64 = {
                let z: f64 = StandardNormal.sample(rng);
                sigma_eps * z
            };
            let y: f64 = features.iter().zip(w).map(|(x, wi)| x * wi).sum::<f64>() + noise;
            Sample::regression(features, y)
        })
        .collect()
}

/// Analytic Gibbs population risk of an isotropic posterior under the
/// oracle (unit-variance Gaussian NLL):
///
/// `E_ρ̂ L_D = ½ln2π + ½[σ²ₓ(‖w_* − w_ρ̂‖² + d σ²_ρ̂) + σ²_ε]`.
pub fn synthetic_true_risk(
    spec: &SyntheticOracleSpec,
    post: &IsotropicGaussian,
) -> Result<f64, DataError> {
    if post.dim() != spec.d() {
        return Err(DataError::DimensionMismatch {
            expected: spec.d(),
            got: post.dim(),
        });
    }
    let gap = spec.w_star.squared_distance(post.mean());
    let d = spec.d() as f64;
    Ok(HALF_LN_2PI
        + 0.5 * (spec.sigma_x2 * (gap + d * post.variance()) + spec.sigma_eps2))
}

/// Analytic population risk of fixed parameters under the oracle:
/// `L_D(w) = ½ln2π + ½[σ²ₓ‖w_* − w‖² + σ²_ε]`.
pub fn synthetic_risk_at(spec: &SyntheticOracleSpec, w: &FlatParams) -> Result<f64, DataError> {
    if w.param_count() != spec.d() {
        return Err(DataError::DimensionMismatch {
            expected: spec.d(),
            got: w.param_count(),
        });
    }
    let gap = spec.w_star.squared_distance(w);
    Ok(HALF_LN_2PI + 0.5 * (spec.sigma_x2 * gap + spec.sigma_eps2))
}
