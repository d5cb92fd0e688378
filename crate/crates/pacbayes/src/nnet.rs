//! Small dense feed-forward networks with flattened parameter vectors and
//! exact per-sample gradients.
//!
//! A network is a stack of affine layers with ReLU activations on hidden
//! layers and either an identity head (regression, Gaussian likelihood with
//! unit variance) or a softmax head (classification, categorical
//! likelihood). Parameters live in a single flat `f64` vector so that
//! isotropic Gaussian distributions over weights, KL divergences and
//! curvature traces are plain vector arithmetic.
//!
//! Gradients are computed by hand-rolled reverse-mode differentiation: one
//! forward pass records post-activation values, one backward pass pulls a
//! seed vector on the pre-head output back to all parameters. The ReLU
//! subgradient at exactly zero is taken to be 0.
//!
//! Flat layout: layers in order; within a layer the weight matrix
//! (row-major, `out_dim × in_dim`) precedes the bias vector.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::logsumexp;

/// `ln(2π)/2`, the per-sample floor of the unit-variance Gaussian NLL.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Errors from architecture construction and network evaluation.
#[derive(Debug, Error)]
pub enum NetError {
    /// Architecture description is structurally invalid.
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    /// A vector has the wrong length for the architecture.
    #[error("{what}: expected length {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// A parameter value is NaN or infinite.
    #[error("parameter vector contains a non-finite value at index {index}")]
    NonFinite { index: usize },
    /// Two parameter vectors belong to different architectures.
    #[error("architectures differ between parameter vectors")]
    ArchMismatch,
    /// The sample's target kind does not match the output head.
    #[error("target does not match the network head: {0}")]
    TargetMismatch(String),
    /// Raw-output gradient requested for a nonexistent output coordinate.
    #[error("output index {index} out of range for output dimension {output_dim}")]
    OutputIndexOutOfRange { index: usize, output_dim: usize },
}

/// Hidden-layer activation. Only ReLU is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
}

/// Output head determining the likelihood: identity for unit-variance
/// Gaussian regression, softmax for categorical classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputHead {
    Identity,
    Softmax,
}

/// Architecture of a dense network: layer widths (input, hidden…, output),
/// hidden activation, and output head.
///
/// Standard constructors produce biased layers, so the parameter count is
/// `Σ_l (widths[l]·widths[l+1] + widths[l+1])`. [`ArchSpec::linear`] builds
/// the one exception: a bias-free single affine layer `x ↦ W x` used as the
/// pure linear model (parameter count = input dimension × output dimension).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    layer_widths: Vec<usize>,
    activation: Activation,
    output_head: OutputHead,
    use_bias: bool,
}

impl ArchSpec {
    /// Builds a standard biased architecture.
    ///
    /// `layer_widths` lists input, hidden and output dimensions and must
    /// contain at least two positive entries.
    pub fn new(layer_widths: Vec<usize>, output_head: OutputHead) -> Result<Self, NetError> {
        if layer_widths.len() < 2 {
            return Err(NetError::InvalidArch(format!(
                "need at least input and output widths, got {}",
                layer_widths.len()
            )));
        }
        if let Some(pos) = layer_widths.iter().position(|&w| w == 0) {
            return Err(NetError::InvalidArch(format!(
                "layer width at position {pos} is zero"
            )));
        }
        Ok(Self {
            layer_widths,
            activation: Activation::Relu,
            output_head,
            use_bias: true,
        })
    }

    /// Pure linear model `f(x) = w·x`: single affine layer, identity head,
    /// no bias, scalar output. Parameter count equals `input_dim`, matching
    /// the linear-Gaussian analysis where features and weights share one
    /// d-dimensional space.
    #[must_use]
    pub fn linear(input_dim: usize) -> Self {
        assert!(input_dim > 0, "linear model needs at least one feature");
        Self {
            layer_widths: vec![input_dim, 1],
            activation: Activation::Relu,
            output_head: OutputHead::Identity,
            use_bias: false,
        }
    }

    /// Layer widths including input and output.
    #[must_use]
    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    #[must_use]
    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    #[must_use]
    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("widths nonempty")
    }

    #[must_use]
    pub fn output_head(&self) -> OutputHead {
        self.output_head
    }

    #[must_use]
    pub fn has_bias(&self) -> bool {
        self.use_bias
    }

    /// Number of affine layers.
    #[must_use]
    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    /// Total number of scalar parameters `d`.
    #[must_use]
    pub fn param_count(&self) -> usize {
        (0..self.num_layers()).map(|l| self.layer_size(l)).sum()
    }

    /// Parameters in affine layer `l` (weights plus optional bias).
    fn layer_size(&self, l: usize) -> usize {
        let (fan_in, fan_out) = (self.layer_widths[l], self.layer_widths[l + 1]);
        fan_out * fan_in + if self.use_bias { fan_out } else { 0 }
    }

    /// Flat offset of layer `l`'s weight block.
    fn layer_offset(&self, l: usize) -> usize {
        (0..l).map(|k| self.layer_size(k)).sum()
    }
}

/// A parameter assignment for a fixed architecture, stored flat.
///
/// Invariants (enforced at construction): the value vector has exactly
/// `arch.param_count()` entries and every entry is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams {
    arch: ArchSpec,
    values: Vec<f64>,
}

impl FlatParams {
    /// Wraps a flat value vector, validating length and finiteness.
    pub fn new(arch: ArchSpec, values: Vec<f64>) -> Result<Self, NetError> {
        let expected = arch.param_count();
        if values.len() != expected {
            return Err(NetError::ShapeMismatch {
                what: "parameter vector",
                expected,
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(NetError::NonFinite { index });
        }
        Ok(Self { arch, values })
    }

    /// All-zero parameters for the architecture.
    #[must_use]
    pub fn zeros(arch: ArchSpec) -> Self {
        let n = arch.param_count();
        Self {
            arch,
            values: vec![0.0; n],
        }
    }

    #[must_use]
    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    #[must_use]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access for optimizers. Callers must keep values finite;
    /// training re-checks for divergence after every step.
    #[must_use]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[must_use]
    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    /// `‖w‖²`.
    #[must_use]
    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// `‖w − other‖²`. Panics if architectures differ.
    #[must_use]
    pub fn squared_distance(&self, other: &Self) -> f64 {
        assert_eq!(self.arch, other.arch, "squared_distance across architectures");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// A single observation: feature vector plus target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub target: Target,
}

/// Regression value or classification class index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Value(f64),
    Class(usize),
}

impl Sample {
    /// Regression sample with a real-valued target.
    #[must_use]
    pub fn regression(features: Vec<f64>, y: f64) -> Self {
        Self {
            features,
            target: Target::Value(y),
        }
    }

    /// Classification sample with a class-index target.
    #[must_use]
    pub fn classification(features: Vec<f64>, class: usize) -> Self {
        Self {
            features,
            target: Target::Class(class),
        }
    }
}

/// Which scalar function of the network a gradient is taken of.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// Negative log likelihood of the sample's target under the head.
    Nll,
    /// The `k`-th pre-head output coordinate itself (used for curvature and
    /// gradient-variance estimates).
    RawOutput(usize),
}

/// Forward pass record: post-activation values per layer plus the pre-head
/// output. ReLU masks are recovered from post-activations (`a > 0`), which
/// encodes the subgradient-0-at-0 convention.
struct Trace {
    /// `acts[0]` is the input; `acts[l]` for hidden layers is post-ReLU.
    acts: Vec<Vec<f64>>,
    /// Pre-head output `z_L`.
    prehead: Vec<f64>,
}

fn check_input(params: &FlatParams, x: &[f64]) -> Result<(), NetError> {
    let expected = params.arch.input_dim();
    if x.len() != expected {
        return Err(NetError::ShapeMismatch {
            what: "input vector",
            expected,
            got: x.len(),
        });
    }
    Ok(())
}

/// Affine layer application: `z = W a + b`.
fn affine(params: &FlatParams, layer: usize, a: &[f64]) -> Vec<f64> {
    let arch = &params.arch;
    let (fan_in, fan_out) = (arch.layer_widths[layer], arch.layer_widths[layer + 1]);
    let off = arch.layer_offset(layer);
    let w = &params.values[off..off + fan_out * fan_in];
    let mut z = if arch.use_bias {
        params.values[off + fan_out * fan_in..off + fan_out * fan_in + fan_out].to_vec()
    } else {
        vec![0.0; fan_out]
    };
    for k in 0..fan_out {
        let row = &w[k * fan_in..(k + 1) * fan_in];
        let mut acc = 0.0;
        for (wi, ai) in row.iter().zip(a) {
            acc += wi * ai;
        }
        z[k] += acc;
    }
    z
}

fn forward_trace(params: &FlatParams, x: &[f64]) -> Result<Trace, NetError> {
    check_input(params, x)?;
    let num_layers = params.arch.num_layers();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(num_layers);
    acts.push(x.to_vec());
    let mut current = 0usize;
    for l in 0..num_layers - 1 {
        let mut z = affine(params, l, &acts[current]);
        for v in &mut z {
            *v = v.max(0.0);
        }
        acts.push(z);
        current += 1;
    }
    let prehead = affine(params, num_layers - 1, &acts[current]);
    Ok(Trace { acts, prehead })
}

/// Numerically stable softmax; components lie in [0, 1] and sum to 1 up to
/// rounding.
fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / total).collect()
}

/// Network output: pre-head values under an identity head, softmax
/// probabilities under a softmax head.
pub fn forward(params: &FlatParams, x: &[f64]) -> Result<Vec<f64>, NetError> {
    let trace = forward_trace(params, x)?;
    Ok(match params.arch.output_head {
        OutputHead::Identity => trace.prehead,
        OutputHead::Softmax => softmax(&trace.prehead),
    })
}

/// Pre-head output (logits for a softmax head).
pub fn logits(params: &FlatParams, x: &[f64]) -> Result<Vec<f64>, NetError> {
    Ok(forward_trace(params, x)?.prehead)
}

/// Pulls a seed vector on the pre-head output back to a flat parameter
/// gradient: `grad = J_z(w)ᵀ · seed` where `z` is the pre-head output.
fn backward(params: &FlatParams, trace: &Trace, seed: &[f64]) -> Vec<f64> {
    let arch = &params.arch;
    let num_layers = arch.num_layers();
    let mut grad = vec![0.0; params.values.len()];
    let mut delta = seed.to_vec();
    for l in (0..num_layers).rev() {
        let (fan_in, fan_out) = (arch.layer_widths[l], arch.layer_widths[l + 1]);
        let off = arch.layer_offset(l);
        let a_in = &trace.acts[l];
        for k in 0..fan_out {
            let g_row = &mut grad[off + k * fan_in..off + (k + 1) * fan_in];
            for (gj, aj) in g_row.iter_mut().zip(a_in) {
                *gj = delta[k] * aj;
            }
        }
        if arch.use_bias {
            let b_off = off + fan_out * fan_in;
            grad[b_off..b_off + fan_out].copy_from_slice(&delta);
        }
        if l > 0 {
            let w = &params.values[off..off + fan_out * fan_in];
            let mut next = vec![0.0; fan_in];
            for k in 0..fan_out {
                let row = &w[k * fan_in..(k + 1) * fan_in];
                for (nj, wj) in next.iter_mut().zip(row) {
                    *nj += delta[k] * wj;
                }
            }
            // ReLU mask: zero where the unit was inactive (a == 0).
            for (nj, aj) in next.iter_mut().zip(a_in) {
                if *aj <= 0.0 {
                    *nj = 0.0;
                }
            }
            delta = next;
        }
    }
    grad
}

fn class_index(params: &FlatParams, sample: &Sample) -> Result<usize, NetError> {
    match sample.target {
        Target::Class(c) if c < params.arch.output_dim() => Ok(c),
        Target::Class(c) => Err(NetError::TargetMismatch(format!(
            "class index {c} out of range for {} outputs",
            params.arch.output_dim()
        ))),
        Target::Value(_) => Err(NetError::TargetMismatch(
            "real-valued target with a softmax head".into(),
        )),
    }
}

fn regression_target(sample: &Sample) -> Result<f64, NetError> {
    match sample.target {
        Target::Value(y) => Ok(y),
        Target::Class(_) => Err(NetError::TargetMismatch(
            "class target with an identity head".into(),
        )),
    }
}

/// Negative log likelihood of one sample.
///
/// Identity head (scalar output required): unit-variance Gaussian,
/// `½ln(2π) + ½(y − f(x))²`, so the floor is `½ln(2π)` at zero residual.
/// Softmax head: categorical, `−ln p_y`, computed via log-sum-exp.
pub fn nll_loss(params: &FlatParams, sample: &Sample) -> Result<f64, NetError> {
    let trace = forward_trace(params, &sample.features)?;
    match params.arch.output_head {
        OutputHead::Identity => {
            if params.arch.output_dim() != 1 {
                return Err(NetError::TargetMismatch(
                    "Gaussian likelihood needs a scalar output".into(),
                ));
            }
            let y = regression_target(sample)?;
            let r = y - trace.prehead[0];
            Ok(HALF_LN_2PI + 0.5 * r * r)
        }
        OutputHead::Softmax => {
            let c = class_index(params, sample)?;
            Ok(logsumexp(&trace.prehead) - trace.prehead[c])
        }
    }
}

/// Exact gradient of the chosen scalar with respect to every parameter.
///
/// * `LossKind::Nll`, identity head: seed `(f − y)` on the scalar output.
/// * `LossKind::Nll`, softmax head: seed `p − onehot(y)` on the logits.
/// * `LossKind::RawOutput(k)`: seed `e_k` on the pre-head output, i.e. the
///   k-th row of the pre-head Jacobian.
pub fn per_sample_gradient(
    params: &FlatParams,
    sample: &Sample,
    loss: LossKind,
) -> Result<Vec<f64>, NetError> {
    let trace = forward_trace(params, &sample.features)?;
    let out_dim = params.arch.output_dim();
    let seed = match loss {
        LossKind::RawOutput(k) => {
            if k >= out_dim {
                return Err(NetError::OutputIndexOutOfRange {
                    index: k,
                    output_dim: out_dim,
                });
            }
            let mut s = vec![0.0; out_dim];
            s[k] = 1.0;
            s
        }
        LossKind::Nll => match params.arch.output_head {
            OutputHead::Identity => {
                if out_dim != 1 {
                    return Err(NetError::TargetMismatch(
                        "Gaussian likelihood needs a scalar output".into(),
                    ));
                }
                let y = regression_target(sample)?;
                vec![trace.prehead[0] - y]
            }
            OutputHead::Softmax => {
                let c = class_index(params, sample)?;
                let mut s = softmax(&trace.prehead);
                s[c] -= 1.0;
                s
            }
        },
    };
    Ok(backward(params, &trace, &seed))
}

/// First-order Taylor expansion of the network around `anchor`, evaluated at
/// `query`:
///
/// `f_lin(x; w_q) = f(x; w_a) + ∇_w f(x; w_a)ᵀ (w_q − w_a)`.
///
/// Implemented as a forward-mode Jacobian-vector product through the
/// anchor's computation graph (ReLU masks frozen at the anchor), with the
/// output-head Jacobian applied last. Exact for a purely affine network
/// with an identity head; for ReLU networks the remainder is O(‖Δw‖²).
pub fn linearized_forward(
    anchor: &FlatParams,
    query: &FlatParams,
    x: &[f64],
) -> Result<Vec<f64>, NetError> {
    if anchor.arch != query.arch {
        return Err(NetError::ArchMismatch);
    }
    check_input(anchor, x)?;
    let arch = &anchor.arch;
    let num_layers = arch.num_layers();
    let mut a: Vec<f64> = x.to_vec();
    let mut t: Vec<f64> = vec![0.0; x.len()];
    for l in 0..num_layers {
        let (fan_in, fan_out) = (arch.layer_widths[l], arch.layer_widths[l + 1]);
        let off = arch.layer_offset(l);
        let w = &anchor.values[off..off + fan_out * fan_in];
        let dw: Vec<f64> = query.values[off..off + fan_out * fan_in]
            .iter()
            .zip(w)
            .map(|(q, p)| q - p)
            .collect();
        let mut z = affine(anchor, l, &a);
        let mut tz = vec![0.0; fan_out];
        for k in 0..fan_out {
            let w_row = &w[k * fan_in..(k + 1) * fan_in];
            let dw_row = &dw[k * fan_in..(k + 1) * fan_in];
            let mut acc = 0.0;
            for j in 0..fan_in {
                acc += dw_row[j] * a[j] + w_row[j] * t[j];
            }
            tz[k] = acc;
        }
        if arch.use_bias {
            let b_off = off + fan_out * fan_in;
            for k in 0..fan_out {
                tz[k] += query.values[b_off + k] - anchor.values[b_off + k];
            }
        }
        if l < num_layers - 1 {
            for k in 0..fan_out {
                if z[k] <= 0.0 {
                    z[k] = 0.0;
                    tz[k] = 0.0;
                }
            }
        }
        a = z;
        t = tz;
    }
    Ok(match arch.output_head {
        OutputHead::Identity => a.iter().zip(&t).map(|(z, tz)| z + tz).collect(),
        OutputHead::Softmax => {
            // Tangent through softmax: dp = p ⊙ (t − ⟨p, t⟩).
            let p = softmax(&a);
            let dot: f64 = p.iter().zip(&t).map(|(pi, ti)| pi * ti).sum();
            p.iter().zip(&t).map(|(pi, ti)| pi + pi * (ti - dot)).collect()
        }
    })
}
