//! Independent oracles shared by the integration tests: a from-scratch
//! forward pass over the flat parameter layout, hand-written loss formulas,
//! central-difference gradients, and an explicit-Jacobian Gauss–Newton
//! trace. Nothing here calls the library's gradient or curvature code, so
//! agreement between the two is evidence, not tautology.

#![allow(dead_code)]

use pacbayes::nnet::{ArchSpec, FlatParams, OutputHead, Sample, Target};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Forward pass written independently of the library: returns every
/// pre-activation vector (hidden layers first, pre-head last) computed from
/// the documented flat layout (per layer: row-major `out × in` weights,
/// then biases when present).
pub fn oracle_preacts(
    widths: &[usize],
    use_bias: bool,
    values: &[f64],
    x: &[f64],
) -> Vec<Vec<f64>> {
    assert_eq!(x.len(), widths[0], "input width");
    let mut preacts = Vec::with_capacity(widths.len() - 1);
    let mut a = x.to_vec();
    let mut off = 0usize;
    for l in 0..widths.len() - 1 {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let mut z = vec![0.0; fan_out];
        for (k, zk) in z.iter_mut().enumerate() {
            for i in 0..fan_in {
                *zk += values[off + k * fan_in + i] * a[i];
            }
        }
        off += fan_out * fan_in;
        if use_bias {
            for (k, zk) in z.iter_mut().enumerate() {
                *zk += values[off + k];
            }
            off += fan_out;
        }
        a = if l + 1 < widths.len() - 1 {
            z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
        } else {
            z.clone()
        };
        preacts.push(z);
    }
    assert_eq!(off, values.len(), "layout consumed every parameter");
    preacts
}

/// Pre-head output of the oracle forward pass.
pub fn oracle_prehead(widths: &[usize], use_bias: bool, values: &[f64], x: &[f64]) -> Vec<f64> {
    oracle_preacts(widths, use_bias, values, x)
        .pop()
        .expect("at least one layer")
}

fn oracle_logsumexp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Hand-written per-sample NLL: unit-variance Gaussian for the identity
/// head, categorical cross-entropy for the softmax head.
pub fn oracle_nll(params: &FlatParams, sample: &Sample) -> f64 {
    let arch = params.arch();
    let z = oracle_prehead(
        arch.layer_widths(),
        arch.has_bias(),
        params.values(),
        &sample.features,
    );
    match (arch.output_head(), &sample.target) {
        (OutputHead::Identity, Target::Value(y)) => {
            let r = z[0] - y;
            0.5 * (2.0 * std::f64::consts::PI).ln() + 0.5 * r * r
        }
        (OutputHead::Softmax, Target::Class(c)) => oracle_logsumexp(&z) - z[*c],
        _ => panic!("target kind does not match the head"),
    }
}

/// Raw output coordinate of the oracle forward pass (identity on pre-head).
pub fn oracle_output(params: &FlatParams, x: &[f64], k: usize) -> f64 {
    let arch = params.arch();
    oracle_prehead(arch.layer_widths(), arch.has_bias(), params.values(), x)[k]
}

/// Smallest pre-activation magnitude across hidden layers; inputs whose
/// value is near zero sit on a ReLU kink where finite differences and the
/// subgradient convention legitimately disagree.
pub fn min_hidden_preact_abs(params: &FlatParams, x: &[f64]) -> f64 {
    let arch = params.arch();
    let preacts = oracle_preacts(arch.layer_widths(), arch.has_bias(), params.values(), x);
    preacts[..preacts.len() - 1]
        .iter()
        .flatten()
        .map(|v| v.abs())
        .fold(f64::INFINITY, f64::min)
}

/// Central-difference gradient of an arbitrary scalar function of the flat
/// parameter vector, with per-coordinate step scaling.
pub fn fd_gradient_of(params: &FlatParams, mut f: impl FnMut(&FlatParams) -> f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(params.values().len());
    let mut work = params.clone();
    for i in 0..params.values().len() {
        let w = params.values()[i];
        let eps = 1e-5 * w.abs().max(1.0);
        work.values_mut()[i] = w + eps;
        let plus = f(&work);
        work.values_mut()[i] = w - eps;
        let minus = f(&work);
        work.values_mut()[i] = w;
        grad.push((plus - minus) / (2.0 * eps));
    }
    grad
}

/// Central-difference gradient of the hand-written NLL.
pub fn fd_nll_gradient(params: &FlatParams, sample: &Sample) -> Vec<f64> {
    fd_gradient_of(params, |p| oracle_nll(p, sample))
}

/// Central-difference gradient of one raw output coordinate.
pub fn fd_output_gradient(params: &FlatParams, x: &[f64], k: usize) -> Vec<f64> {
    fd_gradient_of(params, |p| oracle_output(p, x, k))
}

/// Largest relative disagreement between two gradient vectors, with an
/// absolute floor so near-zero coordinates do not blow up the ratio.
pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Random dense architecture within the [8, 8, 8, 3] envelope: up to three
/// hidden layers of width ≤ 8 and an output of width ≤ 3 under either head.
pub fn random_arch(rng: &mut ChaCha8Rng) -> ArchSpec {
    let input = rng.gen_range(1..=8);
    let hidden_layers = rng.gen_range(0..=3);
    let mut widths = vec![input];
    for _ in 0..hidden_layers {
        widths.push(rng.gen_range(1..=8));
    }
    let softmax = rng.gen_bool(0.5);
    let (output, head) = if softmax {
        (rng.gen_range(2..=3), OutputHead::Softmax)
    } else {
        (1, OutputHead::Identity)
    };
    widths.push(output);
    ArchSpec::new(widths, head).expect("valid widths")
}

/// Parameters drawn i.i.d. uniform in ±scale.
pub fn random_params(arch: &ArchSpec, scale: f64, rng: &mut ChaCha8Rng) -> FlatParams {
    let values = (0..arch.param_count())
        .map(|_| rng.gen_range(-scale..scale))
        .collect();
    FlatParams::new(arch.clone(), values).expect("finite values")
}

/// A sample matching the architecture's head, with uniform features.
pub fn random_sample(arch: &ArchSpec, rng: &mut ChaCha8Rng) -> Sample {
    let features: Vec<f64> = (0..arch.input_dim()).map(|_| rng.gen_range(-1.5..1.5)).collect();
    match arch.output_head() {
        OutputHead::Identity => Sample::regression(features, rng.gen_range(-2.0..2.0)),
        OutputHead::Softmax => {
            let c = rng.gen_range(0..arch.output_dim());
            Sample::classification(features, c)
        }
    }
}

/// Exact Gauss–Newton trace for a linear-logit softmax model, computed from
/// the explicit per-class Jacobian and the full `H = diag(p) − p pᵀ` block:
/// `tr(Jᵀ H J) = Σ_{k,l} H_{kl} ⟨J_k, J_l⟩`.
pub fn exact_ggn_trace_linear_softmax(params: &FlatParams, data: &[Sample]) -> f64 {
    let arch = params.arch();
    assert_eq!(arch.num_layers(), 1, "linear-logit model expected");
    assert_eq!(arch.output_head(), OutputHead::Softmax);
    let k_out = arch.output_dim();
    let d_in = arch.input_dim();
    let d = arch.param_count();
    let mut total = 0.0;
    for sample in data {
        let z = oracle_prehead(arch.layer_widths(), arch.has_bias(), params.values(), &sample.features);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
        let norm: f64 = exps.iter().sum();
        let p: Vec<f64> = exps.iter().map(|e| e / norm).collect();
        // Explicit Jacobian rows: logit k depends only on weight row k (and
        // its bias), so J_k is the feature vector placed in block k.
        let mut jac = vec![vec![0.0; d]; k_out];
        for k in 0..k_out {
            for i in 0..d_in {
                jac[k][k * d_in + i] = sample.features[i];
            }
            if arch.has_bias() {
                jac[k][k_out * d_in + k] = 1.0;
            }
        }
        for k in 0..k_out {
            for l in 0..k_out {
                let h_kl = if k == l { p[k] * (1.0 - p[k]) } else { -p[k] * p[l] };
                let dot: f64 = jac[k].iter().zip(&jac[l]).map(|(a, b)| a * b).sum();
                total += h_kl * dot;
            }
        }
    }
    total
}
