//! Small numeric helpers shared across modules: deterministic seed
//! derivation, numerically stable reductions, and rank statistics.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One round of the splitmix64 output mixer. Good avalanche behaviour for
/// deriving independent RNG streams from structured (seed, index, …) tuples.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a child seed from a base seed and a list of structured parts
/// (grid indices, purpose tags). Deterministic; order-sensitive.
#[must_use]
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut acc = splitmix64(base);
    for &p in parts {
        acc = splitmix64(acc ^ splitmix64(p));
    }
    acc
}

/// Seeds the library's deterministic RNG. All randomness flows through
/// ChaCha8 streams derived from explicit seeds, so identical seeds give
/// bit-identical results independent of thread scheduling.
#[must_use]
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fixed-order pairwise summation. Associativity-stable for a given input
/// order and considerably more accurate than a running sum on long inputs.
#[must_use]
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Arithmetic mean via pairwise summation. Empty input yields 0.
#[must_use]
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        pairwise_sum(values) / values.len() as f64
    }
}

/// Sample standard deviation (n−1 denominator); 0 for fewer than two values.
#[must_use]
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    (pairwise_sum(&sq) / (n - 1) as f64).sqrt()
}

/// `ln Σ exp(xᵢ)` with max subtraction; finite whenever all inputs are
/// finite, even for exponents of magnitude ~700 that would overflow `exp`.
#[must_use]
pub fn logsumexp(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "logsumexp of an empty slice");
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let shifted: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
    m + pairwise_sum(&shifted).ln()
}

/// `count` logarithmically spaced points from `lo` to `hi` inclusive.
#[must_use]
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2, "invalid log grid");
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// `count` linearly spaced points from `lo` to `hi` inclusive.
#[must_use]
pub fn lin_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(hi > lo && count >= 2, "invalid linear grid");
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Ranks with average-rank tie handling (1-based), as used by Spearman.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("non-finite rank input"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average-rank ties. Returns 0 when either
/// input is constant (correlation undefined).
#[must_use]
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "spearman inputs differ in length");
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let mx = mean(&rx);
    let my = mean(&ry);
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..n {
        let a = rx[i] - mx;
        let b = ry[i] - my;
        num += a * b;
        dx += a * a;
        dy += b * b;
    }
    if dx == 0.0 || dy == 0.0 {
        0.0
    } else {
        num / (dx * dy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_seed_is_deterministic_and_part_sensitive() {
        assert_eq!(mix_seed(42, &[1, 2]), mix_seed(42, &[1, 2]));
        assert_ne!(mix_seed(42, &[1, 2]), mix_seed(42, &[2, 1]));
        assert_ne!(mix_seed(42, &[1, 2]), mix_seed(43, &[1, 2]));
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_inputs() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(pairwise_sum(&xs), 15.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
        assert_eq!(pairwise_sum(&[7.5]), 7.5);
    }

    #[test]
    fn logsumexp_handles_extreme_exponents() {
        let v = logsumexp(&[700.0, 700.0]);
        assert!((v - (700.0 + 2.0_f64.ln())).abs() < 1e-9);
        let w = logsumexp(&[-700.0, -700.0]);
        assert!(w.is_finite());
        assert!((w - (-700.0 + 2.0_f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn logsumexp_of_equal_values_is_value_plus_ln_n() {
        let v = logsumexp(&[1.5; 8]);
        assert!((v - (1.5 + 8.0_f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn log_space_endpoints_and_monotonicity() {
        let g = log_space(1e-2, 1e2, 5);
        assert!((g[0] - 1e-2).abs() < 1e-15);
        assert!((g[4] - 1e2).abs() < 1e-10);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn spearman_detects_monotone_relationships() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let up = [10.0, 20.0, 30.0, 40.0];
        let down = [4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&xs, &up) - 1.0).abs() < 1e-12);
        assert!((spearman(&xs, &down) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_ties_and_constants() {
        let xs = [1.0, 1.0, 2.0, 3.0];
        let ys = [5.0, 5.0, 6.0, 7.0];
        assert!(spearman(&xs, &ys) > 0.9);
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
    }
}
