//! End-to-end acceptance checks for the bound library: analytic-curve
//! exactness, gradient and curvature oracles, posterior-variance
//! stationarity, closed-form/Monte-Carlo agreement on the linear-Gaussian
//! oracle, bound validity frequency, the Jensen ordering of predictive and
//! Gibbs NLL, and a desk-scale sweep whose term curves and bound/test-NLL
//! rank correlation must reproduce the expected qualitative shapes.
//!
//! Each check prints one `PASS`/`FAIL` line with its runtime; run
//! `cargo test --test acceptance -- --nocapture` to see them.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use pacbayes::{
    corollary1_curve, corollary1_point, curvature_classification, curvature_regression,
    default_corollary_grid, empirical_risk_closed, empirical_risk_mc, mean_nll, moment_closed,
    moment_domain_constant, moment_mc, per_sample_gradient, posterior_variance_parts,
    predictive_and_gibbs_nll, run_sweep, run_validity_study, synthetic_draw, synthetic_draw_with,
    synthetic_risk_at, ArchSpec, BoundsError, CellStatus, FlatParams, IsotropicGaussian, LossKind,
    MomentConfig, MomentForm, OutputHead, Sample, SweepConfig, SweepRow, SyntheticOracleSpec,
    ValidityConfig, HALF_LN_2PI,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Minimum |pre-activation| for a sample to count as safely away from the
/// ReLU kinks, where finite differences are meaningful.
const KINK_MARGIN: f64 = 1e-3;

/// Runs one acceptance check, printing a single PASS/FAIL line with the
/// measured runtime, and enforcing the check's runtime budget.
fn criterion(label: &str, limit: Duration, body: impl FnOnce() -> String) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed();
    match outcome {
        Ok(detail) if elapsed <= limit => {
            println!("{label}: PASS ({elapsed:.2?}; {detail})");
        }
        Ok(_) => {
            println!("{label}: FAIL ({elapsed:.2?}; exceeded the {limit:?} runtime budget)");
            panic!("{label} exceeded its runtime budget: {elapsed:.2?} > {limit:.2?}");
        }
        Err(cause) => {
            println!("{label}: FAIL ({elapsed:.2?})");
            std::panic::resume_unwind(cause);
        }
    }
}

// -- 1: analytic single-dimension curve ----------------------------------

#[test]
fn criterion_1_analytic_curve_exactness_and_unimodality() {
    criterion(
        "criterion 1 (analytic curve exactness + interior minimum)",
        Duration::from_secs(1),
        || {
            // Direct arithmetic at λ = ¼, δ = 1: σ²_ρ̂ = 1/(λ+1) = 0.8, so
            // ER = 0.4, moment = 2/(1−2λ) = 4, and
            // KL-term = (1/λ)·½(0.8 − ln 0.8) = 2.0462871026284195….
            let p = corollary1_point(0.25, 1.0).expect("λ = 0.25 lies in the curve domain");
            assert!((p.empirical_risk - 0.4).abs() < 1e-9, "ER = {}", p.empirical_risk);
            assert!((p.moment - 4.0).abs() < 1e-9, "moment = {}", p.moment);
            assert!(
                (p.kl - 2.046_287_102_628_419_5).abs() < 1e-9,
                "KL-term = {:.16}",
                p.kl
            );
            assert!(
                (p.total - 6.446_287_102_628_419_5).abs() < 1e-9,
                "total = {:.16}",
                p.total
            );

            let grid = default_corollary_grid();
            assert_eq!(grid.len(), 1000);
            let curve = corollary1_curve(&grid, 1.0).expect("grid inside (0, ½)");
            let totals: Vec<f64> = curve.iter().map(|c| c.total).collect();
            let argmin = totals
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("nonempty grid")
                .0;
            assert!(
                argmin > 0 && argmin + 1 < totals.len(),
                "the minimum must be interior, found index {argmin}"
            );
            let local_minima: Vec<usize> = (1..totals.len() - 1)
                .filter(|&i| totals[i] < totals[i - 1] && totals[i] < totals[i + 1])
                .collect();
            assert_eq!(
                local_minima,
                vec![argmin],
                "the curve must have exactly one interior local minimum"
            );
            format!("minimum at λ = {:.4}", grid[argmin])
        },
    );
}

// -- 2: loss gradients against finite differences -------------------------

#[test]
fn criterion_2_loss_gradients_match_finite_differences() {
    criterion(
        "criterion 2 (gradient exactness, 200 random triples)",
        Duration::from_secs(10),
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(0xAC02);
            let mut accepted = 0usize;
            let mut worst = 0.0f64;
            while accepted < 200 {
                let arch = common::random_arch(&mut rng);
                let params = common::random_params(&arch, 0.9, &mut rng);
                let sample = common::random_sample(&arch, &mut rng);
                if common::min_hidden_preact_abs(&params, &sample.features) < KINK_MARGIN {
                    continue;
                }
                let analytic =
                    per_sample_gradient(&params, &sample, LossKind::Nll).expect("valid triple");
                let fd = common::fd_nll_gradient(&params, &sample);
                let err = common::max_rel_error(&analytic, &fd);
                assert!(
                    err < 1e-4,
                    "triple {accepted}: max relative error {err:.3e} (arch {:?})",
                    arch.layer_widths()
                );
                worst = worst.max(err);
                accepted += 1;
            }
            format!("worst relative error {worst:.3e}")
        },
    );
}

// -- 3: curvature against brute force and the exact trace -----------------

#[test]
fn criterion_3_curvature_matches_brute_force_and_exact_trace() {
    criterion(
        "criterion 3 (curvature oracles: 50 FD nets + 50 linear-logit models)",
        Duration::from_secs(10),
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(0xAC03);

            // Regression: h = Σ‖∇_w f‖² against central finite differences
            // of the raw output, on nets whose samples sit clear of kinks.
            let mut checked = 0usize;
            let mut worst_reg = 0.0f64;
            while checked < 50 {
                let arch = loop {
                    let a = common::random_arch(&mut rng);
                    if a.output_head() == OutputHead::Identity {
                        break a;
                    }
                };
                let params = common::random_params(&arch, 0.9, &mut rng);
                let mut data = Vec::with_capacity(4);
                let mut attempts = 0;
                while data.len() < 4 && attempts < 200 {
                    attempts += 1;
                    let s = common::random_sample(&arch, &mut rng);
                    if common::min_hidden_preact_abs(&params, &s.features) > KINK_MARGIN {
                        data.push(s);
                    }
                }
                if data.len() < 4 {
                    continue; // hard-to-sample net; draw a fresh one
                }
                let h = curvature_regression(&params, &data).expect("scalar identity head").h;
                let h_fd: f64 = data
                    .iter()
                    .map(|s| {
                        common::fd_output_gradient(&params, &s.features, 0)
                            .iter()
                            .map(|g| g * g)
                            .sum::<f64>()
                    })
                    .sum();
                let rel = (h - h_fd).abs() / h_fd.abs().max(1e-9);
                assert!(rel < 1e-3, "net {checked}: curvature relative error {rel:.3e}");
                worst_reg = worst_reg.max(rel);
                checked += 1;
            }

            // Classification: per-class logit gradients of a linear-logit
            // model occupy disjoint coordinates, so the diagonal p(1−p)
            // weighting reproduces the full Gauss–Newton trace exactly.
            let mut worst_cls = 0.0f64;
            for i in 0..50 {
                let d_in = rng.gen_range(1..=8);
                let arch =
                    ArchSpec::new(vec![d_in, 2], OutputHead::Softmax).expect("valid widths");
                let params = common::random_params(&arch, 1.2, &mut rng);
                let data: Vec<Sample> =
                    (0..5).map(|_| common::random_sample(&arch, &mut rng)).collect();
                let h = curvature_classification(&params, &data).expect("softmax head").h;
                let h_exact = common::exact_ggn_trace_linear_softmax(&params, &data);
                let rel = (h - h_exact).abs() / h_exact.abs().max(1e-12);
                assert!(rel < 1e-6, "model {i}: trace relative error {rel:.3e}");
                worst_cls = worst_cls.max(rel);
            }
            format!("worst FD rel {worst_reg:.3e}; worst exact-trace rel {worst_cls:.3e}")
        },
    );
}

// -- 4: stationarity of the tempered-posterior variance -------------------

/// The variational objective the isotropic posterior variance minimizes,
/// up to σ²-independent terms: `λσ²h/2 + (d/2)(σ²/σ²_π − ln σ²)`.
fn variational_objective(sigma2: f64, lambda: f64, h: f64, d: usize, prior_var: f64) -> f64 {
    lambda * sigma2 * h / 2.0 + (d as f64) * (sigma2 / prior_var - sigma2.ln()) / 2.0
}

#[test]
fn criterion_4_posterior_variance_is_the_objective_minimizer() {
    criterion(
        "criterion 4 (posterior-variance stationarity, 100 random settings)",
        Duration::from_secs(1),
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(0xAC04);
            let mut min_rise = f64::INFINITY;
            for i in 0..100 {
                let lambda = 10f64.powf(rng.gen_range(-3.0..3.0));
                let h = 10f64.powf(rng.gen_range(-2.0..3.0));
                let d = rng.gen_range(1..=500);
                let prior_var = 10f64.powf(rng.gen_range(-5.0..0.0));
                let s2 = posterior_variance_parts(lambda, h, d, prior_var);
                let at = variational_objective(s2, lambda, h, d, prior_var);
                let up = variational_objective(s2 * 1.01, lambda, h, d, prior_var);
                let down = variational_objective(s2 * 0.99, lambda, h, d, prior_var);
                assert!(
                    up > at && down > at,
                    "setting {i}: objective not minimal at σ²_ρ̂ \
                     (λ={lambda:.3e}, h={h:.3e}, d={d}, σ²_π={prior_var:.3e})"
                );
                min_rise = min_rise.min((up - at).min(down - at));
            }
            format!("smallest ±1% objective rise {min_rise:.3e}")
        },
    );
}

// -- 5: closed forms against Monte Carlo on the linear-Gaussian oracle ----

#[test]
fn criterion_5_closed_forms_agree_with_monte_carlo_on_the_oracle() {
    criterion(
        "criterion 5 (closed-form/MC agreement, d=20, n=50)",
        Duration::from_secs(60),
        || {
            let d = 20usize;
            let n = 50usize;
            let sigma_x2 = 1.0;
            let sigma_eps2 = 0.25;
            let prior_var = 0.05;
            let arch = ArchSpec::linear(d);

            let mut rng = ChaCha8Rng::seed_from_u64(0xAC05);
            let raw: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm2: f64 = raw.iter().map(|v| v * v).sum();
            let w_star = FlatParams::new(
                arch.clone(),
                raw.iter().map(|v| v / norm2.sqrt()).collect(),
            )
            .expect("finite unit-norm weights");
            let spec = SyntheticOracleSpec::new(w_star.clone(), sigma_x2, sigma_eps2, n, 0x5EED)
                .expect("valid oracle");
            let data = synthetic_draw(&spec, 0);
            assert_eq!(data.len(), n);

            // Empirical risk: the model is linear, so the quadratic
            // expansion is exact and MC must agree within its own noise.
            let h = curvature_regression(&w_star, &data).expect("linear net").h;
            let post_var = posterior_variance_parts(0.1, h, d, prior_var);
            let post = IsotropicGaussian::new(w_star.clone(), post_var).expect("positive var");
            let map_mean = mean_nll(&w_star, &data).expect("finite losses");
            let mse_sum = 2.0 * n as f64 * (map_mean - HALF_LN_2PI);
            let closed = empirical_risk_closed(mse_sum, n, post_var, h);
            let mc = empirical_risk_mc(&post, &data, 10_000, 0xE12).expect("MC estimate");
            let gap = (mc.value - closed).abs();
            assert!(
                gap <= 3.0 * mc.std_error,
                "closed {} vs MC {} ± {} (gap {gap:.3e})",
                closed,
                mc.value,
                mc.std_error
            );

            // Moment term: closed form must dominate the log-sum-exp
            // estimate at every admissible temperature (Jensen's inequality
            // in expectation; checked pointwise on the fixed stream).
            let prior = IsotropicGaussian::new(FlatParams::zeros(arch.clone()), prior_var)
                .expect("positive var");
            let mcfg = MomentConfig {
                n,
                m_prior: 100,
                m_data: 100,
                sigma_x2,
                sigma_eps2,
                w_star_norm2: 1.0, // exact: the prior mean is 0 and ‖w⋆‖² = 1
                form: MomentForm::Appendix,
            };
            let c = moment_domain_constant(n, sigma_x2, prior_var);
            assert!((c - 5.0).abs() < 1e-12, "c = 2nσ²ₓσ²_π = {c}");
            let mut min_margin = f64::INFINITY;
            for i in 0..10 {
                let lambda = (i as f64 + 1.0) / (11.0 * c);
                let closed_m =
                    moment_closed(lambda, &mcfg, prior_var, d).expect("inside the domain");
                let mc_m = moment_mc(
                    lambda,
                    n,
                    &prior,
                    |w| {
                        synthetic_risk_at(&spec, w)
                            .map_err(|e| BoundsError::InvalidParameter(e.to_string()))
                    },
                    |r| synthetic_draw_with(&spec, r),
                    100,
                    100,
                    0xAC50 + i,
                )
                .expect("MC moment");
                assert!(
                    closed_m >= mc_m.value,
                    "λ = {lambda:.4}: closed moment {closed_m} below MC estimate {}",
                    mc_m.value
                );
                min_margin = min_margin.min(closed_m - mc_m.value);
            }
            format!(
                "ER gap {gap:.2e} ≤ 3·SE {:.2e}; smallest closed−MC moment margin {min_margin:.3e}",
                3.0 * mc.std_error
            )
        },
    );
}

// -- 6: bound validity frequency on the oracle ----------------------------

#[test]
fn criterion_6_bound_holds_on_the_synthetic_oracle() {
    criterion(
        "criterion 6 (bound validity, 200 oracle trials at δ = 0.05)",
        Duration::from_secs(300),
        || {
            let cfg = ValidityConfig::default();
            assert_eq!(cfg.trials, 200);
            assert!((cfg.delta - 0.05).abs() < 1e-12);
            let outcome = run_validity_study(&cfg).expect("study runs");
            let s = &outcome.summary;
            assert!(
                s.fraction >= 0.90,
                "bound held in only {}/{} trials",
                s.n_holds,
                s.trials
            );
            format!(
                "held in {}/{} trials (fraction {:.3}, nominal {:.2}, Wilson lower {:.3})",
                s.n_holds, s.trials, s.fraction, s.nominal, s.wilson_lower_95
            )
        },
    );
}

// -- 7: Jensen ordering of predictive and Gibbs NLL ------------------------

#[test]
fn criterion_7_predictive_nll_never_exceeds_gibbs_nll() {
    criterion(
        "criterion 7 (predictive ≤ Gibbs on shared draws, 20 configurations)",
        Duration::from_secs(30),
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(0xAC07);
            let mut max_gap = 0.0f64;
            for i in 0..20u64 {
                let arch = common::random_arch(&mut rng);
                let params = common::random_params(&arch, 0.8, &mut rng);
                let var = 10f64.powf(rng.gen_range(-4.0..0.0));
                let post = IsotropicGaussian::new(params, var).expect("positive var");
                let n = rng.gen_range(10..=30);
                let data: Vec<Sample> =
                    (0..n).map(|_| common::random_sample(&arch, &mut rng)).collect();
                let (pred, gibbs) =
                    predictive_and_gibbs_nll(&post, &data, 50, 0xAC70 + i).expect("finite NLLs");
                assert!(
                    pred <= gibbs + 1e-9,
                    "configuration {i}: predictive {pred} > Gibbs {gibbs}"
                );
                max_gap = max_gap.max(gibbs - pred);
            }
            format!("largest Gibbs − predictive gap {max_gap:.3e}")
        },
    );
}

// -- 8: desk-scale sweep shapes -------------------------------------------

/// Desk-scale sweep: 10 seeds over a synthetic regression pool with split
/// counts (400, 400, 200, 80, 2000), one hidden layer of 8 units, and the
/// default λ and σ²_π grids. Training is long enough that the feature
/// second moment σ²ₓ puts the closed-form bound's admissible region well
/// below λ = 1.
const SWEEP_TOML: &str = r#"
seed = 42
n_seeds = 10
delta = 0.05

[synthetic]
d = 8
n_samples = 3100

[splits]
train = 400
test = 400
validation = 200
trainsuffix = 80
z_true = 2000

[arch]
hidden = [8]

[train]
step_size = 0.02
epochs = 300
batch_size = 32
init = "gaussian"
init_scale = 1.0
"#;

#[test]
fn criterion_8_desk_scale_sweep_reproduces_the_expected_shapes() {
    criterion(
        "criterion 8 (desk-scale sweep: domains, term monotonicity, rank correlation)",
        Duration::from_secs(900),
        || {
            let cfg = SweepConfig::from_toml(SWEEP_TOML).expect("valid config");
            let outcome = run_sweep(&cfg).expect("sweep runs");
            assert_eq!(outcome.summary.n_seeds_failed, 0, "all seeds must train");
            let rows = &outcome.rows;
            let n_lambdas = outcome.summary.lambda_grid.len();
            let n_priors = outcome.summary.prior_var_grid.len();
            assert_eq!(rows.len(), cfg.n_seeds * n_lambdas * n_priors);

            // (a) The theorem-form bound stays evaluable deep into the cold
            // region, while the closed-form bound's admissible region
            // λ < 1/c sits well below 1 at the largest prior variance.
            let mut n_large_lambda = 0usize;
            let mut max_inv_c: f64 = 0.0;
            let mut n_admissible = 0usize;
            for r in rows {
                let original = r.original.as_ref().expect("theorem-form kind evaluated");
                if r.lambda >= 1e3 {
                    n_large_lambda += 1;
                    assert_eq!(
                        original.status,
                        CellStatus::Ok,
                        "theorem-form bound failed at λ = {:.3e}",
                        r.lambda
                    );
                }
                let approx = r.approximate.as_ref().expect("closed-form kind evaluated");
                let c = moment_domain_constant(r.n, r.sigma_x2.expect("σ²ₓ recorded"), r.prior_var);
                match approx.status {
                    CellStatus::Ok => {
                        n_admissible += 1;
                        assert!(
                            r.lambda < 1.0 / c,
                            "admissible cell outside its own domain: λ = {:.3e}, 1/c = {:.3e}",
                            r.lambda,
                            1.0 / c
                        );
                    }
                    CellStatus::DomainExcluded => assert!(r.lambda * c >= 1.0),
                    CellStatus::Error => panic!(
                        "closed-form bound errored: {}",
                        approx.message.as_deref().unwrap_or("unknown")
                    ),
                }
                if r.prior_index == n_priors - 1 {
                    max_inv_c = max_inv_c.max(1.0 / c);
                }
            }
            assert!(n_large_lambda > 0 && n_admissible > 0);
            assert!(
                max_inv_c <= 0.2,
                "the admissible region must end well below λ = 1 at the largest prior \
                 variance, got 1/c = {max_inv_c:.3}"
            );

            // (b) Seed-averaged term curves along λ at every prior variance:
            // ER and KL non-increasing, moment non-decreasing, Monte Carlo
            // terms within 3 combined standard errors per comparison.
            for pi in 0..n_priors {
                let columns = complete_original_columns(rows, pi, n_lambdas);
                assert!(
                    columns.len() * 2 >= cfg.n_seeds,
                    "at least half the seeds must complete prior column {pi}"
                );
                let k = columns.len() as f64;
                let mut er = vec![0.0; n_lambdas];
                let mut kl = vec![0.0; n_lambdas];
                let mut mo = vec![0.0; n_lambdas];
                let mut er_var = vec![0.0; n_lambdas];
                let mut mo_var = vec![0.0; n_lambdas];
                for col in &columns {
                    for li in 0..n_lambdas {
                        let b = col[&li];
                        er[li] += b.empirical_risk / k;
                        kl[li] += b.kl_term / k;
                        mo[li] += b.moment / k;
                        er_var[li] += b.empirical_se * b.empirical_se;
                        mo_var[li] += b.moment_se * b.moment_se;
                    }
                }
                let er_se: Vec<f64> = er_var.iter().map(|v| v.sqrt() / k).collect();
                let mo_se: Vec<f64> = mo_var.iter().map(|v| v.sqrt() / k).collect();
                for li in 0..n_lambdas - 1 {
                    let er_slack = 3.0 * er_se[li].hypot(er_se[li + 1]);
                    assert!(
                        er[li + 1] <= er[li] + er_slack,
                        "prior {pi}: mean ER rose between λ indices {li} and {} \
                         ({} → {}, slack {er_slack:.3e})",
                        li + 1,
                        er[li],
                        er[li + 1]
                    );
                    assert!(
                        kl[li + 1] <= kl[li] + 1e-9 * kl[li].abs().max(1.0),
                        "prior {pi}: mean KL term rose between λ indices {li} and {} \
                         ({} → {})",
                        li + 1,
                        kl[li],
                        kl[li + 1]
                    );
                    let mo_slack = 3.0 * mo_se[li].hypot(mo_se[li + 1]);
                    assert!(
                        mo[li + 1] + mo_slack >= mo[li],
                        "prior {pi}: mean moment fell between λ indices {li} and {} \
                         ({} → {}, slack {mo_slack:.3e})",
                        li + 1,
                        mo[li],
                        mo[li + 1]
                    );
                }
            }

            // (c) The bound should rank temperatures like the test NLL does
            // (soft shape check: the mean rank correlation must be positive).
            let rho = outcome
                .summary
                .spearman_overall_mean
                .expect("rank correlations computed");
            assert!(
                rho > 0.0,
                "mean Spearman(bound total, test NLL) must be positive, got {rho:.4}"
            );
            format!(
                "1/c ≤ {max_inv_c:.3} at the largest prior; term curves monotone at all \
                 {n_priors} priors; mean Spearman(bound, test NLL) = {rho:.3}"
            )
        },
    );
}

/// Per-seed λ-indexed theorem-form breakdowns at one prior column, keeping
/// only seeds whose column is complete (every λ cell evaluated).
fn complete_original_columns(
    rows: &[SweepRow],
    prior_index: usize,
    n_lambdas: usize,
) -> Vec<BTreeMap<usize, &pacbayes::BoundBreakdown>> {
    let mut by_seed: BTreeMap<usize, BTreeMap<usize, &pacbayes::BoundBreakdown>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.prior_index == prior_index) {
        if let Some(cell) = &r.original {
            if cell.status == CellStatus::Ok {
                if let Some(b) = &cell.breakdown {
                    by_seed.entry(r.seed_index).or_default().insert(r.lambda_index, b);
                }
            }
        }
    }
    by_seed.into_values().filter(|m| m.len() == n_lambdas).collect()
}
