//! Acceptance gate for the estimation engine.
//!
//! Each test prints one `ACCEPTANCE k (name): PASS/FAIL — details` line and
//! then asserts, so the suite doubles as a human-readable checklist (run
//! with `-- --nocapture` to see the lines for passing criteria too).
//!
//! Criteria 5–8 share one seeded Monte Carlo study (600 replications across
//! two scenarios) built once per process.

use std::sync::OnceLock;
use std::time::Instant;

use intermed::harness::{run_grid, summarize, MetricsRow, ReplicationResult, Scenario, ScenarioSpec};
use intermed::oracle::{MisspecifiedComponents, Oracle, RobustnessConfig};
use intermed::{
    decompose_effects, point_d, sample_dataset, Contrast, Covariates, DgpSpec, EstimatorKind,
};

fn oracle() -> Oracle {
    Oracle::new(&DgpSpec::default()).expect("standard law is valid")
}

fn contrasts() -> [Contrast; 3] {
    [
        Contrast::new(1, 0).expect("binary levels"),
        Contrast::new(1, 1).expect("binary levels"),
        Contrast::new(0, 0).expect("binary levels"),
    ]
}

/// Prints the per-criterion verdict line and returns the verdict.
fn verdict(number: usize, name: &str, pass: bool, details: &str) -> bool {
    println!(
        "ACCEPTANCE {number} ({name}): {} — {details}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

#[test]
fn criterion_1_exact_identification() {
    let start = Instant::now();
    let oracle = oracle();
    let mut worst = 0.0f64;
    for c in contrasts() {
        let bundle = oracle.nuisance_bundle(c);
        worst = worst.max((oracle.eif_mean(&bundle, c) - oracle.true_theta(c)).abs());
    }
    let seconds = start.elapsed().as_secs_f64();
    let pass = worst < 1e-12 && seconds < 1.0;
    let details = format!(
        "max |enumeration mean of the influence function - theta| = {worst:.3e} \
         over contrasts (1,0), (1,1), (0,0) (tolerance 1e-12), {seconds:.3} s (< 1 s)"
    );
    assert!(verdict(1, "exact identification identity", pass, &details), "{details}");
}

#[test]
fn criterion_2_multiple_robustness_exact() {
    let start = Instant::now();
    let oracle = oracle();
    let c10 = Contrast::new(1, 0).expect("binary levels");
    let theta = oracle.true_theta(c10);

    let mut gaps = Vec::new();
    let mut worst = 0.0f64;
    for config in RobustnessConfig::ALL {
        let bundle = oracle.robustness_bundle(config, c10);
        let gap = (oracle.eif_mean(&bundle, c10) - theta).abs();
        worst = worst.max(gap);
        gaps.push(format!("({}) {:.3e}", config.label(), gap));
    }

    let mut missing_q = MisspecifiedComponents::none();
    missing_q.q = true;
    let biased = oracle.plim_bundle(missing_q, c10);
    let q_gap = (oracle.eif_mean(&biased, c10) - theta).abs();

    let seconds = start.elapsed().as_secs_f64();
    let pass = worst < 1e-10 && q_gap > 1e-6 && seconds < 5.0;
    let details = format!(
        "score-mean gaps under partial misspecification: {} (each must be < 1e-10); \
         misspecified-q gap = {q_gap:.3e} (must exceed 1e-6); {seconds:.3} s (< 5 s)",
        gaps.join(", ")
    );
    assert!(verdict(2, "multiple robustness, exact", pass, &details), "{details}");
}

#[test]
fn criterion_3_second_order_expansion_identity() {
    let oracle = oracle();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let bundle = Oracle::random_bundle(seed);
        for c in contrasts() {
            let bias = oracle.eif_mean(&bundle, c) - oracle.true_theta(c);
            let expansion = oracle.second_order_remainder(&bundle, c).total();
            worst = worst.max((bias - expansion).abs());
        }
    }
    let pass = worst < 1e-10;
    let details = format!(
        "max |score-mean bias - term sum| = {worst:.3e} over 20 randomized bundles \
         x 3 contrasts (tolerance 1e-10)"
    );
    assert!(verdict(3, "second-order expansion identity", pass, &details), "{details}");
}

#[test]
fn criterion_4_dual_influence_function_representations() {
    let oracle = oracle();
    let mut worst = 0.0f64;
    for c in contrasts() {
        let bundle = oracle.nuisance_bundle(c);
        for w in Covariates::support() {
            for a in [0u8, 1] {
                for z in [0u8, 1] {
                    for m in [0u8, 1] {
                        for y in [0.0, 1.0] {
                            let alt = oracle.alt_eif_at(c, a, z, m, w, y);
                            let primary = point_d(&bundle, c, a, z, m, w, y);
                            worst = worst.max((alt - primary).abs());
                        }
                    }
                }
            }
        }
    }
    let pass = worst < 1e-10;
    let details = format!(
        "max pointwise |alternate - primary| = {worst:.3e} over all support cells, \
         both outcomes, 3 contrasts (tolerance 1e-10)"
    );
    assert!(
        verdict(4, "dual influence-function representations", pass, &details),
        "{details}"
    );
}

// ---------------------------------------------------------------------------
// Shared Monte Carlo study for criteria 5–8.

struct Study {
    results: Vec<ReplicationResult>,
    metrics: Vec<MetricsRow>,
    failures: usize,
    seconds: f64,
}

fn study() -> &'static Study {
    static STUDY: OnceLock<Study> = OnceLock::new();
    STUDY.get_or_init(|| {
        let start = Instant::now();
        let estimators = vec![EstimatorKind::Onestep, EstimatorKind::Tmle];
        let specs = [
            ScenarioSpec {
                scenario: Scenario::AllConsistent,
                sample_sizes: vec![200, 5000],
                replications: 200,
                estimators: estimators.clone(),
                base_seed: 271_828,
                folds: 5,
            },
            ScenarioSpec {
                scenario: Scenario::MissQ,
                sample_sizes: vec![5000],
                replications: 200,
                estimators,
                base_seed: 271_828,
                folds: 5,
            },
        ];
        let mut results = Vec::new();
        for spec in &specs {
            results.extend(run_grid(spec, 0).expect("acceptance grid runs"));
        }
        let metrics = summarize(&results).expect("standard law enumerates");
        let failures = results
            .iter()
            .flat_map(|r| &r.reports)
            .filter(|(_, outcome)| outcome.is_err())
            .count();
        Study { results, metrics, failures, seconds: start.elapsed().as_secs_f64() }
    })
}

fn metric<'a>(
    study: &'a Study,
    scenario: &str,
    estimator: &str,
    effect: &str,
    n: usize,
) -> &'a MetricsRow {
    study
        .metrics
        .iter()
        .find(|m| m.scenario == scenario && m.estimator == estimator && m.effect == effect && m.n == n)
        .unwrap_or_else(|| panic!("missing metrics row {scenario}/{estimator}/{effect}/{n}"))
}

#[test]
fn criterion_5_efficiency_at_desk_scale() {
    let study = study();
    assert_eq!(
        study.failures, 0,
        "every replication/estimator pair of the study must succeed"
    );
    let sigma = oracle()
        .efficiency_bound(Contrast::new(1, 0).expect("binary levels"))
        .sqrt();
    let mut pass = true;
    let mut parts = Vec::new();
    for estimator in ["onestep", "tmle"] {
        let at_5000 = metric(study, "all_consistent", estimator, "theta(1,0)", 5000);
        let at_200 = metric(study, "all_consistent", estimator, "theta(1,0)", 200);
        let mse_ok = (0.7..=1.5).contains(&at_5000.n_mse_over_bound);
        let bias_ok = at_5000.sqrt_n_abs_bias < at_200.sqrt_n_abs_bias
            || at_5000.sqrt_n_abs_bias < 0.1 * sigma;
        pass = pass && mse_ok && bias_ok;
        parts.push(format!(
            "{estimator}: n*MSE/bound = {:.3} (within [0.7, 1.5]: {mse_ok}), \
             sqrt(n)|bias| {:.3} at n=200 -> {:.3} at n=5000 (shrinks or < {:.3}: {bias_ok})",
            at_5000.n_mse_over_bound,
            at_200.sqrt_n_abs_bias,
            at_5000.sqrt_n_abs_bias,
            0.1 * sigma
        ));
    }
    let details = format!(
        "all_consistent, 200 replications; {}; study wall time {:.1} s (target < 600 s)",
        parts.join("; "),
        study.seconds
    );
    assert!(verdict(5, "efficiency at desk scale", pass, &details), "{details}");
}

#[test]
fn criterion_6_confidence_interval_coverage() {
    let study = study();
    let mut pass = true;
    let mut parts = Vec::new();
    for estimator in ["onestep", "tmle"] {
        let row = metric(study, "all_consistent", estimator, "theta(1,0)", 5000);
        let ok95 = (0.90..=0.98).contains(&row.coverage95);
        let ok99 = (0.96..=1.00).contains(&row.coverage99);
        pass = pass && ok95 && ok99;
        parts.push(format!(
            "{estimator}: 95% coverage = {:.3} (within [0.90, 0.98]: {ok95}), \
             99% coverage = {:.3} (within [0.96, 1.00]: {ok99})",
            row.coverage95, row.coverage99
        ));
    }
    let details = format!("all_consistent, n=5000, 200 replications; {}", parts.join("; "));
    assert!(verdict(6, "confidence interval coverage", pass, &details), "{details}");
}

#[test]
fn criterion_7_inconsistency_under_misspecified_q() {
    let study = study();
    let mut best: Option<(String, f64, f64)> = None;
    for estimator in ["onestep", "tmle"] {
        for effect in ["theta(1,0)", "indirect", "direct"] {
            let biased = metric(study, "miss_q", estimator, effect, 5000).sqrt_n_abs_bias;
            let reference =
                metric(study, "all_consistent", estimator, effect, 5000).sqrt_n_abs_bias;
            let ratio = biased / reference.max(f64::MIN_POSITIVE);
            if best.as_ref().is_none_or(|(_, _, r)| ratio > *r) {
                best = Some((format!("{estimator}/{effect}"), biased, ratio));
            }
        }
    }
    let (which, biased, ratio) = best.expect("metrics exist");
    let pass = ratio > 3.0;
    let details = format!(
        "largest inflation at {which}: sqrt(n)|bias| = {biased:.3} under miss_q, \
         {ratio:.1}x its all_consistent counterpart (must exceed 3x for at least one \
         estimator/effect)"
    );
    assert!(
        verdict(7, "inconsistency under misspecified q", pass, &details),
        "{details}"
    );
}

#[test]
fn criterion_8_tmle_boundedness_and_score_solving() {
    let study = study();
    let mut theta_count = 0usize;
    let mut out_of_bounds = 0usize;
    let mut converged = 0usize;
    let mut not_converged = 0usize;
    let mut residual_violations = 0usize;
    for result in &study.results {
        for (estimator, outcome) in &result.reports {
            if *estimator != EstimatorKind::Tmle {
                continue;
            }
            let report = outcome.as_ref().expect("study has no failures");
            for (_, estimate) in &report.thetas {
                theta_count += 1;
                if !(0.0..=1.0).contains(&estimate.theta_hat) {
                    out_of_bounds += 1;
                }
                let d = &estimate.diagnostics;
                if d.converged {
                    converged += 1;
                    let residuals = d.score_residuals.expect("targeted fits report residuals");
                    let tolerances = d.score_tolerances.expect("targeted fits report tolerances");
                    if residuals
                        .iter()
                        .zip(&tolerances)
                        .any(|(r, t)| r.abs() > *t)
                    {
                        residual_violations += 1;
                    }
                } else {
                    not_converged += 1;
                }
            }
        }
    }
    let pass = out_of_bounds == 0 && residual_violations == 0 && theta_count > 0;
    let details = format!(
        "{theta_count} targeted interventional-mean estimates across the study: \
         {out_of_bounds} outside [0,1] (must be 0); {converged} converged fits, \
         {residual_violations} with a score residual above sd/(sqrt(n) ln n) (must be 0); \
         {not_converged} fits stopped at the sweep budget"
    );
    assert!(
        verdict(8, "targeted estimator boundedness and score solving", pass, &details),
        "{details}"
    );
}

#[test]
fn criterion_9_decomposition_exactness() {
    let study = study();
    let mut worst = 0.0f64;
    let mut count = 0usize;
    for result in &study.results {
        for (_, outcome) in &result.reports {
            let report = outcome.as_ref().expect("study has no failures");
            let gap =
                (report.indirect.theta_hat + report.direct.theta_hat - report.total.theta_hat)
                    .abs();
            worst = worst.max(gap);
            count += 1;
        }
    }
    // Cover the remaining estimator families on a fresh dataset.
    let data = sample_dataset(&DgpSpec::default(), 600, 4242);
    let cfg = Scenario::AllConsistent.nuisance_config(4);
    for estimator in [
        EstimatorKind::Onestep,
        EstimatorKind::OnestepStabilized,
        EstimatorKind::Tmle,
        EstimatorKind::Plugin,
    ] {
        let report = decompose_effects(&data, &cfg, estimator, 99).expect("decomposition runs");
        let gap = (report.indirect.theta_hat + report.direct.theta_hat
            - report.total.theta_hat)
            .abs();
        worst = worst.max(gap);
        count += 1;
    }
    let pass = worst <= 1e-15 && count > 0;
    let details = format!(
        "max |indirect + direct - total| = {worst:.3e} over {count} effect reports \
         (tolerance 1e-15, all four estimator families covered)"
    );
    assert!(verdict(9, "decomposition exactness", pass, &details), "{details}");
}
