//! The estimators: cross-fitted one-step (plain and weight-stabilized),
//! targeted maximum likelihood (TMLE), and an untargeted plug-in baseline.
//!
//! All estimators share the same preparation: draw a fold assignment from
//! the supplied seed, cross-fit the nuisance bundles, and evaluate
//! per-observation influence values with each observation scored under the
//! bundle fitted without its fold.
//!
//! * The **one-step** estimator is the empirical mean of the influence
//!   values. Its *stabilized* variant first divides each score term by the
//!   empirical mean of its inverse-propensity weight.
//! * The **TMLE** iteratively tilts the fitted outcome regression `b` and
//!   confounder law `q` along offset-logistic fluctuations until the
//!   corresponding empirical scores are solved to within `sd/(√n·log n)`,
//!   then re-fits and tilts the reduced regression `v` once, and reports
//!   the plug-in mean of the targeted `v`. The point estimate is therefore
//!   a probability by construction.
//! * The **plug-in** reports the untargeted mean of `v̂(a★, W_i)` with the
//!   influence-function variance attached for reference.

use crate::effects::standard_intervals;
use crate::eif::{eif_scores, eif_variance, stabilize_with};
use crate::learners::{
    crossfit_nuisances, expit, fit_logistic_irls, logit, make_folds, refit_v_table, Design,
    LearnerOptions, LearnerSpec, NuisanceConfig,
};
use crate::types::{
    idx_b, idx_q, idx_v, mean, variance, CStarMode, Contrast, Covariates, Dataset, Diagnostics,
    Error, EstimateReport, EstimatorKind, FoldAssignment, HyDenominator, LearnerKind,
    NuisanceBundle, Result,
};

/// An estimate together with the per-observation influence values it was
/// built from; effect decomposition differences these values across
/// contrasts to get the variance of a contrast of contrasts.
#[derive(Debug, Clone)]
pub(crate) struct ScoredEstimate {
    pub report: EstimateReport,
    /// Per-observation influence values, aligned with the dataset order.
    pub d_values: Vec<f64>,
}

/// Runs the requested estimator end to end: folds from `seed`, cross-fitted
/// nuisances, then the estimator itself.
///
/// # Errors
/// Propagates configuration, fold, fitting, and degeneracy errors from the
/// stages involved.
pub fn estimate(
    data: &Dataset,
    cfg: &NuisanceConfig,
    estimator: EstimatorKind,
    contrast: Contrast,
    seed: u64,
) -> Result<EstimateReport> {
    let (folds, bundles) = prepare(data, cfg, contrast, seed)?;
    let scored = match estimator {
        EstimatorKind::Onestep => {
            onestep_with_bundles(data, &folds, &bundles, cfg, contrast, false, seed)?
        }
        EstimatorKind::OnestepStabilized => {
            onestep_with_bundles(data, &folds, &bundles, cfg, contrast, true, seed)?
        }
        EstimatorKind::Tmle => tmle_with_bundles(data, &folds, &bundles, cfg, contrast, seed)?,
        EstimatorKind::Plugin => plugin_with_bundles(data, &folds, &bundles, contrast, seed)?,
    };
    Ok(scored.report)
}

/// One-step estimator (see [`estimate`]).
///
/// # Errors
/// As [`estimate`].
pub fn estimate_onestep(
    data: &Dataset,
    cfg: &NuisanceConfig,
    contrast: Contrast,
    seed: u64,
) -> Result<EstimateReport> {
    estimate(data, cfg, EstimatorKind::Onestep, contrast, seed)
}

/// Weight-stabilized one-step estimator (see [`estimate`]).
///
/// # Errors
/// As [`estimate`]; additionally [`Error::DegenerateWeights`] when either
/// treatment arm is empty.
pub fn estimate_onestep_stabilized(
    data: &Dataset,
    cfg: &NuisanceConfig,
    contrast: Contrast,
    seed: u64,
) -> Result<EstimateReport> {
    estimate(data, cfg, EstimatorKind::OnestepStabilized, contrast, seed)
}

/// Targeted maximum likelihood estimator (see [`estimate`]).
///
/// # Errors
/// As [`estimate`]. Exhausting the sweep budget is not an error: the report
/// carries `converged = false` and the final score residuals.
pub fn estimate_tmle(
    data: &Dataset,
    cfg: &NuisanceConfig,
    contrast: Contrast,
    seed: u64,
) -> Result<EstimateReport> {
    estimate(data, cfg, EstimatorKind::Tmle, contrast, seed)
}

/// Untargeted plug-in baseline (see [`estimate`]).
///
/// # Errors
/// As [`estimate`].
pub fn estimate_plugin(
    data: &Dataset,
    cfg: &NuisanceConfig,
    contrast: Contrast,
    seed: u64,
) -> Result<EstimateReport> {
    estimate(data, cfg, EstimatorKind::Plugin, contrast, seed)
}

/// Shared preparation: validate, draw folds, cross-fit.
fn prepare(
    data: &Dataset,
    cfg: &NuisanceConfig,
    contrast: Contrast,
    seed: u64,
) -> Result<(FoldAssignment, Vec<NuisanceBundle>)> {
    cfg.validate()?;
    let folds = make_folds(data.n(), cfg.folds, seed)?;
    let bundles = crossfit_nuisances(data, &folds, cfg, contrast)?;
    Ok((folds, bundles))
}

/// One-step estimate from already cross-fitted bundles.
pub(crate) fn onestep_with_bundles(
    data: &Dataset,
    folds: &FoldAssignment,
    bundles: &[NuisanceBundle],
    cfg: &NuisanceConfig,
    contrast: Contrast,
    stabilized: bool,
    seed: u64,
) -> Result<ScoredEstimate> {
    let raw = eif_scores(data, bundles, folds, contrast)?;
    let scores = if stabilized {
        stabilize_with(&raw, data, bundles, folds, contrast, cfg.c_star)?
    } else {
        raw
    };
    let theta_hat = scores.mean_d();
    let sigma2_hat = eif_variance(&scores)?;
    let report = EstimateReport {
        theta_hat,
        sigma2_hat,
        n: data.n(),
        ci: standard_intervals(theta_hat, sigma2_hat, data.n())?,
        estimator: if stabilized {
            EstimatorKind::OnestepStabilized
        } else {
            EstimatorKind::Onestep
        },
        diagnostics: Diagnostics {
            iterations: 0,
            score_residuals: None,
            score_tolerances: None,
            converged: true,
            folds: folds.fold_count(),
            seed,
        },
    };
    Ok(ScoredEstimate { report, d_values: scores.d })
}

/// Plug-in estimate from already cross-fitted bundles: the mean of
/// `v̂(a★, W_i)`, with the influence-function variance attached for
/// reference (the plug-in itself admits no first-order inference).
pub(crate) fn plugin_with_bundles(
    data: &Dataset,
    folds: &FoldAssignment,
    bundles: &[NuisanceBundle],
    contrast: Contrast,
    seed: u64,
) -> Result<ScoredEstimate> {
    let scores = eif_scores(data, bundles, folds, contrast)?;
    let theta_hat = mean(&scores.v_at_astar);
    let sigma2_hat = eif_variance(&scores)?;
    let report = EstimateReport {
        theta_hat,
        sigma2_hat,
        n: data.n(),
        ci: standard_intervals(theta_hat, sigma2_hat, data.n())?,
        estimator: EstimatorKind::Plugin,
        diagnostics: Diagnostics {
            iterations: 0,
            score_residuals: None,
            score_tolerances: None,
            converged: true,
            folds: folds.fold_count(),
            seed,
        },
    };
    Ok(ScoredEstimate { report, d_values: scores.d })
}

/// Clamps a `[0,1]` value away from the boundary so its log-odds stay
/// finite in tilt offsets.
#[inline]
fn safe_logit(p: f64) -> f64 {
    logit(p.clamp(1e-10, 1.0 - 1e-10))
}

/// Score tolerance `sd/(√n · log n)` for a vector of per-observation score
/// products.
fn score_tolerance(products: &[f64]) -> f64 {
    let n = products.len() as f64;
    variance(products).sqrt() / (n.sqrt() * n.ln())
}

/// Fits a single-covariate offset-logistic fluctuation and returns its
/// coefficient.
fn tilt_coefficient(
    covariate: &[f64],
    outcomes: &[f64],
    offsets: &[f64],
    context: &str,
) -> Result<f64> {
    let rows: Vec<Vec<f64>> = covariate.iter().map(|&x| vec![x]).collect();
    let design = Design::from_rows(&rows)?;
    let fit = fit_logistic_irls(
        &design,
        outcomes,
        None,
        Some(offsets),
        &LearnerOptions::default(),
    )
    .map_err(|e| match e {
        Error::SingularSystem { context: inner } => Error::SingularSystem {
            context: format!("{context}: {inner}"),
        },
        other => other,
    })?;
    Ok(fit.coefficients().expect("tilt fits are logistic")[0])
}

/// TMLE from already cross-fitted bundles.
///
/// Targeting loop (per sweep, on the current tilted tables):
/// 1. evaluate the outcome score `P_n[H_Y (Y − b̃)]` and confounder score
///    `P_n[H_Z (Z − q̃(1|a′,W))]`, where `H_Y = 1{A=a′}·c̃/g̃` (denominator
///    per configuration, optionally self-normalized) and
///    `H_Z = 1{A=a′}·Δũ/g̃(a′|W)`;
/// 2. stop when both are within `sd/(√n·log n)`;
/// 3. otherwise tilt `b̃` along `H_Y` and `q̃` along `H_Z` by offset-logistic
///    fits, which refreshes `c̃` for the next sweep.
///
/// Afterwards the reduced regression is re-fitted on the targeted
/// pseudo-outcomes `Ỹ = Σ_z b̃ q̃`, tilted once along `H_M = 1{A=a★}/g̃(a★|W)`
/// (this fit solves its score directly, so one tilt suffices), and the
/// estimate is the plug-in mean of the targeted `ṽ(a★, W_i)`.
pub(crate) fn tmle_with_bundles(
    data: &Dataset,
    folds: &FoldAssignment,
    bundles: &[NuisanceBundle],
    cfg: &NuisanceConfig,
    contrast: Contrast,
    seed: u64,
) -> Result<ScoredEstimate> {
    let n = data.n();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: n });
    }
    if folds.n() != n || folds.fold_count() != bundles.len() {
        return Err(Error::FoldMismatch {
            context: "targeting requires one bundle per fold over the full dataset".to_string(),
        });
    }
    let (ap, astar) = (contrast.a_prime, contrast.a_star);
    let nfolds = bundles.len();

    // Working copies of the tables that get tilted; everything else is read
    // from the initial bundles.
    let mut b_work: Vec<Vec<f64>> = bundles.iter().map(|bd| bd.b.clone()).collect();
    let mut q1_work: Vec<Vec<f64>> = bundles.iter().map(|bd| bd.q1.clone()).collect();

    let q_at = |q1: &[f64], z: u8, a: u8, w: Covariates| {
        let p1 = q1[idx_q(a, w)];
        if z == 1 {
            p1
        } else {
            1.0 - p1
        }
    };
    // Density ratio under the tilted confounder law.
    let c_at = |j: usize, q1: &[f64], z: u8, m: u8, w: Covariates| {
        let bd = &bundles[j];
        (bd.g(ap, w) / bd.g(astar, w))
            * (q_at(q1, z, ap, w) / bd.r(z, ap, m, w))
            * (bd.h(astar, m, w) / bd.h(ap, m, w))
    };
    let g_denom = |j: usize, w: Covariates| match cfg.hy_denominator {
        HyDenominator::APrime => bundles[j].g(ap, w),
        HyDenominator::AStar => bundles[j].g(astar, w),
    };

    let mut sweeps = 0usize;
    let (score_y, score_z, tol_y, tol_z, yz_converged) = loop {
        // Tilt covariates and score products under the current tables. The
        // self-normalization scalar is recomputed each sweep because c̃
        // changes with q̃.
        let mut hy = vec![0.0; n];
        let mut hz = vec![0.0; n];
        for (i, o) in data.observations().iter().enumerate() {
            if o.a != ap {
                continue;
            }
            let j = folds.fold_of(i);
            hy[i] = c_at(j, &q1_work[j], o.z, o.m, o.w) / g_denom(j, o.w);
            let delta_u = bundles[j].u(1, ap, o.w) - bundles[j].u(0, ap, o.w);
            hz[i] = delta_u / bundles[j].g(ap, o.w);
        }
        let norm = if cfg.c_star == CStarMode::SelfNormalized {
            let m = mean(&hy);
            if m == 0.0 {
                return Err(Error::DegenerateWeights {
                    context: "no observations at a_prime to normalize against".to_string(),
                });
            }
            m
        } else {
            1.0
        };
        let mut prod_y = vec![0.0; n];
        let mut prod_z = vec![0.0; n];
        for (i, o) in data.observations().iter().enumerate() {
            if o.a != ap {
                continue;
            }
            let j = folds.fold_of(i);
            hy[i] /= norm;
            prod_y[i] = hy[i] * (o.y - b_work[j][idx_b(ap, o.z, o.m, o.w)]);
            prod_z[i] = hz[i] * (f64::from(o.z) - q1_work[j][idx_q(ap, o.w)]);
        }
        let score_y = mean(&prod_y);
        let score_z = mean(&prod_z);
        let tol_y = score_tolerance(&prod_y);
        let tol_z = score_tolerance(&prod_z);
        if score_y.abs() <= tol_y && score_z.abs() <= tol_z {
            break (score_y, score_z, tol_y, tol_z, true);
        }
        if sweeps >= cfg.tmle_max_sweeps {
            break (score_y, score_z, tol_y, tol_z, false);
        }
        sweeps += 1;

        // Outcome tilt: Y on H_Y with offset logit(b̃), then the same
        // fluctuation applied to every a′ cell of every fold's table.
        let offsets: Vec<f64> = data
            .observations()
            .iter()
            .enumerate()
            .map(|(i, o)| safe_logit(b_work[folds.fold_of(i)][idx_b(ap, o.z, o.m, o.w)]))
            .collect();
        let ys: Vec<f64> = data.observations().iter().map(|o| o.y).collect();
        let eps_y = tilt_coefficient(&hy, &ys, &offsets, &format!("sweep {sweeps}, outcome tilt"))?;
        for (j, table) in b_work.iter_mut().enumerate() {
            for w in Covariates::support() {
                for z in [0u8, 1] {
                    for m in [0u8, 1] {
                        let k = c_at(j, &q1_work[j], z, m, w) / g_denom(j, w) / norm;
                        let idx = idx_b(ap, z, m, w);
                        table[idx] = expit(safe_logit(table[idx]) + eps_y * k);
                    }
                }
            }
        }

        // Confounder tilt: Z on H_Z with offset logit(q̃(1|a′,W)). H_Z is
        // built from the fixed ũ and g̃, so this score stays solved once
        // tilted; later sweeps move it only negligibly.
        let offsets: Vec<f64> = data
            .observations()
            .iter()
            .enumerate()
            .map(|(i, o)| safe_logit(q1_work[folds.fold_of(i)][idx_q(ap, o.w)]))
            .collect();
        let zs: Vec<f64> = data.observations().iter().map(|o| f64::from(o.z)).collect();
        let eps_z =
            tilt_coefficient(&hz, &zs, &offsets, &format!("sweep {sweeps}, confounder tilt"))?;
        for (j, table) in q1_work.iter_mut().enumerate() {
            for w in Covariates::support() {
                let delta_u = bundles[j].u(1, ap, w) - bundles[j].u(0, ap, w);
                let l = delta_u / bundles[j].g(ap, w);
                let idx = idx_q(ap, w);
                table[idx] = expit(safe_logit(table[idx]) + eps_z * l);
            }
        }
    };

    // Targeted pseudo-outcome Ỹ = Σ_z b̃(a′,z,·)·q̃(z|a′,·) and the v re-fit,
    // fold by fold on the training rows (mirroring the initial v fit).
    let ytilde_cell = |j: usize, m: u8, w: Covariates| -> f64 {
        (0..2u8)
            .map(|z| b_work[j][idx_b(ap, z, m, w)] * q_at(&q1_work[j], z, ap, w))
            .sum()
    };
    let v_spec = match cfg.v.kind {
        LearnerKind::Oracle => LearnerSpec {
            kind: LearnerKind::Saturated,
            options: cfg.v.options,
        },
        _ => cfg.v,
    };
    let mut v_work: Vec<Vec<f64>> = Vec::with_capacity(nfolds);
    for j in 0..nfolds {
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for (i, o) in data.observations().iter().enumerate() {
            if folds.fold_of(i) == j {
                continue;
            }
            rows.push((o.a, o.w));
            ys.push(ytilde_cell(j, o.m, o.w));
        }
        v_work.push(refit_v_table(
            v_spec,
            &rows,
            &ys,
            &format!("fold {j}, targeted v refit"),
        )?);
    }

    // Single tilt of ṽ(a★,·) along H_M = 1{A=a★}/g̃(a★|W); the offset-logistic
    // fit solves P_n[H_M (Ỹ − ṽ)] = 0 directly.
    let mut hm = vec![0.0; n];
    let mut ytilde = vec![0.0; n];
    for (i, o) in data.observations().iter().enumerate() {
        let j = folds.fold_of(i);
        ytilde[i] = ytilde_cell(j, o.m, o.w);
        if o.a == astar {
            hm[i] = 1.0 / bundles[j].g(astar, o.w);
        }
    }
    let offsets: Vec<f64> = data
        .observations()
        .iter()
        .enumerate()
        .map(|(i, o)| safe_logit(v_work[folds.fold_of(i)][idx_v(astar, o.w)]))
        .collect();
    let eps_m = tilt_coefficient(&hm, &ytilde, &offsets, "reduced-regression tilt")?;
    for (j, table) in v_work.iter_mut().enumerate() {
        for w in Covariates::support() {
            let idx = idx_v(astar, w);
            table[idx] =
                expit(safe_logit(table[idx]) + eps_m / bundles[j].g(astar, w));
        }
    }
    let prod_m: Vec<f64> = data
        .observations()
        .iter()
        .enumerate()
        .map(|(i, o)| hm[i] * (ytilde[i] - v_work[folds.fold_of(i)][idx_v(astar, o.w)]))
        .collect();
    let score_m = mean(&prod_m);
    let tol_m = score_tolerance(&prod_m);
    let converged = yz_converged && score_m.abs() <= tol_m;

    // Plug-in mean of the targeted reduced regression.
    let theta_hat = mean(
        &data
            .observations()
            .iter()
            .enumerate()
            .map(|(i, o)| v_work[folds.fold_of(i)][idx_v(astar, o.w)])
            .collect::<Vec<f64>>(),
    );

    // Influence-function variance at the targeted fit.
    let final_bundles: Vec<NuisanceBundle> = (0..nfolds)
        .map(|j| {
            NuisanceBundle::from_tables(
                b_work[j].clone(),
                bundles[j].g1.clone(),
                bundles[j].h1.clone(),
                q1_work[j].clone(),
                bundles[j].r1.clone(),
                bundles[j].u.clone(),
                v_work[j].clone(),
                cfg.epsilon,
                bundles[j].provenance(),
            )
        })
        .collect::<Result<_>>()?;
    let scores = eif_scores(data, &final_bundles, folds, contrast)?;
    let sigma2_hat = eif_variance(&scores)?;

    let report = EstimateReport {
        theta_hat,
        sigma2_hat,
        n,
        ci: standard_intervals(theta_hat, sigma2_hat, n)?,
        estimator: EstimatorKind::Tmle,
        diagnostics: Diagnostics {
            iterations: sweeps,
            score_residuals: Some([score_y, score_z, score_m]),
            score_tolerances: Some([tol_y, tol_z, tol_m]),
            converged,
            folds: nfolds,
            seed,
        },
    };
    Ok(ScoredEstimate { report, d_values: scores.d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{sample_dataset, DgpSpec};
    use crate::oracle::Oracle;
    use crate::types::Observation;

    fn contrast() -> Contrast {
        Contrast::new(1, 0).unwrap()
    }

    fn oracle_config(spec: &DgpSpec) -> NuisanceConfig {
        let mut cfg = NuisanceConfig::all(LearnerKind::Oracle);
        cfg.oracle_spec = Some(*spec);
        cfg
    }

    #[test]
    fn constant_outcome_is_recovered_to_float_accuracy() {
        // With Y constant at 0.3, every fitted outcome regression is 0.3 up
        // to summation rounding and all residual terms vanish; both the
        // one-step and the TMLE must return 0.3 essentially exactly.
        let spec = DgpSpec {
            constant_outcome: Some(0.3),
            ..DgpSpec::new(0)
        };
        let n = 200_000;
        let data = sample_dataset(&spec, n, 7);
        let cfg = NuisanceConfig::default();
        let onestep = estimate_onestep(&data, &cfg, contrast(), 11).unwrap();
        assert!(
            (onestep.theta_hat - 0.3).abs() <= 1e-9,
            "one-step {} vs 0.3",
            onestep.theta_hat
        );
        let tmle = estimate_tmle(&data, &cfg, contrast(), 11).unwrap();
        assert!(
            (tmle.theta_hat - 0.3).abs() <= 1e-6,
            "tmle {} vs 0.3",
            tmle.theta_hat
        );
        assert!(tmle.diagnostics.converged);
    }

    #[test]
    fn oracle_nuisances_put_the_one_step_on_the_efficient_clt() {
        let spec = DgpSpec::new(0);
        let oracle = Oracle::new(&spec).unwrap();
        let truth = oracle.true_theta(contrast());
        let bound = oracle.efficiency_bound(contrast());
        let n = 20_000;
        let data = sample_dataset(&spec, n, 13);
        let report = estimate_onestep(&data, &oracle_config(&spec), contrast(), 17).unwrap();
        assert!(
            (report.theta_hat - truth).abs() <= 4.0 * report.se(),
            "theta {} vs truth {truth} (se {})",
            report.theta_hat,
            report.se()
        );
        assert!(
            (report.sigma2_hat - bound).abs() / bound <= 0.10,
            "variance {} vs bound {bound}",
            report.sigma2_hat
        );
        assert!(report.ci_at(0.95).unwrap().covers(report.theta_hat));
        assert!(report.ci_at(0.99).unwrap().hi > report.ci_at(0.95).unwrap().hi);
    }

    #[test]
    fn tmle_stays_close_to_the_one_step_at_oracle_nuisances() {
        let spec = DgpSpec::new(0);
        let n = 20_000;
        let data = sample_dataset(&spec, n, 29);
        let cfg = oracle_config(&spec);
        let onestep = estimate_onestep(&data, &cfg, contrast(), 31).unwrap();
        let tmle = estimate_tmle(&data, &cfg, contrast(), 31).unwrap();
        assert!(tmle.diagnostics.converged, "oracle-start targeting converges");
        assert!(
            (tmle.theta_hat - onestep.theta_hat).abs() <= 2e-3,
            "tmle {} vs one-step {}",
            tmle.theta_hat,
            onestep.theta_hat
        );
        assert!((0.0..=1.0).contains(&tmle.theta_hat));
    }

    #[test]
    fn stabilization_is_a_small_sample_correction_only() {
        let spec = DgpSpec::new(0);
        let data = sample_dataset(&spec, 50_000, 37);
        let cfg = NuisanceConfig::default();
        let plain = estimate_onestep(&data, &cfg, contrast(), 41).unwrap();
        let stab = estimate_onestep_stabilized(&data, &cfg, contrast(), 41).unwrap();
        assert!(
            (plain.theta_hat - stab.theta_hat).abs() <= 1e-3,
            "plain {} vs stabilized {}",
            plain.theta_hat,
            stab.theta_hat
        );
        assert_eq!(stab.estimator, EstimatorKind::OnestepStabilized);

        let mut self_norm = cfg.clone();
        self_norm.c_star = CStarMode::SelfNormalized;
        let snorm = estimate_onestep_stabilized(&data, &self_norm, contrast(), 41).unwrap();
        assert!((snorm.theta_hat - plain.theta_hat).abs() <= 1e-3);
    }

    #[test]
    fn swapping_rows_within_a_fold_leaves_the_estimate_unchanged() {
        let spec = DgpSpec::new(0);
        let n = 1000;
        let data = sample_dataset(&spec, n, 43);
        let cfg = NuisanceConfig::default();
        let folds = make_folds(n, cfg.folds, 47).unwrap();
        let (mut i1, mut i2) = (usize::MAX, usize::MAX);
        'outer: for a in 0..n {
            for b in (a + 1)..n {
                if folds.fold_of(a) == folds.fold_of(b) {
                    (i1, i2) = (a, b);
                    break 'outer;
                }
            }
        }
        let mut swapped: Vec<Observation> = data.observations().to_vec();
        swapped.swap(i1, i2);
        let r1 = estimate_onestep(&data, &cfg, contrast(), 47).unwrap();
        let r2 = estimate_onestep(&Dataset::new(swapped), &cfg, contrast(), 47).unwrap();
        assert!(
            (r1.theta_hat - r2.theta_hat).abs() <= 1e-12,
            "{} vs {}",
            r1.theta_hat,
            r2.theta_hat
        );
    }

    #[test]
    fn plugin_is_the_mean_of_the_fitted_reduced_regression() {
        let spec = DgpSpec::new(0);
        let n = 800;
        let data = sample_dataset(&spec, n, 53);
        let cfg = NuisanceConfig::default();
        let folds = make_folds(n, cfg.folds, 59).unwrap();
        let bundles = crossfit_nuisances(&data, &folds, &cfg, contrast()).unwrap();
        let scored = plugin_with_bundles(&data, &folds, &bundles, contrast(), 59).unwrap();
        let by_hand = mean(
            &data
                .observations()
                .iter()
                .enumerate()
                .map(|(i, o)| bundles[folds.fold_of(i)].v(0, o.w))
                .collect::<Vec<f64>>(),
        );
        assert_eq!(scored.report.theta_hat, by_hand);
        assert_eq!(
            estimate_plugin(&data, &cfg, contrast(), 59).unwrap().theta_hat,
            by_hand
        );
    }

    #[test]
    fn tmle_solves_its_scores_and_stays_in_the_unit_interval() {
        let spec = DgpSpec::new(0);
        let cfg = NuisanceConfig::default();
        for (n, seed) in [(300usize, 61u64), (1000, 67), (5000, 71)] {
            let data = sample_dataset(&spec, n, seed);
            let report = estimate_tmle(&data, &cfg, contrast(), seed ^ 1).unwrap();
            assert!(
                report.theta_hat > 0.0 && report.theta_hat < 1.0,
                "n={n}: theta {}",
                report.theta_hat
            );
            assert!(report.diagnostics.iterations <= cfg.tmle_max_sweeps);
            let residuals = report.diagnostics.score_residuals.unwrap();
            let tolerances = report.diagnostics.score_tolerances.unwrap();
            if report.diagnostics.converged {
                for (r, t) in residuals.iter().zip(tolerances) {
                    assert!(r.abs() <= t, "n={n}: residual {r} vs tolerance {t}");
                }
            }
        }
    }

    #[test]
    fn alternative_weighting_modes_still_converge() {
        let spec = DgpSpec::new(0);
        let oracle = Oracle::new(&spec).unwrap();
        let truth = oracle.true_theta(contrast());
        let data = sample_dataset(&spec, 5000, 73);
        let mut cfg = NuisanceConfig::default();
        cfg.hy_denominator = HyDenominator::AStar;
        cfg.c_star = CStarMode::SelfNormalized;
        let report = estimate_tmle(&data, &cfg, contrast(), 79).unwrap();
        assert!(report.diagnostics.converged);
        assert!(
            (report.theta_hat - truth).abs() < 0.1,
            "theta {} vs truth {truth}",
            report.theta_hat
        );
    }

    #[test]
    fn configuration_and_shape_errors_propagate() {
        let spec = DgpSpec::new(0);
        let data = sample_dataset(&spec, 100, 83);
        let mut cfg = NuisanceConfig::default();
        cfg.folds = 1;
        assert!(estimate_onestep(&data, &cfg, contrast(), 1).is_err());
        let cfg = NuisanceConfig::default();
        let tiny = sample_dataset(&spec, 3, 89);
        assert!(matches!(
            estimate_onestep(&tiny, &cfg, contrast(), 1),
            Err(Error::BadFoldCount { .. })
        ));
        // Mismatched folds/bundles surface as fold errors in the internals.
        let folds = make_folds(100, 5, 97).unwrap();
        let bundles = crossfit_nuisances(&data, &folds, &cfg, contrast()).unwrap();
        let wrong_folds = make_folds(99, 5, 97).unwrap();
        assert!(matches!(
            tmle_with_bundles(&data, &wrong_folds, &bundles, &cfg, contrast(), 1),
            Err(Error::FoldMismatch { .. })
        ));
    }

    #[test]
    fn estimator_dispatch_labels_reports() {
        let spec = DgpSpec::new(0);
        let data = sample_dataset(&spec, 400, 101);
        let cfg = NuisanceConfig::default();
        for kind in [
            EstimatorKind::Onestep,
            EstimatorKind::OnestepStabilized,
            EstimatorKind::Tmle,
            EstimatorKind::Plugin,
        ] {
            let report = estimate(&data, &cfg, kind, contrast(), 103).unwrap();
            assert_eq!(report.estimator, kind);
            assert_eq!(report.n, 400);
            assert_eq!(report.ci.len(), 2);
        }
    }
}
