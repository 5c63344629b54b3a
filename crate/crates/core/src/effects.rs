//! Effect decomposition and Wald inference.
//!
//! The three functionals `θ(1,1)`, `θ(1,0)`, and `θ(0,0)` are estimated on
//! shared cross-fitted base nuisances, then differenced:
//!
//! * indirect effect = `θ(1,1) − θ(1,0)`
//! * direct effect   = `θ(1,0) − θ(0,0)`
//! * total effect    = `θ(1,1) − θ(0,0)`
//!
//! so the decomposition `indirect + direct = total` holds by construction up
//! to float rounding. The variance of each difference is the empirical
//! variance of the per-observation differences of influence values, which
//! accounts for the dependence between the two functional estimates.
//!
//! Confidence intervals are Wald intervals using the normal quantile
//! computed by the rational approximation of Wichura (1988), algorithm
//! AS 241 (PPND16), accurate well beyond the 1e-9 needed here.

use crate::estimators::{
    onestep_with_bundles, plugin_with_bundles, tmle_with_bundles, ScoredEstimate,
};
use crate::learners::{contrast_bundles, crossfit_base, make_folds, CrossfitBase, NuisanceConfig};
use crate::types::{
    variance, ConfidenceInterval, Contrast, Dataset, Diagnostics, Error, EstimateReport,
    EstimatorKind, Result,
};

/// Standard normal quantile (inverse CDF) via Wichura's AS 241 (PPND16).
///
/// # Errors
/// Returns [`Error::BadAlpha`] unless `0 < p < 1`.
#[allow(clippy::excessive_precision)]
pub fn z_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::BadAlpha { alpha: p });
    }
    const A: [f64; 8] = [
        3.3871328727963666080e0,
        1.3314166789178437745e2,
        1.9715909503065514427e3,
        1.3731693765509461125e4,
        4.5921953931549871457e4,
        6.7265770927008700853e4,
        3.3430575583588128105e4,
        2.5090809287301226727e3,
    ];
    const B: [f64; 7] = [
        4.2313330701600911252e1,
        6.8718700749205790830e2,
        5.3941960214247511077e3,
        2.1213794301586595867e4,
        3.9307895800092710610e4,
        2.8729085735721942674e4,
        5.2264952788528545610e3,
    ];
    const C: [f64; 8] = [
        1.42343711074968357734e0,
        4.63033784615654529590e0,
        5.76949722146069140550e0,
        3.64784832476320460504e0,
        1.27045825245236838258e0,
        2.41780725177450611770e-1,
        2.27238449892691845833e-2,
        7.74545014278341407640e-4,
    ];
    const D: [f64; 7] = [
        2.05319162663775882187e0,
        1.67638483018380384940e0,
        6.89767334985100004550e-1,
        1.48103976427480074590e-1,
        1.51986665636164571966e-2,
        5.47593808499534494600e-4,
        1.05075007164441684324e-9,
    ];
    const E: [f64; 8] = [
        6.65790464350110377720e0,
        5.46378491116411436990e0,
        1.78482653991729133580e0,
        2.96560571828504891230e-1,
        2.65321895265761230930e-2,
        1.24266094738807843860e-3,
        2.71155556874348757815e-5,
        2.01033439929228813265e-7,
    ];
    const F: [f64; 7] = [
        5.99832206555887937690e-1,
        1.36929880922735805310e-1,
        1.48753612908506148525e-2,
        7.86869131145613259100e-4,
        1.84631831751005468180e-5,
        1.42151175831644588870e-7,
        2.04426310338993978564e-15,
    ];
    // Ratio of two degree-7 polynomials with unit constant denominator term.
    fn rational(r: f64, num: &[f64; 8], den: &[f64; 7]) -> f64 {
        let mut n = num[7];
        for k in (0..7).rev() {
            n = n * r + num[k];
        }
        let mut d = den[6];
        for k in (0..6).rev() {
            d = d * r + den[k];
        }
        n / (d * r + 1.0)
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return Ok(q * rational(r, &A, &B));
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let value = if r <= 5.0 {
        rational(r - 1.6, &C, &D)
    } else {
        rational(r - 5.0, &E, &F)
    };
    Ok(if q < 0.0 { -value } else { value })
}

/// Two-sided Wald interval `theta ± z((1+level)/2) · se`.
///
/// # Errors
/// Returns [`Error::BadAlpha`] for a level outside `(0, 1)` and
/// [`Error::InvalidInput`] for a negative or non-finite standard error.
pub fn wald_interval(theta: f64, se: f64, level: f64) -> Result<ConfidenceInterval> {
    if !(se >= 0.0 && se.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "standard error must be finite and non-negative, got {se}"
        )));
    }
    let z = z_quantile((1.0 + level) / 2.0).map_err(|_| Error::BadAlpha { alpha: level })?;
    Ok(ConfidenceInterval {
        level,
        lo: theta - z * se,
        hi: theta + z * se,
    })
}

/// The report-standard interval pair: 95% and 99% Wald intervals from an
/// influence-function variance.
///
/// # Errors
/// Returns [`Error::InvalidInput`] for `n = 0` or a negative/non-finite
/// variance.
pub fn standard_intervals(theta: f64, sigma2: f64, n: usize) -> Result<Vec<ConfidenceInterval>> {
    if n == 0 {
        return Err(Error::InvalidInput(
            "intervals require at least one observation".to_string(),
        ));
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "variance must be finite and non-negative, got {sigma2}"
        )));
    }
    let se = (sigma2 / n as f64).sqrt();
    Ok(vec![
        wald_interval(theta, se, 0.95)?,
        wald_interval(theta, se, 0.99)?,
    ])
}

/// Estimates of the three functionals and their differences.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EffectReport {
    /// Per-contrast functional estimates, in the order
    /// `θ(1,1), θ(1,0), θ(0,0)`.
    pub thetas: Vec<(Contrast, EstimateReport)>,
    /// Indirect effect `θ(1,1) − θ(1,0)`.
    pub indirect: EstimateReport,
    /// Direct effect `θ(1,0) − θ(0,0)`.
    pub direct: EstimateReport,
    /// Total effect `θ(1,1) − θ(0,0)`.
    pub total: EstimateReport,
}

impl EffectReport {
    /// The functional estimate at a given contrast, if present.
    #[must_use]
    pub fn theta(&self, contrast: Contrast) -> Option<&EstimateReport> {
        self.thetas
            .iter()
            .find(|(c, _)| *c == contrast)
            .map(|(_, r)| r)
    }
}

/// Estimates `θ(1,1)`, `θ(1,0)`, `θ(0,0)`, and their differences with the
/// requested estimator. The five contrast-free nuisances are cross-fitted
/// once and shared across the three contrasts; fold assignment is drawn
/// from `seed`.
///
/// # Errors
/// Propagates configuration, fold, fitting, and degeneracy errors.
pub fn decompose_effects(
    data: &Dataset,
    cfg: &NuisanceConfig,
    estimator: EstimatorKind,
    seed: u64,
) -> Result<EffectReport> {
    cfg.validate()?;
    let folds = make_folds(data.n(), cfg.folds, seed)?;
    let base = crossfit_base(data, &folds, cfg)?;
    decompose_with_base(data, &base, cfg, estimator, seed)
}

/// [`decompose_effects`] on an existing cross-fitted base (the harness uses
/// this to run several estimators on identical nuisance fits).
pub(crate) fn decompose_with_base(
    data: &Dataset,
    base: &CrossfitBase,
    cfg: &NuisanceConfig,
    estimator: EstimatorKind,
    seed: u64,
) -> Result<EffectReport> {
    let contrasts = [
        Contrast::new(1, 1)?,
        Contrast::new(1, 0)?,
        Contrast::new(0, 0)?,
    ];
    let folds = base.folds();
    let mut scored: Vec<(Contrast, ScoredEstimate)> = Vec::with_capacity(3);
    for ct in contrasts {
        let bundles = contrast_bundles(base, data, cfg, ct)?;
        let s = match estimator {
            EstimatorKind::Onestep => {
                onestep_with_bundles(data, folds, &bundles, cfg, ct, false, seed)?
            }
            EstimatorKind::OnestepStabilized => {
                onestep_with_bundles(data, folds, &bundles, cfg, ct, true, seed)?
            }
            EstimatorKind::Tmle => tmle_with_bundles(data, folds, &bundles, cfg, ct, seed)?,
            EstimatorKind::Plugin => plugin_with_bundles(data, folds, &bundles, ct, seed)?,
        };
        scored.push((ct, s));
    }
    let indirect = difference(&scored[0].1, &scored[1].1, estimator, seed)?;
    let direct = difference(&scored[1].1, &scored[2].1, estimator, seed)?;
    let total = difference(&scored[0].1, &scored[2].1, estimator, seed)?;
    Ok(EffectReport {
        thetas: scored.into_iter().map(|(c, s)| (c, s.report)).collect(),
        indirect,
        direct,
        total,
    })
}

/// Difference of two functional estimates with inference from the
/// per-observation differences of influence values.
fn difference(
    lhs: &ScoredEstimate,
    rhs: &ScoredEstimate,
    estimator: EstimatorKind,
    seed: u64,
) -> Result<EstimateReport> {
    let n = lhs.d_values.len();
    if rhs.d_values.len() != n {
        return Err(Error::InvalidInput(
            "effect differencing needs influence values over the same observations".to_string(),
        ));
    }
    let theta_hat = lhs.report.theta_hat - rhs.report.theta_hat;
    let diffs: Vec<f64> = lhs
        .d_values
        .iter()
        .zip(&rhs.d_values)
        .map(|(l, r)| l - r)
        .collect();
    let sigma2_hat = variance(&diffs);
    Ok(EstimateReport {
        theta_hat,
        sigma2_hat,
        n,
        ci: standard_intervals(theta_hat, sigma2_hat, n)?,
        estimator,
        diagnostics: Diagnostics {
            iterations: lhs
                .report
                .diagnostics
                .iterations
                .max(rhs.report.diagnostics.iterations),
            score_residuals: None,
            score_tolerances: None,
            converged: lhs.report.diagnostics.converged && rhs.report.diagnostics.converged,
            folds: lhs.report.diagnostics.folds,
            seed,
        },
    })
}
