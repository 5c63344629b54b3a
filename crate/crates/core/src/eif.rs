//! Pointwise evaluation of the efficient influence function (EIF) for the
//! interventional mediation functional, in the binary-Z score form, together
//! with the density ratio `c`, weight stabilization, and the EIF variance
//! estimator.
//!
//! For a contrast `(a′, a★)` and nuisances `η = (b,g,h,q,r,u,v)` the
//! influence value at `o = (w,a,z,m,y)` decomposes as
//!
//! ```text
//! D(o) = 1{a=a′}/g(a′|w) · c(a′,z,m,w) · (y − b(a′,z,m,w))          [term_y]
//!      + 1{a=a′}/g(a′|w) · {u(1,a′,w) − u(0,a′,w)} · (z − q(1|a′,w)) [term_z]
//!      + 1{a=a★}/g(a★|w) · {Σ_z b(a′,z,m,w) q(z|a′,w) − v(a★,w)}     [term_m]
//!      + v(a★, w)
//! ```
//!
//! where `c` is the product-form density ratio of [`density_ratio_c`]. The
//! sample mean of `D` over cross-fitted nuisances is the one-step estimator;
//! its empirical variance estimates the efficiency bound.

use crate::types::{
    Contrast, Covariates, CStarMode, Dataset, EifScores, Error, FoldAssignment, NuisanceBundle,
    Result,
};

/// Empirical means of the three inverse-probability weight factors used for
/// weight stabilization (each has expectation 1 at the truth).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilizationFactors {
    /// Mean of `1{A=a′}/g(a′|W) · c(a′,Z,M,W)` (divides `term_y`).
    pub mean_hy: f64,
    /// Mean of `1{A=a′}/g(a′|W)` (divides `term_z`).
    pub mean_ha: f64,
    /// Mean of `1{A=a★}/g(a★|W)` (divides `term_m`).
    pub mean_hm: f64,
}

/// The density ratio `c(a,z,m,w) = p(m | a★, w) / p(m | a, z, w)` expressed
/// through the fitted conditionals:
///
/// ```text
/// c = [g(a|w)/g(a★|w)] · [q(z|a,w)/r(z|a,m,w)] · [h(a★|m,w)/h(a|m,w)]
/// ```
///
/// Clipping of `g,h,q,r` at bundle construction keeps every factor finite
/// and strictly positive.
#[must_use]
pub fn density_ratio_c(
    bundle: &NuisanceBundle,
    a: u8,
    z: u8,
    m: u8,
    w: Covariates,
    contrast: Contrast,
) -> f64 {
    let astar = contrast.a_star;
    (bundle.g(a, w) / bundle.g(astar, w))
        * (bundle.q(z, a, w) / bundle.r(z, a, m, w))
        * (bundle.h(astar, m, w) / bundle.h(a, m, w))
}

/// The influence value at a single support point, split into its terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointScores {
    pub term_y: f64,
    pub term_z: f64,
    pub term_m: f64,
    pub v_at_astar: f64,
}

impl PointScores {
    /// Total influence value `d`.
    #[must_use]
    pub fn d(&self) -> f64 {
        self.term_y + self.term_z + self.term_m + self.v_at_astar
    }
}

/// Evaluates the binary-Z score form of the EIF at one support point under
/// the given nuisance bundle.
#[must_use]
pub fn point_scores(
    bundle: &NuisanceBundle,
    contrast: Contrast,
    a: u8,
    z: u8,
    m: u8,
    w: Covariates,
    y: f64,
) -> PointScores {
    let (ap, astar) = (contrast.a_prime, contrast.a_star);
    let mut term_y = 0.0;
    let mut term_z = 0.0;
    let mut term_m = 0.0;
    if a == ap {
        let inv_g = 1.0 / bundle.g(ap, w);
        let c = density_ratio_c(bundle, ap, z, m, w, contrast);
        term_y = inv_g * c * (y - bundle.b(ap, z, m, w));
        let delta_u = bundle.u(1, ap, w) - bundle.u(0, ap, w);
        term_z = inv_g * delta_u * (f64::from(z) - bundle.q(1, ap, w));
    }
    if a == astar {
        let pseudo = bundle.b(ap, 0, m, w) * bundle.q(0, ap, w)
            + bundle.b(ap, 1, m, w) * bundle.q(1, ap, w);
        term_m = (pseudo - bundle.v(astar, w)) / bundle.g(astar, w);
    }
    PointScores {
        term_y,
        term_z,
        term_m,
        v_at_astar: bundle.v(astar, w),
    }
}

/// Total influence value at one support point (sum of [`point_scores`]).
#[must_use]
pub fn point_d(
    bundle: &NuisanceBundle,
    contrast: Contrast,
    a: u8,
    z: u8,
    m: u8,
    w: Covariates,
    y: f64,
) -> f64 {
    point_scores(bundle, contrast, a, z, m, w, y).d()
}

fn check_fold_compat(
    data: &Dataset,
    bundles: &[NuisanceBundle],
    folds: &FoldAssignment,
) -> Result<()> {
    if folds.n() != data.n() {
        return Err(Error::FoldMismatch {
            context: format!(
                "fold assignment covers {} observations, dataset has {}",
                folds.n(),
                data.n()
            ),
        });
    }
    if folds.fold_count() != bundles.len() {
        return Err(Error::FoldMismatch {
            context: format!(
                "{} folds but {} nuisance bundles",
                folds.fold_count(),
                bundles.len()
            ),
        });
    }
    Ok(())
}

/// Computes per-observation EIF scores, evaluating observation `i` under the
/// bundle fitted without its validation fold `j(i)`.
///
/// # Errors
/// Returns [`Error::FoldMismatch`] if the fold assignment does not match the
/// dataset or the bundle list.
pub fn eif_scores(
    data: &Dataset,
    bundles: &[NuisanceBundle],
    folds: &FoldAssignment,
    contrast: Contrast,
) -> Result<EifScores> {
    check_fold_compat(data, bundles, folds)?;
    let n = data.n();
    let mut term_y = Vec::with_capacity(n);
    let mut term_z = Vec::with_capacity(n);
    let mut term_m = Vec::with_capacity(n);
    let mut v_at = Vec::with_capacity(n);
    for (i, o) in data.observations().iter().enumerate() {
        let bundle = &bundles[folds.fold_of(i)];
        let p = point_scores(bundle, contrast, o.a, o.z, o.m, o.w, o.y);
        term_y.push(p.term_y);
        term_z.push(p.term_z);
        term_m.push(p.term_m);
        v_at.push(p.v_at_astar);
    }
    EifScores::new(term_y, term_z, term_m, v_at)
}

/// Computes the three stabilization divisors. With
/// [`CStarMode::SelfNormalized`], the `c` factor inside the `term_y` divisor
/// is itself divided by its plain empirical mean.
///
/// # Errors
/// Returns [`Error::DegenerateWeights`] if no observation sits at `a′` or
/// none at `a★`, and [`Error::FoldMismatch`] on incompatible inputs.
pub fn stabilization_factors(
    data: &Dataset,
    bundles: &[NuisanceBundle],
    folds: &FoldAssignment,
    contrast: Contrast,
    c_star: CStarMode,
) -> Result<StabilizationFactors> {
    check_fold_compat(data, bundles, folds)?;
    if data.is_empty() {
        return Err(Error::DegenerateWeights {
            context: "empty dataset".to_string(),
        });
    }
    let (ap, astar) = (contrast.a_prime, contrast.a_star);
    let n = data.n() as f64;
    let mut sum_hy = 0.0;
    let mut sum_ha = 0.0;
    let mut sum_hm = 0.0;
    for (i, o) in data.observations().iter().enumerate() {
        let bundle = &bundles[folds.fold_of(i)];
        if o.a == ap {
            let inv_g = 1.0 / bundle.g(ap, o.w);
            sum_ha += inv_g;
            sum_hy += inv_g * density_ratio_c(bundle, ap, o.z, o.m, o.w, contrast);
        }
        if o.a == astar {
            sum_hm += 1.0 / bundle.g(astar, o.w);
        }
    }
    let mut mean_hy = sum_hy / n;
    let mean_ha = sum_ha / n;
    let mean_hm = sum_hm / n;
    if mean_ha == 0.0 || mean_hm == 0.0 {
        return Err(Error::DegenerateWeights {
            context: format!(
                "no observations at treatment arm ({})",
                if mean_ha == 0.0 { "a_prime" } else { "a_star" }
            ),
        });
    }
    if c_star == CStarMode::SelfNormalized {
        // c★ = c / mean(1{A=a′}/g·c): recompute the divisor with the
        // normalized ratio (it equals 1 up to rounding, by construction).
        let plain = mean_hy;
        mean_hy = sum_hy / plain / n;
    }
    Ok(StabilizationFactors { mean_hy, mean_ha, mean_hm })
}

/// Divides `term_y`, `term_z`, `term_m` by their respective empirical weight
/// means (leaving the plug-in term untouched) and recomputes the totals.
///
/// # Errors
/// As [`stabilization_factors`].
pub fn stabilize(
    scores: &EifScores,
    data: &Dataset,
    bundles: &[NuisanceBundle],
    folds: &FoldAssignment,
    contrast: Contrast,
) -> Result<EifScores> {
    stabilize_with(scores, data, bundles, folds, contrast, CStarMode::Plain)
}

/// [`stabilize`] with an explicit `c★` reading.
///
/// # Errors
/// As [`stabilization_factors`].
pub fn stabilize_with(
    scores: &EifScores,
    data: &Dataset,
    bundles: &[NuisanceBundle],
    folds: &FoldAssignment,
    contrast: Contrast,
    c_star: CStarMode,
) -> Result<EifScores> {
    if scores.n() != data.n() {
        return Err(Error::FoldMismatch {
            context: format!(
                "scores cover {} observations, dataset has {}",
                scores.n(),
                data.n()
            ),
        });
    }
    let f = stabilization_factors(data, bundles, folds, contrast, c_star)?;
    let scale = |xs: &[f64], d: f64| xs.iter().map(|x| x / d).collect::<Vec<_>>();
    EifScores::new(
        scale(&scores.term_y, f.mean_hy),
        scale(&scores.term_z, f.mean_ha),
        scale(&scores.term_m, f.mean_hm),
        scores.v_at_astar.clone(),
    )
}

/// Empirical variance (`1/n` normalization) of the total influence values.
///
/// # Errors
/// Returns [`Error::TooFewObservations`] for fewer than two observations.
pub fn eif_variance(scores: &EifScores) -> Result<f64> {
    if scores.n() < 2 {
        return Err(Error::TooFewObservations {
            needed: 2,
            got: scores.n(),
        });
    }
    Ok(crate::types::variance(&scores.d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{sample_dataset, DgpSpec};
    use crate::oracle::Oracle;
    use crate::types::{BundleProvenance, Observation, Provenance, N_W};

    fn uniform_bundle() -> NuisanceBundle {
        NuisanceBundle::from_tables(
            vec![0.5; 8 * N_W],
            vec![0.5; N_W],
            vec![0.5; 2 * N_W],
            vec![0.5; 2 * N_W],
            vec![0.5; 4 * N_W],
            vec![0.25; 4 * N_W],
            vec![0.5; 2 * N_W],
            0.001,
            BundleProvenance::uniform(Provenance::Misspecified),
        )
        .unwrap()
    }

    fn contrast() -> Contrast {
        Contrast::new(1, 0).unwrap()
    }

    /// Shares one bundle across two folds so small fixtures satisfy the
    /// fold-count preconditions.
    fn two_folds(bundle: &NuisanceBundle, n: usize) -> (Vec<NuisanceBundle>, FoldAssignment) {
        let j_of_i = (0..n).map(|i| i % 2).collect();
        (
            vec![bundle.clone(), bundle.clone()],
            FoldAssignment::new(j_of_i, 2).unwrap(),
        )
    }

    #[test]
    fn density_ratio_is_one_for_uniform_bundle() {
        let bundle = uniform_bundle();
        for w in Covariates::support() {
            for a in [0u8, 1] {
                for z in [0u8, 1] {
                    for m in [0u8, 1] {
                        let c = density_ratio_c(&bundle, a, z, m, w, contrast());
                        assert!((c - 1.0).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn density_ratio_matches_enumeration_ratio_under_oracle() {
        let oracle = Oracle::new(&DgpSpec::new(0)).unwrap();
        for c in [
            Contrast::new(1, 0).unwrap(),
            Contrast::new(1, 1).unwrap(),
            Contrast::new(0, 0).unwrap(),
        ] {
            let bundle = oracle.nuisance_bundle(c);
            for w in Covariates::support() {
                for a in [0u8, 1] {
                    for z in [0u8, 1] {
                        for m in [0u8, 1] {
                            let product = density_ratio_c(&bundle, a, z, m, w, c);
                            let ratio = oracle.p_m_given_aw(m, c.a_star, w)
                                / oracle.p_m_given_zaw(m, z, a, w);
                            assert!(
                                (product - ratio).abs() < 1e-10,
                                "c mismatch at a={a} z={z} m={m} w={}: {product} vs {ratio}",
                                w.index()
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn density_ratio_is_strictly_positive() {
        let oracle = Oracle::new(&DgpSpec::new(0)).unwrap();
        let bundle = oracle.nuisance_bundle(contrast());
        for w in Covariates::support() {
            for z in [0u8, 1] {
                for m in [0u8, 1] {
                    assert!(density_ratio_c(&bundle, 1, z, m, w, contrast()) > 0.0);
                }
            }
        }
    }

    #[test]
    fn scores_vanish_off_the_indicated_arms() {
        let oracle = Oracle::new(&DgpSpec::new(0)).unwrap();
        let bundle = oracle.nuisance_bundle(contrast());
        let w = Covariates::from_bits(5).unwrap();
        // a = a★ = 0: outcome and confounder scores vanish.
        let p = point_scores(&bundle, contrast(), 0, 1, 0, w, 1.0);
        assert_eq!(p.term_y, 0.0);
        assert_eq!(p.term_z, 0.0);
        assert_ne!(p.term_m, 0.0);
        // a = a′ = 1: mediator score vanishes.
        let p = point_scores(&bundle, contrast(), 1, 1, 0, w, 1.0);
        assert_eq!(p.term_m, 0.0);
    }

    #[test]
    fn outcome_score_vanishes_when_y_equals_regression() {
        let oracle = Oracle::new(&DgpSpec::new(0)).unwrap();
        let bundle = oracle.nuisance_bundle(contrast());
        let w = Covariates::from_bits(3).unwrap();
        let y = bundle.b(1, 1, 0, w);
        let p = point_scores(&bundle, contrast(), 1, 1, 0, w, y);
        assert_eq!(p.term_y, 0.0);
    }

    #[test]
    fn eif_scores_reject_mismatched_folds() {
        let oracle = Oracle::new(&DgpSpec::new(0)).unwrap();
        let bundle = oracle.nuisance_bundle(contrast());
        let data = sample_dataset(&DgpSpec::new(0), 10, 3);
        let (bundles, folds) = two_folds(&bundle, 9);
        assert!(matches!(
            eif_scores(&data, &bundles, &folds, contrast()),
            Err(Error::FoldMismatch { .. })
        ));
        let (_, folds) = two_folds(&bundle, 10);
        assert!(matches!(
            eif_scores(&data, &bundles[..1], &folds, contrast()),
            Err(Error::FoldMismatch { .. })
        ));
    }

    #[test]
    fn mean_score_approaches_theta_under_oracle() {
        let spec = DgpSpec::new(0);
        let oracle = Oracle::new(&spec).unwrap();
        let bundle = oracle.nuisance_bundle(contrast());
        let n = 100_000;
        let data = sample_dataset(&spec, n, 11);
        let (bundles, folds) = two_folds(&bundle, n);
        let scores = eif_scores(&data, &bundles, &folds, contrast()).unwrap();
        let theta = oracle.true_theta(contrast());
        let sigma = oracle.efficiency_bound(contrast()).sqrt();
        let tol = 4.0 * sigma / (n as f64).sqrt();
        assert!(
            (scores.mean_d() - theta).abs() < tol,
            "mean d = {}, theta = {theta} ± {tol}",
            scores.mean_d()
        );
        let var = eif_variance(&scores).unwrap();
        let bound = oracle.efficiency_bound(contrast());
        assert!(
            (var - bound).abs() / bound < 0.05,
            "variance {var} vs bound {bound}"
        );
    }

    #[test]
    fn stabilization_divisors_near_one_under_oracle() {
        let spec = DgpSpec::new(0);
        let oracle = Oracle::new(&spec).unwrap();
        let bundle = oracle.nuisance_bundle(contrast());
        let n = 100_000;
        let data = sample_dataset(&spec, n, 13);
        let (bundles, folds) = two_folds(&bundle, n);
        let f =
            stabilization_factors(&data, &bundles, &folds, contrast(), CStarMode::Plain).unwrap();
        for (name, value) in [("hy", f.mean_hy), ("ha", f.mean_ha), ("hm", f.mean_hm)] {
            assert!(
                (value - 1.0).abs() < 0.05,
                "divisor {name} = {value}, expected ≈ 1"
            );
        }
        let scores = eif_scores(&data, &bundles, &folds, contrast()).unwrap();
        let stabilized = stabilize(&scores, &data, &bundles, &folds, contrast()).unwrap();
        // Additivity is preserved after stabilization.
        for i in (0..n).step_by(9973) {
            let sum = stabilized.term_y[i]
                + stabilized.term_z[i]
                + stabilized.term_m[i]
                + stabilized.v_at_astar[i];
            assert!((stabilized.d[i] - sum).abs() < 1e-15);
        }
        // Self-normalized c★ makes the term_y divisor exactly one.
        let f2 = stabilization_factors(
            &data,
            &bundles,
            &folds,
            contrast(),
            CStarMode::SelfNormalized,
        )
        .unwrap();
        assert!((f2.mean_hy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stabilization_rejects_missing_arm() {
        let oracle = Oracle::new(&DgpSpec::new(0)).unwrap();
        let bundle = oracle.nuisance_bundle(contrast());
        let w = Covariates::from_bits(0).unwrap();
        // Every observation at a = 0: no rows at a′ = 1.
        let data = Dataset::new(vec![
            Observation::new(w, 0, 0, 0, 0.0).unwrap(),
            Observation::new(w, 0, 1, 1, 1.0).unwrap(),
        ]);
        let (bundles, folds) = two_folds(&bundle, 2);
        assert!(matches!(
            stabilization_factors(&data, &bundles, &folds, contrast(), CStarMode::Plain),
            Err(Error::DegenerateWeights { .. })
        ));
    }

    #[test]
    fn constant_weight_divisors_are_exact_ratios() {
        // With g ≡ 0.5 in the bundle, the divisor for term_z is exactly
        // (share of a′ rows) / 0.5, a pure arithmetic identity.
        let bundle = uniform_bundle();
        let w = Covariates::from_bits(0).unwrap();
        let data = Dataset::new(vec![
            Observation::new(w, 1, 0, 0, 0.0).unwrap(),
            Observation::new(w, 0, 0, 0, 0.0).unwrap(),
            Observation::new(w, 1, 1, 0, 1.0).unwrap(),
            Observation::new(w, 0, 1, 1, 1.0).unwrap(),
        ]);
        let (bundles, folds) = two_folds(&bundle, 4);
        let f =
            stabilization_factors(&data, &bundles, &folds, contrast(), CStarMode::Plain).unwrap();
        assert_eq!(f.mean_ha, 0.5 / 0.5);
        assert_eq!(f.mean_hm, 0.5 / 0.5);
        assert_eq!(f.mean_hy, 1.0, "uniform bundle has c ≡ 1");
    }

    #[test]
    fn variance_of_degenerate_and_split_scores() {
        let constant = EifScores::new(vec![0.0; 4], vec![0.0; 4], vec![0.0; 4], vec![0.3; 4])
            .unwrap();
        assert_eq!(eif_variance(&constant).unwrap(), 0.0);
        let split = EifScores::new(
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 1.0],
        )
        .unwrap();
        assert!((eif_variance(&split).unwrap() - 0.25).abs() < 1e-15);
        let single = EifScores::new(vec![0.0], vec![0.0], vec![0.0], vec![0.0]).unwrap();
        assert!(matches!(
            eif_variance(&single),
            Err(Error::TooFewObservations { .. })
        ));
    }
}
