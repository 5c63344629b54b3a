//! Estimation and verification of interventional direct and indirect
//! effects in a mediation model whose mediator–outcome confounder is itself
//! affected by treatment.
//!
//! The observed data are `O = (W, A, Z, M, Y)`: baseline covariates `W`
//! (three binary indicators), a binary treatment `A`, a binary
//! post-treatment confounder `Z`, a binary mediator `M`, and a bounded
//! outcome `Y`. The target functionals are the interventional means
//! `θ(a′, a★) = E[Y_{a′, G(a★)}]`, where the mediator is drawn from its
//! marginal (given covariates) distribution under treatment `a★` while
//! treatment is set to `a′`; contrasts of these recover indirect, direct,
//! and total effects.
//!
//! The crate provides
//!
//! * exact finite-support computation of the truth and of estimator
//!   probability limits under an enumerable law ([`oracle`]),
//! * nuisance learners with cross-fitting ([`learners`]),
//! * the efficient influence function and its stabilized variant ([`eif`]),
//! * one-step and targeted (TMLE) estimators with plug-in baselines
//!   ([`estimators`]),
//! * effect decomposition with Wald confidence intervals ([`effects`]), and
//! * a seeded, parallel simulation harness with CSV reporting and an
//!   enumeration-based identity verifier ([`harness`]).
//!
//! Estimates are reproducible: sampling, fold assignment, and grid order
//! are all driven by explicit seeds, and grid outputs are byte-identical
//! across thread counts.

pub mod dgp;
pub mod effects;
pub mod eif;
pub mod estimators;
pub mod harness;
pub mod learners;
pub mod oracle;
pub mod types;

pub use dgp::{rexpit, sample_dataset, DgpSpec};
pub use effects::{decompose_effects, standard_intervals, wald_interval, z_quantile, EffectReport};
pub use eif::{
    density_ratio_c, eif_scores, eif_variance, point_d, point_scores, stabilization_factors,
    stabilize, PointScores, StabilizationFactors,
};
pub use estimators::{
    estimate, estimate_onestep, estimate_onestep_stabilized, estimate_plugin, estimate_tmle,
};
pub use harness::{
    dataset_from_csv, dataset_to_csv, derive_seed, fold_seed, oracle_report, run_grid, run_grids,
    run_replication, summarize, verify_identities, GridReport, MetricsRow, ReplicationResult,
    Scenario, ScenarioSpec, VerificationEntry, VerificationReport,
};
pub use learners::{
    contrast_bundles, crossfit_base, crossfit_nuisances, expit, fit_intercept_only,
    fit_logistic_irls, fit_saturated, logit, make_folds, CrossfitBase, Design, FittedRegression,
    LearnerOptions, LearnerSpec, NuisanceConfig,
};
pub use oracle::{MisspecifiedComponents, Oracle, RobustnessConfig, SecondOrderTerms};
pub use types::{
    ConfidenceInterval, Contrast, Covariates, CStarMode, Dataset, Diagnostics, EifScores, Error,
    EstimateReport, EstimatorKind, FoldAssignment, HyDenominator, LearnerKind, NuisanceBundle,
    Observation, Result,
};
