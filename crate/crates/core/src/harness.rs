//! Simulation harness: misspecification scenarios, seeded replication
//! grids, CSV reporting, and an enumeration-based identity verifier.
//!
//! Reproducibility contract: every replication's data seed is derived by a
//! splitmix64 chain over `(base_seed, scenario, n, rep)`, and its fold seed
//! by salting that seed, so any single run can be reproduced in isolation
//! and output files are byte-identical across runs and thread counts
//! (results are collected in task order regardless of scheduling).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{sample_dataset, DgpSpec};
use crate::effects::{decompose_with_base, EffectReport};
use crate::learners::{crossfit_base, make_folds, LearnerSpec, NuisanceConfig};
use crate::oracle::{MisspecifiedComponents, Oracle, RobustnessConfig};
use crate::types::{
    Contrast, Covariates, Dataset, Error, EstimatorKind, LearnerKind, Observation, Result,
};

/// Which nuisance components are deliberately fitted with the
/// intercept-only learner in a simulation scenario (all others use the
/// saturated learner, which is consistent on this finite support).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Every nuisance fitted consistently.
    AllConsistent,
    /// Outcome regression `b` misspecified.
    MissB,
    /// Treatment propensity `g` misspecified.
    MissG,
    /// Confounder law `q` misspecified.
    MissQ,
    /// Reversed propensity `h` misspecified.
    MissH,
    /// Reversed confounder law `r` misspecified.
    MissR,
    /// All five directly-fitted nuisances misspecified.
    AllMisspecified,
}

impl Scenario {
    /// All scenarios in report order.
    pub const ALL: [Self; 7] = [
        Self::AllConsistent,
        Self::MissB,
        Self::MissG,
        Self::MissQ,
        Self::MissH,
        Self::MissR,
        Self::AllMisspecified,
    ];

    /// Stable identifier used in CSV output, CLI flags, and seeds.
    #[must_use]
    pub fn name(self) -> &'static str {
        match self {
            Self::AllConsistent => "all_consistent",
            Self::MissB => "miss_b",
            Self::MissG => "miss_g",
            Self::MissQ => "miss_q",
            Self::MissH => "miss_h",
            Self::MissR => "miss_r",
            Self::AllMisspecified => "all_misspecified",
        }
    }

    /// The components this scenario misspecifies, in the form the oracle's
    /// probability-limit builder takes.
    #[must_use]
    pub fn misspecified(self) -> MisspecifiedComponents {
        let mut m = MisspecifiedComponents::none();
        match self {
            Self::AllConsistent => {}
            Self::MissB => m.b = true,
            Self::MissG => m.g = true,
            Self::MissQ => m.q = true,
            Self::MissH => m.h = true,
            Self::MissR => m.r = true,
            Self::AllMisspecified => return MisspecifiedComponents::all(),
        }
        m
    }

    /// Learner configuration realizing the scenario: intercept-only fits for
    /// the misspecified components, saturated fits elsewhere. The
    /// pseudo-outcome regressions `u` and `v` always use saturated fits on
    /// pseudo-outcomes built from the (possibly misspecified) upstream fits,
    /// so they inherit exactly the inconsistency the scenario induces.
    ///
    /// The four probability factors that enter density-ratio denominators
    /// (`g`, `h`, `q`, `r`) get Laplace add-one smoothing (one pseudo-count
    /// per class): a saturated cell holding a single observation would
    /// otherwise be fitted exactly degenerate, and after clipping the
    /// resulting `1/ε` factor produces catastrophic inverse-probability
    /// weights. The smoothing vanishes as cell counts grow, so consistency
    /// is unaffected.
    #[must_use]
    pub fn nuisance_config(self, folds: usize) -> NuisanceConfig {
        let mut cfg = NuisanceConfig::all(LearnerKind::Saturated);
        cfg.folds = folds;
        for spec in [&mut cfg.g, &mut cfg.h, &mut cfg.q, &mut cfg.r] {
            spec.options.smoothing = 2.0;
        }
        let marginal = LearnerSpec::new(LearnerKind::InterceptOnly);
        let flags = self.misspecified();
        if flags.b {
            cfg.b = marginal;
        }
        if flags.g {
            cfg.g = marginal;
        }
        if flags.h {
            cfg.h = marginal;
        }
        if flags.q {
            cfg.q = marginal;
        }
        if flags.r {
            cfg.r = marginal;
        }
        cfg
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown scenario '{s}' (expected one of: {})",
                    Self::ALL.map(Self::name).join(", ")
                ))
            })
    }
}

/// One scenario's simulation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    /// Which misspecification pattern to run.
    pub scenario: Scenario,
    /// Sample sizes of the grid.
    pub sample_sizes: Vec<usize>,
    /// Monte Carlo replications per sample size.
    pub replications: usize,
    /// Estimators to run on each replication (sharing one set of nuisance
    /// fits).
    pub estimators: Vec<EstimatorKind>,
    /// Base seed of the derivation chain.
    pub base_seed: u64,
    /// Cross-fitting folds.
    pub folds: usize,
}

impl ScenarioSpec {
    /// The full study grid for one scenario.
    #[must_use]
    pub fn standard(scenario: Scenario) -> Self {
        Self {
            scenario,
            sample_sizes: vec![200, 800, 1800, 3200, 5000],
            replications: 200,
            estimators: vec![
                EstimatorKind::Onestep,
                EstimatorKind::OnestepStabilized,
                EstimatorKind::Tmle,
            ],
            base_seed: 271_828,
            folds: 5,
        }
    }

    /// A reduced grid for smoke runs.
    #[must_use]
    pub fn quick(scenario: Scenario) -> Self {
        Self {
            sample_sizes: vec![200, 800],
            replications: 50,
            ..Self::standard(scenario)
        }
    }

    /// Checks the grid is runnable.
    ///
    /// # Errors
    /// Returns [`Error::InvalidInput`] for empty grids, a zero replication
    /// count, fewer than two folds, or the plug-in estimator (it has no
    /// first-order inference and is excluded from coverage studies).
    pub fn validate(&self) -> Result<()> {
        if self.sample_sizes.is_empty() {
            return Err(Error::InvalidInput("no sample sizes in grid".to_string()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidInput(
                "grid needs at least one replication".to_string(),
            ));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidInput("no estimators in grid".to_string()));
        }
        if self.estimators.contains(&EstimatorKind::Plugin) {
            return Err(Error::InvalidInput(
                "the plug-in baseline has no first-order inference and cannot \
                 be part of a coverage grid"
                    .to_string(),
            ));
        }
        if self.folds < 2 {
            return Err(Error::InvalidInput(format!(
                "cross-fitting needs at least 2 folds, got {}",
                self.folds
            )));
        }
        Ok(())
    }
}

/// splitmix64 step, the standard 64-bit finalizer-based generator.
#[must_use]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a hash of a byte string.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives the data seed of one replication from the grid's base seed, the
/// scenario name, the sample size, and the replication index.
#[must_use]
pub fn derive_seed(base: u64, scenario: Scenario, n: usize, rep: usize) -> u64 {
    let mut s = splitmix64(base ^ fnv1a(scenario.name().as_bytes()));
    s = splitmix64(s ^ n as u64);
    s = splitmix64(s ^ rep as u64);
    s
}

/// Salt separating fold randomness from data randomness ("FOLDS" in ASCII).
const FOLD_SEED_SALT: u64 = 0x46_4F4C_4453;

/// The fold-assignment seed paired with a replication's data seed.
#[must_use]
pub fn fold_seed(data_seed: u64) -> u64 {
    splitmix64(data_seed ^ FOLD_SEED_SALT)
}

/// Everything one replication produced: per-estimator effect reports, or
/// the error message that stopped them.
#[derive(Debug, Clone)]
pub struct ReplicationResult {
    pub scenario: Scenario,
    pub n: usize,
    pub rep: usize,
    /// Data seed (the fold seed is derived from it).
    pub seed: u64,
    pub reports: Vec<(EstimatorKind, std::result::Result<EffectReport, String>)>,
}

/// Runs one replication: sample, cross-fit once, then run every estimator
/// on the shared nuisance fits. Failures are recorded per estimator rather
/// than propagated, so a grid never aborts on a single bad draw.
#[must_use]
pub fn run_replication(spec: &ScenarioSpec, n: usize, rep: usize) -> ReplicationResult {
    let seed = derive_seed(spec.base_seed, spec.scenario, n, rep);
    let data = sample_dataset(&DgpSpec::default(), n, seed);
    let cfg = spec.scenario.nuisance_config(spec.folds);
    let fseed = fold_seed(seed);
    let base = make_folds(n, spec.folds, fseed)
        .and_then(|folds| crossfit_base(&data, &folds, &cfg));
    let reports = match base {
        Ok(base) => spec
            .estimators
            .iter()
            .map(|&est| {
                (
                    est,
                    decompose_with_base(&data, &base, &cfg, est, fseed)
                        .map_err(|e| e.to_string()),
                )
            })
            .collect(),
        Err(e) => {
            let msg = e.to_string();
            spec.estimators
                .iter()
                .map(|&est| (est, Err(msg.clone())))
                .collect()
        }
    };
    ReplicationResult { scenario: spec.scenario, n, rep, seed, reports }
}

/// The effects reported per replication, in output order.
const EFFECT_LABELS: [&str; 3] = ["theta(1,0)", "indirect", "direct"];

/// Pulls the three reported effects out of an [`EffectReport`] in the fixed
/// output order.
fn effect_estimates(report: &EffectReport) -> [(&'static str, &crate::types::EstimateReport); 3] {
    let c10 = Contrast::new(1, 0).expect("binary levels");
    let theta = report
        .theta(c10)
        .expect("decomposition always carries theta(1,0)");
    [
        (EFFECT_LABELS[0], theta),
        (EFFECT_LABELS[1], &report.indirect),
        (EFFECT_LABELS[2], &report.direct),
    ]
}

/// True effect values and efficiency bounds used for coverage flags and
/// summary metrics.
struct EffectTruth {
    label: &'static str,
    truth: f64,
    bound: f64,
}

fn effect_truths(oracle: &Oracle) -> Result<[EffectTruth; 3]> {
    let c11 = Contrast::new(1, 1)?;
    let c10 = Contrast::new(1, 0)?;
    let c00 = Contrast::new(0, 0)?;
    Ok([
        EffectTruth {
            label: EFFECT_LABELS[0],
            truth: oracle.true_theta(c10),
            bound: oracle.efficiency_bound(c10),
        },
        EffectTruth {
            label: EFFECT_LABELS[1],
            truth: oracle.true_indirect(),
            bound: oracle.effect_efficiency_bound(c11, c10),
        },
        EffectTruth {
            label: EFFECT_LABELS[2],
            truth: oracle.true_direct(),
            bound: oracle.effect_efficiency_bound(c10, c00),
        },
    ])
}

/// One CSV row of the replication log.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReplicationRow {
    scenario: String,
    estimator: String,
    effect: String,
    n: usize,
    rep: usize,
    seed: u64,
    theta_hat: Option<f64>,
    se: Option<f64>,
    ci95_lo: Option<f64>,
    ci95_hi: Option<f64>,
    ci99_lo: Option<f64>,
    ci99_hi: Option<f64>,
    covered95: Option<bool>,
    covered99: Option<bool>,
    error: String,
}

fn replication_rows(result: &ReplicationResult, truths: &[EffectTruth; 3]) -> Vec<ReplicationRow> {
    let mut rows = Vec::new();
    for (estimator, outcome) in &result.reports {
        match outcome {
            Ok(report) => {
                for ((label, estimate), truth) in effect_estimates(report).iter().zip(truths) {
                    let ci95 = estimate.ci_at(0.95).expect("standard 95% interval");
                    let ci99 = estimate.ci_at(0.99).expect("standard 99% interval");
                    rows.push(ReplicationRow {
                        scenario: result.scenario.name().to_string(),
                        estimator: estimator.name().to_string(),
                        effect: (*label).to_string(),
                        n: result.n,
                        rep: result.rep,
                        seed: result.seed,
                        theta_hat: Some(estimate.theta_hat),
                        se: Some(estimate.se()),
                        ci95_lo: Some(ci95.lo),
                        ci95_hi: Some(ci95.hi),
                        ci99_lo: Some(ci99.lo),
                        ci99_hi: Some(ci99.hi),
                        covered95: Some(ci95.covers(truth.truth)),
                        covered99: Some(ci99.covers(truth.truth)),
                        error: String::new(),
                    });
                }
            }
            Err(message) => {
                for label in EFFECT_LABELS {
                    rows.push(ReplicationRow {
                        scenario: result.scenario.name().to_string(),
                        estimator: estimator.name().to_string(),
                        effect: label.to_string(),
                        n: result.n,
                        rep: result.rep,
                        seed: result.seed,
                        theta_hat: None,
                        se: None,
                        ci95_lo: None,
                        ci95_hi: None,
                        ci99_lo: None,
                        ci99_hi: None,
                        covered95: None,
                        covered99: None,
                        error: message.clone(),
                    });
                }
            }
        }
    }
    rows
}

/// One aggregated row of the summary metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub estimator: String,
    pub effect: String,
    pub n: usize,
    /// `√n · |mean(θ̂) − θ|`, which stays bounded iff the bias shrinks at
    /// the parametric rate.
    pub sqrt_n_abs_bias: f64,
    /// `n · mean((θ̂ − θ)²) / σ²_bound`: near 1 for an efficient estimator.
    pub n_mse_over_bound: f64,
    /// Fraction of 95% intervals covering the truth.
    pub coverage95: f64,
    /// Fraction of 99% intervals covering the truth.
    pub coverage99: f64,
    /// Mean reported standard error.
    pub mean_se: f64,
    /// Number of successful replications aggregated.
    pub replications: usize,
}

/// Aggregates replication results into bias / MSE / coverage metrics, keyed
/// by `(scenario, estimator, effect, n)` and ordered deterministically.
/// Failed replications are excluded (their count shows up through the
/// `replications` column).
///
/// # Errors
/// Returns an error only if the oracle for the standard law cannot be
/// built.
pub fn summarize(results: &[ReplicationResult]) -> Result<Vec<MetricsRow>> {
    let oracle = Oracle::new(&DgpSpec::default())?;
    let truths = effect_truths(&oracle)?;
    struct Acc {
        thetas: Vec<f64>,
        ses: Vec<f64>,
        covered95: usize,
        covered99: usize,
    }
    let mut groups: BTreeMap<(String, String, usize, usize), Acc> = BTreeMap::new();
    for result in results {
        for (estimator, outcome) in &result.reports {
            let Ok(report) = outcome else { continue };
            for (idx, ((_, estimate), truth)) in
                effect_estimates(report).iter().zip(&truths).enumerate()
            {
                let key = (
                    result.scenario.name().to_string(),
                    estimator.name().to_string(),
                    idx,
                    result.n,
                );
                let acc = groups.entry(key).or_insert_with(|| Acc {
                    thetas: Vec::new(),
                    ses: Vec::new(),
                    covered95: 0,
                    covered99: 0,
                });
                acc.thetas.push(estimate.theta_hat);
                acc.ses.push(estimate.se());
                let ci95 = estimate.ci_at(0.95).expect("standard 95% interval");
                let ci99 = estimate.ci_at(0.99).expect("standard 99% interval");
                acc.covered95 += usize::from(ci95.covers(truth.truth));
                acc.covered99 += usize::from(ci99.covers(truth.truth));
            }
        }
    }
    let mut rows = Vec::with_capacity(groups.len());
    for ((scenario, estimator, effect_idx, n), acc) in groups {
        let reps = acc.thetas.len();
        let truth = &truths[effect_idx];
        let mean_theta = acc.thetas.iter().sum::<f64>() / reps as f64;
        let mse = acc
            .thetas
            .iter()
            .map(|t| (t - truth.truth) * (t - truth.truth))
            .sum::<f64>()
            / reps as f64;
        rows.push(MetricsRow {
            scenario,
            estimator,
            effect: truth.label.to_string(),
            n,
            sqrt_n_abs_bias: (n as f64).sqrt() * (mean_theta - truth.truth).abs(),
            n_mse_over_bound: n as f64 * mse / truth.bound,
            coverage95: acc.covered95 as f64 / reps as f64,
            coverage99: acc.covered99 as f64 / reps as f64,
            mean_se: acc.ses.iter().sum::<f64>() / reps as f64,
            replications: reps,
        });
    }
    Ok(rows)
}

/// Runs a full scenario grid in parallel (one task per replication) and
/// returns the results in deterministic task order: sample sizes in the
/// given order, replications ascending.
///
/// `jobs = 0` uses the rayon default thread count.
///
/// # Errors
/// Returns [`Error::InvalidInput`] for an invalid spec or thread-pool
/// configuration.
pub fn run_grid(spec: &ScenarioSpec, jobs: usize) -> Result<Vec<ReplicationResult>> {
    spec.validate()?;
    let tasks: Vec<(usize, usize)> = spec
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..spec.replications).map(move |rep| (n, rep)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        tasks
            .par_iter()
            .map(|&(n, rep)| run_replication(spec, n, rep))
            .collect()
    }))
}

/// Output files written by a grid run.
#[derive(Debug, Clone)]
pub struct GridReport {
    /// Path of the per-replication log.
    pub replications_csv: PathBuf,
    /// Path of the aggregated metrics.
    pub summary_csv: PathBuf,
    /// Aggregated metrics, as written.
    pub metrics: Vec<MetricsRow>,
    /// Number of (replication, estimator) pairs that failed.
    pub failures: usize,
}

/// Runs several scenario grids and writes the combined
/// `replications.csv` / `summary.csv` pair into `out_dir`.
///
/// # Errors
/// Propagates spec validation and I/O errors.
pub fn run_grids(specs: &[ScenarioSpec], out_dir: &Path, jobs: usize) -> Result<GridReport> {
    for spec in specs {
        spec.validate()?;
    }
    let mut results = Vec::new();
    for spec in specs {
        results.extend(run_grid(spec, jobs)?);
    }
    fs::create_dir_all(out_dir)?;
    let replications_csv = out_dir.join("replications.csv");
    write_replications_csv(&replications_csv, &results)?;
    let metrics = summarize(&results)?;
    let summary_csv = out_dir.join("summary.csv");
    write_summary_csv(&summary_csv, &metrics)?;
    let failures = results
        .iter()
        .flat_map(|r| &r.reports)
        .filter(|(_, outcome)| outcome.is_err())
        .count();
    Ok(GridReport { replications_csv, summary_csv, metrics, failures })
}

/// Writes the per-replication log.
///
/// # Errors
/// Propagates I/O and serialization errors.
pub fn write_replications_csv(path: &Path, results: &[ReplicationResult]) -> Result<()> {
    let oracle = Oracle::new(&DgpSpec::default())?;
    let truths = effect_truths(&oracle)?;
    let mut writer = csv::Writer::from_path(path)?;
    for result in results {
        for row in replication_rows(result, &truths) {
            writer.serialize(row)?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Writes the aggregated metrics table.
///
/// # Errors
/// Propagates I/O and serialization errors.
pub fn write_summary_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// One observation as stored in dataset CSV files.
#[derive(Debug, Serialize, Deserialize)]
struct DataRow {
    w1: u8,
    w2: u8,
    w3: u8,
    a: u8,
    z: u8,
    m: u8,
    y: f64,
}

/// Writes a dataset as CSV with columns `w1,w2,w3,a,z,m,y`.
///
/// # Errors
/// Propagates I/O and serialization errors.
pub fn dataset_to_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for o in data.observations() {
        writer.serialize(DataRow {
            w1: o.w.bit(0),
            w2: o.w.bit(1),
            w3: o.w.bit(2),
            a: o.a,
            z: o.z,
            m: o.m,
            y: o.y,
        })?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a dataset from CSV (the format written by [`dataset_to_csv`]),
/// validating every field.
///
/// # Errors
/// Propagates I/O, parsing, and validation errors.
pub fn dataset_from_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut observations = Vec::new();
    for record in reader.deserialize() {
        let row: DataRow = record?;
        let w = Covariates::from_indicators([row.w1, row.w2, row.w3])?;
        observations.push(Observation::new(w, row.a, row.z, row.m, row.y)?);
    }
    Ok(Dataset::new(observations))
}

/// Text report of the enumerated truth: effect values, efficiency bounds,
/// and marginals of the law.
///
/// # Errors
/// Propagates validation errors from the law specification.
pub fn oracle_report(spec: &DgpSpec) -> Result<String> {
    let oracle = Oracle::new(spec)?;
    let c11 = Contrast::new(1, 1)?;
    let c10 = Contrast::new(1, 0)?;
    let c00 = Contrast::new(0, 0)?;
    let mut out = String::new();
    out.push_str("enumerated truth of the data-generating law\n");
    out.push_str("-------------------------------------------\n");
    for c in [c11, c10, c00] {
        out.push_str(&format!(
            "{:<12} = {:.15}   efficiency bound = {:.15}\n",
            c.label(),
            oracle.true_theta(c),
            oracle.efficiency_bound(c)
        ));
    }
    out.push_str(&format!(
        "{:<12} = {:.15}   efficiency bound = {:.15}\n",
        "indirect",
        oracle.true_indirect(),
        oracle.effect_efficiency_bound(c11, c10)
    ));
    out.push_str(&format!(
        "{:<12} = {:.15}   efficiency bound = {:.15}\n",
        "direct",
        oracle.true_direct(),
        oracle.effect_efficiency_bound(c10, c00)
    ));
    out.push_str(&format!(
        "{:<12} = {:.15}   efficiency bound = {:.15}\n",
        "total",
        oracle.true_total(),
        oracle.effect_efficiency_bound(c11, c00)
    ));
    out.push_str(&format!(
        "marginals: P(A=1) = {:.15}, P(Z=1) = {:.15}, P(M=1) = {:.15}, E[Y] = {:.15}\n",
        oracle.treatment_marginal(),
        oracle.confounder_marginal(),
        oracle.mediator_marginal(),
        oracle.outcome_marginal()
    ));
    Ok(out)
}

/// One checked identity.
#[derive(Debug, Clone)]
pub struct VerificationEntry {
    /// What is being checked.
    pub name: String,
    /// The observed deviation (or gap).
    pub value: f64,
    /// The requirement it is held against.
    pub requirement: String,
    /// Whether the requirement is met.
    pub passed: bool,
}

/// Result of the enumeration-based identity suite.
#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub entries: Vec<VerificationEntry>,
}

impl VerificationReport {
    /// Whether every identity held.
    #[must_use]
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "[{}] {}: {:.6e} ({})",
                if e.passed { "PASS" } else { "FAIL" },
                e.name,
                e.value,
                e.requirement
            )?;
        }
        writeln!(
            f,
            "{}/{} identities hold",
            self.entries.iter().filter(|e| e.passed).count(),
            self.entries.len()
        )
    }
}

/// Checks the analytic identities of the influence function and its error
/// expansion by exact enumeration under the given law: score means at the
/// truth, robustness of the score mean under partial misspecification
/// (including the one configuration that demonstrably fails), bias
/// detectability under a misspecified confounder law, exactness of the
/// four-term error expansion, and the alternate parameterization.
///
/// # Errors
/// Propagates validation errors from the law specification.
pub fn verify_identities(spec: &DgpSpec) -> Result<VerificationReport> {
    let oracle = Oracle::new(spec)?;
    let c11 = Contrast::new(1, 1)?;
    let c10 = Contrast::new(1, 0)?;
    let c00 = Contrast::new(0, 0)?;
    let contrasts = [c11, c10, c00];
    let mut entries = Vec::new();
    fn check(entries: &mut Vec<VerificationEntry>, name: String, value: f64, tol: f64) {
        entries.push(VerificationEntry {
            name,
            value,
            requirement: format!("|value| <= {tol:.0e}"),
            passed: value.abs() <= tol,
        });
    }

    // Score mean equals the functional at the truth.
    for c in contrasts {
        let bundle = oracle.nuisance_bundle(c);
        check(
            &mut entries,
            format!("influence mean reproduces {} at the truth", c.label()),
            oracle.eif_mean(&bundle, c) - oracle.true_theta(c),
            1e-12,
        );
    }

    // Substitution identity: the W-average of v(a★, ·) is the functional.
    for c in contrasts {
        let plug: f64 = Covariates::support()
            .map(|w| oracle.p_w(w) * oracle.v_true(c.a_star, w, c))
            .sum();
        check(
            &mut entries,
            format!("substitution identity for {}", c.label()),
            plug - oracle.true_theta(c),
            1e-12,
        );
    }

    // Robustness of the score mean under partial misspecification. Five of
    // the six configurations hold exactly; the configuration keeping only
    // (v, b, u) true does not (the score mean moves), and the suite
    // documents that honestly rather than hiding it.
    for config in RobustnessConfig::ALL {
        let bundle = oracle.robustness_bundle(config, c10);
        check(
            &mut entries,
            format!("score mean unmoved with {} [theta(1,0)]", config.label()),
            oracle.eif_mean(&bundle, c10) - oracle.true_theta(c10),
            1e-10,
        );
    }

    // A misspecified confounder law must produce a visible bias (this is
    // what the simulation's miss_q scenario exercises).
    let mut missing_q = MisspecifiedComponents::none();
    missing_q.q = true;
    let biased = oracle.plim_bundle(missing_q, c10);
    let gap = oracle.eif_mean(&biased, c10) - oracle.true_theta(c10);
    entries.push(VerificationEntry {
        name: "misspecified q moves the score mean".to_string(),
        value: gap,
        requirement: "|value| > 1e-6".to_string(),
        passed: gap.abs() > 1e-6,
    });

    // Four-term error expansion: exact for arbitrary bundles.
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let bundle = Oracle::random_bundle(seed);
        for c in contrasts {
            let lhs = oracle.eif_mean(&bundle, c) - oracle.true_theta(c);
            let rhs = oracle.second_order_remainder(&bundle, c).total();
            worst = worst.max((lhs - rhs).abs());
        }
    }
    check(
        &mut entries,
        "error expansion equals the score-mean bias on random bundles".to_string(),
        worst,
        1e-10,
    );

    // ... and vanishes term by term at the truth.
    let mut worst = 0.0f64;
    for c in contrasts {
        let bundle = oracle.nuisance_bundle(c);
        let terms = oracle.second_order_remainder(&bundle, c);
        for t in [terms.dv_dg, terms.drho_db, terms.dq_du, terms.db_dq] {
            worst = worst.max(t.abs());
        }
    }
    check(
        &mut entries,
        "error expansion vanishes at the truth".to_string(),
        worst,
        1e-12,
    );

    // Alternate parameterization: its influence function agrees pointwise
    // with the primary form at the truth, and its density ratio's two
    // algebraic forms coincide.
    let mut worst_eif = 0.0f64;
    let mut worst_ratio = 0.0f64;
    for c in contrasts {
        let bundle = oracle.nuisance_bundle(c);
        for w in Covariates::support() {
            for a in [0u8, 1] {
                for z in [0u8, 1] {
                    for m in [0u8, 1] {
                        for y in [0.0, 1.0] {
                            let alt = oracle.alt_eif_at(c, a, z, m, w, y);
                            let primary =
                                crate::eif::point_d(&bundle, c, a, z, m, w, y);
                            worst_eif = worst_eif.max((alt - primary).abs());
                        }
                        worst_ratio = worst_ratio.max(
                            (oracle.alt_density_ratio(a, z, m, w, c)
                                - oracle.alt_density_ratio_z_form(a, z, m, w))
                            .abs(),
                        );
                    }
                }
            }
        }
    }
    check(
        &mut entries,
        "alternate influence function matches the primary form pointwise".to_string(),
        worst_eif,
        1e-10,
    );
    check(
        &mut entries,
        "alternate density ratio: product form equals direct form".to_string(),
        worst_ratio,
        1e-10,
    );

    Ok(VerificationReport { entries })
}
