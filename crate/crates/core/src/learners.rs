//! Nuisance learners and the cross-fitting pipeline.
//!
//! Three learner families cover the study designs: a *saturated* fit
//! (per-cell empirical means over the full discrete covariate cross — the
//! nonparametric MLE on this finite support, hence the consistent choice),
//! a main-terms *logistic* regression fitted by iteratively reweighted least
//! squares (IRLS), and an *intercept-only* fit (the marginal mean, which is
//! the exact logistic intercept MLE — the deliberately inconsistent choice).
//! An *oracle* passthrough copies exact enumeration tables for
//! calibration runs.
//!
//! Cross-fitting proceeds in two stages. [`crossfit_base`] fits the five
//! contrast-free nuisances `(b, g, h, q, r)` once per fold on the
//! complementary training rows. [`contrast_bundles`] then builds the
//! contrast-specific pseudo-outcome regressions `u` and `v` on top of each
//! fold's tables and assembles complete [`NuisanceBundle`]s. Splitting the
//! stages lets one set of base fits serve all three effect contrasts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::dgp::DgpSpec;
use crate::eif::density_ratio_c;
use crate::oracle::Oracle;
use crate::types::{
    idx_b, idx_h, idx_q, idx_r, idx_u, idx_v, BundleProvenance, Contrast, Covariates, CStarMode,
    Dataset, Error, FoldAssignment, HyDenominator, LearnerKind, NuisanceBundle, Observation,
    Provenance, Result, COVARIATE_WIDTH, N_W,
};

/// Standard logistic function `1 / (1 + e^{-x})`.
#[inline]
#[must_use]
pub fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Log-odds `ln(p / (1 - p))`.
#[inline]
#[must_use]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Tuning constants shared by the learner families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerOptions {
    /// IRLS stops when the largest absolute coefficient change falls below
    /// this threshold.
    pub irls_tolerance: f64,
    /// IRLS iteration budget; the last iterate is returned with a
    /// `converged = false` flag when exhausted.
    pub irls_max_iterations: usize,
    /// Ridge term added to the weighted normal equations when they are
    /// singular.
    pub ridge_jitter: f64,
    /// Empirical-Bayes smoothing count for saturated cell means:
    /// `(sum + s/2) / (count + s)`. Zero keeps exact empirical means for
    /// occupied cells (empty cells then predict 0.5).
    pub smoothing: f64,
}

impl Default for LearnerOptions {
    fn default() -> Self {
        Self {
            irls_tolerance: 1e-8,
            irls_max_iterations: 100,
            ridge_jitter: 1e-8,
            smoothing: 0.0,
        }
    }
}

impl LearnerOptions {
    /// Checks the options are usable.
    ///
    /// # Errors
    /// Returns [`Error::InvalidInput`] for non-positive tolerances, budgets,
    /// or jitter, or negative smoothing.
    pub fn validate(&self) -> Result<()> {
        if !(self.irls_tolerance > 0.0 && self.irls_tolerance.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "IRLS tolerance must be positive, got {}",
                self.irls_tolerance
            )));
        }
        if self.irls_max_iterations == 0 {
            return Err(Error::InvalidInput(
                "IRLS iteration budget must be at least 1".to_string(),
            ));
        }
        if !(self.ridge_jitter > 0.0 && self.ridge_jitter.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "ridge jitter must be positive, got {}",
                self.ridge_jitter
            )));
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "smoothing count must be non-negative, got {}",
                self.smoothing
            )));
        }
        Ok(())
    }
}

/// A learner family plus its tuning constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub options: LearnerOptions,
}

impl LearnerSpec {
    /// A spec with default options.
    #[must_use]
    pub fn new(kind: LearnerKind) -> Self {
        Self { kind, options: LearnerOptions::default() }
    }
}

/// Dense row-major design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    data: Vec<f64>,
    ncols: usize,
}

impl Design {
    /// Builds a design from rows of equal width.
    ///
    /// # Errors
    /// Returns [`Error::TooFewObservations`] for an empty row list and
    /// [`Error::InvalidInput`] for ragged or zero-width rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::TooFewObservations { needed: 1, got: 0 });
        };
        let ncols = first.len();
        if ncols == 0 {
            return Err(Error::InvalidInput("design needs at least one column".to_string()));
        }
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for row in rows {
            if row.len() != ncols {
                return Err(Error::InvalidInput(format!(
                    "ragged design: row width {} vs {}",
                    row.len(),
                    ncols
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { data, ncols })
    }

    /// Number of rows.
    #[must_use]
    pub fn nrows(&self) -> usize {
        self.data.len() / self.ncols
    }

    /// Number of columns.
    #[must_use]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Row `i` as a slice.
    #[inline]
    #[must_use]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }
}

#[derive(Debug, Clone, PartialEq)]
enum FitModel {
    /// Logistic coefficients in design-column order (no implicit intercept;
    /// include a constant column for one).
    Logistic { coef: Vec<f64> },
    /// Per-cell means over the binary feature cross; cell index packs the
    /// feature bits with column `k` as bit `k`.
    CellMeans { table: Vec<f64>, ncols: usize },
    /// Constant prediction.
    Constant { value: f64 },
}

/// A fitted regression with its convergence record.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedRegression {
    model: FitModel,
    /// IRLS iterations performed (0 for closed-form fits).
    pub iterations: usize,
    /// Whether the stopping rule was met within budget.
    pub converged: bool,
    /// Final quasi-binomial deviance (logistic fits only).
    pub deviance: Option<f64>,
}

impl FittedRegression {
    /// Prediction at a feature row laid out exactly as the training design.
    ///
    /// # Panics
    /// Panics in debug builds if the feature width does not match the fit.
    #[must_use]
    pub fn predict(&self, features: &[f64]) -> f64 {
        match &self.model {
            FitModel::Logistic { coef } => {
                debug_assert_eq!(features.len(), coef.len());
                let eta: f64 = coef.iter().zip(features).map(|(c, x)| c * x).sum();
                expit(eta)
            }
            FitModel::CellMeans { table, ncols } => {
                debug_assert_eq!(features.len(), *ncols);
                table[cell_index(features)]
            }
            FitModel::Constant { value } => *value,
        }
    }

    /// Coefficients for logistic fits, `None` otherwise.
    #[must_use]
    pub fn coefficients(&self) -> Option<&[f64]> {
        match &self.model {
            FitModel::Logistic { coef } => Some(coef),
            _ => None,
        }
    }

    /// Returns the fit if its stopping rule was met.
    ///
    /// # Errors
    /// Returns [`Error::NonConvergence`] otherwise.
    pub fn ensure_converged(&self) -> Result<&Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence {
                iterations: self.iterations,
                context: "regression fit".to_string(),
            })
        }
    }
}

/// Packs a binary feature row into a cell index (column `k` is bit `k`).
#[inline]
fn cell_index(features: &[f64]) -> usize {
    let mut idx = 0usize;
    for (k, &x) in features.iter().enumerate() {
        debug_assert!(x == 0.0 || x == 1.0, "saturated features must be binary");
        if x == 1.0 {
            idx |= (x as usize) << k;
        }
    }
    idx
}

/// Fits a (quasi-)binomial logistic regression by IRLS with optional
/// per-row weights and offsets. Outcomes may be any reals in `[0, 1]`, so
/// the same routine serves Bernoulli responses and bounded pseudo-outcomes.
/// There is no implicit intercept: include a constant column if one is
/// wanted. When the weighted normal equations are singular, a ridge term is
/// added once; a still-singular system is an error. Exhausting the
/// iteration budget returns the last iterate flagged `converged = false`.
///
/// # Errors
/// Returns [`Error::InvalidInput`] on dimension mismatches or out-of-range
/// inputs and [`Error::SingularSystem`] when ridge jitter cannot rescue the
/// solve.
pub fn fit_logistic_irls(
    x: &Design,
    y: &[f64],
    weights: Option<&[f64]>,
    offset: Option<&[f64]>,
    options: &LearnerOptions,
) -> Result<FittedRegression> {
    options.validate()?;
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::InvalidInput(format!(
            "outcome length {} vs {} design rows",
            y.len(),
            n
        )));
    }
    if let Some(v) = y.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidInput(format!(
            "logistic outcomes must lie in [0, 1], found {v}"
        )));
    }
    for (name, opt, len) in [("weights", weights, n), ("offset", offset, n)] {
        if let Some(s) = opt {
            if s.len() != len {
                return Err(Error::InvalidInput(format!(
                    "{name} length {} vs {len} rows",
                    s.len()
                )));
            }
        }
    }
    if let Some(ws) = weights {
        if let Some(bad) = ws.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "weights must be finite and non-negative, found {bad}"
            )));
        }
    }
    let weight_at = |i: usize| weights.map_or(1.0, |w| w[i]);
    let offset_at = |i: usize| offset.map_or(0.0, |o| o[i]);

    let mut beta = nalgebra::DVector::<f64>::zeros(p);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.irls_max_iterations {
        iterations += 1;
        let mut grad = nalgebra::DVector::<f64>::zeros(p);
        let mut hess = nalgebra::DMatrix::<f64>::zeros(p, p);
        for i in 0..n {
            let row = x.row(i);
            let eta = offset_at(i) + row.iter().zip(beta.iter()).map(|(x, b)| x * b).sum::<f64>();
            let mu = expit(eta);
            let wt = weight_at(i);
            let score = wt * (y[i] - mu);
            let curvature = wt * mu * (1.0 - mu);
            for j in 0..p {
                grad[j] += score * row[j];
                for k in 0..=j {
                    hess[(j, k)] += curvature * row[j] * row[k];
                }
            }
        }
        for j in 0..p {
            for k in (j + 1)..p {
                hess[(j, k)] = hess[(k, j)];
            }
        }
        let delta = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                let mut ridged = hess;
                for j in 0..p {
                    ridged[(j, j)] += options.ridge_jitter;
                }
                match ridged.cholesky() {
                    Some(ch) => ch.solve(&grad),
                    None => {
                        return Err(Error::SingularSystem {
                            context: "IRLS normal equations".to_string(),
                        })
                    }
                }
            }
        };
        beta += &delta;
        if delta.amax() < options.irls_tolerance {
            converged = true;
            break;
        }
    }

    let mut deviance = 0.0;
    for i in 0..n {
        let row = x.row(i);
        let eta = offset_at(i) + row.iter().zip(beta.iter()).map(|(x, b)| x * b).sum::<f64>();
        let mu = expit(eta).clamp(1e-12, 1.0 - 1e-12);
        let yi = y[i];
        let mut ll = 0.0;
        if yi > 0.0 {
            ll += yi * mu.ln();
        }
        if yi < 1.0 {
            ll += (1.0 - yi) * (1.0 - mu).ln();
        }
        deviance -= 2.0 * weight_at(i) * ll;
    }
    Ok(FittedRegression {
        model: FitModel::Logistic { coef: beta.iter().copied().collect() },
        iterations,
        converged,
        deviance: Some(deviance),
    })
}

/// Fits per-cell empirical means over the full cross of binary features,
/// with optional empirical-Bayes smoothing `(sum + s/2)/(count + s)`.
/// Unsmoothed empty cells predict 0.5. Outcomes may be any finite reals;
/// predictions then stay inside the convex hull of the training outcomes
/// (plus the 0.5 empty-cell default).
///
/// # Errors
/// Returns [`Error::InvalidInput`] for non-binary features, non-finite
/// outcomes, mismatched lengths, or more than 16 feature columns.
pub fn fit_saturated(x: &Design, y: &[f64], smoothing: f64) -> Result<FittedRegression> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::InvalidInput(format!(
            "outcome length {} vs {} design rows",
            y.len(),
            n
        )));
    }
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "smoothing count must be non-negative, got {smoothing}"
        )));
    }
    if x.ncols() > 16 {
        return Err(Error::InvalidInput(format!(
            "saturated fit over {} binary columns would need {} cells",
            x.ncols(),
            1usize << x.ncols()
        )));
    }
    if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "outcomes must be finite, found {bad}"
        )));
    }
    let cells = 1usize << x.ncols();
    let mut sums = vec![0.0f64; cells];
    let mut counts = vec![0.0f64; cells];
    for i in 0..n {
        let row = x.row(i);
        if let Some(bad) = row.iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::InvalidInput(format!(
                "saturated features must be binary, found {bad}"
            )));
        }
        let cell = cell_index(row);
        sums[cell] += y[i];
        counts[cell] += 1.0;
    }
    let table = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| {
            if c + smoothing == 0.0 {
                0.5
            } else {
                (s + smoothing * 0.5) / (c + smoothing)
            }
        })
        .collect();
    Ok(FittedRegression {
        model: FitModel::CellMeans { table, ncols: x.ncols() },
        iterations: 0,
        converged: true,
        deviance: None,
    })
}

/// Fits the intercept-only model: a constant prediction at the outcome mean
/// (for probabilities, the exact logistic intercept MLE).
///
/// # Errors
/// Returns [`Error::TooFewObservations`] for an empty outcome vector and
/// [`Error::InvalidInput`] for non-finite outcomes.
pub fn fit_intercept_only(y: &[f64]) -> Result<FittedRegression> {
    if y.is_empty() {
        return Err(Error::TooFewObservations { needed: 1, got: 0 });
    }
    if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "outcomes must be finite, found {bad}"
        )));
    }
    let value = y.iter().sum::<f64>() / y.len() as f64;
    Ok(FittedRegression {
        model: FitModel::Constant { value },
        iterations: 0,
        converged: true,
        deviance: None,
    })
}

/// Draws a cross-validation fold assignment: indices are shuffled with a
/// seeded generator and dealt round-robin, so fold sizes differ by at most
/// one and the same `(n, j, seed)` always yields the same folds.
///
/// # Errors
/// Returns [`Error::BadFoldCount`] unless `2 ≤ j ≤ n`.
pub fn make_folds(n: usize, j: usize, seed: u64) -> Result<FoldAssignment> {
    if j < 2 || j > n {
        return Err(Error::BadFoldCount { j, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut j_of_i = vec![0usize; n];
    for (position, &i) in order.iter().enumerate() {
        j_of_i[i] = position % j;
    }
    FoldAssignment::new(j_of_i, j)
}

/// Full configuration of the nuisance stage: one learner per component plus
/// the cross-fitting and targeting constants.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceConfig {
    /// Outcome regression `b(a,z,m,w)`.
    pub b: LearnerSpec,
    /// Treatment propensity `g(a|w)`.
    pub g: LearnerSpec,
    /// Reversed treatment propensity `h(a|m,w)`.
    pub h: LearnerSpec,
    /// Confounder law `q(z|a,w)`.
    pub q: LearnerSpec,
    /// Reversed confounder law `r(z|a,m,w)`.
    pub r: LearnerSpec,
    /// Pseudo-outcome regression `u(z,a,w)`; its outcome `b·c` is unbounded,
    /// so only the saturated, intercept-only, and oracle learners apply.
    pub u: LearnerSpec,
    /// Pseudo-outcome regression `v(a,w)` (outcome in `[0,1]`).
    pub v: LearnerSpec,
    /// Positivity clip for the probability tables.
    pub epsilon: f64,
    /// Number of cross-fitting folds.
    pub folds: usize,
    /// Budget of targeting sweeps for the TMLE.
    pub tmle_max_sweeps: usize,
    /// Propensity in the denominator of the TMLE outcome-tilt covariate.
    pub hy_denominator: HyDenominator,
    /// Whether the density ratio `c` is self-normalized inside weights.
    pub c_star: CStarMode,
    /// Law to enumerate when any component uses the oracle learner.
    pub oracle_spec: Option<DgpSpec>,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self::all(LearnerKind::Saturated)
    }
}

impl NuisanceConfig {
    /// Uses the same learner for every component, default constants.
    #[must_use]
    pub fn all(kind: LearnerKind) -> Self {
        let spec = LearnerSpec::new(kind);
        Self {
            b: spec,
            g: spec,
            h: spec,
            q: spec,
            r: spec,
            u: spec,
            v: spec,
            epsilon: 1e-3,
            folds: 5,
            tmle_max_sweeps: 10,
            hy_denominator: HyDenominator::APrime,
            c_star: CStarMode::Plain,
            oracle_spec: if kind == LearnerKind::Oracle {
                Some(DgpSpec::default())
            } else {
                None
            },
        }
    }

    /// Checks learner applicability and constant ranges.
    ///
    /// # Errors
    /// Returns [`Error::InvalidInput`] if the `u` learner is logistic (its
    /// pseudo-outcome is unbounded), an oracle learner lacks `oracle_spec`,
    /// or a constant is out of range.
    pub fn validate(&self) -> Result<()> {
        for (name, spec) in self.components() {
            spec.options
                .validate()
                .map_err(|e| annotate(e, &format!("nuisance {name}")))?;
        }
        if self.u.kind == LearnerKind::LogisticMainTerms {
            return Err(Error::InvalidInput(
                "the u regression outcome (b·c) is unbounded: use the saturated, \
                 intercept-only, or oracle learner"
                    .to_string(),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::InvalidInput(format!(
                "positivity clip must lie in (0, 0.5), got {}",
                self.epsilon
            )));
        }
        if self.folds < 2 {
            return Err(Error::InvalidInput(format!(
                "cross-fitting needs at least 2 folds, got {}",
                self.folds
            )));
        }
        if self.tmle_max_sweeps == 0 {
            return Err(Error::InvalidInput(
                "targeting needs a sweep budget of at least 1".to_string(),
            ));
        }
        let needs_oracle = self.components().any(|(_, s)| s.kind == LearnerKind::Oracle);
        if needs_oracle && self.oracle_spec.is_none() {
            return Err(Error::InvalidInput(
                "oracle learner requested but no law to enumerate was supplied".to_string(),
            ));
        }
        Ok(())
    }

    fn components(&self) -> impl Iterator<Item = (&'static str, LearnerSpec)> {
        [
            ("b", self.b),
            ("g", self.g),
            ("h", self.h),
            ("q", self.q),
            ("r", self.r),
            ("u", self.u),
            ("v", self.v),
        ]
        .into_iter()
    }

    fn oracle(&self) -> Result<Option<Oracle>> {
        let needs_oracle = self.components().any(|(_, s)| s.kind == LearnerKind::Oracle);
        match (&self.oracle_spec, needs_oracle) {
            (_, false) => Ok(None),
            (Some(spec), true) => Ok(Some(Oracle::new(spec)?)),
            (None, true) => Err(Error::InvalidInput(
                "oracle learner requested but no law to enumerate was supplied".to_string(),
            )),
        }
    }
}

/// Prefixes structured error contexts with fold / nuisance information.
fn annotate(e: Error, ctx: &str) -> Error {
    match e {
        Error::SingularSystem { context } => Error::SingularSystem {
            context: format!("{ctx}: {context}"),
        },
        Error::NonConvergence { iterations, context } => Error::NonConvergence {
            iterations,
            context: format!("{ctx}: {context}"),
        },
        Error::InvalidInput(msg) => Error::InvalidInput(format!("{ctx}: {msg}")),
        other => other,
    }
}

/// Per-fold tables of the five contrast-free nuisances.
#[derive(Debug, Clone, PartialEq)]
struct BaseTables {
    b: Vec<f64>,
    g1: Vec<f64>,
    h1: Vec<f64>,
    q1: Vec<f64>,
    r1: Vec<f64>,
}

/// Cross-fitted base nuisances `(b, g, h, q, r)`: one table set per fold,
/// each fitted on the rows outside that fold. Contrast-specific bundles are
/// derived from this via [`contrast_bundles`].
#[derive(Debug, Clone, PartialEq)]
pub struct CrossfitBase {
    folds: FoldAssignment,
    tables: Vec<BaseTables>,
    provenance: BundleProvenance,
}

impl CrossfitBase {
    /// The fold assignment the tables were fitted under.
    #[must_use]
    pub fn folds(&self) -> &FoldAssignment {
        &self.folds
    }
}

// Feature layouts. Learners are fit on raw indicator columns; the logistic
// learner additionally gets an explicit leading intercept column.
fn features_b(a: u8, z: u8, m: u8, w: Covariates) -> Vec<f64> {
    let mut f = vec![f64::from(a), f64::from(z), f64::from(m)];
    f.extend((0..COVARIATE_WIDTH).map(|k| f64::from(w.bit(k))));
    f
}

fn features_g(w: Covariates) -> Vec<f64> {
    (0..COVARIATE_WIDTH).map(|k| f64::from(w.bit(k))).collect()
}

fn features_h(m: u8, w: Covariates) -> Vec<f64> {
    let mut f = vec![f64::from(m)];
    f.extend((0..COVARIATE_WIDTH).map(|k| f64::from(w.bit(k))));
    f
}

fn features_q(a: u8, w: Covariates) -> Vec<f64> {
    let mut f = vec![f64::from(a)];
    f.extend((0..COVARIATE_WIDTH).map(|k| f64::from(w.bit(k))));
    f
}

fn features_r(a: u8, m: u8, w: Covariates) -> Vec<f64> {
    let mut f = vec![f64::from(a), f64::from(m)];
    f.extend((0..COVARIATE_WIDTH).map(|k| f64::from(w.bit(k))));
    f
}

fn features_u(z: u8, a: u8, w: Covariates) -> Vec<f64> {
    let mut f = vec![f64::from(z), f64::from(a)];
    f.extend((0..COVARIATE_WIDTH).map(|k| f64::from(w.bit(k))));
    f
}

fn features_v(a: u8, w: Covariates) -> Vec<f64> {
    let mut f = vec![f64::from(a)];
    f.extend((0..COVARIATE_WIDTH).map(|k| f64::from(w.bit(k))));
    f
}

/// Fits one nuisance on the training rows and evaluates it over the support
/// cells, returning the dense table. `cells` pairs each feature row with its
/// destination index in the table.
fn tabulate(
    spec: LearnerSpec,
    row_features: &[Vec<f64>],
    outcomes: &[f64],
    cells: &[(Vec<f64>, usize)],
    table_len: usize,
    context: &str,
) -> Result<Vec<f64>> {
    let mut table = vec![0.0; table_len];
    match spec.kind {
        LearnerKind::Saturated => {
            let design = Design::from_rows(row_features).map_err(|e| annotate(e, context))?;
            let fit = fit_saturated(&design, outcomes, spec.options.smoothing)
                .map_err(|e| annotate(e, context))?;
            for (features, idx) in cells {
                table[*idx] = fit.predict(features);
            }
        }
        LearnerKind::LogisticMainTerms => {
            let with_intercept: Vec<Vec<f64>> = row_features
                .iter()
                .map(|f| {
                    let mut row = Vec::with_capacity(f.len() + 1);
                    row.push(1.0);
                    row.extend_from_slice(f);
                    row
                })
                .collect();
            let design = Design::from_rows(&with_intercept).map_err(|e| annotate(e, context))?;
            let fit = fit_logistic_irls(&design, outcomes, None, None, &spec.options)
                .map_err(|e| annotate(e, context))?;
            for (features, idx) in cells {
                let mut row = Vec::with_capacity(features.len() + 1);
                row.push(1.0);
                row.extend_from_slice(features);
                table[*idx] = fit.predict(&row);
            }
        }
        LearnerKind::InterceptOnly => {
            let fit = fit_intercept_only(outcomes).map_err(|e| annotate(e, context))?;
            table.fill(fit.predict(&[]));
        }
        LearnerKind::Oracle => {
            unreachable!("oracle tables are copied by the caller, not fitted")
        }
    }
    Ok(table)
}

fn cells_b() -> Vec<(Vec<f64>, usize)> {
    let mut cells = Vec::with_capacity(8 * N_W);
    for w in Covariates::support() {
        for a in [0u8, 1] {
            for z in [0u8, 1] {
                for m in [0u8, 1] {
                    cells.push((features_b(a, z, m, w), idx_b(a, z, m, w)));
                }
            }
        }
    }
    cells
}

fn cells_g() -> Vec<(Vec<f64>, usize)> {
    Covariates::support()
        .map(|w| (features_g(w), w.index()))
        .collect()
}

fn cells_h() -> Vec<(Vec<f64>, usize)> {
    let mut cells = Vec::with_capacity(2 * N_W);
    for w in Covariates::support() {
        for m in [0u8, 1] {
            cells.push((features_h(m, w), idx_h(m, w)));
        }
    }
    cells
}

fn cells_q() -> Vec<(Vec<f64>, usize)> {
    let mut cells = Vec::with_capacity(2 * N_W);
    for w in Covariates::support() {
        for a in [0u8, 1] {
            cells.push((features_q(a, w), idx_q(a, w)));
        }
    }
    cells
}

fn cells_r() -> Vec<(Vec<f64>, usize)> {
    let mut cells = Vec::with_capacity(4 * N_W);
    for w in Covariates::support() {
        for a in [0u8, 1] {
            for m in [0u8, 1] {
                cells.push((features_r(a, m, w), idx_r(a, m, w)));
            }
        }
    }
    cells
}

fn cells_u() -> Vec<(Vec<f64>, usize)> {
    let mut cells = Vec::with_capacity(4 * N_W);
    for w in Covariates::support() {
        for z in [0u8, 1] {
            for a in [0u8, 1] {
                cells.push((features_u(z, a, w), idx_u(z, a, w)));
            }
        }
    }
    cells
}

fn cells_v() -> Vec<(Vec<f64>, usize)> {
    let mut cells = Vec::with_capacity(2 * N_W);
    for w in Covariates::support() {
        for a in [0u8, 1] {
            cells.push((features_v(a, w), idx_v(a, w)));
        }
    }
    cells
}

/// Oracle tables for the five base nuisances.
fn oracle_base_tables(oracle: &Oracle) -> BaseTables {
    let mut b = vec![0.0; 8 * N_W];
    let mut g1 = vec![0.0; N_W];
    let mut h1 = vec![0.0; 2 * N_W];
    let mut q1 = vec![0.0; 2 * N_W];
    let mut r1 = vec![0.0; 4 * N_W];
    for w in Covariates::support() {
        g1[w.index()] = oracle.g(1, w);
        for m in [0u8, 1] {
            h1[idx_h(m, w)] = oracle.h(1, m, w);
        }
        for a in [0u8, 1] {
            q1[idx_q(a, w)] = oracle.q(1, a, w);
            for m in [0u8, 1] {
                r1[idx_r(a, m, w)] = oracle.r(1, a, m, w);
                for z in [0u8, 1] {
                    b[idx_b(a, z, m, w)] = oracle.b(a, z, m, w);
                }
            }
        }
    }
    BaseTables { b, g1, h1, q1, r1 }
}

/// Fits the contrast-free nuisances `(b, g, h, q, r)` per fold, each on the
/// rows outside the fold.
///
/// # Errors
/// Propagates configuration and fit errors, annotated with the fold and
/// nuisance they arose in.
pub fn crossfit_base(
    data: &Dataset,
    folds: &FoldAssignment,
    cfg: &NuisanceConfig,
) -> Result<CrossfitBase> {
    cfg.validate()?;
    if folds.n() != data.n() {
        return Err(Error::FoldMismatch {
            context: format!(
                "fold assignment covers {} observations, dataset has {}",
                folds.n(),
                data.n()
            ),
        });
    }
    let oracle = cfg.oracle()?;
    let oracle_tables = oracle.as_ref().map(oracle_base_tables);
    let (cb, cg, ch, cq, cr) = (cells_b(), cells_g(), cells_h(), cells_q(), cells_r());
    let mut tables = Vec::with_capacity(folds.fold_count());
    for j in 0..folds.fold_count() {
        let train: Vec<&Observation> = data
            .observations()
            .iter()
            .enumerate()
            .filter(|(i, _)| folds.fold_of(*i) != j)
            .map(|(_, o)| o)
            .collect();
        let fit_component = |spec: LearnerSpec,
                             name: &str,
                             features: &dyn Fn(&Observation) -> Vec<f64>,
                             outcome: &dyn Fn(&Observation) -> f64,
                             cells: &[(Vec<f64>, usize)],
                             table_len: usize,
                             oracle_table: Option<&Vec<f64>>|
         -> Result<Vec<f64>> {
            if spec.kind == LearnerKind::Oracle {
                return Ok(oracle_table
                    .expect("validated: oracle learner implies oracle tables")
                    .clone());
            }
            let rows: Vec<Vec<f64>> = train.iter().map(|o| features(o)).collect();
            let ys: Vec<f64> = train.iter().map(|o| outcome(o)).collect();
            tabulate(spec, &rows, &ys, cells, table_len, &format!("fold {j}, nuisance {name}"))
        };
        let b = fit_component(
            cfg.b,
            "b",
            &|o| features_b(o.a, o.z, o.m, o.w),
            &|o| o.y,
            &cb,
            8 * N_W,
            oracle_tables.as_ref().map(|t| &t.b),
        )?;
        let g1 = fit_component(
            cfg.g,
            "g",
            &|o| features_g(o.w),
            &|o| f64::from(o.a),
            &cg,
            N_W,
            oracle_tables.as_ref().map(|t| &t.g1),
        )?;
        let h1 = fit_component(
            cfg.h,
            "h",
            &|o| features_h(o.m, o.w),
            &|o| f64::from(o.a),
            &ch,
            2 * N_W,
            oracle_tables.as_ref().map(|t| &t.h1),
        )?;
        let q1 = fit_component(
            cfg.q,
            "q",
            &|o| features_q(o.a, o.w),
            &|o| f64::from(o.z),
            &cq,
            2 * N_W,
            oracle_tables.as_ref().map(|t| &t.q1),
        )?;
        let r1 = fit_component(
            cfg.r,
            "r",
            &|o| features_r(o.a, o.m, o.w),
            &|o| f64::from(o.z),
            &cr,
            4 * N_W,
            oracle_tables.as_ref().map(|t| &t.r1),
        )?;
        tables.push(BaseTables { b, g1, h1, q1, r1 });
    }
    let tag = |kind: LearnerKind| match kind {
        LearnerKind::Oracle => Provenance::Oracle,
        other => Provenance::Fitted(other),
    };
    Ok(CrossfitBase {
        folds: folds.clone(),
        tables,
        provenance: BundleProvenance {
            b: tag(cfg.b.kind),
            g: tag(cfg.g.kind),
            h: tag(cfg.h.kind),
            q: tag(cfg.q.kind),
            r: tag(cfg.r.kind),
            u: tag(cfg.u.kind),
            v: tag(cfg.v.kind),
        },
    })
}

/// Builds complete per-fold bundles for one contrast on top of cross-fitted
/// base tables: the `u` and `v` pseudo-outcome regressions are fitted on
/// each fold's training rows using that fold's own upstream tables, then
/// everything is assembled into clipped [`NuisanceBundle`]s.
///
/// # Errors
/// Propagates configuration and fit errors, annotated with the fold and
/// nuisance they arose in.
pub fn contrast_bundles(
    base: &CrossfitBase,
    data: &Dataset,
    cfg: &NuisanceConfig,
    contrast: Contrast,
) -> Result<Vec<NuisanceBundle>> {
    cfg.validate()?;
    if base.folds.n() != data.n() {
        return Err(Error::FoldMismatch {
            context: format!(
                "base was fitted on {} observations, dataset has {}",
                base.folds.n(),
                data.n()
            ),
        });
    }
    let oracle = cfg.oracle()?;
    let ap = contrast.a_prime;
    let (cu, cv) = (cells_u(), cells_v());
    let mut bundles = Vec::with_capacity(base.folds.fold_count());
    for (j, t) in base.tables.iter().enumerate() {
        // Partial bundle: upstream tables only, placeholders for u/v. Its
        // accessors provide the clipped probabilities the pseudo-outcomes
        // must be built from.
        let partial = NuisanceBundle::from_tables(
            t.b.clone(),
            t.g1.clone(),
            t.h1.clone(),
            t.q1.clone(),
            t.r1.clone(),
            vec![0.0; 4 * N_W],
            vec![0.5; 2 * N_W],
            cfg.epsilon,
            base.provenance,
        )
        .map_err(|e| annotate(e, &format!("fold {j}, base tables")))?;
        let train: Vec<&Observation> = data
            .observations()
            .iter()
            .enumerate()
            .filter(|(i, _)| base.folds.fold_of(*i) != j)
            .map(|(_, o)| o)
            .collect();

        let u = match cfg.u.kind {
            LearnerKind::Oracle => {
                let orc = oracle.as_ref().expect("validated: oracle spec present");
                let mut table = vec![0.0; 4 * N_W];
                for (features, idx) in &cu {
                    let (z, a) = (features[0] as u8, features[1] as u8);
                    let w = w_of_features(&features[2..]);
                    table[*idx] = orc.u_true(z, a, w, contrast);
                }
                table
            }
            LearnerKind::LogisticMainTerms => {
                return Err(Error::InvalidInput(
                    "the u regression outcome (b·c) is unbounded: use the saturated, \
                     intercept-only, or oracle learner"
                        .to_string(),
                ))
            }
            _ => {
                let rows: Vec<Vec<f64>> =
                    train.iter().map(|o| features_u(o.z, o.a, o.w)).collect();
                let ys: Vec<f64> = train
                    .iter()
                    .map(|o| {
                        partial.b(o.a, o.z, o.m, o.w)
                            * density_ratio_c(&partial, o.a, o.z, o.m, o.w, contrast)
                    })
                    .collect();
                tabulate(cfg.u, &rows, &ys, &cu, 4 * N_W, &format!("fold {j}, nuisance u"))?
            }
        };

        let v = match cfg.v.kind {
            LearnerKind::Oracle => {
                let orc = oracle.as_ref().expect("validated: oracle spec present");
                let mut table = vec![0.0; 2 * N_W];
                for (features, idx) in &cv {
                    let a = features[0] as u8;
                    let w = w_of_features(&features[1..]);
                    table[*idx] = orc.v_true(a, w, contrast);
                }
                table
            }
            _ => {
                let rows: Vec<Vec<f64>> = train.iter().map(|o| features_v(o.a, o.w)).collect();
                let ys: Vec<f64> = train
                    .iter()
                    .map(|o| {
                        (0..2u8)
                            .map(|z| partial.b(ap, z, o.m, o.w) * partial.q(z, ap, o.w))
                            .sum()
                    })
                    .collect();
                tabulate(cfg.v, &rows, &ys, &cv, 2 * N_W, &format!("fold {j}, nuisance v"))?
            }
        };

        bundles.push(
            NuisanceBundle::from_tables(
                t.b.clone(),
                t.g1.clone(),
                t.h1.clone(),
                t.q1.clone(),
                t.r1.clone(),
                u,
                v,
                cfg.epsilon,
                base.provenance,
            )
            .map_err(|e| annotate(e, &format!("fold {j}, bundle assembly")))?,
        );
    }
    Ok(bundles)
}

/// Refits the `v` regression on explicit `(A, W)` rows with supplied
/// pseudo-outcomes, returning the dense `v` table. The targeted step uses
/// this to re-fit `v` on tilted pseudo-outcomes; since that is a data
/// regression by construction, the oracle learner does not apply here and
/// callers substitute the saturated learner for it.
pub(crate) fn refit_v_table(
    spec: LearnerSpec,
    rows: &[(u8, Covariates)],
    outcomes: &[f64],
    context: &str,
) -> Result<Vec<f64>> {
    if spec.kind == LearnerKind::Oracle {
        return Err(Error::InvalidInput(format!(
            "{context}: the oracle learner cannot refit a data regression"
        )));
    }
    let features: Vec<Vec<f64>> = rows.iter().map(|&(a, w)| features_v(a, w)).collect();
    tabulate(spec, &features, outcomes, &cells_v(), 2 * N_W, context)
}

/// Reconstructs covariates from their indicator feature columns.
fn w_of_features(bits: &[f64]) -> Covariates {
    let mut packed = 0u8;
    for (k, &x) in bits.iter().enumerate() {
        if x == 1.0 {
            packed |= 1 << k;
        }
    }
    Covariates::from_bits(packed).expect("cell features enumerate the support")
}

/// One-call cross-fitting: base nuisances plus the contrast-specific
/// regressions, returning one complete bundle per fold.
///
/// # Errors
/// As [`crossfit_base`] and [`contrast_bundles`].
pub fn crossfit_nuisances(
    data: &Dataset,
    folds: &FoldAssignment,
    cfg: &NuisanceConfig,
    contrast: Contrast,
) -> Result<Vec<NuisanceBundle>> {
    let base = crossfit_base(data, folds, cfg)?;
    contrast_bundles(&base, data, cfg, contrast)
}
