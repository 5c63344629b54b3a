//! Core data model shared by every other module.
//!
//! The engine targets the all-binary mediation setting: baseline covariates
//! `W ∈ {0,1}^3`, treatment `A ∈ {0,1}`, a treatment-induced intermediate
//! confounder `Z ∈ {0,1}`, mediator `M ∈ {0,1}`, and an outcome `Y ∈ [0,1]`.
//! Because the support is finite, every nuisance function is stored as a
//! dense table over its conditioning cells; probabilities of binary
//! variables are stored as the probability of the value `1` so that the
//! complementary probability is exactly `1 - p` (the pair sums to one in
//! floating point by construction).
//!
//! All types here are immutable after construction and safe to share
//! read-only across worker threads.

use serde::{Deserialize, Serialize};

/// Number of binary baseline covariates. The simulation design and the
/// enumeration oracle are written for this width; the learners themselves
/// are width-agnostic.
pub const COVARIATE_WIDTH: usize = 3;

/// Size of the covariate support, `2^COVARIATE_WIDTH`.
pub const N_W: usize = 1 << COVARIATE_WIDTH;

/// Errors surfaced by the estimation engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The weighted least-squares system inside IRLS stayed singular even
    /// after ridge jitter.
    #[error("singular weighted least-squares system in {context}")]
    SingularSystem { context: String },
    /// An iterative fit exhausted its iteration budget. Fits normally return
    /// their last iterate with a `converged = false` flag; this error is
    /// raised only when a caller demands a converged fit.
    #[error("{context}: no convergence after {iterations} iterations")]
    NonConvergence { iterations: usize, context: String },
    /// A targeting (tilting) loop exhausted its sweep budget. As with
    /// [`Error::NonConvergence`], estimates still carry the last iterate and
    /// a flag; this error is for callers that require convergence.
    #[error("tilting did not converge after {sweeps} sweeps (max residual {residual:.3e})")]
    TiltNonConvergence { sweeps: usize, residual: f64 },
    /// Fold count outside `2 ..= n`.
    #[error("fold count {j} invalid for {n} observations (need 2 <= J <= n)")]
    BadFoldCount { j: usize, n: usize },
    /// A fold assignment does not match the dataset or bundle list.
    #[error("fold assignment mismatch: {context}")]
    FoldMismatch { context: String },
    /// Weight stabilization is impossible because an inverse-probability
    /// weight factor has empirical mean zero (no observations at the needed
    /// treatment arm).
    #[error("degenerate stabilization weights: {context}")]
    DegenerateWeights { context: String },
    /// Not enough observations for the requested operation.
    #[error("too few observations: need at least {needed}, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    /// Confidence level outside (0, 1).
    #[error("alpha must lie strictly between 0 and 1, got {alpha}")]
    BadAlpha { alpha: f64 },
    /// Invalid input value or configuration.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Underlying I/O failure.
    #[error("I/O error: {0}")]
    IoError(#[from] std::io::Error),
    /// CSV (de)serialization failure.
    #[error("CSV error: {0}")]
    CsvError(#[from] csv::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Fixed-width vector of binary covariates, packed into the low bits of a
/// byte (`W1` is bit 0, `W2` bit 1, `W3` bit 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Covariates {
    bits: u8,
}

impl Covariates {
    /// Builds covariates from packed bits.
    ///
    /// # Errors
    /// Returns [`Error::InvalidInput`] if bits outside the covariate width
    /// are set.
    pub fn from_bits(bits: u8) -> Result<Self> {
        if usize::from(bits) >= N_W {
            return Err(Error::InvalidInput(format!(
                "covariate bits {bits:#b} exceed width {COVARIATE_WIDTH}"
            )));
        }
        Ok(Self { bits })
    }

    /// Builds covariates from individual indicator values.
    ///
    /// # Errors
    /// Returns [`Error::InvalidInput`] if any entry is not 0 or 1.
    pub fn from_indicators(values: [u8; COVARIATE_WIDTH]) -> Result<Self> {
        let mut bits = 0u8;
        for (k, &v) in values.iter().enumerate() {
            if v > 1 {
                return Err(Error::InvalidInput(format!(
                    "covariate W{} must be 0 or 1, got {v}",
                    k + 1
                )));
            }
            bits |= v << k;
        }
        Ok(Self { bits })
    }

    /// Value of covariate `k` (0-based), as 0 or 1.
    #[must_use]
    pub fn bit(self, k: usize) -> u8 {
        debug_assert!(k < COVARIATE_WIDTH);
        (self.bits >> k) & 1
    }

    /// Packed bit representation; doubles as the dense table index.
    #[must_use]
    pub fn index(self) -> usize {
        usize::from(self.bits)
    }

    /// Iterates over the full covariate support in index order.
    pub fn support() -> impl Iterator<Item = Self> {
        (0..N_W as u8).map(|bits| Self { bits })
    }
}

/// One observed record `O = (W, A, Z, M, Y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Baseline covariates.
    pub w: Covariates,
    /// Treatment indicator.
    pub a: u8,
    /// Intermediate (treatment-induced) confounder.
    pub z: u8,
    /// Mediator indicator.
    pub m: u8,
    /// Outcome in `[0, 1]` (stored as a real so that continuous
    /// pseudo-outcomes in `[0,1]` fit the same type).
    pub y: f64,
}

impl Observation {
    /// Validating constructor.
    ///
    /// # Errors
    /// Returns [`Error::InvalidInput`] if a binary field is not 0/1 or the
    /// outcome leaves `[0, 1]`.
    pub fn new(w: Covariates, a: u8, z: u8, m: u8, y: f64) -> Result<Self> {
        if a > 1 || z > 1 || m > 1 {
            return Err(Error::InvalidInput(format!(
                "binary fields must be 0 or 1, got a={a}, z={z}, m={m}"
            )));
        }
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::InvalidInput(format!(
                "outcome must lie in [0, 1], got {y}"
            )));
        }
        Ok(Self { w, a, z, m, y })
    }
}

/// An ordered sample of observations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
}

impl Dataset {
    /// Wraps a list of observations.
    #[must_use]
    pub fn new(observations: Vec<Observation>) -> Self {
        Self { observations }
    }

    /// Number of observations.
    #[must_use]
    pub fn n(&self) -> usize {
        self.observations.len()
    }

    /// Whether the dataset is empty.
    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Read-only access to the observations.
    #[must_use]
    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }
}

/// A pair of treatment values `(a′, a★)`: the outcome is evaluated under
/// treatment `a′` while the mediator is drawn from its distribution under
/// treatment `a★`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Contrast {
    /// Treatment level applied to the outcome path.
    pub a_prime: u8,
    /// Treatment level generating the mediator draw.
    pub a_star: u8,
}

impl Contrast {
    /// Validating constructor (each level must be 0 or 1; equal levels are
    /// allowed — they evaluate a raw functional rather than an effect).
    ///
    /// # Errors
    /// Returns [`Error::InvalidInput`] for non-binary levels.
    pub fn new(a_prime: u8, a_star: u8) -> Result<Self> {
        if a_prime > 1 || a_star > 1 {
            return Err(Error::InvalidInput(format!(
                "contrast levels must be 0 or 1, got ({a_prime}, {a_star})"
            )));
        }
        Ok(Self { a_prime, a_star })
    }

    /// Human-readable `(a′,a★)` label used in reports and CSV output.
    #[must_use]
    pub fn label(self) -> String {
        format!("theta({},{})", self.a_prime, self.a_star)
    }
}

impl std::fmt::Display for Contrast {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.a_prime, self.a_star)
    }
}

/// Where a fitted nuisance component came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Exact enumeration value.
    Oracle,
    /// Fitted from data with the named learner.
    Fitted(LearnerKind),
    /// Deliberately misspecified (e.g. an exact intercept-only probability
    /// limit used by the identity checks).
    Misspecified,
}

/// Per-component provenance tags for a [`NuisanceBundle`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleProvenance {
    pub b: Provenance,
    pub g: Provenance,
    pub h: Provenance,
    pub q: Provenance,
    pub r: Provenance,
    pub u: Provenance,
    pub v: Provenance,
}

impl BundleProvenance {
    /// Tags every component with the same provenance.
    #[must_use]
    pub fn uniform(p: Provenance) -> Self {
        Self { b: p, g: p, h: p, q: p, r: p, u: p, v: p }
    }
}

/// Learner families available for nuisance estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    /// Per-cell empirical means over the full discrete covariate cross —
    /// the nonparametric MLE on finite support (the "consistent" learner).
    Saturated,
    /// Main-terms logistic regression fitted by IRLS.
    LogisticMainTerms,
    /// Intercept-only fit (the marginal mean — the "inconsistent" learner).
    InterceptOnly,
    /// Exact enumeration values passed through without fitting.
    Oracle,
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Saturated => "saturated",
            Self::LogisticMainTerms => "logistic_main_terms",
            Self::InterceptOnly => "intercept_only",
            Self::Oracle => "oracle",
        };
        f.write_str(s)
    }
}

/// The seven nuisance functions evaluated over the finite support:
///
/// * `b(a,z,m,w) = E[Y | A=a, Z=z, M=m, W=w]`
/// * `g(a | w) = P(A=a | W=w)`
/// * `h(a | m,w) = P(A=a | M=m, W=w)`
/// * `q(z | a,w) = P(Z=z | A=a, W=w)`
/// * `r(z | a,m,w) = P(Z=z | A=a, M=m, W=w)`
/// * `u(z,a,w)` — regression of the weighted outcome `b·c` on `(Z, A, W)`
/// * `v(a,w)` — regression of `Σ_z b(a′,z,M,W) q(z|a′,W)` on `(A, W)`
///
/// `u` and `v` depend on the contrast they were built for; `b,g,h,q,r` do
/// not. Probability tables store the probability of the value `1`; the
/// probability of `0` is the exact floating-point complement, so binary
/// categories sum to one exactly. `g`, `h`, `q`, `r` are clipped into
/// `[ε, 1−ε]` at construction; `b` is validated into `[0, 1]` and `v` into
/// `[0, 1]`; `u` may be any real.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceBundle {
    pub(crate) b: Vec<f64>,  // (a,z,m,w)
    pub(crate) g1: Vec<f64>, // P(A=1 | w)
    pub(crate) h1: Vec<f64>, // P(A=1 | m,w)
    pub(crate) q1: Vec<f64>, // P(Z=1 | a,w)
    pub(crate) r1: Vec<f64>, // P(Z=1 | a,m,w)
    pub(crate) u: Vec<f64>,  // (z,a,w)
    pub(crate) v: Vec<f64>,  // (a,w)
    provenance: BundleProvenance,
}

/// Dense-table index for `b(a,z,m,w)`.
#[inline]
#[must_use]
pub fn idx_b(a: u8, z: u8, m: u8, w: Covariates) -> usize {
    (((a as usize * 2 + z as usize) * 2 + m as usize) * N_W) + w.index()
}

/// Dense-table index for `h(· | m,w)`.
#[inline]
#[must_use]
pub fn idx_h(m: u8, w: Covariates) -> usize {
    m as usize * N_W + w.index()
}

/// Dense-table index for `q(· | a,w)`.
#[inline]
#[must_use]
pub fn idx_q(a: u8, w: Covariates) -> usize {
    a as usize * N_W + w.index()
}

/// Dense-table index for `r(· | a,m,w)`.
#[inline]
#[must_use]
pub fn idx_r(a: u8, m: u8, w: Covariates) -> usize {
    (a as usize * 2 + m as usize) * N_W + w.index()
}

/// Dense-table index for `u(z,a,w)`.
#[inline]
#[must_use]
pub fn idx_u(z: u8, a: u8, w: Covariates) -> usize {
    (z as usize * 2 + a as usize) * N_W + w.index()
}

/// Dense-table index for `v(a,w)`.
#[inline]
#[must_use]
pub fn idx_v(a: u8, w: Covariates) -> usize {
    a as usize * N_W + w.index()
}

/// Clips a probability into `[eps, 1 - eps]`.
#[inline]
#[must_use]
pub fn clip_probability(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

impl NuisanceBundle {
    /// Assembles a bundle from dense tables, validating lengths and ranges
    /// and clipping the probability tables `g, h, q, r` into `[eps, 1−eps]`.
    ///
    /// Table layouts (see the `idx_*` helpers):
    /// `b`: `(a,z,m,w)`, length `8·N_W`; `g1`: `w`, length `N_W`;
    /// `h1`: `(m,w)`, length `2·N_W`; `q1`: `(a,w)`, length `2·N_W`;
    /// `r1`: `(a,m,w)`, length `4·N_W`; `u`: `(z,a,w)`, length `4·N_W`;
    /// `v`: `(a,w)`, length `2·N_W`.
    ///
    /// # Errors
    /// Returns [`Error::InvalidInput`] on length mismatch, non-finite
    /// entries, `b`/`v` outside `[0,1]`, or `eps` outside `(0, 0.5)`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_tables(
        b: Vec<f64>,
        g1: Vec<f64>,
        h1: Vec<f64>,
        q1: Vec<f64>,
        r1: Vec<f64>,
        u: Vec<f64>,
        v: Vec<f64>,
        eps: f64,
        provenance: BundleProvenance,
    ) -> Result<Self> {
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::InvalidInput(format!(
                "positivity clip must lie in (0, 0.5), got {eps}"
            )));
        }
        let expect = |name: &str, got: usize, want: usize| -> Result<()> {
            if got == want {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!(
                    "{name} table length {got}, expected {want}"
                )))
            }
        };
        expect("b", b.len(), 8 * N_W)?;
        expect("g", g1.len(), N_W)?;
        expect("h", h1.len(), 2 * N_W)?;
        expect("q", q1.len(), 2 * N_W)?;
        expect("r", r1.len(), 4 * N_W)?;
        expect("u", u.len(), 4 * N_W)?;
        expect("v", v.len(), 2 * N_W)?;
        for (name, table) in [("b", &b), ("v", &v)] {
            if let Some(x) = table.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(Error::InvalidInput(format!(
                    "{name} values must lie in [0, 1], found {x}"
                )));
            }
        }
        for (name, table) in [("g", &g1), ("h", &h1), ("q", &q1), ("r", &r1), ("u", &u)] {
            if let Some(x) = table.iter().find(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} values must be finite, found {x}"
                )));
            }
        }
        let clip = |t: Vec<f64>| t.into_iter().map(|p| clip_probability(p, eps)).collect();
        Ok(Self {
            b,
            g1: clip(g1),
            h1: clip(h1),
            q1: clip(q1),
            r1: clip(r1),
            u,
            v,
            provenance,
        })
    }

    /// `E[Y | A=a, Z=z, M=m, W=w]`.
    #[inline]
    #[must_use]
    pub fn b(&self, a: u8, z: u8, m: u8, w: Covariates) -> f64 {
        self.b[idx_b(a, z, m, w)]
    }

    /// `P(A=a | W=w)`.
    #[inline]
    #[must_use]
    pub fn g(&self, a: u8, w: Covariates) -> f64 {
        let p1 = self.g1[w.index()];
        if a == 1 { p1 } else { 1.0 - p1 }
    }

    /// `P(A=a | M=m, W=w)`.
    #[inline]
    #[must_use]
    pub fn h(&self, a: u8, m: u8, w: Covariates) -> f64 {
        let p1 = self.h1[idx_h(m, w)];
        if a == 1 { p1 } else { 1.0 - p1 }
    }

    /// `P(Z=z | A=a, W=w)`.
    #[inline]
    #[must_use]
    pub fn q(&self, z: u8, a: u8, w: Covariates) -> f64 {
        let p1 = self.q1[idx_q(a, w)];
        if z == 1 { p1 } else { 1.0 - p1 }
    }

    /// `P(Z=z | A=a, M=m, W=w)`.
    #[inline]
    #[must_use]
    pub fn r(&self, z: u8, a: u8, m: u8, w: Covariates) -> f64 {
        let p1 = self.r1[idx_r(a, m, w)];
        if z == 1 { p1 } else { 1.0 - p1 }
    }

    /// Pseudo-outcome regression `u(z, a, w)`.
    #[inline]
    #[must_use]
    pub fn u(&self, z: u8, a: u8, w: Covariates) -> f64 {
        self.u[idx_u(z, a, w)]
    }

    /// Pseudo-outcome regression `v(a, w)`.
    #[inline]
    #[must_use]
    pub fn v(&self, a: u8, w: Covariates) -> f64 {
        self.v[idx_v(a, w)]
    }

    /// Per-component provenance tags.
    #[must_use]
    pub fn provenance(&self) -> BundleProvenance {
        self.provenance
    }
}

/// Cross-validation fold assignment: a partition of `{0, .., n-1}` into `J`
/// validation folds of near-equal size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    j_of_i: Vec<usize>,
    j: usize,
}

impl FoldAssignment {
    /// Builds an assignment from a per-index fold id vector (ids in `0..j`).
    ///
    /// # Errors
    /// Returns [`Error::FoldMismatch`] if any fold is empty, an id is out of
    /// range, or fold sizes differ by more than one.
    pub fn new(j_of_i: Vec<usize>, j: usize) -> Result<Self> {
        if j < 2 {
            return Err(Error::BadFoldCount { j, n: j_of_i.len() });
        }
        let mut sizes = vec![0usize; j];
        for &f in &j_of_i {
            if f >= j {
                return Err(Error::FoldMismatch {
                    context: format!("fold id {f} out of range 0..{j}"),
                });
            }
            sizes[f] += 1;
        }
        let (min, max) = (
            sizes.iter().copied().min().unwrap_or(0),
            sizes.iter().copied().max().unwrap_or(0),
        );
        if min == 0 {
            return Err(Error::FoldMismatch {
                context: "empty validation fold".to_string(),
            });
        }
        if max - min > 1 {
            return Err(Error::FoldMismatch {
                context: format!("fold sizes differ by more than one ({min}..{max})"),
            });
        }
        Ok(Self { j_of_i, j })
    }

    /// Number of folds `J`.
    #[must_use]
    pub fn fold_count(&self) -> usize {
        self.j
    }

    /// Number of observations covered.
    #[must_use]
    pub fn n(&self) -> usize {
        self.j_of_i.len()
    }

    /// Validation fold id of observation `i` (0-based).
    #[inline]
    #[must_use]
    pub fn fold_of(&self, i: usize) -> usize {
        self.j_of_i[i]
    }

    /// Iterator over the fold ids in observation order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.j_of_i.iter().copied()
    }
}

/// Per-observation decomposition of the influence-function values: the three
/// score terms, the plug-in term `v(a★, W_i)`, and their sum `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct EifScores {
    /// Outcome-residual score `1{A=a′}/g(a′|W) · c · (Y − b)`.
    pub term_y: Vec<f64>,
    /// Confounder-residual score `1{A=a′}/g(a′|W) · Δu · (Z − q(1|a′,W))`.
    pub term_z: Vec<f64>,
    /// Mediator score `1{A=a★}/g(a★|W) · (Σ_z b q − v)`.
    pub term_m: Vec<f64>,
    /// Plug-in term `v(a★, W_i)`.
    pub v_at_astar: Vec<f64>,
    /// Total influence value `d = term_y + term_z + term_m + v_at_astar`.
    pub d: Vec<f64>,
}

impl EifScores {
    /// Assembles the score vectors, computing `d` as the per-observation sum.
    ///
    /// # Errors
    /// Returns [`Error::InvalidInput`] on length mismatch.
    pub fn new(
        term_y: Vec<f64>,
        term_z: Vec<f64>,
        term_m: Vec<f64>,
        v_at_astar: Vec<f64>,
    ) -> Result<Self> {
        let n = term_y.len();
        if term_z.len() != n || term_m.len() != n || v_at_astar.len() != n {
            return Err(Error::InvalidInput(
                "score vectors must share a common length".to_string(),
            ));
        }
        let d = (0..n)
            .map(|i| term_y[i] + term_z[i] + term_m[i] + v_at_astar[i])
            .collect();
        Ok(Self { term_y, term_z, term_m, v_at_astar, d })
    }

    /// Number of observations scored.
    #[must_use]
    pub fn n(&self) -> usize {
        self.d.len()
    }

    /// Mean of the total influence values.
    #[must_use]
    pub fn mean_d(&self) -> f64 {
        mean(&self.d)
    }
}

/// Arithmetic mean (0 for an empty slice).
#[must_use]
pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Population-style variance with `1/n` normalization (0 for fewer than one
/// element).
#[must_use]
pub(crate) fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// How the density ratio `c` enters the outcome-score weight: as estimated,
/// or self-normalized by its empirical mean over the `A = a′` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CStarMode {
    /// Use `c` as estimated (default).
    Plain,
    /// Use `c★ = c / mean(1{A=a′}/g(a′|W) · c)`.
    SelfNormalized,
}

impl Default for CStarMode {
    fn default() -> Self {
        Self::Plain
    }
}

/// Which propensity appears in the denominator of the TMLE outcome-tilt
/// covariate `H_Y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyDenominator {
    /// `H_Y = 1{A=a′}/g(a′|W) · c` — the weight whose empirical score is the
    /// outcome term of the influence function (default).
    APrime,
    /// `H_Y = 1{A=a′}/g(a★|W) · c` — an alternative weighting kept for
    /// comparison runs.
    AStar,
}

impl Default for HyDenominator {
    fn default() -> Self {
        Self::APrime
    }
}

/// Estimator families exposed by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Cross-fitted one-step estimator (mean of the estimated influence
    /// values).
    Onestep,
    /// One-step estimator with weight-stabilized score terms.
    OnestepStabilized,
    /// Targeted maximum likelihood estimator with iterative logistic tilts.
    Tmle,
    /// Untargeted substitution baseline (mean of `v̂(a★, W_i)`); its reported
    /// variance is the influence-function variance, for reference only.
    Plugin,
}

impl EstimatorKind {
    /// Stable identifier used in CSV output and CLI flags.
    #[must_use]
    pub fn name(self) -> &'static str {
        match self {
            Self::Onestep => "onestep",
            Self::OnestepStabilized => "onestep_stabilized",
            Self::Tmle => "tmle",
            Self::Plugin => "plugin",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "onestep" => Ok(Self::Onestep),
            "onestep_stabilized" => Ok(Self::OnestepStabilized),
            "tmle" => Ok(Self::Tmle),
            "plugin" => Ok(Self::Plugin),
            other => Err(Error::InvalidInput(format!(
                "unknown estimator '{other}' (expected onestep, onestep_stabilized, tmle, or plugin)"
            ))),
        }
    }
}

/// A two-sided confidence interval at a given level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    /// Confidence level, e.g. `0.95`.
    pub level: f64,
    /// Lower endpoint.
    pub lo: f64,
    /// Upper endpoint.
    pub hi: f64,
}

impl ConfidenceInterval {
    /// Whether the interval contains `value`.
    #[must_use]
    pub fn covers(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }
}

/// Convergence and bookkeeping information attached to an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Number of targeting sweeps performed (0 for non-iterative
    /// estimators).
    pub iterations: usize,
    /// Final empirical means of the three targeting scores
    /// `(Y-score, Z-score, M-score)`, when applicable.
    pub score_residuals: Option<[f64; 3]>,
    /// Score tolerances `sd/(√n·log n)` matched against the residuals, when
    /// applicable.
    pub score_tolerances: Option<[f64; 3]>,
    /// Whether all iterative fits met their stopping rule.
    pub converged: bool,
    /// Number of cross-fitting folds used.
    pub folds: usize,
    /// Seed that drove fold assignment (and, in simulations, the data).
    pub seed: u64,
}

/// A point estimate with influence-function-based inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    /// Point estimate `θ̂`.
    pub theta_hat: f64,
    /// Influence-function variance estimate `σ̂²` (so that
    /// `SE = sqrt(σ̂²/n)`).
    pub sigma2_hat: f64,
    /// Sample size.
    pub n: usize,
    /// Wald confidence intervals (95% and 99% by default).
    pub ci: Vec<ConfidenceInterval>,
    /// Which estimator produced the report.
    pub estimator: EstimatorKind,
    /// Convergence and bookkeeping information.
    pub diagnostics: Diagnostics,
}

impl EstimateReport {
    /// Standard error `sqrt(σ̂²/n)`.
    #[must_use]
    pub fn se(&self) -> f64 {
        (self.sigma2_hat / self.n as f64).sqrt()
    }

    /// The interval at the requested level, if present.
    #[must_use]
    pub fn ci_at(&self, level: f64) -> Option<&ConfidenceInterval> {
        self.ci.iter().find(|c| (c.level - level).abs() < 1e-12)
    }

    /// Returns the report if all iterative fits converged.
    ///
    /// # Errors
    /// Returns [`Error::TiltNonConvergence`] otherwise.
    pub fn ensure_converged(&self) -> Result<&Self> {
        if self.diagnostics.converged {
            Ok(self)
        } else {
            let residual = self
                .diagnostics
                .score_residuals
                .map(|r| r.iter().fold(0.0f64, |acc, x| acc.max(x.abs())))
                .unwrap_or(f64::NAN);
            Err(Error::TiltNonConvergence {
                sweeps: self.diagnostics.iterations,
                residual,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariates_round_trip_bits_and_indicators() {
        for w in Covariates::support() {
            let via = Covariates::from_indicators([w.bit(0), w.bit(1), w.bit(2)]).unwrap();
            assert_eq!(w, via);
            assert_eq!(w.index(), usize::from(w.bit(0)) + 2 * usize::from(w.bit(1)) + 4 * usize::from(w.bit(2)));
        }
        assert!(Covariates::from_bits(8).is_err());
        assert!(Covariates::from_indicators([0, 2, 0]).is_err());
    }

    #[test]
    fn observation_validation_rejects_bad_fields() {
        let w = Covariates::from_bits(0).unwrap();
        assert!(Observation::new(w, 2, 0, 0, 0.5).is_err());
        assert!(Observation::new(w, 0, 0, 0, 1.5).is_err());
        assert!(Observation::new(w, 0, 0, 0, -0.1).is_err());
        assert!(Observation::new(w, 1, 1, 1, 1.0).is_ok());
    }

    #[test]
    fn contrast_validation_and_label() {
        assert!(Contrast::new(2, 0).is_err());
        let c = Contrast::new(1, 0).unwrap();
        assert_eq!(c.label(), "theta(1,0)");
        assert!(Contrast::new(1, 1).is_ok(), "equal levels evaluate a raw functional");
    }

    fn tiny_bundle(eps: f64) -> NuisanceBundle {
        NuisanceBundle::from_tables(
            vec![0.5; 8 * N_W],
            vec![0.5; N_W],
            vec![0.5; 2 * N_W],
            vec![0.5; 2 * N_W],
            vec![0.5; 4 * N_W],
            vec![0.0; 4 * N_W],
            vec![0.5; 2 * N_W],
            eps,
            BundleProvenance::uniform(Provenance::Misspecified),
        )
        .unwrap()
    }

    #[test]
    fn bundle_complements_sum_to_one_exactly() {
        let bundle = tiny_bundle(0.001);
        for w in Covariates::support() {
            assert_eq!(bundle.g(0, w) + bundle.g(1, w), 1.0);
            for a in [0u8, 1] {
                assert_eq!(bundle.q(0, a, w) + bundle.q(1, a, w), 1.0);
                for m in [0u8, 1] {
                    assert_eq!(bundle.r(0, a, m, w) + bundle.r(1, a, m, w), 1.0);
                }
            }
            for m in [0u8, 1] {
                assert_eq!(bundle.h(0, m, w) + bundle.h(1, m, w), 1.0);
            }
        }
    }

    #[test]
    fn bundle_clips_probability_tables() {
        let eps = 0.05;
        let bundle = NuisanceBundle::from_tables(
            vec![0.5; 8 * N_W],
            vec![0.0; N_W],
            vec![1.0; 2 * N_W],
            vec![0.5; 2 * N_W],
            vec![0.5; 4 * N_W],
            vec![0.0; 4 * N_W],
            vec![0.5; 2 * N_W],
            eps,
            BundleProvenance::uniform(Provenance::Misspecified),
        )
        .unwrap();
        let w = Covariates::from_bits(3).unwrap();
        assert_eq!(bundle.g(1, w), eps);
        assert_eq!(bundle.h(1, 0, w), 1.0 - eps);
    }

    #[test]
    fn bundle_rejects_bad_tables() {
        let mk = |b: Vec<f64>, eps: f64| {
            NuisanceBundle::from_tables(
                b,
                vec![0.5; N_W],
                vec![0.5; 2 * N_W],
                vec![0.5; 2 * N_W],
                vec![0.5; 4 * N_W],
                vec![0.0; 4 * N_W],
                vec![0.5; 2 * N_W],
                eps,
                BundleProvenance::uniform(Provenance::Oracle),
            )
        };
        assert!(matches!(mk(vec![0.5; 7], 0.001), Err(Error::InvalidInput(_))), "length check");
        assert!(matches!(mk(vec![1.5; 8 * N_W], 0.001), Err(Error::InvalidInput(_))), "range check");
        assert!(matches!(mk(vec![0.5; 8 * N_W], 0.7), Err(Error::InvalidInput(_))), "eps check");
    }

    #[test]
    fn clipping_is_idempotent() {
        for p in [-1.0, 0.0, 1e-6, 0.25, 0.5, 1.0 - 1e-6, 1.0, 2.0] {
            let once = clip_probability(p, 0.001);
            assert_eq!(clip_probability(once, 0.001), once);
            assert!((0.001..=0.999).contains(&once));
        }
    }

    #[test]
    fn fold_assignment_validates_partition() {
        assert!(FoldAssignment::new(vec![0, 1, 0, 1], 2).is_ok());
        assert!(matches!(
            FoldAssignment::new(vec![0, 0, 0], 2),
            Err(Error::FoldMismatch { .. })
        ));
        assert!(matches!(
            FoldAssignment::new(vec![0, 2, 1], 2),
            Err(Error::FoldMismatch { .. })
        ));
        assert!(matches!(
            FoldAssignment::new(vec![0, 0, 0, 0, 1], 2),
            Err(Error::FoldMismatch { .. })
        ));
        assert!(matches!(
            FoldAssignment::new(vec![0, 0], 1),
            Err(Error::BadFoldCount { .. })
        ));
    }

    #[test]
    fn eif_scores_additivity_holds() {
        let scores = EifScores::new(
            vec![0.1, -0.2],
            vec![0.0, 0.3],
            vec![0.5, 0.0],
            vec![0.4, 0.6],
        )
        .unwrap();
        for i in 0..2 {
            let sum = scores.term_y[i] + scores.term_z[i] + scores.term_m[i]
                + scores.v_at_astar[i];
            assert_eq!(scores.d[i], sum);
        }
        assert!((scores.mean_d() - ((1.0 + 0.7) / 2.0)).abs() < 1e-15);
        assert!(EifScores::new(vec![0.0], vec![], vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn estimate_report_helpers() {
        let report = EstimateReport {
            theta_hat: 0.5,
            sigma2_hat: 0.04,
            n: 400,
            ci: vec![
                ConfidenceInterval { level: 0.95, lo: 0.48, hi: 0.52 },
                ConfidenceInterval { level: 0.99, lo: 0.47, hi: 0.53 },
            ],
            estimator: EstimatorKind::Onestep,
            diagnostics: Diagnostics {
                iterations: 0,
                score_residuals: None,
                score_tolerances: None,
                converged: true,
                folds: 5,
                seed: 1,
            },
        };
        assert!((report.se() - 0.01).abs() < 1e-15);
        assert!(report.ci_at(0.95).unwrap().covers(0.5));
        assert!(report.ci_at(0.90).is_none());
        assert!(report.ensure_converged().is_ok());
    }

    #[test]
    fn estimator_kind_round_trips_names() {
        for kind in [
            EstimatorKind::Onestep,
            EstimatorKind::OnestepStabilized,
            EstimatorKind::Tmle,
            EstimatorKind::Plugin,
        ] {
            let parsed: EstimatorKind = kind.name().parse().unwrap();
            assert_eq!(parsed, kind);
        }
        assert!("aipw".parse::<EstimatorKind>().is_err());
    }
}
