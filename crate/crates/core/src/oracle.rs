//! Exact enumeration oracle for the simulation law.
//!
//! Because every variable is binary, all population quantities — the target
//! functionals, the true nuisance tables, efficiency bounds, marginals, and
//! the probability limits of deliberately misspecified fits — can be computed
//! exactly by summing over the finite support. This module is the ground
//! truth that the estimation pipeline is verified against: it shares no
//! fitting code with the learners (only the pointwise influence-function
//! evaluation in [`crate::eif`] is reused, so that the identity checks
//! exercise the production scoring path).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::dgp::DgpSpec;
use crate::eif::{density_ratio_c, point_d};
use crate::types::{
    idx_b, idx_h, idx_q, idx_r, idx_u, idx_v, BundleProvenance, Contrast, Covariates,
    NuisanceBundle, Provenance, Result, N_W,
};

/// Clip used for oracle-built bundles. The design keeps every conditional
/// probability well inside `(0, 1)`, so this never bites; it only satisfies
/// the bundle constructor's contract.
const ORACLE_EPS: f64 = 1e-12;

/// Which of the five directly-fitted nuisance components are replaced by
/// their intercept-only (marginal) probability limits when building a
/// misspecified-scenario bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MisspecifiedComponents {
    pub b: bool,
    pub g: bool,
    pub h: bool,
    pub q: bool,
    pub r: bool,
}

impl MisspecifiedComponents {
    /// Every component consistent.
    #[must_use]
    pub fn none() -> Self {
        Self::default()
    }

    /// Every component misspecified.
    #[must_use]
    pub fn all() -> Self {
        Self { b: true, g: true, h: true, q: true, r: true }
    }
}

/// The six robustness configurations checked by the identity suite: each
/// names the nuisance components held at their true values, with every other
/// component set to an inconsistent (intercept-only) probability limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RobustnessConfig {
    /// `v` true together with `q, h, r`.
    VQhr,
    /// `v` true together with `b, q`.
    VBq,
    /// `v` true together with `b, u`.
    VBu,
    /// `g` true together with `q, h, r`.
    GQhr,
    /// `g` true together with `b, q`.
    GBq,
    /// `g` true together with `b, u`.
    GBu,
}

impl RobustnessConfig {
    /// All six configurations in report order.
    pub const ALL: [Self; 6] = [
        Self::VQhr,
        Self::VBq,
        Self::VBu,
        Self::GQhr,
        Self::GBq,
        Self::GBu,
    ];

    /// Human-readable list of the components held at the truth.
    #[must_use]
    pub fn label(self) -> &'static str {
        match self {
            Self::VQhr => "v,q,h,r true",
            Self::VBq => "v,b,q true",
            Self::VBu => "v,b,u true",
            Self::GQhr => "g,q,h,r true",
            Self::GBq => "g,b,q true",
            Self::GBu => "g,b,u true",
        }
    }

    fn truth(self) -> TrueComponents {
        let mut t = TrueComponents::default();
        match self {
            Self::VQhr => {
                t.v = true;
                t.q = true;
                t.h = true;
                t.r = true;
            }
            Self::VBq => {
                t.v = true;
                t.b = true;
                t.q = true;
            }
            Self::VBu => {
                t.v = true;
                t.b = true;
                t.u = true;
            }
            Self::GQhr => {
                t.g = true;
                t.q = true;
                t.h = true;
                t.r = true;
            }
            Self::GBq => {
                t.g = true;
                t.b = true;
                t.q = true;
            }
            Self::GBu => {
                t.g = true;
                t.b = true;
                t.u = true;
            }
        }
        t
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct TrueComponents {
    b: bool,
    g: bool,
    h: bool,
    q: bool,
    r: bool,
    u: bool,
    v: bool,
}

/// The four exact products of estimation errors whose sum equals the bias of
/// the influence-function mean, `P D_η − θ`, for an arbitrary nuisance
/// bundle `η` (with `c` computed from the bundle's own components).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondOrderTerms {
    /// `Σ_w P(w) (v₁−v)(a★,w) · {1 − g(a★|w)/g₁(a★|w)}`.
    pub dv_dg: f64,
    /// `Σ_w P(w) (g(a′|w)/g₁(a★|w)) Σ_{z,m} (ρ₁−ρ)(b−b₁)(a′,z,m,w)
    ///  p(m|z,a′,w) q(z|a′,w)`, where `ρ = [q/r]·[h(a★)/h(a′)]`.
    pub drho_db: f64,
    /// `Σ_w P(w) Σ_z (q₁−q)(z|a′,w) ·
    ///  [(g(a★|w)/g₁(a★|w)) u(z,a′,w) − (g(a′|w)/g₁(a′|w)) u₁(z,a′,w)]`.
    pub dq_du: f64,
    /// `Σ_w P(w) (g(a′|w)/g₁(a★|w)) Σ_{z,m} ρ · (b₁−b)(q₁−q) p(m|z,a′,w)`.
    pub db_dq: f64,
}

impl SecondOrderTerms {
    /// Sum of the four terms (the exact bias of the bundle's score mean).
    #[must_use]
    pub fn total(&self) -> f64 {
        self.dv_dg + self.drho_db + self.dq_du + self.db_dq
    }
}

/// Exact population tables for a [`DgpSpec`], with every derived quantity
/// the verification suite needs.
#[derive(Debug, Clone)]
pub struct Oracle {
    spec: DgpSpec,
    p_w: Vec<f64>,     // w
    g1: Vec<f64>,      // w
    q1: Vec<f64>,      // (a, w)
    pm1_zaw: Vec<f64>, // (z, a, w), laid out like the u table
    b: Vec<f64>,       // (a, z, m, w)
    pm1_aw: Vec<f64>,  // (a, w), laid out like the v table
    pm1_w: Vec<f64>,   // w
    h1: Vec<f64>,      // (m, w)
    r1: Vec<f64>,      // (a, m, w)
}

impl Oracle {
    /// Tabulates the law defined by `spec` over the full support.
    ///
    /// # Errors
    /// Propagates [`DgpSpec::validate`] failures (degenerate probabilities).
    pub fn new(spec: &DgpSpec) -> Result<Self> {
        spec.validate()?;
        let mut p_w = vec![0.0; N_W];
        let mut g1 = vec![0.0; N_W];
        let mut q1 = vec![0.0; 2 * N_W];
        let mut pm1_zaw = vec![0.0; 4 * N_W];
        let mut b = vec![0.0; 8 * N_W];
        for w in Covariates::support() {
            let (w1, w2) = (w.bit(0), w.bit(1));
            let pw1 = if w1 == 1 { 0.6 } else { 0.4 };
            let pw2 = if w2 == 1 { 0.3 } else { 0.7 };
            let pw3 = spec.p_w3_given(w1, w2);
            p_w[w.index()] = pw1 * pw2 * if w.bit(2) == 1 { pw3 } else { 1.0 - pw3 };
            g1[w.index()] = spec.p_a1(w);
            for a in [0u8, 1] {
                q1[idx_q(a, w)] = spec.p_z1(a, w);
                for z in [0u8, 1] {
                    pm1_zaw[idx_u(z, a, w)] = spec.p_m1(z, a, w);
                    for m in [0u8, 1] {
                        b[idx_b(a, z, m, w)] = spec.outcome_mean(a, z, m, w);
                    }
                }
            }
        }
        let mut oracle = Self {
            spec: *spec,
            p_w,
            g1,
            q1,
            pm1_zaw,
            b,
            pm1_aw: vec![0.0; 2 * N_W],
            pm1_w: vec![0.0; N_W],
            h1: vec![0.0; 2 * N_W],
            r1: vec![0.0; 4 * N_W],
        };
        // Marginalize Z out of the mediator law, then invert by Bayes' rule
        // to get the reversed conditionals h(a|m,w) and r(z|a,m,w).
        for w in Covariates::support() {
            for a in [0u8, 1] {
                oracle.pm1_aw[idx_v(a, w)] = (0..2u8)
                    .map(|z| oracle.q(z, a, w) * oracle.p_m_given_zaw(1, z, a, w))
                    .sum();
            }
            oracle.pm1_w[w.index()] = (0..2u8)
                .map(|a| oracle.g(a, w) * oracle.p_m_given_aw(1, a, w))
                .sum();
            for m in [0u8, 1] {
                oracle.h1[idx_h(m, w)] =
                    oracle.g(1, w) * oracle.p_m_given_aw(m, 1, w) / oracle.p_m_given_w(m, w);
                for a in [0u8, 1] {
                    oracle.r1[idx_r(a, m, w)] = oracle.q(1, a, w)
                        * oracle.p_m_given_zaw(m, 1, a, w)
                        / oracle.p_m_given_aw(m, a, w);
                }
            }
        }
        Ok(oracle)
    }

    /// The law this oracle enumerates.
    #[must_use]
    pub fn spec(&self) -> &DgpSpec {
        &self.spec
    }

    /// `P(W = w)`.
    #[must_use]
    pub fn p_w(&self, w: Covariates) -> f64 {
        self.p_w[w.index()]
    }

    /// `P(A = a | W = w)`.
    #[must_use]
    pub fn g(&self, a: u8, w: Covariates) -> f64 {
        let p1 = self.g1[w.index()];
        if a == 1 { p1 } else { 1.0 - p1 }
    }

    /// `P(Z = z | A = a, W = w)`.
    #[must_use]
    pub fn q(&self, z: u8, a: u8, w: Covariates) -> f64 {
        let p1 = self.q1[idx_q(a, w)];
        if z == 1 { p1 } else { 1.0 - p1 }
    }

    /// `P(M = m | Z = z, A = a, W = w)`.
    #[must_use]
    pub fn p_m_given_zaw(&self, m: u8, z: u8, a: u8, w: Covariates) -> f64 {
        let p1 = self.pm1_zaw[idx_u(z, a, w)];
        if m == 1 { p1 } else { 1.0 - p1 }
    }

    /// `P(M = m | A = a, W = w)` (Z marginalized out).
    #[must_use]
    pub fn p_m_given_aw(&self, m: u8, a: u8, w: Covariates) -> f64 {
        let p1 = self.pm1_aw[idx_v(a, w)];
        if m == 1 { p1 } else { 1.0 - p1 }
    }

    /// `P(M = m | W = w)` (A and Z marginalized out).
    #[must_use]
    pub fn p_m_given_w(&self, m: u8, w: Covariates) -> f64 {
        let p1 = self.pm1_w[w.index()];
        if m == 1 { p1 } else { 1.0 - p1 }
    }

    /// `P(A = a | M = m, W = w)`, by Bayes' rule.
    #[must_use]
    pub fn h(&self, a: u8, m: u8, w: Covariates) -> f64 {
        let p1 = self.h1[idx_h(m, w)];
        if a == 1 { p1 } else { 1.0 - p1 }
    }

    /// `P(Z = z | A = a, M = m, W = w)`, by Bayes' rule.
    #[must_use]
    pub fn r(&self, z: u8, a: u8, m: u8, w: Covariates) -> f64 {
        let p1 = self.r1[idx_r(a, m, w)];
        if z == 1 { p1 } else { 1.0 - p1 }
    }

    /// `E[Y | A = a, Z = z, M = m, W = w]`.
    #[must_use]
    pub fn b(&self, a: u8, z: u8, m: u8, w: Covariates) -> f64 {
        self.b[idx_b(a, z, m, w)]
    }

    /// `P(W = w, A = a, Z = z, M = m)`.
    #[must_use]
    pub fn cell_probability(&self, w: Covariates, a: u8, z: u8, m: u8) -> f64 {
        self.p_w(w) * self.g(a, w) * self.q(z, a, w) * self.p_m_given_zaw(m, z, a, w)
    }

    /// True pseudo-outcome regression
    /// `u(z,a,w) = Σ_m b(a,z,m,w) p(m | a★, w)`.
    #[must_use]
    pub fn u_true(&self, z: u8, a: u8, w: Covariates, contrast: Contrast) -> f64 {
        (0..2u8)
            .map(|m| self.b(a, z, m, w) * self.p_m_given_aw(m, contrast.a_star, w))
            .sum()
    }

    /// True pseudo-outcome regression
    /// `v(a,w) = Σ_m p(m|a,w) Σ_z b(a′,z,m,w) q(z|a′,w)`.
    #[must_use]
    pub fn v_true(&self, a: u8, w: Covariates, contrast: Contrast) -> f64 {
        let ap = contrast.a_prime;
        (0..2u8)
            .map(|m| {
                self.p_m_given_aw(m, a, w)
                    * (0..2u8)
                        .map(|z| self.b(ap, z, m, w) * self.q(z, ap, w))
                        .sum::<f64>()
            })
            .sum()
    }

    /// Target functional `θ(a′, a★) = E_W[v(a★, W)]`.
    #[must_use]
    pub fn true_theta(&self, contrast: Contrast) -> f64 {
        Covariates::support()
            .map(|w| self.p_w(w) * self.v_true(contrast.a_star, w, contrast))
            .sum()
    }

    /// True interventional indirect effect `θ(1,1) − θ(1,0)`.
    #[must_use]
    pub fn true_indirect(&self) -> f64 {
        self.true_theta(contrast(1, 1)) - self.true_theta(contrast(1, 0))
    }

    /// True interventional direct effect `θ(1,0) − θ(0,0)`.
    #[must_use]
    pub fn true_direct(&self) -> f64 {
        self.true_theta(contrast(1, 0)) - self.true_theta(contrast(0, 0))
    }

    /// True total effect `θ(1,1) − θ(0,0)`.
    #[must_use]
    pub fn true_total(&self) -> f64 {
        self.true_theta(contrast(1, 1)) - self.true_theta(contrast(0, 0))
    }

    /// `P(A = 1)` — the intercept-only probability limit for `g` and `h`.
    #[must_use]
    pub fn treatment_marginal(&self) -> f64 {
        Covariates::support()
            .map(|w| self.p_w(w) * self.g(1, w))
            .sum()
    }

    /// `P(Z = 1)` — the intercept-only probability limit for `q` and `r`.
    #[must_use]
    pub fn confounder_marginal(&self) -> f64 {
        let mut total = 0.0;
        for w in Covariates::support() {
            for a in [0u8, 1] {
                total += self.p_w(w) * self.g(a, w) * self.q(1, a, w);
            }
        }
        total
    }

    /// `P(M = 1)`.
    #[must_use]
    pub fn mediator_marginal(&self) -> f64 {
        Covariates::support()
            .map(|w| self.p_w(w) * self.p_m_given_w(1, w))
            .sum()
    }

    /// `E[Y]` — the intercept-only probability limit for `b`.
    #[must_use]
    pub fn outcome_marginal(&self) -> f64 {
        let mut total = 0.0;
        self.for_each_cell(|w, a, z, m| {
            total += self.cell_probability(w, a, z, m) * self.b(a, z, m, w);
        });
        total
    }

    /// The exact nuisance bundle at the truth for one contrast.
    ///
    /// # Panics
    /// Never panics for a validated spec: every table entry lies strictly
    /// inside the valid range.
    #[must_use]
    pub fn nuisance_bundle(&self, contrast: Contrast) -> NuisanceBundle {
        let mut u = vec![0.0; 4 * N_W];
        let mut v = vec![0.0; 2 * N_W];
        for w in Covariates::support() {
            for a in [0u8, 1] {
                v[idx_v(a, w)] = self.v_true(a, w, contrast);
                for z in [0u8, 1] {
                    u[idx_u(z, a, w)] = self.u_true(z, a, w, contrast);
                }
            }
        }
        NuisanceBundle::from_tables(
            self.b.clone(),
            self.g1.clone(),
            self.h1.clone(),
            self.q1.clone(),
            self.r1.clone(),
            u,
            v,
            ORACLE_EPS,
            BundleProvenance::uniform(Provenance::Oracle),
        )
        .expect("oracle tables are valid by construction")
    }

    /// Supported outcome values with their conditional probabilities at one
    /// cell: `{0, 1}` with Bernoulli(`b`) weights, or the single constant
    /// under the constant-outcome hook.
    fn outcome_support(&self, b: f64) -> Vec<(f64, f64)> {
        match self.spec.constant_outcome {
            Some(c) => vec![(c, 1.0)],
            None => vec![(0.0, 1.0 - b), (1.0, b)],
        }
    }

    fn for_each_cell(&self, mut f: impl FnMut(Covariates, u8, u8, u8)) {
        for w in Covariates::support() {
            for a in [0u8, 1] {
                for z in [0u8, 1] {
                    for m in [0u8, 1] {
                        f(w, a, z, m);
                    }
                }
            }
        }
    }

    /// Exact mean `P D_η` of the influence function under an arbitrary
    /// nuisance bundle `η` (the outcome is integrated out against the true
    /// regression, using that `D` is linear in `y`).
    #[must_use]
    pub fn eif_mean(&self, bundle: &NuisanceBundle, contrast: Contrast) -> f64 {
        let mut total = 0.0;
        self.for_each_cell(|w, a, z, m| {
            let pc = self.cell_probability(w, a, z, m);
            total += pc * point_d(bundle, contrast, a, z, m, w, self.b(a, z, m, w));
        });
        total
    }

    /// Exact variance of the influence function at the truth — the
    /// semiparametric efficiency bound `σ²(a′,a★)`. The outcome residual
    /// enters through its conditional variance (`b(1−b)` for a Bernoulli
    /// outcome, `0` under the constant-outcome hook).
    #[must_use]
    pub fn efficiency_bound(&self, contrast: Contrast) -> f64 {
        let bundle = self.nuisance_bundle(contrast);
        let y_var = |b: f64| match self.spec.constant_outcome {
            Some(_) => 0.0,
            None => b * (1.0 - b),
        };
        let mut e1 = 0.0;
        let mut e2 = 0.0;
        self.for_each_cell(|w, a, z, m| {
            let pc = self.cell_probability(w, a, z, m);
            let b = self.b(a, z, m, w);
            // At y = b the outcome residual vanishes; the slope in y is the
            // weight on that residual.
            let k = point_d(&bundle, contrast, a, z, m, w, b);
            let slope = point_d(&bundle, contrast, a, z, m, w, 1.0)
                - point_d(&bundle, contrast, a, z, m, w, 0.0);
            e1 += pc * k;
            e2 += pc * (k * k + slope * slope * y_var(b));
        });
        e2 - e1 * e1
    }

    /// Exact variance of the difference of influence functions for two
    /// contrasts — the efficiency bound for the corresponding effect.
    #[must_use]
    pub fn effect_efficiency_bound(&self, lhs: Contrast, rhs: Contrast) -> f64 {
        let bundle_l = self.nuisance_bundle(lhs);
        let bundle_r = self.nuisance_bundle(rhs);
        let mut e1 = 0.0;
        let mut e2 = 0.0;
        self.for_each_cell(|w, a, z, m| {
            let pc = self.cell_probability(w, a, z, m);
            for (y, py) in self.outcome_support(self.b(a, z, m, w)) {
                let d = point_d(&bundle_l, lhs, a, z, m, w, y)
                    - point_d(&bundle_r, rhs, a, z, m, w, y);
                e1 += pc * py * d;
                e2 += pc * py * d * d;
            }
        });
        e2 - e1 * e1
    }

    /// The general score form of the influence function, in which the
    /// confounder score is written against the full conditional mean
    /// `Σ_z u(z,a′,w) q(z|a′,w)` instead of the binary residual. Algebraic
    /// rearrangement shows it equals the binary score form for any bundle;
    /// it is kept as an independent cross-check of that reduction.
    #[must_use]
    pub fn general_score_form(
        &self,
        bundle: &NuisanceBundle,
        contrast: Contrast,
        a: u8,
        z: u8,
        m: u8,
        w: Covariates,
        y: f64,
    ) -> f64 {
        let (ap, astar) = (contrast.a_prime, contrast.a_star);
        let mut total = bundle.v(astar, w);
        if a == ap {
            let inv_g = 1.0 / bundle.g(ap, w);
            let c = density_ratio_c(bundle, ap, z, m, w, contrast);
            total += inv_g * c * (y - bundle.b(ap, z, m, w));
            let u_bar: f64 = (0..2u8)
                .map(|zz| bundle.u(zz, ap, w) * bundle.q(zz, ap, w))
                .sum();
            total += inv_g * (bundle.u(z, ap, w) - u_bar);
        }
        if a == astar {
            let pseudo: f64 = (0..2u8)
                .map(|zz| bundle.b(ap, zz, m, w) * bundle.q(zz, ap, w))
                .sum();
            total += (pseudo - bundle.v(astar, w)) / bundle.g(astar, w);
        }
        total
    }

    /// The exact four-term error expansion of `P D_η − θ` for an arbitrary
    /// bundle (see [`SecondOrderTerms`]). Each term is a product of two
    /// estimation errors, so the expansion exhibits the rate double
    /// robustness of the score mean.
    #[must_use]
    pub fn second_order_remainder(
        &self,
        bundle: &NuisanceBundle,
        contrast: Contrast,
    ) -> SecondOrderTerms {
        let (ap, astar) = (contrast.a_prime, contrast.a_star);
        let mut dv_dg = 0.0;
        let mut drho_db = 0.0;
        let mut dq_du = 0.0;
        let mut db_dq = 0.0;
        for w in Covariates::support() {
            let pw = self.p_w(w);
            let (gs, g1s) = (self.g(astar, w), bundle.g(astar, w));
            let (gp, g1p) = (self.g(ap, w), bundle.g(ap, w));
            dv_dg +=
                pw * (bundle.v(astar, w) - self.v_true(astar, w, contrast)) * (1.0 - gs / g1s);
            for z in [0u8, 1] {
                let dq = bundle.q(z, ap, w) - self.q(z, ap, w);
                dq_du += pw
                    * dq
                    * ((gs / g1s) * self.u_true(z, ap, w, contrast)
                        - (gp / g1p) * bundle.u(z, ap, w));
                for m in [0u8, 1] {
                    let rho = (self.q(z, ap, w) / self.r(z, ap, m, w))
                        * (self.h(astar, m, w) / self.h(ap, m, w));
                    let rho1 = (bundle.q(z, ap, w) / bundle.r(z, ap, m, w))
                        * (bundle.h(astar, m, w) / bundle.h(ap, m, w));
                    let db = self.b(ap, z, m, w) - bundle.b(ap, z, m, w);
                    let pm = self.p_m_given_zaw(m, z, ap, w);
                    drho_db += pw * (gp / g1s) * (rho1 - rho) * db * pm * self.q(z, ap, w);
                    db_dq += pw * (gp / g1s) * rho * (-db) * dq * pm;
                }
            }
        }
        SecondOrderTerms { dv_dg, drho_db, dq_du, db_dq }
    }

    // --- alternate parameterization ------------------------------------

    /// Density ratio of the alternate parameterization,
    /// `d(a,z,m,w) = q(z|a,w)/r(z|a,m,w)`, computed in its product form
    /// `[h(a|m,w)/h(a★|m,w)] · [g(a★|w)/g(a|w)] · [p(m|a★,w)/p(m|z,a,w)]`.
    #[must_use]
    pub fn alt_density_ratio(&self, a: u8, z: u8, m: u8, w: Covariates, contrast: Contrast) -> f64 {
        let astar = contrast.a_star;
        (self.h(a, m, w) / self.h(astar, m, w))
            * (self.g(astar, w) / self.g(a, w))
            * (self.p_m_given_aw(m, astar, w) / self.p_m_given_zaw(m, z, a, w))
    }

    /// The same ratio in its direct form `q(z|a,w)/r(z|a,m,w)` (contrast
    /// free), for cross-checking the product form.
    #[must_use]
    pub fn alt_density_ratio_z_form(&self, a: u8, z: u8, m: u8, w: Covariates) -> f64 {
        self.q(z, a, w) / self.r(z, a, m, w)
    }

    /// Alternate-form pseudo-outcome regression
    /// `u_m(m,a,w) = Σ_z r(z|a,m,w) b(a,z,m,w) d(a,z,m,w)`.
    #[must_use]
    pub fn alt_u(&self, m: u8, a: u8, w: Covariates, contrast: Contrast) -> f64 {
        (0..2u8)
            .map(|z| {
                self.r(z, a, m, w)
                    * self.b(a, z, m, w)
                    * self.alt_density_ratio(a, z, m, w, contrast)
            })
            .sum()
    }

    /// Alternate-form projection
    /// `v_m(a,w) = Σ_z q(z|a,w) Σ_m b(a′,z,m,w) p(m|a★,w)`.
    #[must_use]
    pub fn alt_v(&self, a: u8, w: Covariates, contrast: Contrast) -> f64 {
        let (ap, astar) = (contrast.a_prime, contrast.a_star);
        (0..2u8)
            .map(|z| {
                self.q(z, a, w)
                    * (0..2u8)
                        .map(|m| self.b(ap, z, m, w) * self.p_m_given_aw(m, astar, w))
                        .sum::<f64>()
            })
            .sum()
    }

    /// The influence function in the alternate parameterization, evaluated
    /// at the truth. The treatment level `a` is deliberately unrestricted:
    /// levels other than `a′` and `a★` contribute only the plug-in term,
    /// which is how the form extends to treatments with more than two
    /// levels. `z` and `m` must still be binary.
    #[must_use]
    pub fn alt_eif_at(
        &self,
        contrast: Contrast,
        a: u8,
        z: u8,
        m: u8,
        w: Covariates,
        y: f64,
    ) -> f64 {
        debug_assert!(z <= 1 && m <= 1, "z and m must be binary");
        let (ap, astar) = (contrast.a_prime, contrast.a_star);
        let mut total = self.alt_v(ap, w, contrast);
        if a == ap {
            let inv_g = 1.0 / self.g(ap, w);
            let c_alt = self.p_m_given_aw(m, astar, w) / self.p_m_given_zaw(m, z, ap, w);
            total += inv_g * c_alt * (y - self.b(ap, z, m, w));
            let pseudo: f64 = (0..2u8)
                .map(|mm| self.b(ap, z, mm, w) * self.p_m_given_aw(mm, astar, w))
                .sum();
            total += inv_g * (pseudo - self.alt_v(ap, w, contrast));
        }
        if a == astar {
            let u_bar: f64 = (0..2u8)
                .map(|mm| self.alt_u(mm, ap, w, contrast) * self.p_m_given_aw(mm, astar, w))
                .sum();
            total += (self.alt_u(m, ap, w, contrast) - u_bar) / self.g(astar, w);
        }
        total
    }

    // --- probability-limit bundles --------------------------------------

    /// Bundle of exact probability limits for a misspecification scenario:
    /// the flagged components converge to their intercept-only marginals,
    /// the rest to the truth, and `u`/`v` to the limits of saturated
    /// regressions of the pseudo-outcomes built from those upstream limits.
    ///
    /// # Panics
    /// Never panics for a validated spec (all limit tables are valid).
    #[must_use]
    pub fn plim_bundle(
        &self,
        missing: MisspecifiedComponents,
        contrast: Contrast,
    ) -> NuisanceBundle {
        let ap = contrast.a_prime;
        let marginal_or = |is_marginal: bool, value: f64, table: &[f64]| -> Vec<f64> {
            if is_marginal {
                vec![value; table.len()]
            } else {
                table.to_vec()
            }
        };
        let b_t = marginal_or(missing.b, self.outcome_marginal(), &self.b);
        let g_t = marginal_or(missing.g, self.treatment_marginal(), &self.g1);
        let h_t = marginal_or(missing.h, self.treatment_marginal(), &self.h1);
        let q_t = marginal_or(missing.q, self.confounder_marginal(), &self.q1);
        let r_t = marginal_or(missing.r, self.confounder_marginal(), &self.r1);
        let prov = |is_marginal: bool| {
            if is_marginal {
                Provenance::Misspecified
            } else {
                Provenance::Oracle
            }
        };
        let provenance = BundleProvenance {
            b: prov(missing.b),
            g: prov(missing.g),
            h: prov(missing.h),
            q: prov(missing.q),
            r: prov(missing.r),
            u: Provenance::Misspecified,
            v: Provenance::Misspecified,
        };
        // Two-stage build: assemble the upstream components first, then
        // derive the u/v limits from them through the same accessors the
        // estimators use.
        let stage = NuisanceBundle::from_tables(
            b_t.clone(),
            g_t.clone(),
            h_t.clone(),
            q_t.clone(),
            r_t.clone(),
            vec![0.0; 4 * N_W],
            vec![0.5; 2 * N_W],
            ORACLE_EPS,
            provenance,
        )
        .expect("limit tables are valid by construction");
        let mut u_t = vec![0.0; 4 * N_W];
        let mut v_t = vec![0.0; 2 * N_W];
        for w in Covariates::support() {
            for a in [0u8, 1] {
                // Limit of the u regression: E[b₁·c₁ | Z=z, A=a, W=w] under
                // the true mediator law.
                for z in [0u8, 1] {
                    u_t[idx_u(z, a, w)] = (0..2u8)
                        .map(|m| {
                            self.p_m_given_zaw(m, z, a, w)
                                * stage.b(a, z, m, w)
                                * density_ratio_c(&stage, a, z, m, w, contrast)
                        })
                        .sum();
                }
                // Limit of the v regression:
                // E[Σ_z b₁(a′,z,M,W) q₁(z|a′,W) | A=a, W=w] under the truth.
                v_t[idx_v(a, w)] = (0..2u8)
                    .map(|m| {
                        self.p_m_given_aw(m, a, w)
                            * (0..2u8)
                                .map(|z| stage.b(ap, z, m, w) * stage.q(z, ap, w))
                                .sum::<f64>()
                    })
                    .sum();
            }
        }
        NuisanceBundle::from_tables(
            b_t, g_t, h_t, q_t, r_t, u_t, v_t, ORACLE_EPS, provenance,
        )
        .expect("limit tables are valid by construction")
    }

    /// Bundle for one robustness configuration: the named components at the
    /// truth, everything else at its intercept-only probability limit
    /// (including `u` and `v` when they are not in the true set).
    ///
    /// # Panics
    /// Never panics for a validated spec (all limit tables are valid).
    #[must_use]
    pub fn robustness_bundle(
        &self,
        config: RobustnessConfig,
        contrast: Contrast,
    ) -> NuisanceBundle {
        let truth = config.truth();
        let ap = contrast.a_prime;
        let pick = |is_true: bool, table: &[f64], value: f64| -> Vec<f64> {
            if is_true {
                table.to_vec()
            } else {
                vec![value; table.len()]
            }
        };
        let b_t = pick(truth.b, &self.b, self.outcome_marginal());
        let g_t = pick(truth.g, &self.g1, self.treatment_marginal());
        let h_t = pick(truth.h, &self.h1, self.treatment_marginal());
        let q_t = pick(truth.q, &self.q1, self.confounder_marginal());
        let r_t = pick(truth.r, &self.r1, self.confounder_marginal());
        let prov = |is_true: bool| {
            if is_true {
                Provenance::Oracle
            } else {
                Provenance::Misspecified
            }
        };
        let provenance = BundleProvenance {
            b: prov(truth.b),
            g: prov(truth.g),
            h: prov(truth.h),
            q: prov(truth.q),
            r: prov(truth.r),
            u: prov(truth.u),
            v: prov(truth.v),
        };
        let stage = NuisanceBundle::from_tables(
            b_t.clone(),
            g_t.clone(),
            h_t.clone(),
            q_t.clone(),
            r_t.clone(),
            vec![0.0; 4 * N_W],
            vec![0.5; 2 * N_W],
            ORACLE_EPS,
            provenance,
        )
        .expect("limit tables are valid by construction");
        let mut u_t = vec![0.0; 4 * N_W];
        let mut v_t = vec![0.0; 2 * N_W];
        if truth.u {
            for w in Covariates::support() {
                for a in [0u8, 1] {
                    for z in [0u8, 1] {
                        u_t[idx_u(z, a, w)] = self.u_true(z, a, w, contrast);
                    }
                }
            }
        } else {
            // Intercept-only limit of the u regression: E[b₁·c₁] over the
            // full observed joint law.
            let mut u_const = 0.0;
            self.for_each_cell(|w, a, z, m| {
                u_const += self.cell_probability(w, a, z, m)
                    * stage.b(a, z, m, w)
                    * density_ratio_c(&stage, a, z, m, w, contrast);
            });
            u_t = vec![u_const; 4 * N_W];
        }
        if truth.v {
            for w in Covariates::support() {
                for a in [0u8, 1] {
                    v_t[idx_v(a, w)] = self.v_true(a, w, contrast);
                }
            }
        } else {
            // Intercept-only limit of the v regression:
            // E[Σ_z b₁(a′,z,M,W) q₁(z|a′,W)] over the observed joint law.
            let mut v_const = 0.0;
            self.for_each_cell(|w, a, z, m| {
                v_const += self.cell_probability(w, a, z, m)
                    * (0..2u8)
                        .map(|zz| stage.b(ap, zz, m, w) * stage.q(zz, ap, w))
                        .sum::<f64>();
            });
            v_t = vec![v_const; 2 * N_W];
        }
        NuisanceBundle::from_tables(
            b_t, g_t, h_t, q_t, r_t, u_t, v_t, ORACLE_EPS, provenance,
        )
        .expect("limit tables are valid by construction")
    }

    /// A reproducible arbitrary bundle (tables drawn uniformly inside safe
    /// ranges) for identity checks that must hold for any nuisance values.
    ///
    /// # Panics
    /// Never panics: drawn tables are valid by construction.
    #[must_use]
    pub fn random_bundle(seed: u64) -> NuisanceBundle {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut draw = |lo: f64, hi: f64, len: usize| -> Vec<f64> {
            (0..len).map(|_| lo + (hi - lo) * rng.gen::<f64>()).collect()
        };
        let b = draw(0.05, 0.95, 8 * N_W);
        let g1 = draw(0.1, 0.9, N_W);
        let h1 = draw(0.1, 0.9, 2 * N_W);
        let q1 = draw(0.1, 0.9, 2 * N_W);
        let r1 = draw(0.1, 0.9, 4 * N_W);
        let u = draw(-0.5, 1.5, 4 * N_W);
        let v = draw(0.02, 0.98, 2 * N_W);
        NuisanceBundle::from_tables(
            b,
            g1,
            h1,
            q1,
            r1,
            u,
            v,
            ORACLE_EPS,
            BundleProvenance::uniform(Provenance::Misspecified),
        )
        .expect("drawn tables are valid by construction")
    }
}

/// Infallible contrast constructor for the three study contrasts.
fn contrast(a_prime: u8, a_star: u8) -> Contrast {
    Contrast::new(a_prime, a_star).expect("binary levels")
}
