//! Lyapunov parameter tuples, the closed-form recipes and the six sufficient
//! decrease conditions.
//!
//! The energy is `E_t = a_t‖x_t − x*‖² + ρ Σ_{s<t}(f(x_s) − inf f) − Σ_{s<t} e_s σ*²`.
//! The convex recipes and [`check_conditions`] are generic over [`Scalar`], so
//! they can be evaluated in exact rational arithmetic; the strongly convex
//! recipes need square roots and are only available over [`Real`].

use crate::error::{Error, Result};
use crate::problem::{Assumption, ProblemClass};
use crate::scalar::{Real, Scalar};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Magnitude above which θ^{−T} is flagged in the large step-size regime.
pub const MAGNITUDE_LIMIT: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    #[serde(rename = "A0_EQ_1")]
    A0,
    #[serde(rename = "AT_EQ_1")]
    AT,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovParams<S> {
    pub rho: S,
    pub a: Vec<S>,
    pub e: Vec<S>,
    pub alpha: Vec<S>,
    pub beta: Vec<S>,
    pub normalization: Normalization,
    /// Set when some entry exceeds [`MAGNITUDE_LIMIT`] in size.
    #[serde(default)]
    pub magnitude_flag: bool,
}

impl<S: Scalar> LyapunovParams<S> {
    pub fn horizon(&self) -> usize {
        self.e.len()
    }

    /// Length and normalization checks.
    pub fn validate(&self) -> Result<()> {
        let t = self.e.len();
        if t == 0 || self.a.len() != t + 1 || self.alpha.len() != t || self.beta.len() != t {
            return Err(Error::Invalid(format!(
                "inconsistent lengths: |a|={}, |e|={}, |alpha|={}, |beta|={}",
                self.a.len(),
                self.e.len(),
                self.alpha.len(),
                self.beta.len()
            )));
        }
        let pinned = match self.normalization {
            Normalization::A0 => &self.a[0],
            Normalization::AT => &self.a[t],
        };
        if (pinned.clone() - S::one()).abs_val() > S::lit(1e-12) {
            return Err(Error::Invalid(format!(
                "normalization violated: pinned coefficient is {pinned}"
            )));
        }
        Ok(())
    }

    pub fn mean_e(&self) -> S {
        self.sum_e() / S::from_usize(self.e.len()).unwrap()
    }

    pub fn sum_e(&self) -> S {
        self.e.iter().cloned().fold(S::zero(), |acc, v| acc + v)
    }

    pub fn to_f64(&self) -> LyapunovParams<f64> {
        let conv = |v: &[S]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>();
        LyapunovParams {
            rho: self.rho.to_f64_lossy(),
            a: conv(&self.a),
            e: conv(&self.e),
            alpha: conv(&self.alpha),
            beta: conv(&self.beta),
            normalization: self.normalization,
            magnitude_flag: self.magnitude_flag,
        }
    }

    /// Multiplies every entry by `k`, the conditions being homogeneous.
    pub fn scaled(&self, k: S) -> Self {
        let sc = |v: &[S]| v.iter().map(|x| x.clone() * k.clone()).collect::<Vec<_>>();
        LyapunovParams {
            rho: self.rho.clone() * k.clone(),
            a: sc(&self.a),
            e: sc(&self.e),
            alpha: sc(&self.alpha),
            beta: sc(&self.beta),
            normalization: self.normalization,
            magnitude_flag: self.magnitude_flag,
        }
    }
}

impl LyapunovParams<f64> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Feasibility tolerance `abs + rel·max(|lhs|, |rhs|)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            abs: 1e-10,
            rel: 1e-9,
        }
    }
}

impl Tolerance {
    pub const EXACT: Tolerance = Tolerance { abs: 0.0, rel: 0.0 };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub step: usize,
    pub condition: u8,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub rows: Vec<ConditionRow>,
    pub feasible: bool,
    /// Largest excess of a residual over its tolerance; zero when feasible.
    pub worst_violation: f64,
}

impl ConditionReport {
    pub fn failures(&self) -> impl Iterator<Item = &ConditionRow> {
        self.rows.iter().filter(|r| !r.ok)
    }

    pub fn row(&self, step: usize, condition: u8) -> Option<&ConditionRow> {
        self.rows
            .iter()
            .find(|r| r.step == step && r.condition == condition)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "condition", "lhs", "rhs", "residual"])?;
        for r in &self.rows {
            out.write_record([
                r.step.to_string(),
                r.condition.to_string(),
                format!("{:e}", r.lhs),
                format!("{:e}", r.rhs),
                format!("{:e}", r.residual),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Evaluates the six sufficient conditions at every step.
///
/// Condition 1 is recorded as `lhs = −min(ρ, a_t, a_{t+1}, e_t, α_t, β_t)`, `rhs = 0`.
pub fn check_conditions<S: Scalar>(
    p: &LyapunovParams<S>,
    class: &ProblemClass<S>,
    tol: Tolerance,
) -> ConditionReport {
    let (mu, l, g) = (class.mu.clone(), class.l.clone(), class.gamma.clone());
    let (abs_tol, rel_tol) = (S::lit(tol.abs), S::lit(tol.rel));
    let mut rows = Vec::with_capacity(6 * p.e.len());
    let mut feasible = true;
    let mut worst = 0.0f64;
    let steps =
        p.e.len()
            .min(p.alpha.len())
            .min(p.beta.len())
            .min(p.a.len().saturating_sub(1));
    for t in 0..steps {
        let (at, at1) = (p.a[t].clone(), p.a[t + 1].clone());
        let (al, be, et) = (p.alpha[t].clone(), p.beta[t].clone(), p.e[t].clone());
        let s = al.clone() + be.clone();
        let g2 = g.clone() * g.clone();
        let mono = mu.clone() * l.clone() * s.clone() + at.clone() - at1.clone();
        let slack4 = s.clone() - at1.clone() * g2.clone();
        let lin = at1.clone() * g.clone() - al.clone() * l.clone() - be.clone() * mu.clone();
        let min_entry = [&p.rho, &at, &at1, &et, &al, &be]
            .into_iter()
            .fold(p.rho.clone(), |m, v| m.min_of(v));
        let conds: [(S, S); 6] = [
            (-min_entry, S::zero()),
            (
                p.rho.clone(),
                S::int(2) * (l.clone() - mu.clone()) * (al.clone() - be.clone()),
            ),
            (at1.clone(), mu.clone() * l.clone() * s.clone() + at.clone()),
            (at1.clone() * g2.clone(), s.clone()),
            (lin.clone() * lin, mono * slack4.clone()),
            (at1 * g2 * s, slack4 * et),
        ];
        for (k, (lhs, rhs)) in conds.into_iter().enumerate() {
            let residual = lhs.clone() - rhs.clone();
            let scale = lhs.abs_val().max_of(&rhs.abs_val());
            let allowed = abs_tol.clone() + rel_tol.clone() * scale;
            let ok = residual <= allowed;
            if !ok {
                feasible = false;
                worst = worst.max((residual.clone() - allowed).to_f64_lossy());
            }
            rows.push(ConditionRow {
                step: t,
                condition: k as u8 + 1,
                lhs: lhs.to_f64_lossy(),
                rhs: rhs.to_f64_lossy(),
                residual: residual.to_f64_lossy(),
                ok,
            });
        }
    }
    if steps == 0 || p.validate().is_err() {
        feasible = false;
    }
    ConditionReport {
        rows,
        feasible,
        worst_violation: worst,
    }
}

fn require_convex<S: Scalar>(class: &ProblemClass<S>) -> Result<()> {
    class.require_stable_step()?;
    if class.mu != S::zero() {
        return Err(Error::OutOfRegime(format!(
            "convex recipe needs mu = 0, got {}",
            class.mu
        )));
    }
    Ok(())
}

fn require_symmetric_assumption<S: Scalar>(class: &ProblemClass<S>) -> Result<()> {
    if class.assumption == Assumption::ExpectedCocoercivityStar {
        return Err(Error::OutOfRegime(
            "recipe uses beta > 0, which needs the symmetric assumption".into(),
        ));
    }
    Ok(())
}

/// γL ∈ (0, 1): `ρ = 2γ + 2(1−γL)/(LT)`, α ≡ ρ/(2L), β ≡ 0.
pub fn recipe_convex_short<S: Scalar>(class: &ProblemClass<S>) -> Result<LyapunovParams<S>> {
    require_convex(class)?;
    let gl = class.gamma_l();
    if !(gl < S::one()) || class.is_optimal_step() {
        return Err(Error::OutOfRegime(format!(
            "short step recipe needs gamma*L < 1, got {gl}"
        )));
    }
    let (g, l) = (class.gamma.clone(), class.l.clone());
    let t_n = class.horizon;
    let tf = S::from_usize(t_n).unwrap();
    let one = S::one();
    let two = S::int(2);
    let rho = two.clone() * g.clone()
        + two.clone() * (one.clone() - gl.clone()) / (l.clone() * tf.clone());
    let a: Vec<S> = (0..=t_n)
        .map(|t| {
            let r = S::from_usize(t_n - t).unwrap();
            (r.clone() / tf.clone()) * (one.clone() + gl.clone() * (tf.clone() - one.clone()))
                / (one.clone() + gl.clone() * (r - one.clone()))
        })
        .collect();
    let base = g.clone() * g / (one.clone() - gl.clone());
    let e: Vec<S> = (0..t_n)
        .map(|t| {
            let r = S::from_usize(t_n - t).unwrap();
            base.clone()
                * ((r.clone() - one.clone()) / tf.clone())
                * ((one.clone() - gl.clone()) + gl.clone() * tf.clone())
                / ((one.clone() - gl.clone()) + gl.clone() * r)
        })
        .collect();
    let alpha = rho.clone() / (two * l);
    Ok(LyapunovParams {
        rho,
        a,
        e,
        alpha: vec![alpha; t_n],
        beta: vec![S::zero(); t_n],
        normalization: Normalization::A0,
        magnitude_flag: false,
    })
}

/// γL = 1: `ρ = (2−ε)γ`, a ≡ 1, α = γ², β = γ²ε/2, e = γ²(2+ε)/ε.
pub fn recipe_convex_optimal<S: Scalar>(
    class: &ProblemClass<S>,
    eps: S,
) -> Result<LyapunovParams<S>> {
    require_convex(class)?;
    if !class.is_optimal_step() {
        return Err(Error::OutOfRegime(format!(
            "optimal step recipe needs gamma*L = 1, got {}",
            class.gamma_l()
        )));
    }
    require_symmetric_assumption(class)?;
    let two = S::int(2);
    if !(eps > S::zero() && eps < two) {
        return Err(Error::BadEpsilon(eps.to_f64_lossy()));
    }
    let g = class.gamma.clone();
    let g2 = g.clone() * g.clone();
    let t_n = class.horizon;
    Ok(LyapunovParams {
        rho: (two.clone() - eps.clone()) * g,
        a: vec![S::one(); t_n + 1],
        e: vec![g2.clone() * (two.clone() + eps.clone()) / eps.clone(); t_n],
        alpha: vec![g2.clone(); t_n],
        beta: vec![g2 * eps / two; t_n],
        normalization: Normalization::A0,
        magnitude_flag: false,
    })
}

/// γL ∈ (1, 2) with θ = (1−γL)²: `ρ = 2γ(2−γL)/(1−θ^T)`, `a_t = (1−θ^{T−t})/(1−θ^T)`.
///
/// Over floating point the recipe fails with [`Error::Overflow`] once θ^{−T} is
/// not representable; `magnitude_flag` is set once it exceeds [`MAGNITUDE_LIMIT`].
pub fn recipe_convex_large<S: Scalar>(class: &ProblemClass<S>) -> Result<LyapunovParams<S>> {
    require_convex(class)?;
    let gl = class.gamma_l();
    if !(gl > S::one()) || class.is_optimal_step() {
        return Err(Error::OutOfRegime(format!(
            "large step recipe needs gamma*L in (1, 2), got {gl}"
        )));
    }
    require_symmetric_assumption(class)?;
    let (g, l) = (class.gamma.clone(), class.l.clone());
    let one = S::one();
    let two = S::int(2);
    let t_n = class.horizon;
    let theta = (one.clone() - gl.clone()) * (one.clone() - gl.clone());
    let inv_t = theta.ipow(-(t_n as i32));
    if !inv_t.is_finite_val() {
        return Err(Error::Overflow(format!(
            "theta^-T is not representable for gamma*L = {gl}, T = {t_n}"
        )));
    }
    let flag = inv_t.to_f64_lossy() > MAGNITUDE_LIMIT;
    let den = one.clone() - theta.ipow(t_n as i32);
    let rho = two.clone() * g.clone() * (two.clone() - gl.clone()) / den.clone();
    let a: Vec<S> = (0..=t_n)
        .map(|t| (one.clone() - theta.ipow((t_n - t) as i32)) / den.clone())
        .collect();
    let mut alpha = Vec::with_capacity(t_n);
    let mut beta = Vec::with_capacity(t_n);
    let mut e = Vec::with_capacity(t_n);
    for t in 0..t_n {
        let k = (t_n - t - 1) as i32;
        let q = one.clone() - theta.ipow(k);
        beta.push(g.clone() * (gl.clone() - one.clone()) * q.clone() / (l.clone() * den.clone()));
        alpha.push(
            g.clone() * ((two.clone() - gl.clone()) + (gl.clone() - one.clone()) * q.clone())
                / (l.clone() * den.clone()),
        );
        let inv_k = theta.ipow(-k);
        let et = g.clone() * g.clone() / (two.clone() - gl.clone()) * q / den.clone()
            * (gl.clone() * inv_k - two.clone() * (gl.clone() - one.clone()));
        if !et.is_finite_val() {
            return Err(Error::Overflow(format!("e_{t} is not representable")));
        }
        e.push(et);
    }
    Ok(LyapunovParams {
        rho,
        a,
        e,
        alpha,
        beta,
        normalization: Normalization::A0,
        magnitude_flag: flag,
    })
}

/// φ_opt = max{1−γμ, γL−1}.
pub fn phi_opt<S: Scalar>(class: &ProblemClass<S>) -> S {
    let one = S::one();
    (one.clone() - class.gamma.clone() * class.mu.clone()).max_of(&(class.gamma_l() - one))
}

/// Strongly convex recipe with `a_t = φ^{2(T−t)}`, φ² = φ_opt² + ε, normalized by a_T = 1.
///
/// Dispatches to the μ = L construction when the moduli coincide.
pub fn recipe_strongly_convex<S: Real>(
    class: &ProblemClass<S>,
    eps: S,
) -> Result<LyapunovParams<S>> {
    class.require_stable_step()?;
    if !(class.mu > S::zero()) {
        return Err(Error::OutOfRegime(
            "strongly convex recipe needs mu > 0".into(),
        ));
    }
    require_symmetric_assumption(class)?;
    let phi = phi_opt(class);
    let phi2 = phi * phi;
    if !(eps >= S::zero()) || !(eps < S::one() - phi2) {
        return Err(Error::BadEpsilon(eps.to_f64_lossy()));
    }
    let (g, mu, l) = (class.gamma, class.mu, class.l);
    let t_n = class.horizon;
    let rate = phi2 + eps;
    let a: Vec<S> = (0..=t_n).map(|t| rate.powi((t_n - t) as i32)).collect();
    let (alpha_c, e_c) = if mu == l {
        if eps == S::zero() {
            return Err(Error::BadEpsilon(0.0));
        }
        let half = S::lit(0.5);
        let alpha = (half * g * g * (S::one() + phi2 / eps))
            .max((S::one() - phi2 - eps) / (S::int(2) * l * l));
        (
            alpha,
            S::int(2) * g * g * alpha / (S::int(2) * alpha - g * g),
        )
    } else {
        let g_opt = class.gamma_opt();
        let delta = (g - g_opt).abs();
        if eps == S::zero() && delta <= S::lit(1e-12) * g_opt {
            return Err(Error::SingularOptimalStep);
        }
        let d = l - mu;
        let omega = g * phi / d;
        let omega_eps = (eps + (eps * eps + eps * g * d * (l + mu) * delta).sqrt()) / (d * d);
        let e = g * g * (S::one() + g * g * d / (S::int(2) * omega_eps * d + (l + mu) * g * delta));
        (omega + omega_eps, e)
    };
    let alpha: Vec<S> = (0..t_n).map(|t| alpha_c * a[t + 1]).collect();
    let e: Vec<S> = (0..t_n).map(|t| e_c * a[t + 1]).collect();
    Ok(LyapunovParams {
        rho: S::zero(),
        a,
        e,
        beta: alpha.clone(),
        alpha,
        normalization: Normalization::AT,
        magnitude_flag: false,
    })
}

/// Convex recipe of the class regime, in any scalar type. `eps` is required at γL = 1.
pub fn recipe_convex<S: Scalar>(
    class: &ProblemClass<S>,
    eps: Option<S>,
) -> Result<LyapunovParams<S>> {
    use crate::problem::Regime::*;
    match class.regime()? {
        ConvexShort => recipe_convex_short(class),
        ConvexLarge => recipe_convex_large(class),
        ConvexOptimal => recipe_convex_optimal(class, eps.ok_or(Error::SingularOptimalStep)?),
        r => Err(Error::OutOfRegime(format!(
            "{} is not a convex regime",
            r.tag()
        ))),
    }
}

/// Picks the recipe of the class regime. `eps` is required at γL = 1 and for μ > 0.
pub fn recipe_for<S: Real>(class: &ProblemClass<S>, eps: Option<S>) -> Result<LyapunovParams<S>> {
    use crate::problem::Regime::*;
    match class.regime()? {
        ConvexShort => recipe_convex_short(class),
        ConvexLarge => recipe_convex_large(class),
        ConvexOptimal => recipe_convex_optimal(class, eps.ok_or(Error::SingularOptimalStep)?),
        StronglyConvex | StronglyConvexIsotropic => {
            recipe_strongly_convex(class, eps.unwrap_or(S::zero()))
        }
    }
}
