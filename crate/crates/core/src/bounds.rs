//! Closed-form bias/variance bounds, the reference constants ρ_theory and ē_theory,
//! stochastic proximal bounds, and infeasibility certificates built on the
//! two-point quadratic family `f_± = (L/2)(x ± δ)²`.

use crate::error::{Error, Result};
use crate::lyapunov::{phi_opt, MAGNITUDE_LIMIT};
use crate::problem::{ProblemClass, Regime};
use crate::scalar::{Real, Scalar};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    /// E[f(x̄_T) − inf f], also valid for the average of the gaps.
    AvgFunctionGap,
    /// E‖x_T − x*‖².
    LastIterateSqDist,
    /// E[F^γ(x̄_T) − inf F^γ] for the Moreau-envelope objective.
    EnvelopeGap,
    /// E dist²(x̄_T; C_i) over a random set index.
    SetDistSq,
}

impl Metric {
    pub fn tag(&self) -> &'static str {
        match self {
            Metric::AvgFunctionGap => "avg-function-gap",
            Metric::LastIterateSqDist => "last-iterate-sqdist",
            Metric::EnvelopeGap => "envelope-gap",
            Metric::SetDistSq => "set-distance-sq",
        }
    }
}

/// What the variance coefficient multiplies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarianceTerm {
    SigmaStarSq,
    /// σ*²(γ) of the envelope family.
    EnvelopeSigmaStarSq,
    DeltaStar,
    /// The coefficient already is the additive constant.
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Simplified {
    pub bias_coeff: f64,
    pub variance_coeff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub bias_coeff: f64,
    pub variance_coeff: f64,
    pub metric: Metric,
    pub variance_term: VarianceTerm,
    pub regime: String,
    pub overflow_flag: bool,
    /// Looser closed form, when the theorem states one.
    pub simplified: Option<Simplified>,
}

impl BoundResult {
    /// Value of the bound for a given initial distance and variance constant.
    pub fn value(&self, init_sq: f64, variance: f64) -> f64 {
        let v = if self.variance_coeff == 0.0 {
            0.0
        } else {
            self.variance_coeff * variance
        };
        self.bias_coeff * init_sq + v
    }
}

/// ρ_theory for μ = 0: `2γ + 2(1−γL)/(TL)` when γL < 1, `2γ` at γL = 1,
/// `2γ(2−γL)/(1−(1−γL)^{2T})` when γL ∈ (1, 2).
pub fn rho_theory<S: Scalar>(class: &ProblemClass<S>) -> Result<S> {
    class.require_stable_step()?;
    if class.mu != S::zero() {
        return Err(Error::OutOfRegime(
            "rho_theory is defined for mu = 0".into(),
        ));
    }
    let (g, l) = (class.gamma.clone(), class.l.clone());
    let gl = class.gamma_l();
    let two = S::int(2);
    let one = S::one();
    let t = S::from_usize(class.horizon).unwrap();
    if class.is_optimal_step() {
        Ok(two * g)
    } else if gl < one {
        Ok(two.clone() * g + two * (one - gl) / (t * l))
    } else {
        let theta = (one.clone() - gl.clone()) * (one.clone() - gl.clone());
        Ok(two.clone() * g * (two - gl) / (one - theta.ipow(class.horizon as i32)))
    }
}

/// ē′_T of the large step-size regime:
/// `(θ/T)(θ^{−T} − 1) − (2−γL)(3γL−2) + 2(γL−1)(1−θ^T)/(γLT)`.
pub fn e_prime_large<S: Scalar>(class: &ProblemClass<S>) -> Result<S> {
    let gl = class.gamma_l();
    let one = S::one();
    let two = S::int(2);
    if class.regime()? != Regime::ConvexLarge {
        return Err(Error::OutOfRegime(format!(
            "gamma*L = {gl} is not in (1, 2)"
        )));
    }
    let t = S::from_usize(class.horizon).unwrap();
    let theta = (one.clone() - gl.clone()) * (one.clone() - gl.clone());
    let inv = theta.ipow(-(class.horizon as i32));
    if !inv.is_finite_val() {
        return Err(Error::Overflow(format!(
            "theta^-T overflows for gamma*L = {gl}, T = {}",
            class.horizon
        )));
    }
    let v = theta.clone() / t.clone() * (inv - one.clone())
        - (two.clone() - gl.clone()) * (S::int(3) * gl.clone() - two.clone())
        + two * (gl.clone() - one.clone()) * (one - theta.ipow(class.horizon as i32)) / (gl * t);
    Ok(v)
}

/// ē_theory = (1/T)Σ e_t of the convex recipe of the class regime. `eps` is used at γL = 1.
pub fn e_bar_theory<S: Scalar>(class: &ProblemClass<S>, eps: Option<S>) -> Result<S> {
    let (g, gl) = (class.gamma.clone(), class.gamma_l());
    let one = S::one();
    let two = S::int(2);
    let t_n = class.horizon;
    let t = S::from_usize(t_n).unwrap();
    if class.mu != S::zero() {
        return Err(Error::OutOfRegime(
            "e_bar_theory is defined for mu = 0".into(),
        ));
    }
    match class.regime()? {
        Regime::ConvexShort => {
            let mut acc = S::zero();
            for s in 0..t_n {
                let r = S::from_usize(t_n - s).unwrap();
                acc = acc
                    + (r.clone() - one.clone()) / t.clone()
                        * ((one.clone() - gl.clone()) + gl.clone() * t.clone())
                        / ((one.clone() - gl.clone()) + gl.clone() * r);
            }
            Ok(g.clone() * g / (one - gl) * acc / t)
        }
        Regime::ConvexOptimal => {
            let eps = eps.ok_or(Error::SingularOptimalStep)?;
            if !(eps > S::zero() && eps < two) {
                return Err(Error::BadEpsilon(eps.to_f64_lossy()));
            }
            Ok(g.clone() * g * (two + eps.clone()) / eps)
        }
        Regime::ConvexLarge => {
            let theta = (one.clone() - gl.clone()) * (one.clone() - gl.clone());
            let den = (two.clone() - gl.clone()) * (two - gl) * (one - theta.ipow(t_n as i32));
            Ok(g.clone() * g / den * e_prime_large(class)?)
        }
        _ => unreachable!("mu = 0 checked above"),
    }
}

/// Asymptotic equivalent γ²/((2−γL)² T θ^{T−1}) of ē_theory for γL ∈ (1, 2).
pub fn e_bar_theory_asymptotic<S: Real>(class: &ProblemClass<S>) -> Result<S> {
    if class.regime()? != Regime::ConvexLarge {
        return Err(Error::OutOfRegime(
            "asymptotic e_bar is defined for gamma*L in (1, 2)".into(),
        ));
    }
    let gl = class.gamma_l();
    let g = class.gamma;
    let theta = (S::one() - gl) * (S::one() - gl);
    let t = S::from_usize(class.horizon).unwrap();
    Ok(g * g / ((S::int(2) - gl).powi(2) * t * theta.powi(class.horizon as i32 - 1)))
}

/// Bias and variance coefficients of the theorem covering the class regime.
///
/// `eps` is mandatory at γL = 1 (μ = 0) and selects the sub-optimal bias bound
/// when μ > 0; without it the sharp bound is used.
pub fn bound<S: Real>(class: &ProblemClass<S>, eps: Option<S>) -> Result<BoundResult> {
    let regime = class.regime()?;
    let f = |v: S| v.to_f64_lossy();
    let (g, gl, mu, l) = (class.gamma, class.gamma_l(), class.mu, class.l);
    let two = S::int(2);
    let t = S::from_usize(class.horizon).unwrap();
    let res = match regime {
        Regime::ConvexShort => {
            let rho = rho_theory(class)?;
            let ebar = e_bar_theory(class, None)?;
            BoundResult {
                bias_coeff: f(S::one() / (rho * t)),
                variance_coeff: f(ebar / rho),
                metric: Metric::AvgFunctionGap,
                variance_term: VarianceTerm::SigmaStarSq,
                regime: regime.tag().into(),
                overflow_flag: false,
                simplified: Some(Simplified {
                    bias_coeff: f(S::one() / (two * g * t)),
                    variance_coeff: f(g / (two * (S::one() - gl))),
                }),
            }
        }
        Regime::ConvexOptimal => {
            let eps = eps.ok_or(Error::SingularOptimalStep)?;
            if !(eps > S::zero() && eps < two) {
                return Err(Error::BadEpsilon(f(eps)));
            }
            BoundResult {
                bias_coeff: f(S::one() / ((two - eps) * g * t)),
                variance_coeff: f((two + eps) * g / (eps * (two - eps))),
                metric: Metric::AvgFunctionGap,
                variance_term: VarianceTerm::SigmaStarSq,
                regime: regime.tag().into(),
                overflow_flag: false,
                simplified: None,
            }
        }
        Regime::ConvexLarge => {
            let theta = (S::one() - gl) * (S::one() - gl);
            let delta = S::one() - theta.powi(class.horizon as i32);
            let ep = e_prime_large(class)?;
            let inv = theta.powi(-(class.horizon as i32));
            BoundResult {
                bias_coeff: f(delta / (two * g * (two - gl) * t)),
                variance_coeff: f(g * ep / (two * (two - gl).powi(3))),
                metric: Metric::AvgFunctionGap,
                variance_term: VarianceTerm::SigmaStarSq,
                regime: regime.tag().into(),
                overflow_flag: f(inv) > MAGNITUDE_LIMIT,
                simplified: None,
            }
        }
        Regime::StronglyConvex | Regime::StronglyConvexIsotropic => {
            let eps = eps.unwrap_or(S::zero());
            let po = phi_opt(class);
            let phi2 = po * po + eps;
            if !(eps >= S::zero()) || !(phi2 < S::one()) {
                return Err(Error::BadEpsilon(f(eps)));
            }
            let d = l - mu;
            let e = if regime == Regime::StronglyConvexIsotropic {
                g * g
            } else if eps > S::zero() {
                g * g * (S::one() + g * g * d * d / (S::int(4) * eps))
            } else {
                let g_opt = class.gamma_opt();
                let delta = (g - g_opt).abs();
                if delta <= S::lit(1e-12) * g_opt {
                    return Err(Error::SingularOptimalStep);
                }
                g * g * (S::one() + g * d / (delta * (l + mu)))
            };
            let bias = phi2.powi(class.horizon as i32);
            BoundResult {
                bias_coeff: f(bias),
                variance_coeff: f((S::one() - bias) / (S::one() - phi2) * e),
                metric: Metric::LastIterateSqDist,
                variance_term: VarianceTerm::SigmaStarSq,
                regime: regime.tag().into(),
                overflow_flag: false,
                simplified: None,
            }
        }
    };
    Ok(res)
}

/// Bounds valid when σ*² = 0, allowing ε → 0 at the singular step-sizes.
pub fn bound_interpolation<S: Real>(class: &ProblemClass<S>) -> Result<BoundResult> {
    let regime = class.regime()?;
    let t = S::from_usize(class.horizon).unwrap();
    let mut res = match regime {
        Regime::ConvexOptimal => BoundResult {
            bias_coeff: (S::one() / (S::int(2) * class.gamma * t)).to_f64_lossy(),
            variance_coeff: 0.0,
            metric: Metric::AvgFunctionGap,
            variance_term: VarianceTerm::SigmaStarSq,
            regime: regime.tag().into(),
            overflow_flag: false,
            simplified: None,
        },
        Regime::StronglyConvex | Regime::StronglyConvexIsotropic => {
            let po = phi_opt(class);
            BoundResult {
                bias_coeff: po.powi(2 * class.horizon as i32).to_f64_lossy(),
                variance_coeff: 0.0,
                metric: Metric::LastIterateSqDist,
                variance_term: VarianceTerm::SigmaStarSq,
                regime: regime.tag().into(),
                overflow_flag: false,
                simplified: None,
            }
        }
        _ => bound(class, None)?,
    };
    res.variance_coeff = 0.0;
    Ok(res)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SproxCase {
    General,
    Interpolation,
    Projection,
    /// Components are G-Lipschitz.
    Lipschitz(f64),
    /// Components are L_f-smooth.
    Smooth(f64),
}

/// Bounds for the stochastic proximal method, seen as SGD with γL = 1 on the
/// Moreau envelopes. `class.mu > 0` selects the strongly convex statements for
/// the General and Interpolation cases; `eps` is needed for the General convex case.
pub fn sprox_bounds<S: Real>(
    class: &ProblemClass<S>,
    case: SproxCase,
    eps: Option<S>,
) -> Result<BoundResult> {
    let g = class.gamma;
    let mu = class.mu;
    if !(g > S::zero()) || class.horizon == 0 || mu < S::zero() {
        return Err(Error::Invalid(
            "sprox needs gamma > 0, T >= 1, mu >= 0".into(),
        ));
    }
    let f = |v: S| v.to_f64_lossy();
    let t = S::from_usize(class.horizon).unwrap();
    let two = S::int(2);
    let strongly = mu > S::zero();
    let base = |bias: S, var: S, metric: Metric, term: VarianceTerm, tag: &str| BoundResult {
        bias_coeff: f(bias),
        variance_coeff: f(var),
        metric,
        variance_term: term,
        regime: tag.to_string(),
        overflow_flag: false,
        simplified: None,
    };
    let mu_g = mu / (S::one() + g * mu);
    let l_env = S::one() / g;
    let contraction = (S::one() / (S::one() + g * mu)).powi(2 * class.horizon as i32);
    Ok(match case {
        SproxCase::General if strongly => base(
            contraction,
            two / (mu_g * l_env * (two - mu_g / l_env)),
            Metric::LastIterateSqDist,
            VarianceTerm::EnvelopeSigmaStarSq,
            "sprox-general-strongly-convex",
        ),
        SproxCase::General => {
            let eps = eps.ok_or(Error::SingularOptimalStep)?;
            if !(eps > S::zero() && eps < two) {
                return Err(Error::BadEpsilon(f(eps)));
            }
            base(
                S::one() / ((two - eps) * g * t),
                (two + eps) * g / (eps * (two - eps)),
                Metric::EnvelopeGap,
                VarianceTerm::EnvelopeSigmaStarSq,
                "sprox-general",
            )
        }
        SproxCase::Interpolation if strongly => base(
            contraction,
            S::zero(),
            Metric::LastIterateSqDist,
            VarianceTerm::EnvelopeSigmaStarSq,
            "sprox-interpolation-strongly-convex",
        ),
        SproxCase::Interpolation => base(
            S::one() / (two * g * t),
            S::zero(),
            Metric::EnvelopeGap,
            VarianceTerm::EnvelopeSigmaStarSq,
            "sprox-interpolation",
        ),
        SproxCase::Projection => base(
            S::one() / t,
            S::zero(),
            Metric::SetDistSq,
            VarianceTerm::Constant,
            "sprox-projection",
        ),
        SproxCase::Lipschitz(lip) => {
            let lip = S::lit(lip);
            base(
                S::one() / (g * t),
                S::int(4) * g * lip * lip,
                Metric::AvgFunctionGap,
                VarianceTerm::Constant,
                "sprox-lipschitz",
            )
        }
        SproxCase::Smooth(lf) => {
            let lf = S::lit(lf);
            if !(g * lf < S::one()) {
                return Err(Error::OutOfRegime(format!(
                    "smooth sprox bound needs gamma*L_f < 1, got {}",
                    f(g * lf)
                )));
            }
            let k = S::one() - g * lf;
            base(
                S::one() / (k * g * t),
                g * (S::int(6) * lf + S::one()) / k,
                Metric::AvgFunctionGap,
                VarianceTerm::DeltaStar,
                "sprox-smooth",
            )
        }
    })
}

/// One row of a bound table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub gamma: f64,
    pub mu: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub eps: Option<f64>,
    pub metric: String,
    pub bias_coeff: f64,
    pub variance_coeff: f64,
    pub regime: String,
    pub overflow_flag: bool,
}

impl BoundRecord {
    pub fn new<S: Real>(class: &ProblemClass<S>, eps: Option<S>, r: &BoundResult) -> Self {
        BoundRecord {
            gamma: class.gamma.to_f64_lossy(),
            mu: class.mu.to_f64_lossy(),
            l: class.l.to_f64_lossy(),
            horizon: class.horizon,
            eps: eps.map(|e| e.to_f64_lossy()),
            metric: r.metric.tag().into(),
            bias_coeff: r.bias_coeff,
            variance_coeff: r.variance_coeff,
            regime: r.regime.clone(),
            overflow_flag: r.overflow_flag,
        }
    }
}

pub fn write_bound_csv<W: std::io::Write>(rows: &[BoundRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolatedQuantity {
    RhoTooLarge,
    ATrappedAboveOne,
}

/// The one-dimensional pair `f_± = (L/2)(x ± δ)²` probed at a single iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPointInstance<S> {
    #[serde(rename = "L")]
    pub l: S,
    pub delta: S,
    pub x: S,
}

/// Expected one-step quantities of SGD on the two-point family at iterate `x`:
/// (E|x⁺|², f(x) − min f, σ*²).
pub fn two_point_step<S: Scalar>(inst: &TwoPointInstance<S>, gamma: &S) -> (S, S, S) {
    let (l, d, x) = (inst.l.clone(), inst.delta.clone(), inst.x.clone());
    let half = S::ratio(1, 2);
    let plus = x.clone() - gamma.clone() * l.clone() * (x.clone() + d.clone());
    let minus = x.clone() - gamma.clone() * l.clone() * (x.clone() - d.clone());
    let next_sq = half.clone() * (plus.clone() * plus + minus.clone() * minus);
    let f_at = |y: S| {
        let a = y.clone() + d.clone();
        let b = y - d.clone();
        half.clone()
            * (half.clone() * l.clone() * a.clone() * a + half.clone() * l.clone() * b.clone() * b)
    };
    let gap = f_at(x) - f_at(S::zero());
    let sigma = l.clone() * l * d.clone() * d;
    (next_sq, gap, sigma)
}

/// Certificate that no Lyapunov parameters with a₀ = 1 exist for the given ρ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfeasibilityCertificate<S> {
    pub violated: ViolatedQuantity,
    pub gamma: S,
    pub rho: S,
    pub horizon: usize,
    /// Probe used at every step (δ = 0, x_t = 1).
    pub instance: TwoPointInstance<S>,
    /// Upper bounds u_t ≥ a_t forced by the probes, starting from u₀ = a₀ = 1.
    /// For the trap certificate these are the lower bounds a_t ≥ 1 instead.
    pub witness: Vec<S>,
    /// Step at which the forced bound becomes contradictory.
    pub violated_at: usize,
    /// For the trap certificate: (α₀, β₀, condition-six lhs, condition-six rhs).
    pub trap_chain: Option<(S, S, S, S)>,
}

impl<S: Scalar> InfeasibilityCertificate<S> {
    /// Re-checks the certificate by direct arithmetic on the two-point instance.
    pub fn revalidate(&self) -> bool {
        let l = self.instance.l.clone();
        let (next_sq, gap, sigma) = two_point_step(&self.instance, &self.gamma);
        let x2 = self.instance.x.clone() * self.instance.x.clone();
        if sigma != S::zero() || x2 == S::zero() {
            return false;
        }
        // E[E_{t+1} − E_t] = a_{t+1}·next_sq − a_t·x² + ρ·gap ≤ 0 on the probe
        let tol = S::lit(1e-12);
        match self.violated {
            ViolatedQuantity::RhoTooLarge => {
                if self.witness.first() != Some(&S::one())
                    || self.witness.len() != self.violated_at + 1
                {
                    return false;
                }
                if next_sq == S::zero() {
                    // the probe alone forces ρ·gap ≤ a₀·x²
                    return self.violated_at == 0 && self.rho.clone() * gap > x2;
                }
                for w in self.witness.windows(2) {
                    let forced = (w[0].clone() * x2.clone() - self.rho.clone() * gap.clone())
                        / next_sq.clone();
                    let scale = S::one().max_of(&forced.abs_val());
                    if (forced - w[1].clone()).abs_val() > tol.clone() * scale {
                        return false;
                    }
                }
                let last = self.witness.last().unwrap().clone();
                self.violated_at >= 1
                    && self.violated_at <= self.horizon
                    && last < S::zero()
                    && self.witness[..self.violated_at]
                        .iter()
                        .all(|u| *u >= S::zero())
            }
            ViolatedQuantity::ATrappedAboveOne => {
                if next_sq != S::zero() || self.horizon < 2 {
                    return false;
                }
                // each probe forces a_t ≥ ρ·gap/x² = 1
                let lower = self.rho.clone() * gap / x2;
                if (lower.clone() - S::one()).abs_val() > tol {
                    return false;
                }
                let Some((alpha, beta, lhs, rhs)) = self.trap_chain.clone() else {
                    return false;
                };
                let g = self.gamma.clone();
                // a₀ = a₁ = 1 and μ = 0 turn condition 5 into (γ − αL)² ≤ 0
                let alpha_ok = alpha == g.clone() / l.clone();
                // condition 2: ρ ≤ 2L(α − β) with ρ = 2γ forces β ≤ 0
                let beta_ok = beta == S::zero()
                    && self.rho.clone() == S::int(2) * l.clone() * (alpha.clone() - beta.clone());
                let s = alpha + beta;
                let lhs_ok = lhs == g.clone() * g.clone() * s.clone();
                let rhs_ok = rhs == (s - g.clone() * g) * S::zero();
                alpha_ok && beta_ok && lhs_ok && rhs_ok && lhs > rhs
            }
        }
    }
}

/// Searches for an infeasibility certificate of `rho` with a₀ = 1 and μ = 0, γL ∈ [1, 2).
///
/// Returns `None` when `rho ≤ ρ_theory` (or at γL = 1, T = 1, where ρ = 2γ is attainable).
pub fn certify_rho_upper_bound<S: Scalar>(
    class: &ProblemClass<S>,
    rho: S,
) -> Result<Option<InfeasibilityCertificate<S>>> {
    class.require_stable_step()?;
    if class.mu != S::zero() || (class.gamma_l() < S::one() && !class.is_optimal_step()) {
        return Err(Error::OutOfRegime(
            "certificates need mu = 0 and gamma*L in [1, 2)".into(),
        ));
    }
    let g = class.gamma.clone();
    let l = class.l.clone();
    let inst = TwoPointInstance {
        l: l.clone(),
        delta: S::zero(),
        x: S::one(),
    };
    let (next_sq, gap, _) = two_point_step(&inst, &g);
    let exact_one = class.gamma_l() == S::one();
    let base = |violated, witness: Vec<S>, at, chain| InfeasibilityCertificate {
        violated,
        gamma: g.clone(),
        rho: rho.clone(),
        horizon: class.horizon,
        instance: inst.clone(),
        witness,
        violated_at: at,
        trap_chain: chain,
    };
    if class.is_optimal_step() {
        let two_g = S::int(2) * g.clone();
        if rho > two_g {
            return Ok(Some(base(
                ViolatedQuantity::RhoTooLarge,
                vec![S::one()],
                0,
                None,
            )));
        }
        if rho < two_g || class.horizon < 2 || !exact_one {
            return Ok(None);
        }
        let alpha = g.clone() / l;
        let beta = S::zero();
        let lhs = g.clone() * g.clone() * alpha.clone();
        let rhs = S::zero();
        let witness = vec![S::one(); class.horizon];
        return Ok(Some(base(
            ViolatedQuantity::ATrappedAboveOne,
            witness,
            0,
            Some((alpha, beta, lhs, rhs)),
        )));
    }
    let mut u = vec![S::one()];
    for t in 0..class.horizon {
        let next = (u[t].clone() - rho.clone() * gap.clone()) / next_sq.clone();
        let neg = next < S::zero();
        u.push(next);
        if neg {
            return Ok(Some(base(ViolatedQuantity::RhoTooLarge, u, t + 1, None)));
        }
    }
    Ok(None)
}

/// For a candidate sequence with a₀ = 1, the first step whose two-point probe
/// decrease inequality fails, if any.
pub fn probe_violation<S: Scalar>(class: &ProblemClass<S>, rho: &S, a: &[S]) -> Option<usize> {
    let inst = TwoPointInstance {
        l: class.l.clone(),
        delta: S::zero(),
        x: S::one(),
    };
    let (next_sq, gap, _) = two_point_step(&inst, &class.gamma);
    (0..a.len() - 1).find(|&t| {
        a[t + 1].clone() * next_sq.clone() - a[t].clone() + rho.clone() * gap.clone() > S::zero()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::{recipe_convex_large, recipe_convex_short, recipe_strongly_convex};
    use crate::scalar::Exact;
    use proptest::prelude::*;

    fn cvx(gamma: f64, t: usize) -> ProblemClass<f64> {
        ProblemClass::new(0.0, 1.0, gamma, t)
    }

    #[test]
    fn rho_theory_examples() {
        assert!((rho_theory(&cvx(0.5, 10)).unwrap() - 1.1).abs() < 1e-15);
        assert_eq!(rho_theory(&cvx(1.0, 7)).unwrap(), 2.0);
        assert!((rho_theory(&cvx(1.5, 2)).unwrap() - 1.6).abs() < 1e-15);
        assert!((rho_theory(&cvx(0.5, 2)).unwrap() - 1.5).abs() < 1e-15);
        assert!(rho_theory(&ProblemClass::new(0.1, 1.0, 0.5, 2)).is_err());
        assert!(rho_theory(&cvx(2.0, 2)).is_err());
    }

    #[test]
    fn short_step_bound_example() {
        let b = bound(&cvx(0.5, 10), None).unwrap();
        let s = b.simplified.unwrap();
        assert!((s.bias_coeff - 0.1).abs() < 1e-15);
        assert!((s.variance_coeff - 0.5).abs() < 1e-15);
        assert!((b.bias_coeff - 1.0 / 11.0).abs() < 1e-15);
        assert!(b.variance_coeff <= s.variance_coeff);
    }

    #[test]
    fn strongly_convex_bias_example() {
        let b = bound(&ProblemClass::new(0.25, 1.0, 1.0, 4), Some(0.0)).unwrap();
        assert!((b.bias_coeff - 0.75f64.powi(8)).abs() < 1e-15);
        assert!((b.bias_coeff - 0.100113).abs() < 1e-6);
        assert_eq!(b.metric, Metric::LastIterateSqDist);
        // variance = e (1 − φ^{2T})/(1 − φ²) with e = 2
        assert!((b.variance_coeff - 2.0 * (1.0 - 0.75f64.powi(8)) / (1.0 - 0.5625)).abs() < 1e-13);
        assert!(matches!(
            bound(&ProblemClass::new(0.25, 1.0, 1.6, 4), None),
            Err(Error::SingularOptimalStep)
        ));
        assert!(bound(&ProblemClass::new(0.25, 1.0, 1.6, 4), Some(0.01)).is_ok());
    }

    #[test]
    fn optimal_step_requires_eps() {
        assert!(matches!(
            bound(&cvx(1.0, 3), None),
            Err(Error::SingularOptimalStep)
        ));
        let b = bound(&cvx(1.0, 3), Some(1.0)).unwrap();
        assert!((b.bias_coeff - 1.0 / 3.0).abs() < 1e-15);
        assert!((b.variance_coeff - 3.0).abs() < 1e-15);
        let i = bound_interpolation(&cvx(1.0, 3)).unwrap();
        assert!((i.bias_coeff - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(i.variance_coeff, 0.0);
    }

    #[test]
    fn seam_variance_diverges() {
        let v = |h: f64| bound(&cvx(1.0 - h, 5), None).unwrap();
        let (a, b) = (v(1e-6), v(2e-6));
        assert!(a.variance_coeff > b.variance_coeff && b.variance_coeff > 1e3);
        assert!((a.simplified.unwrap().bias_coeff - 1.0 / (2.0 * 5.0)).abs() < 1e-6);
        assert!((a.bias_coeff - 1.0 / 10.0).abs() < 1e-6);
    }

    #[test]
    fn large_step_bound_matches_recipe() {
        for (g, t) in [(1.5, 2), (1.2, 5), (1.9, 3), (1.05, 4)] {
            let c = cvx(g, t);
            let p = recipe_convex_large(&c).unwrap();
            let b = bound(&c, None).unwrap();
            let mean_e = p.e.iter().sum::<f64>() / t as f64;
            assert!(
                (b.variance_coeff - mean_e / p.rho).abs() <= 1e-9 * b.variance_coeff,
                "{g} {t}"
            );
            assert!((b.bias_coeff - 1.0 / (p.rho * t as f64)).abs() <= 1e-12);
            assert!((e_bar_theory(&c, None).unwrap() - mean_e).abs() <= 1e-9 * mean_e);
        }
    }

    #[test]
    fn e_bar_exact_matches_recipe_sum() {
        for gl in ["1.05", "1.5", "1.95"] {
            let c = ProblemClass::new(
                Exact::int(0),
                Exact::int(1),
                Exact::parse_decimal(gl).unwrap(),
                12,
            );
            let p = recipe_convex_large(&c).unwrap();
            assert_eq!(e_bar_theory(&c, None).unwrap(), p.mean_e());
        }
        let c = ProblemClass::new(Exact::int(0), Exact::int(1), Exact::ratio(2, 5), 6);
        assert_eq!(
            e_bar_theory(&c, None).unwrap(),
            recipe_convex_short(&c).unwrap().mean_e()
        );
    }

    #[test]
    fn asymptotic_e_bar() {
        let c = cvx(1.3, 60);
        let ratio = e_bar_theory(&c, None).unwrap() / e_bar_theory_asymptotic(&c).unwrap();
        assert!((ratio - 1.0).abs() < 1e-2);
    }

    #[test]
    fn bounds_agree_with_recipes_strongly_convex() {
        let c = ProblemClass::new(0.25, 1.0, 0.7, 6);
        let p = recipe_strongly_convex(&c, 0.0).unwrap();
        let b = bound(&c, None).unwrap();
        assert!((b.bias_coeff - p.a[0]).abs() < 1e-15);
        assert!((b.variance_coeff - p.e.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn certificate_examples() {
        let c = cvx(1.5, 2);
        let cert = certify_rho_upper_bound(&c, 1.7).unwrap().unwrap();
        assert_eq!(cert.violated, ViolatedQuantity::RhoTooLarge);
        assert!(*cert.witness.last().unwrap() < 0.0);
        assert!(cert.revalidate());
        let exact = ProblemClass::new(Exact::int(0), Exact::int(1), Exact::ratio(3, 2), 2);
        assert!(certify_rho_upper_bound(&exact, Exact::ratio(8, 5))
            .unwrap()
            .is_none());
        let trap = certify_rho_upper_bound(&cvx(1.0, 3), 2.0).unwrap().unwrap();
        assert_eq!(trap.violated, ViolatedQuantity::ATrappedAboveOne);
        assert!(trap.revalidate());
        assert!(certify_rho_upper_bound(&cvx(1.0, 1), 2.0)
            .unwrap()
            .is_none());
        assert!(certify_rho_upper_bound(&cvx(1.0, 3), 1.9)
            .unwrap()
            .is_none());
        assert!(certify_rho_upper_bound(&cvx(1.0, 3), 2.1)
            .unwrap()
            .unwrap()
            .revalidate());
        assert!(certify_rho_upper_bound(&cvx(0.5, 3), 2.0).is_err());
    }

    #[test]
    fn tampered_certificates_fail() {
        let mut cert = certify_rho_upper_bound(&cvx(1.5, 3), 1.8).unwrap().unwrap();
        cert.rho = 1.0;
        assert!(!cert.revalidate());
        let mut trap = certify_rho_upper_bound(&cvx(1.0, 3), 2.0).unwrap().unwrap();
        trap.trap_chain = Some((0.5, 0.0, 0.5, 0.0));
        assert!(!trap.revalidate());
    }

    #[test]
    fn sprox_examples() {
        let c = ProblemClass::new(0.0, 1.0, 0.3, 8);
        let p = sprox_bounds(&c, SproxCase::Projection, None).unwrap();
        assert_eq!((p.bias_coeff, p.variance_coeff), (1.0 / 8.0, 0.0));
        let l = sprox_bounds(&c, SproxCase::Lipschitz(2.0), None).unwrap();
        assert!((l.bias_coeff - 1.0 / (0.3 * 8.0)).abs() < 1e-15);
        assert!((l.variance_coeff - 4.0 * 0.3 * 4.0).abs() < 1e-15);
        assert_eq!(
            sprox_bounds(&c, SproxCase::Interpolation, None)
                .unwrap()
                .variance_coeff,
            0.0
        );
        assert!(sprox_bounds(&c, SproxCase::Smooth(4.0), None).is_err());
        let s = sprox_bounds(&c, SproxCase::Smooth(1.0), None).unwrap();
        assert!((s.variance_coeff - 0.3 * 7.0 / 0.7).abs() < 1e-14);
        let sc = ProblemClass::new(0.5, 1.0, 0.3, 8);
        let g = sprox_bounds(&sc, SproxCase::General, None).unwrap();
        assert!((g.bias_coeff - (1.0f64 / 1.15).powi(16)).abs() < 1e-15);
        assert!(sprox_bounds(&c, SproxCase::General, None).is_err());
    }

    #[test]
    fn csv_columns() {
        let c = cvx(0.5, 10);
        let r = bound(&c, None).unwrap();
        let mut buf = Vec::new();
        write_bound_csv(&[BoundRecord::new(&c, None, &r)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "gamma,mu,L,T,eps,metric,bias_coeff,variance_coeff,regime,overflow_flag\n"
        ));
    }

    proptest! {
        #[test]
        fn rho_theory_matches_recipes(gl in 0.02f64..1.98, t in 1usize..40) {
            prop_assume!((gl - 1.0).abs() > 1e-6);
            let c = cvx(gl, t);
            let r = rho_theory(&c).unwrap();
            let p = if gl < 1.0 { recipe_convex_short(&c) } else { recipe_convex_large(&c) };
            if let Ok(p) = p {
                prop_assert!((p.rho - r).abs() <= 1e-12 * r);
            }
        }

        #[test]
        fn certificates_exclude_every_candidate(gl in 1.01f64..1.99, t in 1usize..6, excess in 0.001f64..0.5,
                                                raw in proptest::collection::vec(0.0f64..2.0, 6)) {
            let c = cvx(gl, t);
            let rho = rho_theory(&c).unwrap() * (1.0 + excess);
            let cert = certify_rho_upper_bound(&c, rho).unwrap().unwrap();
            prop_assert!(cert.revalidate());
            let mut a = vec![1.0];
            a.extend_from_slice(&raw[..t]);
            prop_assert!(probe_violation(&c, &rho, &a).is_some());
        }
    }
}
