//! Problem regimes, quadratic finite sums and the solution-variance bookkeeping.

use crate::error::{Error, Result};
use crate::linalg::{sym_eig, Mat};
use crate::scalar::{Real, Scalar};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Assumption class on the component family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Assumption {
    SmoothConvex,
    SmoothStronglyConvex,
    /// Expected cocoercivity against minimizers.
    #[serde(rename = "EC*")]
    ExpectedCocoercivityStar,
    /// Symmetric expected cocoercivity against minimizers.
    #[serde(rename = "SEC*")]
    SymmetricExpectedCocoercivityStar,
}

/// Step-size regime of a class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    ConvexShort,
    ConvexOptimal,
    ConvexLarge,
    StronglyConvex,
    /// μ = L.
    StronglyConvexIsotropic,
}

impl Regime {
    pub fn tag(&self) -> &'static str {
        match self {
            Regime::ConvexShort => "convex-short",
            Regime::ConvexOptimal => "convex-optimal",
            Regime::ConvexLarge => "convex-large",
            Regime::StronglyConvex => "strongly-convex",
            Regime::StronglyConvexIsotropic => "strongly-convex-isotropic",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemClass<S> {
    pub mu: S,
    #[serde(rename = "L")]
    pub l: S,
    pub gamma: S,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub m: usize,
    pub assumption: Assumption,
}

/// Relative tolerance used to detect γL = 1.
pub const OPTIMAL_STEP_TOL: f64 = 1e-12;

impl<S: Scalar> ProblemClass<S> {
    /// Class with m = 2 and the symmetric expected cocoercivity assumption.
    pub fn new(mu: S, l: S, gamma: S, horizon: usize) -> Self {
        ProblemClass {
            mu,
            l,
            gamma,
            horizon,
            m: 2,
            assumption: Assumption::SymmetricExpectedCocoercivityStar,
        }
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = m;
        self
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_assumption(mut self, a: Assumption) -> Self {
        self.assumption = a;
        self
    }

    pub fn gamma_l(&self) -> S {
        self.gamma.clone() * self.l.clone()
    }

    /// Structural checks: 0 ≤ μ ≤ L, L > 0, γ > 0, T ≥ 1, m ≥ 1.
    pub fn validate(&self) -> Result<()> {
        let z = S::zero();
        if !(self.l > z) || !(self.gamma > z) || !(self.mu >= z) || !(self.mu <= self.l) {
            return Err(Error::Invalid(format!(
                "need 0 <= mu <= L, L > 0, gamma > 0 (mu={}, L={}, gamma={})",
                self.mu, self.l, self.gamma
            )));
        }
        if self.horizon == 0 || self.m == 0 {
            return Err(Error::Invalid("horizon and m must be positive".into()));
        }
        Ok(())
    }

    pub fn is_optimal_step(&self) -> bool {
        (self.gamma_l() - S::one()).abs_val() <= S::lit(OPTIMAL_STEP_TOL)
    }

    /// γL ∈ (0, 2), required by every bound formula.
    pub fn require_stable_step(&self) -> Result<()> {
        self.validate()?;
        let gl = self.gamma_l();
        if !(gl > S::zero() && gl < S::int(2)) {
            return Err(Error::OutOfRegime(format!("gamma*L = {gl} not in (0, 2)")));
        }
        Ok(())
    }

    pub fn regime(&self) -> Result<Regime> {
        self.require_stable_step()?;
        if self.mu > S::zero() {
            if self.mu == self.l {
                return Ok(Regime::StronglyConvexIsotropic);
            }
            return Ok(Regime::StronglyConvex);
        }
        if self.is_optimal_step() {
            Ok(Regime::ConvexOptimal)
        } else if self.gamma_l() < S::one() {
            Ok(Regime::ConvexShort)
        } else {
            Ok(Regime::ConvexLarge)
        }
    }

    /// γ_opt = 2/(μ+L).
    pub fn gamma_opt(&self) -> S {
        S::int(2) / (self.mu.clone() + self.l.clone())
    }

    pub fn to_f64(&self) -> ProblemClass<f64> {
        ProblemClass {
            mu: self.mu.to_f64_lossy(),
            l: self.l.to_f64_lossy(),
            gamma: self.gamma.to_f64_lossy(),
            horizon: self.horizon,
            m: self.m,
            assumption: self.assumption,
        }
    }
}

/// f(x) = ½xᵀQx + bᵀx + c.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadratic<S> {
    pub q: Mat<S>,
    pub b: Vec<S>,
    pub c: S,
}

impl<S: Real> Quadratic<S> {
    pub fn value(&self, x: &[S]) -> S {
        let qx = self.q.matvec(x);
        let half = S::lit(0.5);
        x.iter().zip(&qx).map(|(a, b)| half * *a * *b).sum::<S>()
            + crate::linalg::dot(&self.b, x)
            + self.c
    }

    pub fn gradient(&self, x: &[S]) -> Vec<S> {
        self.q
            .matvec(x)
            .iter()
            .zip(&self.b)
            .map(|(a, b)| *a + *b)
            .collect()
    }

    /// (smallest, largest) eigenvalue of Q.
    pub fn moduli(&self) -> (S, S) {
        let (ev, _) = sym_eig(&self.q);
        (ev[0], ev[ev.len() - 1])
    }

    /// Infimum of the quadratic, −∞ when unbounded below.
    pub fn infimum(&self) -> S {
        match pseudo_solve(&self.q, &self.b.iter().map(|v| -*v).collect::<Vec<_>>()) {
            Some(x) => self.value(&x),
            None => S::neg_infinity(),
        }
    }
}

/// Minimum-norm solution of `Q x = r` through an eigen pseudo-inverse with cutoff
/// 1e−12·λ_max; `None` when `r` is not in the range of `Q`.
pub fn pseudo_solve<S: Real>(q: &Mat<S>, r: &[S]) -> Option<Vec<S>> {
    let n = q.rows;
    let (ev, v) = sym_eig(q);
    let lmax = ev.iter().fold(S::zero(), |m, e| m.max(e.abs()));
    let cutoff = S::lit(1e-12) * lmax;
    let mut x = vec![S::zero(); n];
    for k in 0..n {
        if ev[k].abs() <= cutoff || ev[k] == S::zero() {
            continue;
        }
        let coef = (0..n).map(|i| v[(i, k)] * r[i]).sum::<S>() / ev[k];
        for i in 0..n {
            x[i] = x[i] + coef * v[(i, k)];
        }
    }
    let qx = q.matvec(&x);
    let res: S = qx
        .iter()
        .zip(r)
        .map(|(a, b)| (*a - *b) * (*a - *b))
        .sum::<S>()
        .sqrt();
    let xn = crate::linalg::norm2(&x);
    let scale = S::one() + lmax.max(S::one()) * xn + crate::linalg::norm2(r);
    if res <= S::lit(1e-10) * scale {
        Some(x)
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteSumProblem<S> {
    pub dimension: usize,
    pub components: Vec<Quadratic<S>>,
    pub weights: Vec<S>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionStats<S> {
    pub x_star: Vec<S>,
    pub sigma_star_sq: S,
    pub delta_star: S,
}

/// Effective constants of an equivalent plain-SGD problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferredConstants<S> {
    pub mu: S,
    #[serde(rename = "L")]
    pub l: S,
    pub stats: SolutionStats<S>,
}

impl<S: Real> TransferredConstants<S> {
    pub fn class(&self, gamma: S, horizon: usize) -> ProblemClass<S> {
        ProblemClass::new(self.mu, self.l, gamma, horizon)
    }
}

#[derive(Serialize, Deserialize)]
struct ComponentFile {
    #[serde(rename = "Q")]
    q: Vec<f64>,
    b: Vec<f64>,
    c: f64,
}

#[derive(Serialize, Deserialize)]
struct ProblemFile {
    dimension: usize,
    components: Vec<ComponentFile>,
    #[serde(default)]
    weights: Option<Vec<f64>>,
}

impl<S: Real> FiniteSumProblem<S> {
    /// Uniformly weighted family.
    pub fn uniform(components: Vec<Quadratic<S>>) -> Result<Self> {
        let n = components.len();
        if n == 0 {
            return Err(Error::Invalid("no components".into()));
        }
        let d = components[0].b.len();
        let w = S::one() / S::from_usize(n).unwrap();
        let p = FiniteSumProblem {
            dimension: d,
            components,
            weights: vec![w; n],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_weights(mut self, w: Vec<S>) -> Result<Self> {
        self.weights = w;
        self.validate()?;
        Ok(self)
    }

    /// The two 1-D pieces f± = (L/2)(x ± δ)².
    pub fn two_point(l: S, delta: S) -> Self {
        let half = S::lit(0.5);
        let mk = |s: S| Quadratic {
            q: Mat::diag(&[l]),
            b: vec![l * s * delta],
            c: half * l * delta * delta,
        };
        FiniteSumProblem::uniform(vec![mk(S::one()), mk(-S::one())])
            .expect("valid two-point family")
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dimension;
        for (k, c) in self.components.iter().enumerate() {
            if c.q.rows != d || c.q.cols != d || c.b.len() != d {
                return Err(Error::Invalid(format!(
                    "component {k} has wrong dimensions"
                )));
            }
            if c.q.sub(&c.q.transpose()).max_abs() > S::lit(1e-12) * (S::one() + c.q.max_abs()) {
                return Err(Error::Invalid(format!(
                    "component {k} has a non-symmetric Q"
                )));
            }
        }
        check_distribution(&self.weights, self.components.len())
    }

    pub fn value(&self, x: &[S]) -> S {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| *w * c.value(x))
            .sum()
    }

    pub fn gradient(&self, x: &[S]) -> Vec<S> {
        let mut g = vec![S::zero(); self.dimension];
        for (c, w) in self.components.iter().zip(&self.weights) {
            for (gi, ci) in g.iter_mut().zip(c.gradient(x)) {
                *gi = *gi + *w * ci;
            }
        }
        g
    }

    pub fn averaged(&self) -> Quadratic<S> {
        let d = self.dimension;
        let mut q = Mat::zeros(d, d);
        let mut b = vec![S::zero(); d];
        let mut c = S::zero();
        for (comp, w) in self.components.iter().zip(&self.weights) {
            q = q.add(&comp.q.scale(*w));
            for (bi, ci) in b.iter_mut().zip(&comp.b) {
                *bi = *bi + *w * *ci;
            }
            c = c + *w * comp.c;
        }
        Quadratic { q, b, c }
    }

    /// Checks that every Q has eigenvalues in [μ, L] within 1e−10.
    pub fn check_class(&self, mu: S, l: S) -> Result<()> {
        let tol = S::lit(1e-10);
        for (k, c) in self.components.iter().enumerate() {
            let (lo, hi) = c.moduli();
            if lo < mu - tol || hi > l + tol {
                return Err(Error::Invalid(format!(
                    "component {k} has spectrum [{lo}, {hi}] outside [{mu}, {l}]"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ProblemFile {
            dimension: self.dimension,
            components: self
                .components
                .iter()
                .map(|c| ComponentFile {
                    q: c.q.data.iter().map(|v| v.to_f64_lossy()).collect(),
                    b: c.b.iter().map(|v| v.to_f64_lossy()).collect(),
                    c: c.c.to_f64_lossy(),
                })
                .collect(),
            weights: Some(self.weights.iter().map(|v| v.to_f64_lossy()).collect()),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ProblemFile = serde_json::from_str(text)?;
        let d = file.dimension;
        let mut comps = Vec::with_capacity(file.components.len());
        for (k, c) in file.components.into_iter().enumerate() {
            if c.q.len() != d * d {
                return Err(Error::Invalid(format!(
                    "component {k}: Q must have {} entries",
                    d * d
                )));
            }
            comps.push(Quadratic {
                q: Mat {
                    rows: d,
                    cols: d,
                    data: c.q.into_iter().map(S::lit).collect(),
                },
                b: c.b.into_iter().map(S::lit).collect(),
                c: S::lit(c.c),
            });
        }
        let n = comps.len();
        if n == 0 {
            return Err(Error::Invalid("no components".into()));
        }
        let weights = match file.weights {
            Some(w) => w.into_iter().map(S::lit).collect(),
            None => vec![S::one() / S::from_usize(n).unwrap(); n],
        };
        let p = FiniteSumProblem {
            dimension: d,
            components: comps,
            weights,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub(crate) fn require_uniform(&self) -> Result<()> {
        let n = S::from_usize(self.n()).unwrap();
        let u = S::one() / n;
        if self.weights.iter().any(|w| (*w - u).abs() > S::lit(1e-12)) {
            return Err(Error::BadDistribution(
                "the averaged objective must use uniform weights".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn check_distribution<S: Real>(p: &[S], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::BadDistribution(format!(
            "{} weights for {} components",
            p.len(),
            n
        )));
    }
    if p.iter().any(|w| !(*w >= S::zero())) {
        return Err(Error::BadDistribution("negative weight".into()));
    }
    let s: S = p.iter().copied().sum();
    if (s - S::one()).abs() > S::lit(1e-12) {
        return Err(Error::BadDistribution(format!("weights sum to {s}")));
    }
    Ok(())
}

/// Minimizer of the averaged objective, σ*² and Δ*.
pub fn solution_stats<S: Real>(problem: &FiniteSumProblem<S>) -> Result<SolutionStats<S>> {
    let avg = problem.averaged();
    let rhs: Vec<S> = avg.b.iter().map(|v| -*v).collect();
    let x_star = pseudo_solve(&avg.q, &rhs).ok_or(Error::NoMinimizer)?;
    Ok(stats_at(problem, x_star))
}

/// σ*² and Δ* evaluated at a given minimizer.
pub fn stats_at<S: Real>(problem: &FiniteSumProblem<S>, x_star: Vec<S>) -> SolutionStats<S> {
    let mut sigma = S::zero();
    let mut inf_sum = S::zero();
    for (c, w) in problem.components.iter().zip(&problem.weights) {
        let g = c.gradient(&x_star);
        sigma = sigma + *w * crate::linalg::dot(&g, &g);
        if *w > S::zero() {
            inf_sum = inf_sum + *w * c.infimum();
        }
    }
    let delta = problem.value(&x_star) - inf_sum;
    SolutionStats {
        x_star,
        sigma_star_sq: sigma,
        delta_star: delta.max(S::zero()),
    }
}

/// Constants of mini-batch SGD with batches of size `b` drawn uniformly without replacement.
pub fn minibatch_constants<S: Real>(
    problem: &FiniteSumProblem<S>,
    b: usize,
) -> Result<TransferredConstants<S>> {
    let n = problem.n();
    if b == 0 || b > n {
        return Err(Error::BadBatch { b, n });
    }
    problem.require_uniform()?;
    let base = solution_stats(problem)?;
    let (mut mu, mut lmax) = (S::infinity(), S::zero());
    let mut grad_sq = S::zero();
    for c in &problem.components {
        let (lo, hi) = c.moduli();
        mu = mu.min(lo);
        lmax = lmax.max(hi);
        let g = c.gradient(&base.x_star);
        grad_sq = grad_sq + crate::linalg::dot(&g, &g);
    }
    let lip = problem.averaged().moduli().1;
    let (nf, bf) = (S::from_usize(n).unwrap(), S::from_usize(b).unwrap());
    let (r, sigma) = if n == 1 {
        (S::one(), S::zero())
    } else {
        let r = nf * (bf - S::one()) / (bf * (nf - S::one()));
        let sigma = (nf - bf) / (nf * bf * (nf - S::one())) * grad_sq;
        (r, sigma)
    };
    let l = r * lip + (S::one() - r) * lmax;
    Ok(TransferredConstants {
        mu: mu.max(S::zero()),
        l,
        stats: SolutionStats {
            x_star: base.x_star,
            sigma_star_sq: sigma,
            delta_star: base.delta_star,
        },
    })
}

/// Constants of SGD sampling component `i` with probability `p_i` and step γ/(n p_i).
pub fn nonuniform_constants<S: Real>(
    problem: &FiniteSumProblem<S>,
    p: &[S],
) -> Result<TransferredConstants<S>> {
    let n = problem.n();
    check_distribution(p, n)?;
    if p.iter().any(|pi| !(*pi > S::zero())) {
        return Err(Error::BadDistribution(
            "probabilities must be positive".into(),
        ));
    }
    problem.require_uniform()?;
    let base = solution_stats(problem)?;
    let nf = S::from_usize(n).unwrap();
    let (mut mu, mut l, mut sigma) = (S::infinity(), S::zero(), S::zero());
    for (c, pi) in problem.components.iter().zip(p) {
        let (lo, hi) = c.moduli();
        let scale = S::one() / (nf * *pi);
        mu = mu.min(lo * scale);
        l = l.max(hi * scale);
        let g = c.gradient(&base.x_star);
        sigma = sigma + scale * crate::linalg::dot(&g, &g) / nf;
    }
    Ok(TransferredConstants {
        mu: mu.max(S::zero()),
        l,
        stats: SolutionStats {
            x_star: base.x_star,
            sigma_star_sq: sigma,
            delta_star: base.delta_star,
        },
    })
}
