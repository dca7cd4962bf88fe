//! Monte-Carlo and exact-enumeration simulators: SGD (uniform, non-uniform,
//! mini-batch) and the stochastic proximal method on quadratic finite sums.

use crate::bounds::Metric;
use crate::error::{Error, Result};
use crate::linalg::{dot, LdlFactor, Mat};
use crate::problem::{
    check_distribution, pseudo_solve, solution_stats, FiniteSumProblem, ProblemClass, Quadratic,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Largest number of index sequences [`exact_expectation_small`] will walk.
pub const ENUMERATION_CAP: u128 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Variant {
    /// Index drawn from the problem weights.
    Uniform,
    /// Index drawn from `p`, step γ/(n p_i).
    NonUniform(Vec<f64>),
    /// `b` distinct indices drawn uniformly, averaged gradient.
    MiniBatch(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// x₀..x_T.
    pub iterates: Vec<Vec<f64>>,
    /// Indices sampled at steps 0..T−1 (one entry per batch member).
    pub indices: Vec<Vec<usize>>,
    /// (1/T) Σ_{t<T} x_t.
    pub average: Vec<f64>,
    /// Objective gap at each iterate (NaN when the infimum is unknown).
    pub gap: Vec<f64>,
    /// ‖x_t − x*‖² (NaN when no minimizer is known).
    pub sq_dist: Vec<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.indices.len()
    }

    pub fn last(&self) -> &[f64] {
        self.iterates.last().expect("trajectory has x0")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.iterates[0].len();
        let mut out = csv::Writer::from_writer(w);
        let mut head = vec!["t".to_string()];
        head.extend((1..=d).map(|k| format!("x{k}")));
        head.extend(["index", "f_gap", "sqdist"].map(String::from));
        out.write_record(&head)?;
        for (t, x) in self.iterates.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|v| format!("{v:e}")));
            row.push(self.indices.get(t).map_or(String::new(), |ix| {
                ix.iter()
                    .map(|i| i.to_string())
                    .collect::<Vec<_>>()
                    .join(";")
            }));
            row.push(format!("{:e}", self.gap[t]));
            row.push(format!("{:e}", self.sq_dist[t]));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub metric: Metric,
    pub mean: f64,
    /// Sample standard deviation over √count.
    pub se: f64,
    pub count: usize,
    pub seed: u64,
}

impl McEstimate {
    /// |mean − reference| within `k` standard errors.
    pub fn agrees_with(&self, reference: f64, k: f64) -> bool {
        (self.mean - reference).abs() <= k * self.se
    }
}

pub fn write_mc_csv<W: Write>(rows: &[McEstimate], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metric", "mean", "se", "count", "seed"])?;
    for r in rows {
        out.write_record([
            r.metric.tag().to_string(),
            format!("{:e}", r.mean),
            format!("{:e}", r.se),
            r.count.to_string(),
            r.seed.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Stream of uniforms keyed by (seed, trajectory id, step).
struct Draws {
    rng: ChaCha8Rng,
    stride: u128,
}

impl Draws {
    fn new(seed: u64, id: u64, per_step: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);
        Draws {
            rng,
            stride: 2 * per_step.max(1) as u128,
        }
    }

    fn at(&mut self, step: usize) -> impl FnMut() -> f64 + '_ {
        self.rng.set_word_pos(step as u128 * self.stride);
        || (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

fn cdf(w: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    w.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

fn inverse_cdf(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().unwrap();
    match cdf.iter().position(|c| u * total < *c) {
        Some(i) => i,
        None => (0..cdf.len())
            .rev()
            .find(|&i| i == 0 || cdf[i] > cdf[i - 1])
            .unwrap(),
    }
}

fn sq_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn subsets(n: usize, b: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, b: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == b {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, b, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, b, &mut Vec::new(), &mut out);
    out
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

/// Common interface of the simulated methods.
trait Method: Sync {
    fn dim(&self) -> usize;
    fn draws_per_step(&self) -> usize;
    fn sample(&self, u: &mut dyn FnMut() -> f64) -> Vec<usize>;
    /// Number of outcomes of one step.
    fn outcomes(&self) -> u128;
    fn law(&self) -> Vec<(f64, Vec<usize>)>;
    fn step(&self, x: &[f64], choice: &[usize]) -> Vec<f64>;
    fn gap(&self, x: &[f64]) -> f64;
    fn sq_dist(&self, x: &[f64]) -> f64;
    fn metric(&self, metric: Metric, last: &[f64], avg: &[f64]) -> Result<f64>;
}

fn simulate<M: Method + ?Sized>(
    m: &M,
    x0: &[f64],
    horizon: usize,
    seed: u64,
    id: u64,
) -> Result<Trajectory> {
    if x0.len() != m.dim() {
        return Err(Error::Invalid(format!(
            "x0 has dimension {}, expected {}",
            x0.len(),
            m.dim()
        )));
    }
    if horizon == 0 {
        return Err(Error::Invalid("horizon must be at least 1".into()));
    }
    let mut draws = Draws::new(seed, id, m.draws_per_step());
    let mut iterates = vec![x0.to_vec()];
    let mut indices = Vec::with_capacity(horizon);
    let mut sum = vec![0.0; x0.len()];
    for t in 0..horizon {
        let x = &iterates[t];
        for (s, v) in sum.iter_mut().zip(x) {
            *s += v;
        }
        let choice = m.sample(&mut draws.at(t));
        let next = m.step(x, &choice);
        indices.push(choice);
        iterates.push(next);
    }
    let average = sum.iter().map(|s| s / horizon as f64).collect();
    Ok(Trajectory {
        gap: iterates.iter().map(|x| m.gap(x)).collect(),
        sq_dist: iterates.iter().map(|x| m.sq_dist(x)).collect(),
        iterates,
        indices,
        average,
    })
}

fn enumerate<M: Method + ?Sized>(m: &M, x0: &[f64], horizon: usize, metric: Metric) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::Invalid("horizon must be at least 1".into()));
    }
    let paths = (0..horizon).try_fold(1u128, |acc, _| acc.checked_mul(m.outcomes()));
    match paths {
        Some(p) if p <= ENUMERATION_CAP => {}
        p => return Err(Error::TooLarge(p.unwrap_or(u128::MAX))),
    }
    let law = m.law();
    fn rec<M: Method + ?Sized>(
        m: &M,
        law: &[(f64, Vec<usize>)],
        x: &[f64],
        sum: &[f64],
        depth: usize,
        horizon: usize,
        metric: Metric,
    ) -> Result<f64> {
        let sum: Vec<f64> = sum.iter().zip(x).map(|(s, v)| s + v).collect();
        let mut acc = 0.0;
        for (p, choice) in law {
            if *p == 0.0 {
                continue;
            }
            let next = m.step(x, choice);
            let v = if depth + 1 == horizon {
                let avg: Vec<f64> = sum.iter().map(|s| s / horizon as f64).collect();
                m.metric(metric, &next, &avg)?
            } else {
                rec(m, law, &next, &sum, depth + 1, horizon, metric)?
            };
            acc += p * v;
        }
        Ok(acc)
    }
    rec(m, &law, x0, &vec![0.0; x0.len()], 0, horizon, metric)
}

fn tree_sum(v: &[f64]) -> f64 {
    if v.len() <= 64 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    let (x, y) = rayon::join(|| tree_sum(a), || tree_sum(b));
    x + y
}

fn monte_carlo<M: Method + ?Sized>(
    m: &M,
    x0: &[f64],
    horizon: usize,
    metric: Metric,
    seed: u64,
    count: usize,
) -> Result<McEstimate> {
    if count == 0 {
        return Err(Error::Invalid("no trajectories requested".into()));
    }
    let values: Vec<f64> = (0..count as u64)
        .into_par_iter()
        .map(|id| {
            let tr = simulate(m, x0, horizon, seed, id)?;
            m.metric(metric, tr.last(), &tr.average)
        })
        .collect::<Result<_>>()?;
    let n = count as f64;
    let mean = tree_sum(&values) / n;
    let se = if count < 2 {
        0.0
    } else {
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        (tree_sum(&dev) / (n - 1.0)).sqrt() / n.sqrt()
    };
    Ok(McEstimate {
        metric,
        mean,
        se,
        count,
        seed,
    })
}

/// SGD on a quadratic finite sum.
#[derive(Clone, Debug)]
pub struct SgdSim {
    pub problem: FiniteSumProblem<f64>,
    pub gamma: f64,
    pub variant: Variant,
    pub x_star: Vec<f64>,
    pub f_star: f64,
    cdf: Vec<f64>,
}

impl SgdSim {
    pub fn new(problem: &FiniteSumProblem<f64>, gamma: f64, variant: Variant) -> Result<Self> {
        problem.validate()?;
        let n = problem.n();
        let cdf = match &variant {
            Variant::Uniform => cdf(&problem.weights),
            Variant::NonUniform(p) => {
                check_distribution(p, n)?;
                if p.iter().any(|v| *v <= 0.0) {
                    return Err(Error::BadDistribution(
                        "probabilities must be positive".into(),
                    ));
                }
                problem.require_uniform()?;
                cdf(p)
            }
            Variant::MiniBatch(b) => {
                if *b == 0 || *b > n {
                    return Err(Error::BadBatch { b: *b, n });
                }
                problem.require_uniform()?;
                Vec::new()
            }
        };
        let stats = solution_stats(problem)?;
        Ok(SgdSim {
            f_star: problem.value(&stats.x_star),
            x_star: stats.x_star,
            problem: problem.clone(),
            gamma,
            variant,
            cdf,
        })
    }

    pub fn trajectory(&self, x0: &[f64], horizon: usize, seed: u64, id: u64) -> Result<Trajectory> {
        simulate(self, x0, horizon, seed, id)
    }

    pub fn exact(&self, x0: &[f64], horizon: usize, metric: Metric) -> Result<f64> {
        enumerate(self, x0, horizon, metric)
    }

    pub fn monte_carlo(
        &self,
        x0: &[f64],
        horizon: usize,
        metric: Metric,
        seed: u64,
        count: usize,
    ) -> Result<McEstimate> {
        monte_carlo(self, x0, horizon, metric, seed, count)
    }
}

impl Method for SgdSim {
    fn dim(&self) -> usize {
        self.problem.dimension
    }

    fn draws_per_step(&self) -> usize {
        match self.variant {
            Variant::MiniBatch(b) => b,
            _ => 1,
        }
    }

    fn sample(&self, u: &mut dyn FnMut() -> f64) -> Vec<usize> {
        match self.variant {
            Variant::MiniBatch(b) => {
                let mut pool: Vec<usize> = (0..self.problem.n()).collect();
                let mut pick = Vec::with_capacity(b);
                for _ in 0..b {
                    let k = ((u() * pool.len() as f64) as usize).min(pool.len() - 1);
                    pick.push(pool.swap_remove(k));
                }
                pick.sort_unstable();
                pick
            }
            _ => vec![inverse_cdf(&self.cdf, u())],
        }
    }

    fn outcomes(&self) -> u128 {
        match self.variant {
            Variant::MiniBatch(b) => binomial(self.problem.n(), b),
            _ => self.problem.n() as u128,
        }
    }

    fn law(&self) -> Vec<(f64, Vec<usize>)> {
        let n = self.problem.n();
        match &self.variant {
            Variant::Uniform => (0..n).map(|i| (self.problem.weights[i], vec![i])).collect(),
            Variant::NonUniform(p) => (0..n).map(|i| (p[i], vec![i])).collect(),
            Variant::MiniBatch(b) => {
                let all = subsets(n, *b);
                let p = 1.0 / all.len() as f64;
                all.into_iter().map(|s| (p, s)).collect()
            }
        }
    }

    fn step(&self, x: &[f64], choice: &[usize]) -> Vec<f64> {
        let n = self.problem.n() as f64;
        let mut next = x.to_vec();
        for &i in choice {
            let scale = match &self.variant {
                Variant::Uniform => self.gamma,
                Variant::NonUniform(p) => self.gamma / (n * p[i]),
                Variant::MiniBatch(b) => self.gamma / *b as f64,
            };
            for (xk, gk) in next.iter_mut().zip(self.problem.components[i].gradient(x)) {
                *xk -= scale * gk;
            }
        }
        next
    }

    fn gap(&self, x: &[f64]) -> f64 {
        self.problem.value(x) - self.f_star
    }

    fn sq_dist(&self, x: &[f64]) -> f64 {
        sq_norm_diff(x, &self.x_star)
    }

    fn metric(&self, metric: Metric, last: &[f64], avg: &[f64]) -> Result<f64> {
        match metric {
            Metric::AvgFunctionGap => Ok(self.gap(avg)),
            Metric::LastIterateSqDist => Ok(self.sq_dist(last)),
            m => Err(Error::Invalid(format!(
                "metric {} is not defined for SGD",
                m.tag()
            ))),
        }
    }
}

/// One SGD trajectory with step `class.gamma` and horizon `class.horizon`.
pub fn run_sgd(
    problem: &FiniteSumProblem<f64>,
    class: &ProblemClass<f64>,
    x0: &[f64],
    seed: u64,
    variant: Variant,
) -> Result<Trajectory> {
    SgdSim::new(problem, class.gamma, variant)?.trajectory(x0, class.horizon, seed, 0)
}

/// Exact E[metric] over all index sequences.
pub fn exact_expectation_small(
    problem: &FiniteSumProblem<f64>,
    class: &ProblemClass<f64>,
    variant: Variant,
    x0: &[f64],
    metric: Metric,
) -> Result<f64> {
    SgdSim::new(problem, class.gamma, variant)?.exact(x0, class.horizon, metric)
}

/// A component with a closed-form proximal map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProxComponent {
    /// ½xᵀQx + bᵀx + c.
    Quadratic {
        #[serde(rename = "Q")]
        q: Vec<Vec<f64>>,
        b: Vec<f64>,
        c: f64,
    },
    /// Indicator of {x : aᵀx ≤ b}.
    Halfspace { a: Vec<f64>, b: f64 },
    /// Indicator of {lo ≤ x ≤ hi}.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Indicator of {x : Ax = b}, rows of A given.
    Affine { a: Vec<Vec<f64>>, b: Vec<f64> },
    #[serde(other)]
    Unsupported,
}

impl ProxComponent {
    pub fn quadratic(q: &Quadratic<f64>) -> Self {
        ProxComponent::Quadratic {
            q: (0..q.q.rows)
                .map(|i| (0..q.q.cols).map(|j| q.q[(i, j)]).collect())
                .collect(),
            b: q.b.clone(),
            c: q.c,
        }
    }

    pub fn is_indicator(&self) -> bool {
        matches!(
            self,
            ProxComponent::Halfspace { .. }
                | ProxComponent::Box { .. }
                | ProxComponent::Affine { .. }
        )
    }
}

#[derive(Clone, Debug)]
enum Prepared {
    Quad {
        f: Quadratic<f64>,
        resolvent: Mat<f64>,
    },
    Halfspace {
        a: Vec<f64>,
        b: f64,
        nsq: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Affine {
        a: Mat<f64>,
        b: Vec<f64>,
        gram: Mat<f64>,
    },
}

impl Prepared {
    fn new(c: &ProxComponent, gamma: f64, d: usize) -> Result<Self> {
        let dims = |n: usize| {
            if n == d {
                Ok(())
            } else {
                Err(Error::Invalid(format!(
                    "component has dimension {n}, expected {d}"
                )))
            }
        };
        Ok(match c {
            ProxComponent::Quadratic { q, b, c } => {
                dims(b.len())?;
                let q = Mat::from_rows(q);
                dims(q.rows)?;
                let shifted = Mat::identity(d).add(&q.scale(gamma));
                let ldl = LdlFactor::new(&shifted)
                    .map_err(|_| Error::Invalid("I + gamma Q is singular".into()))?;
                let mut resolvent = Mat::zeros(d, d);
                for k in 0..d {
                    let mut e = vec![0.0; d];
                    e[k] = 1.0;
                    for (i, v) in ldl.solve(&e).into_iter().enumerate() {
                        resolvent[(i, k)] = v;
                    }
                }
                Prepared::Quad {
                    f: Quadratic {
                        q,
                        b: b.clone(),
                        c: *c,
                    },
                    resolvent: resolvent.symmetrize(),
                }
            }
            ProxComponent::Halfspace { a, b } => {
                dims(a.len())?;
                let nsq = dot(a, a);
                if nsq == 0.0 {
                    return Err(Error::Invalid("halfspace normal is zero".into()));
                }
                Prepared::Halfspace {
                    a: a.clone(),
                    b: *b,
                    nsq,
                }
            }
            ProxComponent::Box { lo, hi } => {
                dims(lo.len())?;
                dims(hi.len())?;
                if lo.iter().zip(hi).any(|(l, h)| l > h) {
                    return Err(Error::Invalid("empty box".into()));
                }
                Prepared::Box {
                    lo: lo.clone(),
                    hi: hi.clone(),
                }
            }
            ProxComponent::Affine { a, b } => {
                let a = Mat::from_rows(a);
                dims(a.cols)?;
                if a.rows != b.len() {
                    return Err(Error::Invalid("affine set: rows of A and b differ".into()));
                }
                let gram = a.matmul(&a.transpose());
                Prepared::Affine {
                    a,
                    b: b.clone(),
                    gram,
                }
            }
            ProxComponent::Unsupported => return Err(Error::NoProx),
        })
    }

    fn prox(&self, x: &[f64], gamma: f64) -> Vec<f64> {
        match self {
            Prepared::Quad { f, resolvent } => {
                let shifted: Vec<f64> =
                    x.iter().zip(&f.b).map(|(xi, bi)| xi - gamma * bi).collect();
                resolvent.matvec(&shifted)
            }
            Prepared::Halfspace { a, b, nsq } => {
                let excess = (dot(a, x) - b).max(0.0) / nsq;
                x.iter().zip(a).map(|(xi, ai)| xi - excess * ai).collect()
            }
            Prepared::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (l, h))| v.clamp(*l, *h))
                .collect(),
            Prepared::Affine { a, b, gram } => {
                let r: Vec<f64> = a.matvec(x).iter().zip(b).map(|(v, bi)| v - bi).collect();
                match pseudo_solve(gram, &r) {
                    Some(y) => {
                        let corr = a.transpose().matvec(&y);
                        x.iter().zip(corr).map(|(xi, c)| xi - c).collect()
                    }
                    None => vec![f64::NAN; x.len()],
                }
            }
        }
    }

    /// f^γ(x).
    fn envelope(&self, x: &[f64], gamma: f64) -> f64 {
        let p = self.prox(x, gamma);
        let base = match self {
            Prepared::Quad { f, .. } => f.value(&p),
            _ => 0.0,
        };
        base + sq_norm_diff(x, &p) / (2.0 * gamma)
    }
}

/// The stochastic proximal method `x_{t+1} = prox_{γ f_i}(x_t)`.
#[derive(Clone, Debug)]
pub struct SproxSim {
    pub components: Vec<ProxComponent>,
    pub weights: Vec<f64>,
    pub gamma: f64,
    /// Minimizer of F^γ, known when every component is quadratic.
    pub x_star: Option<Vec<f64>>,
    /// inf F^γ, known when every component is quadratic or every component is
    /// an indicator (then 0, assuming the sets intersect).
    pub inf_envelope: Option<f64>,
    prepared: Vec<Prepared>,
    cdf: Vec<f64>,
    dim: usize,
}

impl SproxSim {
    pub fn new(
        components: Vec<ProxComponent>,
        weights: Option<Vec<f64>>,
        gamma: f64,
    ) -> Result<Self> {
        let n = components.len();
        if n == 0 {
            return Err(Error::Invalid("no components".into()));
        }
        if !(gamma > 0.0) {
            return Err(Error::Invalid(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        let weights = weights.unwrap_or_else(|| vec![1.0 / n as f64; n]);
        check_distribution(&weights, n)?;
        let dim = match &components[0] {
            ProxComponent::Quadratic { b, .. } => b.len(),
            ProxComponent::Halfspace { a, .. } => a.len(),
            ProxComponent::Box { lo, .. } => lo.len(),
            ProxComponent::Affine { a, .. } => a.first().map_or(0, |r| r.len()),
            ProxComponent::Unsupported => return Err(Error::NoProx),
        };
        let prepared = components
            .iter()
            .map(|c| Prepared::new(c, gamma, dim))
            .collect::<Result<Vec<_>>>()?;
        let mut sim = SproxSim {
            cdf: cdf(&weights),
            components,
            weights,
            gamma,
            x_star: None,
            inf_envelope: None,
            prepared,
            dim,
        };
        if sim.components.iter().all(|c| c.is_indicator()) {
            sim.inf_envelope = Some(0.0);
        } else if sim.components.iter().all(|c| !c.is_indicator()) {
            let fam = sim.envelope_family()?;
            let stats = solution_stats(&fam)?;
            sim.inf_envelope = Some(fam.value(&stats.x_star));
            sim.x_star = Some(stats.x_star);
        }
        Ok(sim)
    }

    pub fn from_problem(problem: &FiniteSumProblem<f64>, gamma: f64) -> Result<Self> {
        let comps = problem
            .components
            .iter()
            .map(ProxComponent::quadratic)
            .collect();
        SproxSim::new(comps, Some(problem.weights.clone()), gamma)
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn prox(&self, i: usize, x: &[f64]) -> Vec<f64> {
        self.prepared[i].prox(x, self.gamma)
    }

    /// F^γ(x) = Σ w_i f_i^γ(x).
    pub fn envelope_value(&self, x: &[f64]) -> f64 {
        self.prepared
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * p.envelope(x, self.gamma))
            .sum()
    }

    /// Σ w_i dist²(x; C_i), for indicator families.
    pub fn set_distance_sq(&self, x: &[f64]) -> Result<f64> {
        if !self.components.iter().all(|c| c.is_indicator()) {
            return Err(Error::Invalid(
                "set distance needs indicator components".into(),
            ));
        }
        Ok(self
            .prepared
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * sq_norm_diff(x, &p.prox(x, self.gamma)))
            .sum())
    }

    /// Projection onto the intersection of indicator sets by Dykstra's algorithm.
    pub fn project_intersection(&self, x: &[f64]) -> Result<Vec<f64>> {
        if !self.components.iter().all(|c| c.is_indicator()) {
            return Err(Error::Invalid(
                "intersection needs indicator components".into(),
            ));
        }
        let n = self.prepared.len();
        let mut y = x.to_vec();
        let mut incr = vec![vec![0.0; x.len()]; n];
        for _ in 0..100_000 {
            let before = y.clone();
            for (k, p) in self.prepared.iter().enumerate() {
                let z: Vec<f64> = y.iter().zip(&incr[k]).map(|(a, b)| a + b).collect();
                let proj = p.prox(&z, self.gamma);
                incr[k] = z.iter().zip(&proj).map(|(a, b)| a - b).collect();
                y = proj;
            }
            if sq_norm_diff(&y, &before) <= 1e-30 * (1.0 + dot(&y, &y)) {
                break;
            }
        }
        let worst = self
            .prepared
            .iter()
            .map(|p| sq_norm_diff(&y, &p.prox(&y, self.gamma)))
            .fold(0.0, f64::max);
        if !(worst <= 1e-18 * (1.0 + dot(&y, &y))) {
            return Err(Error::Invalid("sets do not intersect".into()));
        }
        Ok(y)
    }

    /// The quadratic envelopes f_i^γ as a finite sum (all components quadratic).
    pub fn envelope_family(&self) -> Result<FiniteSumProblem<f64>> {
        let d = self.dim;
        let mut comps = Vec::new();
        for p in &self.prepared {
            let Prepared::Quad { f, resolvent } = p else {
                return Err(Error::Invalid(
                    "envelope family needs quadratic components".into(),
                ));
            };
            let q = Mat::identity(d)
                .sub(resolvent)
                .scale(1.0 / self.gamma)
                .symmetrize();
            let b = resolvent.matvec(&f.b);
            let c = p.envelope(&vec![0.0; d], self.gamma);
            comps.push(Quadratic { q, b, c });
        }
        FiniteSumProblem::uniform(comps)?.with_weights(self.weights.clone())
    }

    pub fn trajectory(&self, x0: &[f64], horizon: usize, seed: u64, id: u64) -> Result<Trajectory> {
        simulate(self, x0, horizon, seed, id)
    }

    pub fn exact(&self, x0: &[f64], horizon: usize, metric: Metric) -> Result<f64> {
        enumerate(self, x0, horizon, metric)
    }

    pub fn monte_carlo(
        &self,
        x0: &[f64],
        horizon: usize,
        metric: Metric,
        seed: u64,
        count: usize,
    ) -> Result<McEstimate> {
        monte_carlo(self, x0, horizon, metric, seed, count)
    }
}

impl Method for SproxSim {
    fn dim(&self) -> usize {
        self.dim
    }

    fn draws_per_step(&self) -> usize {
        1
    }

    fn sample(&self, u: &mut dyn FnMut() -> f64) -> Vec<usize> {
        vec![inverse_cdf(&self.cdf, u())]
    }

    fn outcomes(&self) -> u128 {
        self.components.len() as u128
    }

    fn law(&self) -> Vec<(f64, Vec<usize>)> {
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| (*w, vec![i]))
            .collect()
    }

    fn step(&self, x: &[f64], choice: &[usize]) -> Vec<f64> {
        self.prox(choice[0], x)
    }

    fn gap(&self, x: &[f64]) -> f64 {
        match self.inf_envelope {
            Some(inf) => self.envelope_value(x) - inf,
            None => f64::NAN,
        }
    }

    fn sq_dist(&self, x: &[f64]) -> f64 {
        self.x_star
            .as_ref()
            .map_or(f64::NAN, |s| sq_norm_diff(x, s))
    }

    fn metric(&self, metric: Metric, last: &[f64], avg: &[f64]) -> Result<f64> {
        match metric {
            Metric::EnvelopeGap => match self.inf_envelope {
                Some(inf) => Ok(self.envelope_value(avg) - inf),
                None => Err(Error::Invalid("infimum of the envelope is unknown".into())),
            },
            Metric::SetDistSq => self.set_distance_sq(avg),
            Metric::LastIterateSqDist => match &self.x_star {
                Some(s) => Ok(sq_norm_diff(last, s)),
                None => Err(Error::Invalid("minimizer is unknown".into())),
            },
            Metric::AvgFunctionGap => Err(Error::Invalid(
                "use the envelope gap for the proximal method".into(),
            )),
        }
    }
}

/// One trajectory of the stochastic proximal method.
pub fn run_sprox(
    components: Vec<ProxComponent>,
    gamma: f64,
    horizon: usize,
    x0: &[f64],
    seed: u64,
) -> Result<Trajectory> {
    SproxSim::new(components, None, gamma)?.trajectory(x0, horizon, seed, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quad1(a: f64, c: f64) -> Quadratic<f64> {
        Quadratic {
            q: Mat::diag(&[a]),
            b: vec![-a * c],
            c: 0.5 * a * c * c,
        }
    }

    #[test]
    fn trajectory_satisfies_the_update_and_average() {
        let p = FiniteSumProblem::two_point(1.0, 0.7);
        let cl = ProblemClass::new(0.0, 1.0, 0.6, 12);
        let tr = run_sgd(&p, &cl, &[1.3], 9, Variant::Uniform).unwrap();
        assert_eq!(tr.horizon(), 12);
        for t in 0..12 {
            let i = tr.indices[t][0];
            let g = p.components[i].gradient(&tr.iterates[t]);
            assert!((tr.iterates[t + 1][0] - (tr.iterates[t][0] - 0.6 * g[0])).abs() <= 1e-12);
        }
        let avg: f64 = tr.iterates[..12].iter().map(|x| x[0]).sum::<f64>() / 12.0;
        assert!((tr.average[0] - avg).abs() <= 1e-12);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let p = FiniteSumProblem::two_point(1.0, 1.0);
        let cl = ProblemClass::new(0.0, 1.0, 0.3, 20);
        let a = run_sgd(&p, &cl, &[0.5], 42, Variant::Uniform).unwrap();
        let b = run_sgd(&p, &cl, &[0.5], 42, Variant::Uniform).unwrap();
        let c = run_sgd(&p, &cl, &[0.5], 43, Variant::Uniform).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.indices, c.indices);
    }

    #[test]
    fn single_component_is_gradient_descent() {
        let p = FiniteSumProblem::uniform(vec![quad1(2.0, 1.0)]).unwrap();
        let cl = ProblemClass::new(0.0, 2.0, 0.25, 5);
        let tr = run_sgd(&p, &cl, &[3.0], 1, Variant::Uniform).unwrap();
        for (t, x) in tr.iterates.iter().enumerate() {
            assert!((x[0] - (1.0 + 2.0 * 0.5f64.powi(t as i32))).abs() < 1e-14);
        }
        let e =
            exact_expectation_small(&p, &cl, Variant::Uniform, &[3.0], Metric::LastIterateSqDist)
                .unwrap();
        assert!((e - tr.sq_dist[5]).abs() < 1e-14);
    }

    #[test]
    fn two_point_walk_at_unit_step_is_centered() {
        let p = FiniteSumProblem::two_point(1.0, 0.5);
        for t in 1..=10 {
            let sim = SgdSim::new(&p, 1.0, Variant::Uniform).unwrap();
            let law = sim.law();
            let mut mean = 0.0;
            // E[x_t] via the outcome tree
            fn walk(
                s: &SgdSim,
                law: &[(f64, Vec<usize>)],
                x: f64,
                d: usize,
                p: f64,
                acc: &mut f64,
            ) {
                if d == 0 {
                    *acc += p * x;
                    return;
                }
                for (w, c) in law {
                    let nx = s.step(&[x], c)[0];
                    assert!((nx.abs() - 0.5).abs() < 1e-15);
                    walk(s, law, nx, d - 1, p * w, acc);
                }
            }
            walk(&sim, &law, 0.0, t, 1.0, &mut mean);
            assert!(mean.abs() < 1e-15);
        }
    }

    #[test]
    fn enumeration_counts_and_caps() {
        let p = FiniteSumProblem::two_point(1.0, 1.0);
        let sim = SgdSim::new(&p, 0.5, Variant::Uniform).unwrap();
        assert_eq!(sim.outcomes().pow(10), 1024);
        assert!(sim.exact(&[1.0], 10, Metric::AvgFunctionGap).is_ok());
        assert!(matches!(
            sim.exact(&[1.0], 20, Metric::AvgFunctionGap),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn monte_carlo_matches_enumeration() {
        let p = FiniteSumProblem::two_point(1.0, 1.0);
        let sim = SgdSim::new(&p, 0.8, Variant::Uniform).unwrap();
        for metric in [Metric::AvgFunctionGap, Metric::LastIterateSqDist] {
            let exact = sim.exact(&[0.4], 5, metric).unwrap();
            let mc = sim.monte_carlo(&[0.4], 5, metric, 7, 200_000).unwrap();
            assert!(
                mc.agrees_with(exact, 4.0),
                "{metric:?}: {} vs {exact} (se {})",
                mc.mean,
                mc.se
            );
        }
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let p = FiniteSumProblem::two_point(1.0, 1.0);
        let sim = SgdSim::new(&p, 0.8, Variant::Uniform).unwrap();
        let a = sim
            .monte_carlo(&[0.4], 7, Metric::AvgFunctionGap, 3, 5000)
            .unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| {
                sim.monte_carlo(&[0.4], 7, Metric::AvgFunctionGap, 3, 5000)
                    .unwrap()
            });
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.se.to_bits(), b.se.to_bits());
    }

    #[test]
    fn nonuniform_and_minibatch_laws() {
        let p = FiniteSumProblem::uniform(vec![quad1(1.0, -1.0), quad1(0.5, 2.0), quad1(0.2, 0.0)])
            .unwrap();
        let nu = SgdSim::new(&p, 0.3, Variant::NonUniform(vec![0.5, 0.3, 0.2])).unwrap();
        let e = nu.exact(&[1.0], 4, Metric::LastIterateSqDist).unwrap();
        let mc = nu
            .monte_carlo(&[1.0], 4, Metric::LastIterateSqDist, 11, 100_000)
            .unwrap();
        assert!(mc.agrees_with(e, 4.0));
        let mb = SgdSim::new(&p, 0.3, Variant::MiniBatch(2)).unwrap();
        assert_eq!(mb.law().len(), 3);
        let e = mb.exact(&[1.0], 4, Metric::AvgFunctionGap).unwrap();
        let mc = mb
            .monte_carlo(&[1.0], 4, Metric::AvgFunctionGap, 11, 100_000)
            .unwrap();
        assert!(mc.agrees_with(e, 4.0));
        // full batch is deterministic gradient descent on the average
        let full = SgdSim::new(&p, 0.3, Variant::MiniBatch(3)).unwrap();
        let tr = full.trajectory(&[1.0], 3, 0, 0).unwrap();
        let mut x = 1.0;
        for t in 0..3 {
            x -= 0.3 * p.gradient(&[x])[0];
            assert!((tr.iterates[t + 1][0] - x).abs() < 1e-14);
        }
    }

    #[test]
    fn bad_variants_are_rejected() {
        let p = FiniteSumProblem::two_point(1.0, 1.0);
        assert!(matches!(
            SgdSim::new(&p, 0.5, Variant::MiniBatch(3)),
            Err(Error::BadBatch { .. })
        ));
        assert!(matches!(
            SgdSim::new(&p, 0.5, Variant::NonUniform(vec![0.9, 0.2])),
            Err(Error::BadDistribution(_))
        ));
        assert!(matches!(
            SgdSim::new(&p, 0.5, Variant::NonUniform(vec![1.0, 0.0])),
            Err(Error::BadDistribution(_))
        ));
    }

    #[test]
    fn trajectory_csv_has_expected_columns() {
        let p = FiniteSumProblem::two_point(1.0, 1.0);
        let tr = run_sgd(
            &p,
            &ProblemClass::new(0.0, 1.0, 0.5, 3),
            &[1.0],
            0,
            Variant::Uniform,
        )
        .unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x1,index,f_gap,sqdist\n"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn halfspace_projection_and_intersection() {
        let sets = vec![
            ProxComponent::Halfspace {
                a: vec![1.0, 0.0],
                b: 0.0,
            },
            ProxComponent::Halfspace {
                a: vec![0.0, 1.0],
                b: 0.0,
            },
        ];
        let sim = SproxSim::new(sets, None, 1.0).unwrap();
        assert_eq!(sim.prox(0, &[2.0, 3.0]), vec![0.0, 3.0]);
        let c = sim.project_intersection(&[2.0, 3.0]).unwrap();
        assert!(c[0].abs() < 1e-12 && c[1].abs() < 1e-12);
        assert!((sim.set_distance_sq(&[2.0, 3.0]).unwrap() - 6.5).abs() < 1e-12);
    }

    #[test]
    fn disjoint_sets_have_no_intersection() {
        let sets = vec![
            ProxComponent::Halfspace {
                a: vec![1.0],
                b: -1.0,
            },
            ProxComponent::Halfspace {
                a: vec![-1.0],
                b: -1.0,
            },
        ];
        let sim = SproxSim::new(sets, None, 1.0).unwrap();
        assert!(sim.project_intersection(&[0.0]).is_err());
    }

    #[test]
    fn box_and_affine_projections() {
        let sim = SproxSim::new(
            vec![
                ProxComponent::Box {
                    lo: vec![0.0, 0.0],
                    hi: vec![1.0, 1.0],
                },
                ProxComponent::Affine {
                    a: vec![vec![1.0, 1.0]],
                    b: vec![1.0],
                },
            ],
            None,
            0.5,
        )
        .unwrap();
        assert_eq!(sim.prox(0, &[2.0, -1.0]), vec![1.0, 0.0]);
        let p = sim.prox(1, &[2.0, 2.0]);
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unsupported_components_have_no_prox() {
        let comps: Vec<ProxComponent> = serde_json::from_str(
            r#"[{"kind": "halfspace", "a": [1.0], "b": 0.0}, {"kind": "huber"}]"#,
        )
        .unwrap();
        assert!(matches!(
            SproxSim::new(comps, None, 1.0),
            Err(Error::NoProx)
        ));
    }

    #[test]
    fn single_quadratic_is_the_proximal_point_method() {
        let tr = run_sprox(
            vec![ProxComponent::quadratic(&quad1(2.0, 1.0))],
            0.5,
            6,
            &[4.0],
            0,
        )
        .unwrap();
        for t in 0..6 {
            // prox of (x−1)² with γ = 1/2 halves the distance to 1
            assert!((tr.iterates[t + 1][0] - 1.0 - (tr.iterates[t][0] - 1.0) / 2.0).abs() < 1e-14);
            assert!(tr.gap[t + 1] < tr.gap[t]);
        }
    }

    #[test]
    fn quadratic_envelope_matches_the_definition() {
        let q = Quadratic {
            q: Mat::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]),
            b: vec![0.3, -0.7],
            c: 0.2,
        };
        let sim = SproxSim::new(vec![ProxComponent::quadratic(&q)], None, 0.7).unwrap();
        let fam = sim.envelope_family().unwrap();
        let x = [1.1, -0.4];
        let p = sim.prox(0, &x);
        let direct = q.value(&p) + sq_norm_diff(&x, &p) / 1.4;
        assert!((fam.components[0].value(&x) - direct).abs() < 1e-12);
        // the prox is the stationary point of f(y) + ‖y − x‖²/(2γ)
        let g = q.gradient(&p);
        for k in 0..2 {
            assert!((g[k] + (p[k] - x[k]) / 0.7).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn sprox_equals_sgd_on_envelopes(
            a in proptest::collection::vec(0.0f64..3.0, 3),
            c in proptest::collection::vec(-2.0f64..2.0, 3),
            gamma in 0.05f64..5.0,
            x0 in -3.0f64..3.0,
            seed in 0u64..1000,
        ) {
            let comps: Vec<Quadratic<f64>> = a.iter().zip(&c).map(|(a, c)| quad1(*a + 0.01, *c)).collect();
            let p = FiniteSumProblem::uniform(comps).unwrap();
            let sp = SproxSim::from_problem(&p, gamma).unwrap();
            let sgd = SgdSim::new(&sp.envelope_family().unwrap(), gamma, Variant::Uniform).unwrap();
            let t1 = sp.trajectory(&[x0], 15, seed, 0).unwrap();
            let t2 = sgd.trajectory(&[x0], 15, seed, 0).unwrap();
            prop_assert_eq!(&t1.indices, &t2.indices);
            for (u, v) in t1.iterates.iter().zip(&t2.iterates) {
                prop_assert!((u[0] - v[0]).abs() <= 1e-10);
            }
        }

        #[test]
        fn sampling_follows_the_weights(w in proptest::collection::vec(0.0f64..1.0, 2..5), u in 0.0f64..1.0) {
            prop_assume!(w.iter().sum::<f64>() > 1e-6);
            let c = cdf(&w);
            let i = inverse_cdf(&c, u);
            prop_assert!(w[i] > 0.0);
            let total = c[c.len() - 1];
            let lo = if i == 0 { 0.0 } else { c[i - 1] };
            prop_assert!(u * total >= lo && u * total < c[i]);
        }
    }
}
