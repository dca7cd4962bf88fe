//! Gram-lifted performance estimation for one SGD step and the joint programs
//! over Lyapunov parameters.
//!
//! Coordinates of the Gram matrix `G_t = P_tᵀP_t` (dimension 2m) are
//! `g_t^{(1..m)}, g_*^{(1..m−1)}, x_t − x_*`; the last optimal gradient is
//! eliminated as `g_*^{(m)} = −Σ g_*^{(i)}`. Function values are ordered
//! `f_t^{(1..m)}, f_*^{(1..m)}`.

use crate::error::{Error, Result};
use crate::linalg::{sym_eig, Mat};
use crate::lyapunov::LyapunovParams;
use crate::problem::ProblemClass;
use crate::sdp::{
    solve_f64, write_sdpa, BlockSdp, LinExpr, MatrixVar, Precision, ScalarVar, Sense, SolveOptions,
    SolveOutcome, SolveStatus,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Selector vectors of the Gram parametrization.
#[derive(Clone, Debug, PartialEq)]
pub struct GramBasis {
    pub m: usize,
}

impl GramBasis {
    pub fn new(m: usize) -> Result<Self> {
        if m < 1 {
            return Err(Error::Invalid("at least one component is needed".into()));
        }
        Ok(GramBasis { m })
    }

    pub fn dim(&self) -> usize {
        2 * self.m
    }

    /// `p_k` for k = 1..=2m+1.
    pub fn p(&self, k: usize) -> Vec<f64> {
        let m = self.m;
        let mut v = vec![0.0; 2 * m];
        match k {
            k if (1..=m).contains(&k) => v[k - 1] = 1.0,
            k if k > m && k < 2 * m => v[k - 1] = 1.0,
            k if k == 2 * m => {
                for i in 1..m {
                    v[m + i - 1] = -1.0;
                }
            }
            k if k == 2 * m + 1 => v[2 * m - 1] = 1.0,
            _ => panic!("selector p_{k} out of range"),
        }
        v
    }

    /// Gradient of component `i` (1-based) at the iterate.
    pub fn g_t(&self, i: usize) -> Vec<f64> {
        self.p(i)
    }

    /// Gradient of component `i` (1-based) at the minimizer.
    pub fn g_star(&self, i: usize) -> Vec<f64> {
        self.p(self.m + i)
    }

    pub fn x(&self) -> Vec<f64> {
        self.p(2 * self.m + 1)
    }

    /// `f_k` for k = 1..=2m.
    pub fn f(&self, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; 2 * self.m];
        v[k - 1] = 1.0;
        v
    }
}

fn sym_outer(u: &[f64], v: &[f64]) -> Mat<f64> {
    Mat::outer(u, v).symmetrize()
}

fn sub(u: &[f64], v: &[f64]) -> Vec<f64> {
    u.iter().zip(v).map(|(a, b)| a - b).collect()
}

fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(xi, yi)| a * xi + yi).collect()
}

/// Point of the interpolation set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Point {
    Iterate,
    Optimum,
}

/// `lin·F + ⟨quad, G⟩ ≤ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationConstraint {
    pub component: usize,
    pub pair: (Point, Point),
    pub quad: Mat<f64>,
    pub lin: Vec<f64>,
}

impl InterpolationConstraint {
    pub fn evaluate(&self, g: &Mat<f64>, f: &[f64]) -> f64 {
        self.quad.dot(g) + self.lin.iter().zip(f).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Interpolation inequality of F_{μ,L} between `pair.0 = i` and `pair.1 = j`
/// for component `component` (1-based), written as
/// `f_j − f_i + ⟨g_j, x_i − x_j⟩ + (1/(2(1−μ/L)))(…) ≤ 0`.
pub fn build_interpolation_constraint(
    mu: f64,
    l: f64,
    basis: &GramBasis,
    component: usize,
    pair: (Point, Point),
) -> Result<InterpolationConstraint> {
    if !(mu >= 0.0 && mu < l) {
        return Err(if mu == l {
            Error::DegenerateClass
        } else {
            Error::Invalid(format!("need 0 <= mu < L, got {mu}, {l}"))
        });
    }
    let n = basis.dim();
    if pair.0 == pair.1 {
        return Ok(InterpolationConstraint {
            component,
            pair,
            quad: Mat::zeros(n, n),
            lin: vec![0.0; n],
        });
    }
    let i = component;
    let (gt, gs, x) = (basis.g_t(i), basis.g_star(i), basis.x());
    let dg = sub(&gt, &gs);
    let k = 1.0 / (2.0 * (l - mu));
    let mut quad = Mat::outer(&dg, &dg)
        .scale(k)
        .add(&Mat::outer(&x, &x).scale(mu * l * k));
    quad = quad.sub(&sym_outer(&dg, &x).scale(mu / (l - mu)));
    let (ft, fs) = (basis.f(i), basis.f(basis.m + i));
    let (inner, lin) = match pair {
        (Point::Iterate, Point::Optimum) => (sym_outer(&gs, &x), sub(&fs, &ft)),
        _ => (sym_outer(&gt, &x).scale(-1.0), sub(&ft, &fs)),
    };
    Ok(InterpolationConstraint {
        component,
        pair,
        quad: quad.add(&inner),
        lin,
    })
}

/// One step of the Lyapunov decrease: `E_{t+1} − E_t = ⟨Δ_t, G⟩ + Ã·F`.
#[derive(Clone, Debug)]
pub struct PepStepProgram {
    pub basis: GramBasis,
    pub t: usize,
    pub gamma: f64,
    pub mu: f64,
    pub l: f64,
    pub a_t: f64,
    pub a_next: f64,
    pub e_t: f64,
    pub rho: f64,
    pub delta: Mat<f64>,
    pub delta_f: Vec<f64>,
    /// Constraints for the pairs (t, *), one per component.
    pub a_ts: Vec<InterpolationConstraint>,
    /// Constraints for the pairs (*, t).
    pub a_st: Vec<InterpolationConstraint>,
}

/// Coefficient matrices of a_{t+1}, a_t and e_t in Δ_t, and the vector multiplying ρ in Ã.
pub fn step_coefficients(
    basis: &GramBasis,
    gamma: f64,
) -> (Mat<f64>, Mat<f64>, Mat<f64>, Vec<f64>) {
    let m = basis.m;
    let n = basis.dim();
    let x = basis.x();
    let inv_m = 1.0 / m as f64;
    let mut d_next = Mat::zeros(n, n);
    let mut d_e = Mat::zeros(n, n);
    let mut f_rho = vec![0.0; n];
    for i in 1..=m {
        let step = axpy(-gamma, &basis.g_t(i), &x);
        d_next = d_next.add(&Mat::outer(&step, &step).scale(inv_m));
        let gs = basis.g_star(i);
        d_e = d_e.add(&Mat::outer(&gs, &gs).scale(inv_m));
        f_rho = axpy(inv_m, &sub(&basis.f(i), &basis.f(m + i)), &f_rho);
    }
    (d_next, Mat::outer(&x, &x), d_e, f_rho)
}

impl PepStepProgram {
    pub fn new(
        class: &ProblemClass<f64>,
        t: usize,
        a_t: f64,
        a_next: f64,
        e_t: f64,
        rho: f64,
    ) -> Result<Self> {
        let basis = GramBasis::new(class.m)?;
        let (d_next, d_cur, d_e, f_rho) = step_coefficients(&basis, class.gamma);
        let delta = d_next
            .scale(a_next)
            .sub(&d_cur.scale(a_t))
            .sub(&d_e.scale(e_t));
        let delta_f = f_rho.iter().map(|v| v * rho).collect();
        let mut a_ts = Vec::new();
        let mut a_st = Vec::new();
        for i in 1..=class.m {
            a_ts.push(build_interpolation_constraint(
                class.mu,
                class.l,
                &basis,
                i,
                (Point::Iterate, Point::Optimum),
            )?);
            a_st.push(build_interpolation_constraint(
                class.mu,
                class.l,
                &basis,
                i,
                (Point::Optimum, Point::Iterate),
            )?);
        }
        Ok(PepStepProgram {
            basis,
            t,
            gamma: class.gamma,
            mu: class.mu,
            l: class.l,
            a_t,
            a_next,
            e_t,
            rho,
            delta,
            delta_f,
            a_ts,
            a_st,
        })
    }

    /// The step `t` of a parameter set.
    pub fn from_params(
        class: &ProblemClass<f64>,
        p: &LyapunovParams<f64>,
        t: usize,
    ) -> Result<Self> {
        if t >= p.horizon() {
            return Err(Error::Invalid(format!(
                "step {t} outside horizon {}",
                p.horizon()
            )));
        }
        Self::new(class, t, p.a[t], p.a[t + 1], p.e[t], p.rho)
    }

    /// `⟨Δ_t, G⟩ + Ã·F`.
    pub fn derivative(&self, g: &Mat<f64>, f: &[f64]) -> f64 {
        self.delta.dot(g) + self.delta_f.iter().zip(f).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Multipliers of one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMultipliers {
    pub lambda_ts: Vec<f64>,
    pub lambda_st: Vec<f64>,
    /// Row-major Λ_t.
    pub big_lambda: Vec<Vec<f64>>,
}

impl StepMultipliers {
    pub fn lambda_matrix(&self) -> Mat<f64> {
        Mat::from_rows(&self.big_lambda)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Achieved {
    /// Normalized worst-case increase of one step (0 when the step decreases).
    StepIncrease,
    RhoOpt,
    A0Opt,
    AvgEOpt,
    SumEOpt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PepCertificate {
    pub achieved: Achieved,
    pub objective: f64,
    pub rho: f64,
    pub a: Vec<f64>,
    pub e: Vec<f64>,
    pub steps: Vec<StepMultipliers>,
    pub duality_gap: f64,
    pub relative_gap: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Achieved relative gap above the instability threshold.
    pub unstable: bool,
    /// True when an e-cap constraint is active at the solution.
    pub e_cap_active: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PepOptions {
    pub solver: SolveOptions,
    /// Upper bound on every e_t, as a multiple of γ². `None` leaves e unbounded.
    pub e_cap: Option<f64>,
    /// Optional weight of Σ e_t added to the bias objectives. Zero by default.
    pub e_penalty: f64,
    /// Relative gap above which a solution is flagged unstable.
    pub instability_gap: f64,
    /// Step feasibility threshold on the normalized increase.
    pub feasibility_tol: f64,
}

impl Default for PepOptions {
    fn default() -> Self {
        PepOptions {
            solver: SolveOptions {
                precision: Precision::DoubleDouble,
                abs_gap: 1e-8,
                ..SolveOptions::default()
            },
            e_cap: None,
            e_penalty: 0.0,
            instability_gap: 1e-4,
            feasibility_tol: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Fix {
    Free,
    Value(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BiasObjective {
    MaximizeRho,
    MinimizeA0,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarianceObjective {
    MinimizeAvgE,
    MinimizeSumE,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum JointObjective {
    MaxRho,
    MinA0,
    MinAvgE,
    MinSumE,
}

/// Joint program over (ρ, a, e) and the per-step dual variables.
#[derive(Clone, Debug)]
pub struct JointProgram {
    pub sdp: BlockSdp<f64>,
    pub class: ProblemClass<f64>,
    rho: ScalarVar,
    a: Vec<ScalarVar>,
    e: Vec<ScalarVar>,
    e_slack: Vec<ScalarVar>,
    lam_ts: Vec<Vec<ScalarVar>>,
    lam_st: Vec<Vec<ScalarVar>>,
    big: Vec<MatrixVar>,
    objective: JointObjective,
}

fn build_joint(
    class: &ProblemClass<f64>,
    rho_fix: Fix,
    a0_fix: Fix,
    at_fix: Fix,
    objective: JointObjective,
    e_cap: Option<f64>,
    e_penalty: f64,
) -> Result<JointProgram> {
    class.validate()?;
    if class.mu >= class.l {
        return Err(Error::DegenerateClass);
    }
    if class.m < 2 {
        return Err(Error::Invalid("joint programs need m >= 2".into()));
    }
    let basis = GramBasis::new(class.m)?;
    let t_n = class.horizon;
    let m = class.m;
    let n = basis.dim();
    let sense = match objective {
        JointObjective::MaxRho => Sense::Maximize,
        _ => Sense::Minimize,
    };
    let mut sdp = BlockSdp::<f64>::new(sense);
    let rho = sdp.scalar("rho");
    let a: Vec<ScalarVar> = (0..=t_n).map(|t| sdp.scalar(&format!("a_{t}"))).collect();
    let e: Vec<ScalarVar> = (0..t_n).map(|t| sdp.scalar(&format!("e_{t}"))).collect();
    let e_slack: Vec<ScalarVar> = match e_cap {
        Some(_) => (0..t_n)
            .map(|t| sdp.scalar(&format!("e_slack_{t}")))
            .collect(),
        None => Vec::new(),
    };
    let mut lam_ts = Vec::new();
    let mut lam_st = Vec::new();
    for t in 0..t_n {
        lam_ts.push(
            (1..=m)
                .map(|i| sdp.scalar(&format!("lambda_ts_{t}_{i}")))
                .collect::<Vec<_>>(),
        );
        lam_st.push(
            (1..=m)
                .map(|i| sdp.scalar(&format!("lambda_st_{t}_{i}")))
                .collect::<Vec<_>>(),
        );
    }
    let big: Vec<MatrixVar> = (0..t_n)
        .map(|t| sdp.psd(&format!("Lambda_{t}"), n))
        .collect();

    let (d_next, d_cur, d_e, _) = step_coefficients(&basis, class.gamma);
    let cons_ts: Vec<Mat<f64>> = (1..=m)
        .map(|i| {
            build_interpolation_constraint(
                class.mu,
                class.l,
                &basis,
                i,
                (Point::Iterate, Point::Optimum),
            )
            .map(|c| c.quad)
        })
        .collect::<Result<_>>()?;
    let cons_st: Vec<Mat<f64>> = (1..=m)
        .map(|i| {
            build_interpolation_constraint(
                class.mu,
                class.l,
                &basis,
                i,
                (Point::Optimum, Point::Iterate),
            )
            .map(|c| c.quad)
        })
        .collect::<Result<_>>()?;

    for t in 0..t_n {
        // Λ_t + Δ_t − Σ λ A = 0, entrywise on the upper triangle
        for j in 0..n {
            for k in j..n {
                let mut ex = LinExpr::new()
                    .matrix_entry(big[t], j, k, 1.0)
                    .scalar(a[t + 1], d_next[(j, k)])
                    .scalar(a[t], -d_cur[(j, k)])
                    .scalar(e[t], -d_e[(j, k)]);
                for i in 0..m {
                    ex = ex
                        .scalar(lam_ts[t][i], -cons_ts[i][(j, k)])
                        .scalar(lam_st[t][i], -cons_st[i][(j, k)]);
                }
                sdp.constrain(&format!("gram_{t}_{j}_{k}"), ex, 0.0);
            }
        }
        // function coefficients: λ_{*,t} − λ_{t,*} = ρ/m
        for i in 0..m {
            let ex = LinExpr::new()
                .scalar(lam_st[t][i], 1.0)
                .scalar(lam_ts[t][i], -1.0)
                .scalar(rho, -1.0 / m as f64);
            sdp.constrain(&format!("func_{t}_{}", i + 1), ex, 0.0);
        }
        if let Some(cap) = e_cap {
            let ex = LinExpr::new().scalar(e[t], 1.0).scalar(e_slack[t], 1.0);
            sdp.constrain(&format!("e_cap_{t}"), ex, cap * class.gamma * class.gamma);
        }
    }
    if let Fix::Value(v) = rho_fix {
        sdp.constrain("rho_fixed", LinExpr::new().scalar(rho, 1.0), v);
    }
    if let Fix::Value(v) = a0_fix {
        sdp.constrain("a0_fixed", LinExpr::new().scalar(a[0], 1.0), v);
    }
    if let Fix::Value(v) = at_fix {
        sdp.constrain("aT_fixed", LinExpr::new().scalar(a[t_n], 1.0), v);
    }
    let obj = match objective {
        JointObjective::MaxRho => e.iter().fold(LinExpr::new().scalar(rho, 1.0), |ex, v| {
            ex.scalar(*v, -e_penalty)
        }),
        JointObjective::MinA0 => e.iter().fold(LinExpr::new().scalar(a[0], 1.0), |ex, v| {
            ex.scalar(*v, e_penalty)
        }),
        JointObjective::MinAvgE => e
            .iter()
            .fold(LinExpr::new(), |ex, v| ex.scalar(*v, 1.0 / t_n as f64)),
        JointObjective::MinSumE => e.iter().fold(LinExpr::new(), |ex, v| ex.scalar(*v, 1.0)),
    };
    sdp.set_objective(obj);
    Ok(JointProgram {
        sdp,
        class: class.clone(),
        rho,
        a,
        e,
        e_slack,
        lam_ts,
        lam_st,
        big,
        objective,
    })
}

impl JointProgram {
    pub fn export_sdpa(&self, path: &Path) -> Result<()> {
        write_sdpa(&self.sdp, path)
    }

    pub fn solve(&self, opts: &PepOptions) -> Result<PepCertificate> {
        let sol = solve_f64(&self.sdp, &opts.solver)?;
        let out = &sol.outcome;
        match out.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => {
                return Err(Error::Infeasible(format!(
                    "joint program for gamma = {}, T = {} has no Lyapunov parameters",
                    self.class.gamma, self.class.horizon
                )))
            }
            SolveStatus::MaxIter | SolveStatus::NumericalTrouble if accept_stalled(out, opts) => {}
            s => return Err(Error::SolverFailure(s)),
        }
        let steps = (0..self.class.horizon)
            .map(|t| {
                let lam = sol.matrix(self.big[t]);
                StepMultipliers {
                    lambda_ts: self.lam_ts[t].iter().map(|v| sol.scalar(*v)).collect(),
                    lambda_st: self.lam_st[t].iter().map(|v| sol.scalar(*v)).collect(),
                    big_lambda: (0..lam.rows)
                        .map(|i| (0..lam.cols).map(|j| lam[(i, j)]).collect())
                        .collect(),
                }
            })
            .collect();
        let e: Vec<f64> = self.e.iter().map(|v| sol.scalar(*v)).collect();
        let cap_active = match opts.e_cap {
            Some(cap) => {
                let bound = cap * self.class.gamma * self.class.gamma;
                self.e_slack.iter().any(|v| sol.scalar(*v) <= 1e-6 * bound)
            }
            None => false,
        };
        let achieved = match self.objective {
            JointObjective::MaxRho => Achieved::RhoOpt,
            JointObjective::MinA0 => Achieved::A0Opt,
            JointObjective::MinAvgE => Achieved::AvgEOpt,
            JointObjective::MinSumE => Achieved::SumEOpt,
        };
        Ok(PepCertificate {
            achieved,
            objective: out.primal_objective,
            rho: sol.scalar(self.rho),
            a: self.a.iter().map(|v| sol.scalar(*v)).collect(),
            e,
            steps,
            duality_gap: out.gap,
            relative_gap: out.relative_gap,
            status: out.status,
            iterations: out.iterations,
            unstable: out.relative_gap > opts.instability_gap,
            e_cap_active: cap_active,
        })
    }
}

/// A run that stopped short is still a valid certificate when its best iterate
/// is primal feasible; its gap bounds the distance to the optimum.
fn accept_stalled(out: &SolveOutcome, opts: &PepOptions) -> bool {
    out.primal_residual <= opts.solver.feasibility
        && out.relative_gap.is_finite()
        && out.dual_residual.is_finite()
}

/// Joint bias program: maximize ρ with a₀ = 1, or minimize a₀ with a_T = 1 (and ρ = 0).
pub fn joint_bias_program(
    class: &ProblemClass<f64>,
    objective: BiasObjective,
    opts: &PepOptions,
) -> Result<JointProgram> {
    class.require_stable_step()?;
    let (cap, pen) = (opts.e_cap, opts.e_penalty);
    match objective {
        BiasObjective::MaximizeRho => build_joint(
            class,
            Fix::Free,
            Fix::Value(1.0),
            Fix::Free,
            JointObjective::MaxRho,
            cap,
            pen,
        ),
        BiasObjective::MinimizeA0 => build_joint(
            class,
            Fix::Value(0.0),
            Fix::Free,
            Fix::Value(1.0),
            JointObjective::MinA0,
            cap,
            pen,
        ),
    }
}

pub fn solve_optimal_bias(
    class: &ProblemClass<f64>,
    objective: BiasObjective,
    opts: &PepOptions,
) -> Result<PepCertificate> {
    joint_bias_program(class, objective, opts)?.solve(opts)
}

/// Variance program with the bias fixed: ρ = `fixed_bias` with a₀ = 1 for
/// `MinimizeAvgE`, a₀ = `fixed_bias` with a_T = 1 and ρ = 0 for `MinimizeSumE`.
pub fn joint_variance_program(
    class: &ProblemClass<f64>,
    fixed_bias: f64,
    objective: VarianceObjective,
    e_cap: Option<f64>,
) -> Result<JointProgram> {
    class.require_stable_step()?;
    match objective {
        VarianceObjective::MinimizeAvgE => build_joint(
            class,
            Fix::Value(fixed_bias),
            Fix::Value(1.0),
            Fix::Free,
            JointObjective::MinAvgE,
            e_cap,
            0.0,
        ),
        VarianceObjective::MinimizeSumE => build_joint(
            class,
            Fix::Value(0.0),
            Fix::Value(fixed_bias),
            Fix::Value(1.0),
            JointObjective::MinSumE,
            e_cap,
            0.0,
        ),
    }
}

/// Minimized variance constant under a fixed bias. A solution whose e-cap is
/// active is reported as infeasible: no finite e achieves the bias within the cap.
pub fn solve_optimal_variance(
    class: &ProblemClass<f64>,
    fixed_bias: f64,
    objective: VarianceObjective,
    opts: &PepOptions,
) -> Result<PepCertificate> {
    let cert = joint_variance_program(class, fixed_bias, objective, opts.e_cap)?.solve(opts)?;
    if cert.e_cap_active {
        return Err(Error::Infeasible(format!(
            "fixed bias {fixed_bias} needs e beyond the cap {:e}·gamma^2",
            opts.e_cap.unwrap_or(f64::INFINITY)
        )));
    }
    Ok(cert)
}

/// Worst normalized increase of one step: `min s` such that
/// `Σλ A − Δ_t + s·I ⪰ 0` with the function equality, i.e. the supremum of
/// the primal over `Tr(G) ≤ 1`. The step decreases iff the value is ≤ tol.
pub fn solve_step_feasibility(step: &PepStepProgram, opts: &PepOptions) -> Result<PepCertificate> {
    let m = step.basis.m;
    let n = step.basis.dim();
    let mut sdp = BlockSdp::<f64>::new(Sense::Minimize);
    let s = sdp.scalar("s");
    let lts: Vec<ScalarVar> = (1..=m)
        .map(|i| sdp.scalar(&format!("lambda_ts_{i}")))
        .collect();
    let lst: Vec<ScalarVar> = (1..=m)
        .map(|i| sdp.scalar(&format!("lambda_st_{i}")))
        .collect();
    let big = sdp.psd("Lambda", n);
    for j in 0..n {
        for k in j..n {
            let mut ex = LinExpr::new().matrix_entry(big, j, k, 1.0);
            if j == k {
                ex = ex.scalar(s, -1.0);
            }
            for i in 0..m {
                ex = ex
                    .scalar(lts[i], -step.a_ts[i].quad[(j, k)])
                    .scalar(lst[i], -step.a_st[i].quad[(j, k)]);
            }
            sdp.constrain(&format!("gram_{j}_{k}"), ex, -step.delta[(j, k)]);
        }
    }
    for i in 0..m {
        // −Ã + Σ λ lin = 0; entry f_i reads −ρ/m − λ_ts + λ_st = 0
        let ex = LinExpr::new().scalar(lst[i], 1.0).scalar(lts[i], -1.0);
        sdp.constrain(&format!("func_{}", i + 1), ex, step.delta_f[i]);
    }
    sdp.set_objective(LinExpr::new().scalar(s, 1.0));
    let sol = solve_f64(&sdp, &opts.solver)?;
    if sol.outcome.status != SolveStatus::Optimal {
        return Err(Error::SolverFailure(sol.outcome.status));
    }
    let value = sol.scalar(s);
    // Λ − s·I stays PSD for s ≤ 0 and matches Δ + Λ = Σ λ A exactly
    let lam = sol.matrix(big).sub(&Mat::identity(n).scale(value.min(0.0)));
    let cert = PepCertificate {
        achieved: Achieved::StepIncrease,
        objective: value,
        rho: step.rho,
        a: vec![step.a_t, step.a_next],
        e: vec![step.e_t],
        steps: vec![StepMultipliers {
            lambda_ts: lts.iter().map(|v| sol.scalar(*v)).collect(),
            lambda_st: lst.iter().map(|v| sol.scalar(*v)).collect(),
            big_lambda: (0..n)
                .map(|i| (0..n).map(|j| lam[(i, j)]).collect())
                .collect(),
        }],
        duality_gap: sol.outcome.gap,
        relative_gap: sol.outcome.relative_gap,
        status: sol.outcome.status,
        iterations: sol.outcome.iterations,
        unstable: sol.outcome.relative_gap > opts.instability_gap,
        e_cap_active: false,
    };
    let scale = 1.0 + step.delta.max_abs();
    if value > opts.feasibility_tol * scale {
        return Err(Error::Infeasible(format!(
            "step {} increases the energy: normalized worst case {value:e}",
            step.t
        )));
    }
    Ok(cert)
}

/// A weighted sum of interpolation inequalities and squares reproducing `E_{t+1} − E_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecreaseProof {
    /// (multiplier, constraint) pairs.
    pub terms: Vec<(f64, InterpolationConstraint)>,
    /// `R` with `Λ_t = RᵀR`; each row gives one square `‖P_t r‖²`.
    pub factor: Mat<f64>,
    /// Largest coefficient mismatch of the identity `Δ_t + Λ_t = Σ λ A` and its function part.
    pub residual: f64,
}

impl DecreaseProof {
    /// `Σ λ·c(G, F) − ‖R‖²_G`: an upper bound on the Lyapunov derivative that
    /// coincides with it for every (G, F) when the residual vanishes.
    pub fn reconstruct(&self, g: &Mat<f64>, f: &[f64]) -> f64 {
        let lin: f64 = self.terms.iter().map(|(w, c)| w * c.evaluate(g, f)).sum();
        let sq = self.factor.transpose().matmul(&self.factor).dot(g);
        lin - sq
    }
}

/// Decomposes the step derivative using the multipliers of step `step.t` in `cert`.
pub fn extract_decrease_proof(
    cert: &PepCertificate,
    step: &PepStepProgram,
) -> Result<DecreaseProof> {
    let idx = if cert.achieved == Achieved::StepIncrease {
        0
    } else {
        step.t
    };
    let mult = cert
        .steps
        .get(idx)
        .ok_or_else(|| Error::Invalid(format!("certificate has no step {}", step.t)))?;
    let lam = mult.lambda_matrix();
    let n = step.basis.dim();
    let (vals, vecs) = sym_eig(&lam);
    let scale = 1.0 + lam.max_abs();
    if vals.iter().any(|v| *v < -1e-9 * scale)
        || mult
            .lambda_ts
            .iter()
            .chain(&mult.lambda_st)
            .any(|v| *v < -1e-9)
    {
        return Err(Error::NotFeasible);
    }
    let mut factor = Mat::zeros(n, n);
    for (k, v) in vals.iter().enumerate() {
        let r = v.max(0.0).sqrt();
        for j in 0..n {
            factor[(k, j)] = r * vecs[(j, k)];
        }
    }
    let mut terms = Vec::new();
    let mut combo = Mat::zeros(n, n);
    let mut combo_f = vec![0.0; n];
    for (i, c) in step.a_ts.iter().enumerate() {
        terms.push((mult.lambda_ts[i].max(0.0), c.clone()));
    }
    for (i, c) in step.a_st.iter().enumerate() {
        terms.push((mult.lambda_st[i].max(0.0), c.clone()));
    }
    for (w, c) in &terms {
        combo = combo.add(&c.quad.scale(*w));
        combo_f = axpy(*w, &c.lin, &combo_f);
    }
    let recon = factor.transpose().matmul(&factor);
    let mat_res = step.delta.add(&recon).sub(&combo).max_abs();
    let f_res = step
        .delta_f
        .iter()
        .zip(&combo_f)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let residual = mat_res.max(f_res);
    if residual > 1e-7 * (1.0 + step.delta.max_abs()) {
        return Err(Error::NotFeasible);
    }
    Ok(DecreaseProof {
        terms,
        factor,
        residual,
    })
}

/// Gram lifting of concrete iterate data: gradients of each component at the
/// iterate and at the minimizer, the displacement `x_t − x_*` and function values.
pub fn lift(
    grads_t: &[Vec<f64>],
    grads_star: &[Vec<f64>],
    x_minus_star: &[f64],
    f_t: &[f64],
    f_star: &[f64],
) -> (Mat<f64>, Vec<f64>) {
    let m = grads_t.len();
    let d = x_minus_star.len();
    let mut p = Mat::zeros(d, 2 * m);
    for k in 0..d {
        for i in 0..m {
            p[(k, i)] = grads_t[i][k];
        }
        for i in 0..m - 1 {
            p[(k, m + i)] = grads_star[i][k];
        }
        p[(k, 2 * m - 1)] = x_minus_star[k];
    }
    let g = p.transpose().matmul(&p);
    let mut f = f_t.to_vec();
    f.extend_from_slice(f_star);
    (g, f)
}

/// One point of a one-sided probe toward a singular step-size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub k: u32,
    pub gamma: f64,
    pub value: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub points: Vec<ProbePoint>,
    /// Values strictly increase toward the singularity.
    pub increasing: bool,
    /// Some value at least doubles its predecessor.
    pub doubling: bool,
}

/// Solves the variance program at γ = singular ± 2⁻ᵏ·scale for the given k.
///
/// `fixed_bias` maps the probed class to the imposed bias value.
pub fn singularity_probe<F>(
    base: &ProblemClass<f64>,
    singular_gamma: f64,
    side: f64,
    ks: &[u32],
    objective: VarianceObjective,
    fixed_bias: F,
    opts: &PepOptions,
) -> ProbeReport
where
    F: Fn(&ProblemClass<f64>) -> Result<f64> + Sync,
{
    let points: Vec<ProbePoint> = ks
        .par_iter()
        .map(|&k| {
            let gamma = singular_gamma + side * singular_gamma * 2f64.powi(-(k as i32));
            let mut class = base.clone();
            class.gamma = gamma;
            let res =
                fixed_bias(&class).and_then(|b| solve_optimal_variance(&class, b, objective, opts));
            match res {
                Ok(c) => ProbePoint {
                    k,
                    gamma,
                    value: Some(c.objective),
                    status: format!("{:?}", c.status),
                },
                Err(e) => ProbePoint {
                    k,
                    gamma,
                    value: None,
                    status: e.to_string(),
                },
            }
        })
        .collect();
    let vals: Vec<Option<f64>> = points.iter().map(|p| p.value).collect();
    let increasing = vals
        .windows(2)
        .all(|w| matches!(w, [Some(a), Some(b)] if b > a));
    let doubling = vals
        .windows(2)
        .any(|w| matches!(w, [Some(a), Some(b)] if *b >= 2.0 * a));
    ProbeReport {
        points,
        increasing,
        doubling,
    }
}

/// Interpolation residuals of a lifted (G, F) against every constraint of a class.
pub fn max_interpolation_violation(
    class: &ProblemClass<f64>,
    g: &Mat<f64>,
    f: &[f64],
) -> Result<f64> {
    let basis = GramBasis::new(class.m)?;
    let mut worst = f64::NEG_INFINITY;
    for i in 1..=class.m {
        for pair in [
            (Point::Iterate, Point::Optimum),
            (Point::Optimum, Point::Iterate),
        ] {
            worst = worst.max(
                build_interpolation_constraint(class.mu, class.l, &basis, i, pair)?.evaluate(g, f),
            );
        }
    }
    Ok(worst)
}
