//! Single-shot subcommands.

use crate::config::Params;
use crate::experiments::halfspace_pair;
use lyapsgd::bounds::{
    bound, certify_rho_upper_bound, e_bar_theory, rho_theory, write_bound_csv, BoundRecord, Metric,
};
use lyapsgd::lyapunov::{
    check_conditions, phi_opt, recipe_convex, recipe_for, LyapunovParams, Tolerance,
};
use lyapsgd::pep::{
    joint_bias_program, solve_optimal_bias, solve_optimal_variance, BiasObjective,
    VarianceObjective,
};
use lyapsgd::problem::{FiniteSumProblem, ProblemClass};
use lyapsgd::sim::{write_mc_csv, ProxComponent, SgdSim, SproxSim, Variant};
use lyapsgd::{Error, Exact, Result, Scalar};
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};

fn class(p: &Params) -> Result<ProblemClass<f64>> {
    let gamma = p
        .gamma
        .ok_or_else(|| Error::Invalid("--gamma is required".into()))?;
    let c = ProblemClass::new(p.mu(), p.l(), gamma, p.horizon()).with_m(p.m());
    c.validate()?;
    Ok(c)
}

/// Exact copy of the class, reading each value through its shortest decimal form.
fn exact_class(c: &ProblemClass<f64>) -> Result<ProblemClass<Exact>> {
    let ex = |v: f64| {
        Exact::parse_decimal(&v.to_string())
            .ok_or_else(|| Error::Invalid(format!("{v} is not finite")))
    };
    Ok(ProblemClass::new(ex(c.mu)?, ex(c.l)?, ex(c.gamma)?, c.horizon).with_m(c.m))
}

/// Writes to `--out` when given, else to stdout.
fn sink(p: &Params) -> Result<Box<dyn Write>> {
    Ok(match &p.out {
        Some(path) => Box::new(std::fs::File::create(path)?),
        None => Box::new(std::io::stdout()),
    })
}

fn out_dir(p: &Params) -> Result<PathBuf> {
    let d = p.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&d)?;
    Ok(d)
}

pub fn bounds(p: &Params) -> Result<i32> {
    let c = class(p)?;
    let r = bound(&c, p.eps)?;
    write_bound_csv(&[BoundRecord::new(&c, p.eps, &r)], sink(p)?)?;
    Ok(0)
}

/// Checks the recipe of the class (exactly when μ = 0) or a parameter file.
pub fn check(p: &Params, params_file: Option<&Path>) -> Result<i32> {
    let c = class(p)?;
    let tol = Tolerance::default();
    let report = match params_file {
        Some(path) => check_conditions(&LyapunovParams::<f64>::load(path)?, &c, tol),
        None if c.mu == 0.0 => {
            let ce = exact_class(&c)?;
            let eps = match p.eps {
                Some(e) => Some(Exact::parse_decimal(&e.to_string()).ok_or(Error::BadEpsilon(e))?),
                None => None,
            };
            check_conditions(&recipe_convex(&ce, eps)?, &ce, tol)
        }
        None => check_conditions(&recipe_for(&c, p.eps)?, &c, tol),
    };
    report.write_csv(sink(p)?)?;
    eprintln!(
        "feasible: {} (worst violation {:e})",
        report.feasible, report.worst_violation
    );
    Ok(if report.feasible { 0 } else { 2 })
}

/// Joint bias SDP (ρ for μ = 0, a₀ for μ > 0) and optionally the variance SDP at the theory bias.
pub fn pep(p: &Params, variance: bool, export: Option<&Path>) -> Result<i32> {
    let c = class(p)?;
    let opts = p.pep_options();
    let (objective, theory) = if c.mu == 0.0 {
        (BiasObjective::MaximizeRho, rho_theory(&c)?)
    } else {
        (
            BiasObjective::MinimizeA0,
            phi_opt(&c).powi(2 * c.horizon as i32),
        )
    };
    if let Some(path) = export {
        joint_bias_program(&c, objective, &opts)?.export_sdpa(path)?;
    }
    let cert = solve_optimal_bias(&c, objective, &opts)?;
    let value = if c.mu == 0.0 { cert.rho } else { cert.a[0] };
    let mut summary = json!({
        "gamma": c.gamma, "mu": c.mu, "L": c.l, "T": c.horizon, "m": c.m,
        "bias": {
            "objective": format!("{objective:?}"), "theory": theory, "optimal": value,
            "a": cert.a, "e": cert.e, "relative_gap": cert.relative_gap,
            "status": format!("{:?}", cert.status), "unstable": cert.unstable,
        },
    });
    if variance {
        let (vo, fixed, th) = if c.mu == 0.0 {
            (
                VarianceObjective::MinimizeAvgE,
                theory,
                e_bar_theory(&c, None).ok(),
            )
        } else {
            (
                VarianceObjective::MinimizeSumE,
                theory,
                bound(&c, None).ok().map(|b| b.variance_coeff),
            )
        };
        let v = solve_optimal_variance(&c, fixed, vo, &opts)?;
        summary["variance"] = json!({
            "objective": format!("{vo:?}"), "fixed_bias": fixed, "closed_form": th, "optimal": v.objective,
            "e": v.e, "relative_gap": v.relative_gap, "status": format!("{:?}", v.status), "unstable": v.unstable,
        });
    }
    writeln!(sink(p)?, "{}", serde_json::to_string_pretty(&summary)?)?;
    Ok(0)
}

fn x0_or(x0: Option<Vec<f64>>, d: usize, default: f64) -> Result<Vec<f64>> {
    let x = x0.unwrap_or(vec![default; d]);
    if x.len() != d {
        return Err(Error::Invalid(format!(
            "--x0 has {} entries, expected {d}",
            x.len()
        )));
    }
    Ok(x)
}

pub struct SimulateArgs {
    pub problem: Option<PathBuf>,
    pub delta: f64,
    pub x0: Option<Vec<f64>>,
    pub batch: Option<usize>,
    pub probs: Option<Vec<f64>>,
}

/// One trajectory dump plus Monte-Carlo summaries into the output directory.
pub fn simulate(p: &Params, a: SimulateArgs) -> Result<i32> {
    let c = class(p)?;
    let problem = match &a.problem {
        Some(path) => FiniteSumProblem::load(path)?,
        None => FiniteSumProblem::two_point(c.l, a.delta),
    };
    let variant = match (a.batch, a.probs) {
        (Some(_), Some(_)) => {
            return Err(Error::Invalid("--batch and --probs are exclusive".into()))
        }
        (Some(b), None) => Variant::MiniBatch(b),
        (None, Some(pr)) => Variant::NonUniform(pr),
        (None, None) => Variant::Uniform,
    };
    let x0 = x0_or(a.x0, problem.dimension, 1.0)?;
    let sim = SgdSim::new(&problem, c.gamma, variant)?;
    let dir = out_dir(p)?;
    sim.trajectory(&x0, c.horizon, p.seed(), 0)?
        .write_csv(std::fs::File::create(dir.join("trajectory.csv"))?)?;
    let mut rows = Vec::new();
    for metric in [Metric::AvgFunctionGap, Metric::LastIterateSqDist] {
        let mc = sim.monte_carlo(&x0, c.horizon, metric, p.seed(), p.trajectories())?;
        match sim.exact(&x0, c.horizon, metric) {
            Ok(e) => eprintln!(
                "{}: mc {:e} ± {:e}, exact {e:e}",
                metric.tag(),
                mc.mean,
                mc.se
            ),
            Err(_) => eprintln!("{}: mc {:e} ± {:e}", metric.tag(), mc.mean, mc.se),
        }
        rows.push(mc);
    }
    write_mc_csv(&rows, std::fs::File::create(dir.join("mc.csv"))?)?;
    Ok(0)
}

/// Stochastic proximal run on a component file (default: two halfspaces).
pub fn sprox(p: &Params, components: Option<&Path>, x0: Option<Vec<f64>>) -> Result<i32> {
    let comps: Vec<ProxComponent> = match components {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => halfspace_pair(),
    };
    let sim = SproxSim::new(comps, None, p.gamma.unwrap_or(1.0))?;
    let x0 = x0_or(x0, sim.dimension(), 1.0)?;
    let t = p.horizon();
    let dir = out_dir(p)?;
    sim.trajectory(&x0, t, p.seed(), 0)?
        .write_csv(std::fs::File::create(dir.join("trajectory.csv"))?)?;
    let mut rows = Vec::new();
    for metric in [
        Metric::EnvelopeGap,
        Metric::SetDistSq,
        Metric::LastIterateSqDist,
    ] {
        if let Ok(mc) = sim.monte_carlo(&x0, t, metric, p.seed(), p.trajectories()) {
            eprintln!("{}: mc {:e} ± {:e}", metric.tag(), mc.mean, mc.se);
            rows.push(mc);
        }
    }
    write_mc_csv(&rows, std::fs::File::create(dir.join("mc.csv"))?)?;
    Ok(0)
}

/// Infeasibility certificate for ρ (default 1.01·ρ_theory), in exact arithmetic.
pub fn certify(p: &Params, rho: Option<&str>, rho_factor: &str) -> Result<i32> {
    let c = exact_class(&class(p)?)?;
    let parse = |s: &str| {
        Exact::parse_decimal(s).ok_or_else(|| Error::Invalid(format!("not a decimal: {s}")))
    };
    let rho = match rho {
        Some(r) => parse(r)?,
        None => rho_theory(&c)? * parse(rho_factor)?,
    };
    let mut w = sink(p)?;
    match certify_rho_upper_bound(&c, rho.clone())? {
        Some(cert) => {
            let v = json!({
                "rho": rho.to_f64_lossy(),
                "violated": cert.violated,
                "violated_at": cert.violated_at,
                "witness": cert.witness.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>(),
                "revalidated": cert.revalidate(),
                "exact": cert,
            });
            writeln!(w, "{}", serde_json::to_string_pretty(&v)?)?;
        }
        None => writeln!(
            w,
            "{}",
            json!({"rho": rho.to_f64_lossy(), "certificate": null})
        )?,
    }
    Ok(0)
}
