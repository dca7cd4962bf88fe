//! One PASS/FAIL line per acceptance criterion, written to stderr.

use lyapsgd::bounds::{
    certify_rho_upper_bound, e_bar_theory, rho_theory, Metric, ViolatedQuantity,
};
use lyapsgd::lyapunov::{check_conditions, phi_opt, recipe_convex, recipe_for, Tolerance};
use lyapsgd::pep::{
    joint_bias_program, singularity_probe, solve_optimal_bias, solve_optimal_variance,
    BiasObjective, PepCertificate, PepOptions, VarianceObjective,
};
use lyapsgd::problem::{FiniteSumProblem, ProblemClass};
use lyapsgd::sdp::{read_sdpa, solve_f64, SolveStatus};
use lyapsgd::sim::{ProxComponent, SgdSim, SproxSim, Variant};
use lyapsgd::{Error, Exact, Result, Scalar};
use lyapsgd_cli::experiments::{
    containment_point, halfspace_pair, shared_minimizer_quadratics, spread_quadratics,
};
use rayon::prelude::*;
use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// `lo, lo+step, …, hi` as exact decimal strings with `digits` decimals.
fn decimals(lo: u32, hi: u32, step: u32, digits: usize) -> Vec<String> {
    let scale = 10f64.powi(digits as i32);
    (lo..=hi)
        .step_by(step as usize)
        .map(|k| format!("{:.*}", digits, k as f64 / scale))
        .collect()
}

fn f(s: &str) -> f64 {
    s.parse().unwrap()
}

fn exact(s: &str) -> Exact {
    Exact::parse_decimal(s).unwrap()
}

/// Duality gaps of Optimal solves from criteria 2 to 4.
static GAPS: Mutex<Vec<f64>> = Mutex::new(Vec::new());

fn record_gap(c: &PepCertificate) {
    if c.status == SolveStatus::Optimal {
        GAPS.lock().unwrap().push(c.duality_gap.abs());
    }
}

fn recipe_certification() -> Verdict {
    let start = Instant::now();
    let gammas = decimals(5, 195, 5, 2);
    let mus = ["0", "0.1", "0.25", "0.5", "0.9"];
    let horizons = [1usize, 2, 5, 10, 50];
    let epsilons = ["0", "0.01", "0.5", "1"];
    let tol = Tolerance::default();
    let mut cases = Vec::new();
    for g in &gammas {
        for mu in mus {
            for &t in &horizons {
                cases.push((g.clone(), mu, t));
            }
        }
    }
    let results: Vec<(usize, usize, Vec<String>)> = cases
        .par_iter()
        .map(|(g, mu, t)| {
            let (mut checked, mut skipped, mut failed) = (0, 0, Vec::new());
            if *mu == "0" {
                let class = ProblemClass::new(Exact::int(0), Exact::int(1), exact(g), *t);
                let eps: Vec<Option<&str>> = if class.is_optimal_step() {
                    epsilons[1..].iter().map(|e| Some(*e)).collect()
                } else {
                    vec![None]
                };
                for e in eps {
                    match recipe_convex(&class, e.map(exact)) {
                        Ok(p) => {
                            checked += 1;
                            if !check_conditions(&p, &class, tol).feasible {
                                failed.push(format!("gammaL={g} mu=0 T={t} eps={e:?}"));
                            }
                        }
                        Err(err) => failed.push(format!("gammaL={g} mu=0 T={t}: {err}")),
                    }
                }
            } else {
                let class = ProblemClass::new(f(mu), 1.0, f(g), *t);
                for e in epsilons {
                    match recipe_for(&class, Some(f(e))) {
                        Ok(p) => {
                            checked += 1;
                            if !check_conditions(&p, &class, tol).feasible {
                                failed.push(format!("gammaL={g} mu={mu} T={t} eps={e}"));
                            }
                        }
                        Err(Error::BadEpsilon(_)) | Err(Error::SingularOptimalStep) => skipped += 1,
                        Err(err) => failed.push(format!("gammaL={g} mu={mu} T={t} eps={e}: {err}")),
                    }
                }
            }
            (checked, skipped, failed)
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let checked: usize = results.iter().map(|r| r.0).sum();
    let skipped: usize = results.iter().map(|r| r.1).sum();
    let failed: Vec<&String> = results.iter().flat_map(|r| &r.2).collect();
    verdict(
        failed.is_empty() && secs < 10.0,
        format!(
            "{checked} recipes checked, {skipped} (gamma, eps) pairs outside the admissible range, {} failures {:?}, {secs:.2}s",
            failed.len(),
            failed.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

fn convex_bias() -> Verdict {
    let start = Instant::now();
    let opts = PepOptions::default();
    let pts: Vec<(usize, String)> = [2usize, 5, 10]
        .iter()
        .flat_map(|&t| decimals(1, 19, 1, 1).into_iter().map(move |g| (t, g)))
        .collect();
    let res: Vec<Result<(f64, f64)>> = pts
        .par_iter()
        .map(|(t, g)| {
            let class = ProblemClass::new(0.0, 1.0, f(g), *t);
            let target = if g == "1.0" {
                2.0 * class.gamma
            } else {
                rho_theory(&class)?
            };
            let c = solve_optimal_bias(&class, BiasObjective::MaximizeRho, &opts)?;
            record_gap(&c);
            Ok(((c.rho - target).abs() / target, target))
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let worst = res
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .map(|r| r.0)
        .fold(0.0, f64::max);
    let errors = res.iter().filter(|r| r.is_err()).count();
    let over = res
        .iter()
        .filter(|r| matches!(r, Ok((e, _)) if *e > 1e-5))
        .count();
    verdict(
        errors == 0 && over == 0 && secs < 600.0,
        format!("{} points, worst relative error {worst:.2e}, {over} above 1e-5, {errors} solver errors, {secs:.1}s", pts.len()),
    )
}

fn strongly_convex_bias() -> Verdict {
    let start = Instant::now();
    let opts = PepOptions::default();
    let gammas: Vec<String> = decimals(2, 19, 1, 1)
        .into_iter()
        .filter(|g| g != "1.6")
        .collect();
    let pts: Vec<(usize, String)> = [1usize, 2, 3]
        .iter()
        .flat_map(|&t| gammas.iter().map(move |g| (t, g.clone())))
        .collect();
    let res: Vec<Result<f64>> = pts
        .par_iter()
        .map(|(t, g)| {
            let class = ProblemClass::new(0.25, 1.0, f(g), *t);
            let c = solve_optimal_bias(&class, BiasObjective::MinimizeA0, &opts)?;
            record_gap(&c);
            Ok((c.a[0] - phi_opt(&class).powi(2 * *t as i32)).abs())
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let worst = res
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .fold(0.0f64, |a, b| a.max(*b));
    let bad = res
        .iter()
        .filter(|r| !matches!(r, Ok(e) if *e <= 1e-5))
        .count();
    verdict(
        bad == 0 && secs < 600.0,
        format!(
            "{} points, worst |a0 - phi^2T| {worst:.2e}, {bad} failures, {secs:.1}s",
            pts.len()
        ),
    )
}

fn convex_variance() -> Verdict {
    let opts = PepOptions::default();
    let gammas: Vec<String> = decimals(2, 18, 2, 1)
        .into_iter()
        .filter(|g| g != "1.0")
        .collect();
    let res: Vec<Result<f64>> = gammas
        .par_iter()
        .map(|g| {
            let class = ProblemClass::new(0.0, 1.0, f(g), 2);
            let th = e_bar_theory(&class, None)?;
            let c = solve_optimal_variance(
                &class,
                rho_theory(&class)?,
                VarianceObjective::MinimizeAvgE,
                &opts,
            )?;
            record_gap(&c);
            Ok((c.objective - th).abs() / (1.0 + th))
        })
        .collect();
    let worst = res
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .fold(0.0f64, |a, b| a.max(*b));
    let bad = res
        .iter()
        .filter(|r| !matches!(r, Ok(e) if *e <= 1e-4))
        .count();
    let unit = ProblemClass::new(0.0, 1.0, 1.0, 2);
    let trap = solve_optimal_variance(&unit, 2.0, VarianceObjective::MinimizeAvgE, &opts);
    let trap_ok = matches!(trap, Err(Error::Infeasible(_)));
    verdict(
        bad == 0 && trap_ok,
        format!(
            "{} points, worst |e_opt - e_theory|/(1+e_theory) {worst:.2e}, {bad} failures; gammaL=1 with rho=2gamma: {}",
            gammas.len(),
            match &trap {
                Err(e) => e.to_string(),
                Ok(c) => format!("solved with e_bar {}", c.objective),
            }
        ),
    )
}

fn singularity_probes() -> Verdict {
    let opts = PepOptions::default();
    let ks: Vec<u32> = (3..=10).collect();
    let convex = ProblemClass::new(0.0, 1.0, 1.0, 2);
    let half = ProblemClass::new(0.0, 1.0, 0.5, 2);
    let e_half = rho_theory(&half)
        .and_then(|r| solve_optimal_variance(&half, r, VarianceObjective::MinimizeAvgE, &opts))
        .map(|c| c.objective);
    let strong = ProblemClass::new(0.25, 1.0, 1.6, 2);
    let a0 = |c: &ProblemClass<f64>| Ok(phi_opt(c).powi(2 * c.horizon as i32));
    let strong_half = ProblemClass::new(0.25, 1.0, 0.5, 2);
    let s_half = solve_optimal_variance(
        &strong_half,
        a0(&strong_half).unwrap(),
        VarianceObjective::MinimizeSumE,
        &opts,
    )
    .map(|c| c.objective);
    let mut pass = e_half.is_ok() && s_half.is_ok();
    let mut parts = Vec::new();
    for (name, base, sing, obj, reference) in [
        (
            "e_bar",
            &convex,
            1.0,
            VarianceObjective::MinimizeAvgE,
            &e_half,
        ),
        (
            "e_sum",
            &strong,
            1.6,
            VarianceObjective::MinimizeSumE,
            &s_half,
        ),
    ] {
        for side in [-1.0, 1.0] {
            let rep = if name == "e_bar" {
                singularity_probe(base, sing, side, &ks, obj, rho_theory, &opts)
            } else {
                singularity_probe(base, sing, side, &ks, obj, a0, &opts)
            };
            let last = rep.points.last().and_then(|p| p.value);
            let reference = reference.as_ref().ok().copied().unwrap_or(f64::NAN);
            let big = last.is_some_and(|v| v > 1e3 * reference);
            pass &= rep.increasing && big;
            parts.push(format!(
                "{name} {} increasing={} k=10 value {:.4e} = {:.3e} x value at gammaL=0.5",
                if side < 0.0 { "left" } else { "right" },
                rep.increasing,
                last.unwrap_or(f64::NAN),
                last.unwrap_or(f64::NAN) / reference
            ));
        }
    }
    verdict(pass, parts.join("; "))
}

fn certificates() -> Verdict {
    let mut cases: Vec<(String, usize, bool)> = Vec::new();
    for g in ["1.1", "1.5", "1.9"] {
        for t in [1usize, 2, 5] {
            cases.push((g.into(), t, false));
        }
    }
    for t in [2usize, 5] {
        cases.push(("1".into(), t, true));
    }
    let mut bad = Vec::new();
    for (g, t, trap) in &cases {
        let gamma = exact(g);
        let class = ProblemClass::new(Exact::int(0), Exact::int(1), gamma.clone(), *t);
        let rho = if *trap {
            Exact::int(2) * gamma
        } else {
            rho_theory(&class).unwrap() * exact("1.01")
        };
        let ok = match certify_rho_upper_bound(&class, rho) {
            Ok(Some(c)) => {
                let kind_ok = if *trap {
                    c.violated == ViolatedQuantity::ATrappedAboveOne
                } else {
                    c.violated == ViolatedQuantity::RhoTooLarge
                };
                kind_ok && c.revalidate()
            }
            _ => false,
        };
        if !ok {
            bad.push(format!("gammaL={g} T={t}"));
        }
    }
    verdict(
        bad.is_empty(),
        format!(
            "{} certificates (9 at 1.01 rho_theory, trap at T=2,5; none exists at T=1) re-validated, failures {bad:?}",
            cases.len() - bad.len()
        ),
    )
}

fn containment() -> Verdict {
    let start = Instant::now();
    let deltas = [0.0, 0.5, 1.0];
    let mus = [0.0, 0.1, 0.25, 0.5, 0.9];
    let gammas: Vec<f64> = decimals(1, 19, 1, 1).iter().map(|g| f(g)).collect();
    let mut pts = Vec::new();
    for &d in &deltas {
        for &mu in &mus {
            for t in 1..=10usize {
                for &g in &gammas {
                    pts.push((d, mu, t, g));
                }
            }
        }
    }
    let res: Vec<_> = pts
        .par_iter()
        .enumerate()
        .map(|(k, &(d, mu, t, g))| {
            let class = ProblemClass::new(mu, 1.0, g, t);
            containment_point(1.0, d, &class, 1.0, 10_000, 1000 + k as u64)
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let errors = res.iter().filter(|r| r.is_err()).count();
    let ok: Vec<_> = res.iter().filter_map(|r| r.as_ref().ok()).collect();
    let violations = ok.iter().filter(|p| !p.contained()).count();
    let mc_off = ok.iter().filter(|p| !p.mc_agrees()).count();
    let min_slack = ok
        .iter()
        .map(|p| p.bound - p.exact)
        .fold(f64::INFINITY, f64::min);
    let strict = ok.iter().filter(|p| p.bound > p.exact).count();
    let max_z = ok
        .iter()
        .filter(|p| 4.0 * p.mc_se > 1e-12 * (1.0 + p.exact.abs()))
        .map(|p| (p.mc_mean - p.exact).abs() / p.mc_se)
        .fold(0.0, f64::max);
    verdict(
        errors == 0 && violations == 0 && mc_off == 0,
        format!(
            "{} points, {violations} bound violations, {strict} strict, min slack {min_slack:.3e}, \
             {mc_off} MC disagreements (max |z| {max_z:.2} where SE exceeds rounding), {errors} errors, {secs:.1}s",
            pts.len()
        ),
    )
}

fn sprox_checks() -> Verdict {
    let mut fails = Vec::new();
    let proj = SproxSim::new(halfspace_pair(), None, 1.0).unwrap();
    let mut proj_n = 0;
    for x0 in [[2.0, 3.0], [1.0, -2.0], [-1.0, 4.0]] {
        let c = proj.project_intersection(&x0).unwrap();
        let d2 = (x0[0] - c[0]).powi(2) + (x0[1] - c[1]).powi(2);
        for t in 1..=10usize {
            let v = proj.exact(&x0, t, Metric::SetDistSq).unwrap();
            proj_n += 1;
            if v > d2 / t as f64 * (1.0 + 1e-12) {
                fails.push(format!("projection x0={x0:?} T={t}"));
            }
        }
    }
    let comps: Vec<ProxComponent> = shared_minimizer_quadratics()
        .iter()
        .map(ProxComponent::quadratic)
        .collect();
    let x0 = [3.0, 2.0];
    let r2 = (x0[0] - 1.0f64).powi(2) + (x0[1] + 1.0f64).powi(2);
    let mut interp_n = 0;
    for g in [0.1, 0.5, 1.0, 2.0, 5.0] {
        let sim = SproxSim::new(comps.clone(), None, g).unwrap();
        for t in 1..=10usize {
            let v = sim.exact(&x0, t, Metric::EnvelopeGap).unwrap();
            interp_n += 1;
            if v > r2 / (2.0 * g * t as f64) * (1.0 + 1e-12) + 1e-15 {
                fails.push(format!("interpolation gamma={g} T={t}"));
            }
        }
    }
    let mut worst: f64 = 0.0;
    for fam in [shared_minimizer_quadratics(), spread_quadratics()] {
        let problem = FiniteSumProblem::uniform(fam).unwrap();
        for g in [0.1, 0.5, 1.0, 2.0, 5.0] {
            let sp = SproxSim::from_problem(&problem, g).unwrap();
            let sgd = SgdSim::new(&sp.envelope_family().unwrap(), g, Variant::Uniform).unwrap();
            for seed in 0..5 {
                let a = sp.trajectory(&x0, 50, seed, 0).unwrap();
                let b = sgd.trajectory(&x0, 50, seed, 0).unwrap();
                for (u, v) in a.iterates.iter().zip(&b.iterates) {
                    for (ui, vi) in u.iter().zip(v) {
                        worst = worst.max((ui - vi).abs());
                    }
                }
            }
        }
    }
    verdict(
        fails.is_empty() && worst <= 1e-10,
        format!(
            "projection {proj_n} and interpolation {interp_n} cases, failures {fails:?}; \
             max |SProx - SGD on envelopes| {worst:.2e} over 50 trajectories of 50 steps"
        ),
    )
}

fn solver_soundness() -> Verdict {
    let gaps = GAPS.lock().unwrap().clone();
    let worst_gap = gaps.iter().copied().fold(0.0, f64::max);
    let opts = PepOptions::default();
    let prog = joint_bias_program(
        &ProblemClass::new(0.0, 1.0, 0.5, 2),
        BiasObjective::MaximizeRho,
        &opts,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bias.dat-s");
    prog.export_sdpa(&path).unwrap();
    let back = read_sdpa::<f64>(&path).unwrap();
    let a = solve_f64(&prog.sdp, &opts.solver).unwrap().outcome;
    let b = solve_f64(&back, &opts.solver).unwrap().outcome;
    let drift = (a.primal_objective - b.primal_objective).abs();
    verdict(
        !gaps.is_empty() && worst_gap <= 1e-8 && drift <= 1e-9 && a.status == SolveStatus::Optimal,
        format!(
            "{} Optimal solves, max duality gap {worst_gap:.2e}; SDPA round trip drift {drift:.2e} ({:?}/{:?})",
            gaps.len(),
            a.status,
            b.status
        ),
    )
}

fn m_independence() -> Verdict {
    let opts = PepOptions::default();
    let pts = [(1usize, 0.5), (1, 1.5), (2, 0.5), (2, 1.5)];
    let res: Vec<Result<f64>> = pts
        .par_iter()
        .map(|&(t, g)| {
            let two = solve_optimal_bias(
                &ProblemClass::new(0.0, 1.0, g, t),
                BiasObjective::MaximizeRho,
                &opts,
            )?;
            let three = solve_optimal_bias(
                &ProblemClass::new(0.0, 1.0, g, t).with_m(3),
                BiasObjective::MaximizeRho,
                &opts,
            )?;
            Ok((three.rho - two.rho).abs() / two.rho)
        })
        .collect();
    let worst = res
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .fold(0.0f64, |a, b| a.max(*b));
    let bad = res
        .iter()
        .filter(|r| !matches!(r, Ok(e) if *e <= 1e-5))
        .count();
    verdict(
        bad == 0,
        format!(
            "{} points, worst relative difference {worst:.2e}",
            pts.len()
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("recipe certification", recipe_certification),
        ("convex bias PEP", convex_bias),
        ("strongly convex bias PEP", strongly_convex_bias),
        ("convex variance PEP", convex_variance),
        ("singularity probes", singularity_probes),
        ("infeasibility certificates", certificates),
        ("bound containment", containment),
        ("stochastic proximal checks", sprox_checks),
        ("solver soundness", solver_soundness),
        ("m independence", m_independence),
    ];
    let mut failed = Vec::new();
    for (k, (name, run)) in criteria.iter().enumerate() {
        let v = run();
        let line = format!(
            "criterion {:>2} {}: {} | {}\n",
            k + 1,
            if v.pass { "PASS" } else { "FAIL" },
            name,
            v.detail
        );
        std::io::stderr().write_all(line.as_bytes()).unwrap();
        if !v.pass {
            failed.push(k + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
