use lyapsgd::bounds::{bound, write_bound_csv, BoundRecord, Metric};
use lyapsgd::linalg::Mat;
use lyapsgd::lyapunov::{check_conditions, recipe_convex, recipe_for, LyapunovParams, Tolerance};
use lyapsgd::pep::{joint_bias_program, BiasObjective, PepOptions};
use lyapsgd::problem::{FiniteSumProblem, ProblemClass, Quadratic};
use lyapsgd::sdp::{read_sdpa, to_sdpa_string, write_sdpa, BlockSdp};
use lyapsgd::sim::{SgdSim, Variant};
use lyapsgd::{Exact, Scalar};
use proptest::prelude::*;

#[test]
fn problem_json_round_trips_through_a_file() {
    let p = FiniteSumProblem::uniform(vec![
        Quadratic {
            q: Mat::diag(&[1.5, 0.2]),
            b: vec![1.0, -0.5],
            c: 0.0,
        },
        Quadratic {
            q: Mat::from_rows(&[vec![0.7, -0.2], vec![-0.2, 0.9]]),
            b: vec![-2.0, 0.3],
            c: 1.0,
        },
    ])
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("problem.json");
    p.save(&path).unwrap();
    assert_eq!(FiniteSumProblem::<f64>::load(&path).unwrap(), p);
}

#[test]
fn lyapunov_params_json_round_trips() {
    let class = ProblemClass::new(0.0, 1.0, 1.4, 5);
    let p = recipe_for(&class, None).unwrap();
    let back = LyapunovParams::<f64>::from_json(&p.to_json().unwrap()).unwrap();
    assert_eq!(back, p);
}

#[test]
fn bound_csv_has_one_row_per_record() {
    let class = ProblemClass::new(0.25, 1.0, 0.5, 10);
    let r = bound(&class, None).unwrap();
    let mut buf = Vec::new();
    write_bound_csv(&[BoundRecord::new(&class, None, &r)], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("0.5,0.25,1.0,10,"));
}

#[test]
fn sdpa_file_round_trip_is_stable() {
    let prog = joint_bias_program(
        &ProblemClass::new(0.0, 1.0, 0.8, 2),
        BiasObjective::MaximizeRho,
        &PepOptions::default(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bias.dat-s");
    write_sdpa(&prog.sdp, &path).unwrap();
    let back: BlockSdp<f64> = read_sdpa(&path).unwrap();
    assert_eq!(to_sdpa_string(&back), to_sdpa_string(&prog.sdp));
}

#[test]
fn monte_carlo_depends_only_on_the_seed() {
    let sim = SgdSim::new(
        &FiniteSumProblem::two_point(1.0, 0.5),
        0.7,
        Variant::Uniform,
    )
    .unwrap();
    let a = sim
        .monte_carlo(&[1.0], 6, Metric::LastIterateSqDist, 9, 4000)
        .unwrap();
    let b = sim
        .monte_carlo(&[1.0], 6, Metric::LastIterateSqDist, 9, 4000)
        .unwrap();
    let c = sim
        .monte_carlo(&[1.0], 6, Metric::LastIterateSqDist, 10, 4000)
        .unwrap();
    assert_eq!(a, b);
    assert_ne!(a.mean, c.mean);
    let exact = sim.exact(&[1.0], 6, Metric::LastIterateSqDist).unwrap();
    assert!((a.mean - exact).abs() <= 4.0 * a.se);
}

proptest! {
    #[test]
    fn convex_recipes_hold_exactly(num in 1i64..199, horizon in 1usize..8) {
        let gamma = Exact::ratio(num, 100);
        let class = ProblemClass::new(Exact::int(0), Exact::int(1), gamma, horizon);
        let eps = class.is_optimal_step().then(|| Exact::ratio(1, 2));
        let p = recipe_convex(&class, eps).unwrap();
        prop_assert!(check_conditions(&p, &class, Tolerance::EXACT).feasible);
    }
}
