pub mod commands;
pub mod config;
pub mod experiments;
pub mod plot;

/// Process exit code of an error: 2 for infeasibility, 3 for solver failures.
pub fn exit_code(e: &lyapsgd::Error) -> i32 {
    match e {
        lyapsgd::Error::Infeasible(_) => 2,
        lyapsgd::Error::SolverFailure(_) => 3,
        _ => 1,
    }
}
