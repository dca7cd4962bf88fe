pub mod bounds;
pub mod dd;
pub mod error;
pub mod linalg;
pub mod lyapunov;
pub mod pep;
pub mod problem;
pub mod scalar;
pub mod sdp;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::{Exact, Real, Scalar};
