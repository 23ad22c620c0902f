//! Weakly coupled Hamilton–Jacobi systems on the torus: switching weights, value functions,
//! ergodic pairs, extremal curves, and the audits tying them together.

pub mod battery;
pub mod curves;
pub mod ergodic;
pub mod error;
pub mod grid;
pub mod io;
pub mod model;
pub mod solver;
pub mod weights;

pub use error::{Error, Result};
