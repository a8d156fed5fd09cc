pub mod adaptivity;
pub mod assembly;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod fespace;
pub mod goals;
pub mod linalg;
pub mod mesh;
pub mod multigoal;
pub mod problems;
pub mod quadrature;
pub mod solver;
pub mod vtk;

pub use error::{Error, Result};
