//! Hybrid High-Order discretization of 2D linear elasticity with
//! element-local recovery of equilibrated face tractions.
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`.

pub mod cli;
pub mod equilibrium;
pub mod error;
pub mod harness;
pub mod mesh;
pub mod operators;
pub mod polybasis;
pub mod quadrature;
pub mod scalar;
pub mod system;

pub use error::{Error, MeshError, Result};
pub use scalar::Real;

pub type Point = mesh::Point<f64>;
pub type Mesh = mesh::Mesh<f64>;
pub type Material = operators::Material<f64>;
pub type ElementOperators = operators::ElementOperators<f64>;
pub type PostprocessOperators = equilibrium::PostprocessOperators<f64>;
pub type Discretization = system::Discretization<f64>;
pub type Solution = system::Solution<f64>;
pub type Case = harness::Case<f64>;
pub type ConvergenceRecord = harness::ConvergenceRecord<f64>;
pub type VerificationReport = equilibrium::VerificationReport<f64>;
