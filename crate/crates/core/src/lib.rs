//! Numerical laboratory for p-harmonic functions and measures in the
//! complement of tubes around m-dimensional hyperplanes of Rⁿ.

pub mod analysis;
pub mod barriers;
pub mod biradial;
pub mod error;
pub mod geometry;
pub mod measures;
pub mod quadrature;
pub mod serde_ext;
pub mod solver;

pub use biradial::{BiradialPoint, Exponents, Jet2};
pub use error::{Error, Result};
pub use geometry::{DomainSpec, Grid, GridFunction, NodeState, Resolution, TubeGeometry};
pub use solver::{SolveOptions, SolveReport};
