//! Numerical core: radial heat kernels and domain Green functions with
//! their comparison and flux estimates, a Duhamel/Picard solver with
//! continuation for a radial semilinear flow equation, and a
//! boundary-integral removable-singularity classifier for the heat
//! equation.

pub mod cache;
pub mod error;
pub mod exec;
pub mod fitting;
pub mod flow;
pub mod green;
pub mod grid;
pub mod kernel;
pub mod metric;
pub mod oracle3d;
pub mod pde1d;
pub mod quad;
pub mod singularity;
pub mod solver;

pub use error::{Error, Result};
pub use exec::Parallelism;
pub use grid::{RadialField, RadialGrid};
