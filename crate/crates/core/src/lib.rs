//! Diffusion equations on the unit interval whose side conditions are
//! prescribed moments `μ₀`, `μ_n` instead of boundary values.
//!
//! The crate covers an exact polynomial calculus, an `H⁻¹`-type metric on
//! grid functions, the linear heat operator with its induced potential, and
//! porous-medium / fast-diffusion gradient flows of the `L^p` energy.

pub mod error;
pub mod grid;
pub mod hminus;
pub mod linear;
pub mod moments;
pub mod nonlinear;
pub mod poly;
pub mod runner;

pub use error::{Error, Result};
pub use grid::GridFunction;
pub use hminus::{ConstraintSpace, DualElement, Metric};
pub use moments::{Calculus, MomentVector};
pub use poly::{Polynomial, Rational};
