//! Effective Hamiltonians and flame speeds for the strain G-equation in
//! stationary shear flows.
//!
//! Three routes estimate the same flame speed `H̄(p, c)`: averaging the
//! branch roots of the 1-d cell problem ([`effective`]), the vanishing
//! discount limit ([`discount`]), and direct 2-d level-set simulation
//! ([`frontsim`]). [`strain`] builds `c ↦ H̄` curves and checks their
//! structure; [`experiment`] drives everything from a config file.

pub mod discount;
pub mod effective;
pub mod experiment;
pub mod error;
pub mod field;
pub mod frontsim;
pub mod hamiltonian;
pub mod quadrature;
pub mod strain;
mod roots;

pub use effective::{Branch, BranchAverage, EffectiveConfig, EffectiveHamiltonian, Piece};
pub use error::{Error, Result};
pub use field::{sample_field, FieldModel, FieldRealization, FieldSpec};
pub use frontsim::{evolve, measure_strain_reduction, simulate_speed, FrontState, SpeedEstimate};
pub use hamiltonian::{check_quasiconvex, BranchRoots, CoefficientBounds, QuasiconvexVerdict, StrainHamiltonian};
