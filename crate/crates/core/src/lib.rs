//! Semiclassical (complex-germ) asymptotics for the 1D nonlocal Fisher–KPP equation
//! `u_t = D u_xx + a u − ∂x[(V_x + ϰ ∫ W_x u dy) u] − ϰ u ∫ b u dy`,
//! with a method-of-lines solver to check them against.
//!
//! ```
//! use fkpp_core::{assemble_solution, AssemblyOptions, FieldGrid, ModelSpec};
//!
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let model = ModelSpec::gaussian_competition(0.01, 1.0, 1.0, 1.0, 1.0)?;
//! let u = assemble_solution(0, &model, (0.0, 1.0), &AssemblyOptions::default())?;
//! let grid = FieldGrid::dirichlet(-1.0, 1.0, 401)?;
//! let snapshot = u.field(1.0, &grid)?;
//! assert!(snapshot.max() > 0.0);
//! # Ok(())
//! # }
//! ```

pub mod acceptance;
pub mod coherent;
pub mod ee;
pub mod field;
pub mod germ;
pub mod largetime;
pub mod linearized;
pub mod model;
pub mod ode;
pub mod oracle;
pub mod quad;
pub mod specfun;

pub use coherent::{assemble_solution, AssembledSolution, AssemblyOptions, CoherentBasis, CoherentError};
pub use ee::{integrate_ee, EETrajectory, EeError, EeOptions, MomentState};
pub use field::{Boundary, Field, FieldError, FieldGrid};
pub use germ::{GermError, GermOptions, GermState};
pub use largetime::{LargeTimeError, LargeTimeParams};
pub use linearized::{AssociatedOperator, LinearizedError};
pub use model::{Coefficient, Kernel, ModelError, ModelSpec};
pub use oracle::{OracleError, OracleOptions, Solution};
