//! Scalar non-local conservation law on a unit link:
//!
//! ```text
//! ∂t ρ + ∂x( λ(t, ∫_{b(x)}^{d(x)} ρ(t, s) ds) ρ ) = 0,   ρ(0, x) = ρ0(x),
//! λ(t, W(t, 0)) ρ(t, 0) = u(t),   y(t) = λ(t, W(t, 1)) ρ(t, 1).
//! ```

pub mod characteristics;
pub mod finite_volume;
pub mod law;
pub mod link;

pub use characteristics::{solve_characteristic, CharacteristicWindow, CumulativeInflow};
pub use finite_volume::{fv_step, interface_speeds};
pub use law::{cell_averages, nonlocal_term, CumulativeMass, NonlocalWindow, Reconstruction, VelocityLaw};
pub use link::{advance_step, outflux, solve_link, Grid, LinkModel, LinkState, Scheme, SolverOptions, StepAdvance};
