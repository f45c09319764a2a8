//! Mean-field second-order (heavy ball) training dynamics for two-layer networks.
//!
//! The crate is organised around the objects the dynamics act on:
//!
//! - [`types`], [`config`], [`data`]: parameters, particle ensembles, synthetic
//!   teacher/student datasets and run configuration.
//! - [`model`]: network evaluation, quadratic risk, regularizers, the
//!   interaction gradient `∇F'(μⁿ)` and the `U`/`V` kernel decomposition.
//! - [`dynamics`]: Euler–Maruyama integrators for stochastic heavy ball (SHB),
//!   heavy ball (HB), damped-Nesterov (AGD) and gradient flow (GF).
//! - [`kinetic`]: a 1+1-dimensional phase-space solver for the kinetic
//!   Fokker–Planck equation with exact free energy and dissipation.
//! - [`boltzmann`]: the self-consistent Boltzmann operator on θ-grids and its
//!   damped fixed-point iteration.
//! - [`diagnostics`]: entropy, free-energy and stationarity estimators on
//!   particle ensembles.
//! - [`presets`], [`io`]: desk-scale experiment presets and file emission.

pub mod boltzmann;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod dynamics;
mod error;
pub mod grid;
pub mod io;
pub mod kinetic;
pub mod model;
pub mod presets;
pub mod rng;
pub mod types;

pub use config::{Integrator, RunConfig};

pub use error::{Error, Result};
pub use model::{Activation, Regularizer};
pub use types::{Dataset, Ensemble, ParamPoint, ParticleState, TeacherSpec};

/// Whether a loop over roughly `work` scalar operations should go to the
/// rayon pool. Both paths use the same chunking and reduction order.
pub(crate) fn use_parallel(work: usize) -> bool {
    work >= 1 << 16 && rayon::current_num_threads() > 1
}
