//! Synchronization of two mechanical modes coupled through a magnon mode in
//! cavity magnomechanics.
//!
//! * [`model`]: parameter sets, unit handling, labelled operating points.
//! * [`dynamics`]: Langevin equations and fixed-step RK4 / stochastic Heun integration.
//! * [`sideband`]: Bessel-sideband solution of the magnon response to a mechanical limit cycle.
//! * [`sync`]: phase observables, the reduced envelope theory and ensemble statistics.
//! * [`stability`]: fixed points, Jacobians and stability classification.
//! * [`sweep`]: single points, phase diagrams, hysteresis probes and ensembles.
//! * [`io`]: CSV and JSON output formats.
//!
//! Rates are angular frequencies. Most routines accept physical (rad/s) or
//! scaled (ω₁ = 1) parameter sets; integration always happens in scaled units.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod io;
pub mod model;
pub mod sideband;
pub mod stability;
pub mod sweep;
pub mod sync;

pub use dynamics::{IntegrationSpec, Method, NoiseSpec, SystemState, Trajectory, C64};
pub use error::{Error, Result};
pub use model::{
    default_params, default_two_sphere_params, desk_scaled, nondimensionalize, restore, Drive, HzParams, MagnonMode,
    ModelKind, OperatingPoint, SystemParams, OMEGA_0_REF,
};
pub use sideband::{compute_f, f_curve, solve_sidebands, FCurvePoint, SidebandOptions, SidebandSolution};
pub use stability::{classify_stability, fixed_point_report, fixed_points, jacobian, FixedPointReport, StabilityClass};
pub use sweep::{run_diagram, run_ensemble, run_pixel, GridSpec, PhaseDiagram, PixelResult};
pub use sync::{
    constraint_solve, ensemble_stats, find_sync_targets, fs_locus, pi_phase_optimum, stationary_f, EnsembleStats,
    FsLocus, SteadyState, SyncObservables, SyncTarget,
};
