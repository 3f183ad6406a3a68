//! Nonlinear model predictive control as sequential Monte Carlo estimation.
//!
//! The optimal input over a receding horizon is estimated by a bootstrap
//! particle filter run on an augmented system whose state holds the plant
//! state and a candidate input, followed by a reweighted particle smoother.
//! Inequality constraints enter as a softplus-barrier virtual measurement
//! that lowers the weight of violating particles (CAP-NMPC); without it the
//! controller is the plain particle variant (P-NMPC).
//!
//! Modules:
//! - [`model`]: plant abstraction and the augmented virtual system.
//! - [`filter`]: barrier weighting, systematic resampling, forward pass.
//! - [`smoother`]: backward reweighting and the control estimate.
//! - [`controller`]: one control cycle and the closed loop.
//! - [`vehicle`]: kinematic-bicycle path-following benchmark.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// `Aborted` carries the partial record by value; runs fail rarely.
#![allow(clippy::result_large_err)]

pub mod controller;
pub mod error;
pub mod filter;
pub mod model;
pub mod smoother;
pub mod vehicle;

pub use controller::{
    nmpc_step, run_closed_loop, Aborted, Algorithm, NmpcProblem, ReferenceSource, SimulationRecord,
    StepOutcome, StepRecord, TimeIndexedReference,
};
pub use error::{Error, Result};
pub use filter::{
    forward_pass, log_density_constraints, softplus_barrier, systematic_resample, weigh,
    BarrierConfig, ConstraintAware, ConstraintSet, FilterHistory, FilterStep, ParticleEnsemble,
};
pub use model::{
    augment, FnPlant, NoiseSpec, PlantModel, VirtualState, VirtualSystem, DEFAULT_EPSILON,
};
pub use smoother::{backward_reweight, extract_estimate, weight_entropy, SmoothedWeights};
