//! Safety barrier certificates for teams of differentially flat quadrotors.
//!
//! Each vehicle is a quadruple integrator driven by snap. Pairwise
//! super-ellipsoid barriers give exponential-CBF rows `A v <= b` over the
//! team's aggregate snap; a small QP rectifies the nominal tracking command
//! to the closest safe one. The rectified flat trajectory is mapped back to
//! attitude and thrust to audit actuator limits.

pub mod barrier;
pub mod error;
pub mod flatness;
pub mod lindyn;
pub mod oracle;
pub mod pipeline;
pub mod qp;
pub mod reference;

pub mod archive;
pub mod cli;
pub mod scenario;
mod serde_float;
pub mod verify;

pub use barrier::{
    assemble_certificates, barrier_value, check_initial_conditions, constraint_row, eta,
    BarrierConstraint, EtaVector, InitialConditionReport, SafetyGeometry, Shape,
};
pub use error::{Error, Result};
pub use flatness::{
    actuator_audit, flat_to_input, flat_to_state, ActuatorLimits, AuditReport, ControlInput,
    FlatSample, FullState, VehicleParams,
};
pub use lindyn::{euler_step, place_poles, ChainMatrices, GainRow, IntegratorState, Vec3};
pub use pipeline::{
    nominal_control, run_scenario, run_step, simulate, ScenarioConfig, ScenarioOutcome,
    SimulationTrace,
};
pub use qp::{feasibility_probe, solve, RectificationProblem, RectifiedControl, Rectifier};
pub use reference::{
    bezier_interp, circle_ref, clock_step, eval_parameterized, ReferenceTrajectory, VirtualClock,
};
