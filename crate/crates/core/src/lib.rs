//! Simulation library for observer-based compensatory control of coupled
//! human-robot kinematic chains.
//!
//! The human is modeled as a weighted least-squares controller that trades a
//! reaching objective against a compensation (comfort) objective on its
//! internal kinematic model. The robot input is produced by an LQG loop
//! relinearized at every step: a Kalman-style observer reconstructs the full
//! error state, including the reaching error the controller cannot measure,
//! from the compensation error alone, and an LQR gain drives both errors to
//! zero. The same machinery covers physically connected devices (prostheses)
//! and physically disconnected avatars with a unicycle base.

pub mod chain;
pub mod check;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod human;
pub mod lqg;
pub mod scenario;
pub mod se3;
pub mod trace;

pub use chain::{
    forward_kinematics, geometric_jacobian, input_jacobian, unicycle_velocity_map, BaseMode,
    Joint, JointKind, KinematicChain, Owner, OwnerFilter,
};
pub use config::{load_scenario, ModeSpec, Scenario};
pub use dynamics::{
    assemble_system, build_bundle, compute_errors, offset_targets, step_errors, ErrorState,
    LinearizedSystem, Targets,
};
pub use error::{Error, Result};
pub use human::{resolve_human_velocity, HumanModel, InternalModel, JacobianBundle};
pub use lqg::{
    control_input, covariance_step, lqr_gain, observer_gain, observer_step, ObserverState,
    RegulatorConfig,
};
pub use scenario::{
    run, run_avatar_trial, run_linear_trial, run_trial, stability_sweep, SimulationTrace,
    StepRecord, SweepCell, SweepGrid,
};
pub use se3::{pose_error, ErrorVec6, Pose};
