//! Error-state dynamics: assembly of the linearized system at the current
//! configuration and explicit-Euler integration of the true nonlinear
//! reaching/compensation errors.

use nalgebra::{DMatrix, DVector};

use crate::chain::{
    forward_kinematics, geometric_jacobian, input_jacobian, robot_rates_from_input, BaseMode,
    KinematicChain, Owner, OwnerFilter, COMPENSATION_FRAME, END_EFFECTOR_FRAME, HUMAN_HAND_FRAME,
};
use crate::error::{Error, Result};
use crate::human::{
    resolve_human_velocity, velocity_operator, HumanModel, InternalModel, JacobianBundle,
};
use crate::se3::{pose_error, ErrorVec6, Pose};

/// Stacked reaching + compensation error.
#[derive(Debug, Clone, Copy)]
pub struct ErrorState {
    pub e_e: ErrorVec6,
    pub e_c: ErrorVec6,
}

impl ErrorState {
    pub fn zero() -> Self {
        ErrorState {
            e_e: ErrorVec6::zero(),
            e_c: ErrorVec6::zero(),
        }
    }

    pub fn stacked(&self) -> DVector<f64> {
        crate::human::stack_errors(&self.e_e, &self.e_c)
    }

    pub fn amax(&self) -> f64 {
        self.e_e.amax().max(self.e_c.amax())
    }
}

/// Reaching target and relaxed compensation pose, in the chain base frame.
#[derive(Debug, Clone)]
pub struct Targets {
    pub reach: Pose,
    pub relax: Pose,
}

/// State-space matrices of the linearized error dynamics at one configuration.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl LinearizedSystem {
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
}

/// Output matrix [0 I6]: only the compensation error is measured.
pub fn output_matrix() -> DMatrix<f64> {
    let mut c = DMatrix::zeros(6, 12);
    for i in 0..6 {
        c[(i, i + 6)] = 1.0;
    }
    c
}

/// Evaluate all Jacobians at the current configuration.
///
/// In connected mode the internal-model blocks equal the true ones. In the
/// disconnected (avatar) mode the true human-to-end-effector block is zero
/// while the internal model uses the hand frame of the human branch.
pub fn build_bundle(
    chain: &KinematicChain,
    q: &DVector<f64>,
    internal_model: InternalModel,
) -> Result<JacobianBundle> {
    let j_hc = geometric_jacobian(chain, q, COMPENSATION_FRAME, OwnerFilter::Human)?;
    let j_re = input_jacobian(chain, q, END_EFFECTOR_FRAME)?;
    let j_rc = input_jacobian(chain, q, COMPENSATION_FRAME)?;
    match internal_model {
        InternalModel::Connected => {
            let j_he = geometric_jacobian(chain, q, END_EFFECTOR_FRAME, OwnerFilter::Human)?;
            Ok(JacobianBundle {
                j_hat_he: j_he.clone(),
                j_hat_hc: j_hc.clone(),
                j_he,
                j_hc,
                j_re,
                j_rc,
            })
        }
        InternalModel::DisconnectedAvatar => {
            if !chain.has_frame(HUMAN_HAND_FRAME) {
                return Err(Error::InvalidConfig(format!(
                    "disconnected mode requires a {HUMAN_HAND_FRAME:?} frame on the human branch"
                )));
            }
            let j_hat_he = geometric_jacobian(chain, q, HUMAN_HAND_FRAME, OwnerFilter::Human)?;
            let n_h = j_hc.ncols();
            Ok(JacobianBundle {
                j_he: DMatrix::zeros(6, n_h),
                j_hat_he,
                j_hat_hc: j_hc.clone(),
                j_hc,
                j_re,
                j_rc,
            })
        }
    }
}

/// Assemble the linearized error system: the true human Jacobian enters on
/// the left while the internal model sits inside the weighted least-squares
/// operator; the robot Jacobian feeds through with a sign flip.
pub fn assemble_system(model: &HumanModel, bundle: &JacobianBundle) -> Result<LinearizedSystem> {
    let j_true = bundle.stack_true_human_jacobian()?;
    let j_hat = bundle.stack_human_jacobian()?;
    let j_r = bundle.stack_robot_jacobian()?;
    let op = velocity_operator(&j_hat, &model.weight(), &model.lambda())?;
    let a = -(&j_true * op);
    let b = -j_r;
    let n_u = b.ncols();
    Ok(LinearizedSystem {
        a,
        b,
        c: output_matrix(),
        d: DMatrix::zeros(6, n_u),
    })
}

/// Reaching and compensation errors at a configuration, from the nonlinear
/// forward kinematics.
pub fn compute_errors(
    chain: &KinematicChain,
    q: &DVector<f64>,
    targets: &Targets,
) -> Result<ErrorState> {
    let x_e = forward_kinematics(chain, q, END_EFFECTOR_FRAME)?;
    let x_c = forward_kinematics(chain, q, COMPENSATION_FRAME)?;
    Ok(ErrorState {
        e_e: pose_error(&targets.reach, &x_e),
        e_c: pose_error(&targets.relax, &x_c),
    })
}

/// One explicit-Euler step of the true system: the human moves according to
/// the compensatory law at the current errors, the robot according to `u`.
/// Errors are always recomputed from poses, never integrated as 6-vectors.
pub fn step_errors(
    chain: &KinematicChain,
    model: &HumanModel,
    q: &DVector<f64>,
    targets: &Targets,
    u: &DVector<f64>,
    dt: f64,
) -> Result<(DVector<f64>, ErrorState)> {
    if dt <= 0.0 {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    let errors = compute_errors(chain, q, targets)?;
    let bundle = build_bundle(chain, q, model.internal_model)?;
    let qdot_h = resolve_human_velocity(model, &bundle, &errors.e_e, &errors.e_c)?;
    let robot_rates = robot_rates_from_input(chain, q, u)?;

    let mut q_next = q.clone();
    let mut h_idx = 0;
    let mut r_idx = 0;
    for (i, joint) in chain.joints().iter().enumerate() {
        match joint.owner {
            Owner::Human => {
                q_next[i] += dt * qdot_h[h_idx];
                h_idx += 1;
            }
            Owner::Robot => {
                q_next[i] += dt * robot_rates[r_idx];
                r_idx += 1;
            }
        }
    }
    let next_errors = compute_errors(chain, &q_next, targets)?;
    Ok((q_next, next_errors))
}

/// Targets that make the current configuration an equilibrium.
pub fn targets_at(chain: &KinematicChain, q: &DVector<f64>) -> Result<Targets> {
    Ok(Targets {
        reach: forward_kinematics(chain, q, END_EFFECTOR_FRAME)?,
        relax: forward_kinematics(chain, q, COMPENSATION_FRAME)?,
    })
}

/// Targets offset from the initial end-effector pose by a translation and a
/// rotation vector; the relaxed pose is the initial compensation pose.
pub fn offset_targets(
    chain: &KinematicChain,
    q: &DVector<f64>,
    translation: &nalgebra::Vector3<f64>,
    rotation: &nalgebra::Vector3<f64>,
) -> Result<Targets> {
    let x_e = forward_kinematics(chain, q, END_EFFECTOR_FRAME)?;
    let reach = Pose::new(
        x_e.position + translation,
        nalgebra::Rotation3::from_scaled_axis(*rotation) * x_e.orientation,
    );
    Ok(Targets {
        reach,
        relax: forward_kinematics(chain, q, COMPENSATION_FRAME)?,
    })
}

/// `true` when the chain + mode imply a unicycle-driven robot input.
pub fn is_unicycle(chain: &KinematicChain) -> bool {
    chain.base_mode() == BaseMode::Unicycle
}
