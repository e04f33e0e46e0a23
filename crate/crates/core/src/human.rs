//! The human compensatory control law: a weighted least-squares resolution of
//! the conflicting reaching and compensation objectives, evaluated on the
//! human's internal model of the kinematics.

use nalgebra::{DMatrix, DVector, Matrix6};

use crate::error::{Error, Result};
use crate::se3::ErrorVec6;

/// Relative singular-value cutoff below which the weighted normal matrix is
/// treated as singular (redundant human-joint model).
pub const SINGULARITY_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InternalModel {
    /// Human and robot are physically connected; the internal kinematic maps
    /// coincide with the true ones.
    Connected,
    /// Pilot-avatar case: the true human-to-end-effector map is zero, but the
    /// pilot acts as if the avatar's hand were attached to their own body.
    DisconnectedAvatar,
}

/// Gains and weighting of the human's reaching/compensation trade-off.
#[derive(Debug, Clone)]
pub struct HumanModel {
    pub lambda_e: Matrix6<f64>,
    pub lambda_c: Matrix6<f64>,
    /// Relative weight of the reaching objective, in [0, 1].
    pub w: f64,
    pub internal_model: InternalModel,
}

impl HumanModel {
    pub fn new(
        lambda_e: Matrix6<f64>,
        lambda_c: Matrix6<f64>,
        w: f64,
        internal_model: InternalModel,
    ) -> Result<Self> {
        check_spd(&lambda_e, "lambda_e")?;
        check_spd(&lambda_c, "lambda_c")?;
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidConfig(format!("w must be in [0, 1], got {w}")));
        }
        Ok(HumanModel {
            lambda_e,
            lambda_c,
            w,
            internal_model,
        })
    }

    /// Block-diagonal gain matrix acting on the stacked error.
    pub fn lambda(&self) -> DMatrix<f64> {
        let mut lambda = DMatrix::zeros(12, 12);
        lambda
            .view_mut((0, 0), (6, 6))
            .copy_from(&self.lambda_e);
        lambda
            .view_mut((6, 6), (6, 6))
            .copy_from(&self.lambda_c);
        lambda
    }

    /// Objective weight matrix blockdiag(w I6, (1-w) I6).
    pub fn weight(&self) -> DMatrix<f64> {
        let mut weight = DMatrix::zeros(12, 12);
        for i in 0..6 {
            weight[(i, i)] = self.w;
            weight[(i + 6, i + 6)] = 1.0 - self.w;
        }
        weight
    }

    /// Same model with the gains scaled; used by the regulator when its
    /// estimate of the human gains differs from the plant's.
    pub fn with_gain_ratios(&self, ratio_e: f64, ratio_c: f64) -> HumanModel {
        HumanModel {
            lambda_e: self.lambda_e * ratio_e,
            lambda_c: self.lambda_c * ratio_c,
            w: self.w,
            internal_model: self.internal_model,
        }
    }
}

fn check_spd(m: &Matrix6<f64>, what: &str) -> Result<()> {
    if (m - m.transpose()).amax() > 1e-9 {
        return Err(Error::InvalidConfig(format!("{what} must be symmetric")));
    }
    if nalgebra::Cholesky::new(*m).is_none() {
        return Err(Error::InvalidConfig(format!(
            "{what} must be positive definite"
        )));
    }
    Ok(())
}

/// True and internal-model Jacobians at the current configuration.
///
/// Human-side blocks are 6 x n_h in joint space. Robot-side blocks are
/// 6 x n_u in control-input space (the unicycle map is already composed in).
#[derive(Debug, Clone)]
pub struct JacobianBundle {
    pub j_he: DMatrix<f64>,
    pub j_hc: DMatrix<f64>,
    pub j_hat_he: DMatrix<f64>,
    pub j_hat_hc: DMatrix<f64>,
    pub j_re: DMatrix<f64>,
    pub j_rc: DMatrix<f64>,
}

fn vstack(top: &DMatrix<f64>, bottom: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    if top.nrows() != 6 || bottom.nrows() != 6 {
        return Err(Error::DimensionMismatch {
            what,
            expected: 6,
            actual: top.nrows().max(bottom.nrows()),
        });
    }
    if top.ncols() != bottom.ncols() {
        return Err(Error::DimensionMismatch {
            what,
            expected: top.ncols(),
            actual: bottom.ncols(),
        });
    }
    let mut stacked = DMatrix::zeros(12, top.ncols());
    stacked.view_mut((0, 0), (6, top.ncols())).copy_from(top);
    stacked.view_mut((6, 0), (6, top.ncols())).copy_from(bottom);
    Ok(stacked)
}

impl JacobianBundle {
    /// Stacked internal-model Jacobian [J_hat_he; J_hat_hc].
    pub fn stack_human_jacobian(&self) -> Result<DMatrix<f64>> {
        vstack(&self.j_hat_he, &self.j_hat_hc, "internal-model stack")
    }

    /// Stacked true human Jacobian [J_he; J_hc].
    pub fn stack_true_human_jacobian(&self) -> Result<DMatrix<f64>> {
        vstack(&self.j_he, &self.j_hc, "true human stack")
    }

    /// Stacked robot Jacobian [J_re; J_rc] in input space.
    pub fn stack_robot_jacobian(&self) -> Result<DMatrix<f64>> {
        vstack(&self.j_re, &self.j_rc, "robot stack")
    }
}

/// Solve the weighted normal equations (J^T W J) qdot = J^T W lambda xi by
/// SVD (the pseudo-inverse form). Errors out when the normal matrix is rank
/// deficient beyond `SINGULARITY_REL_TOL`.
pub(crate) fn weighted_velocity(
    j_hat: &DMatrix<f64>,
    weight: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    xi: &DVector<f64>,
) -> Result<DVector<f64>> {
    let rhs = j_hat.transpose() * weight * (lambda * xi);
    solve_normal(j_hat, weight, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()))
        .map(|m| DVector::from_column_slice(m.as_slice()))
}

/// Solve (J^T W J) X = RHS for a multi-column right-hand side.
pub(crate) fn solve_normal(
    j_hat: &DMatrix<f64>,
    weight: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let j_w = j_hat.transpose() * weight * j_hat;
    let svd = j_w.svd(true, true);
    let sigma_max = svd.singular_values.max();
    let sigma_min = svd.singular_values.min();
    if sigma_min < SINGULARITY_REL_TOL * sigma_max || sigma_max == 0.0 {
        return Err(Error::SingularNormalMatrix {
            smallest_singular_value: sigma_min,
        });
    }
    svd.solve(rhs, 0.0).map_err(|_| Error::SingularNormalMatrix {
        smallest_singular_value: sigma_min,
    })
}

/// The weighted least-squares operator J_w^{-1} J_hat^T W Lambda mapping the
/// stacked error to human joint rates.
pub(crate) fn velocity_operator(
    j_hat: &DMatrix<f64>,
    weight: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let rhs = j_hat.transpose() * weight * lambda;
    solve_normal(j_hat, weight, &rhs)
}

/// Human joint rates minimizing the weighted reaching/compensation cost for
/// the current errors: the unique minimizer of
/// w ||J_hat_he qdot - lambda_e e_e||^2 + (1-w) ||J_hat_hc qdot - lambda_c e_c||^2.
pub fn resolve_human_velocity(
    model: &HumanModel,
    bundle: &JacobianBundle,
    e_e: &ErrorVec6,
    e_c: &ErrorVec6,
) -> Result<DVector<f64>> {
    let j_hat = bundle.stack_human_jacobian()?;
    let xi = stack_errors(e_e, e_c);
    weighted_velocity(&j_hat, &model.weight(), &model.lambda(), &xi)
}

/// Stacked error vector [e_e; e_c].
pub fn stack_errors(e_e: &ErrorVec6, e_c: &ErrorVec6) -> DVector<f64> {
    let mut xi = DVector::zeros(12);
    xi.rows_mut(0, 6).copy_from(&e_e.as_vector());
    xi.rows_mut(6, 6).copy_from(&e_c.as_vector());
    xi
}
