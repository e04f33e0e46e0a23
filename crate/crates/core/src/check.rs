//! Fast numerical invariant checks behind the `check` subcommand: Jacobians
//! against finite differences, the human velocity law against its
//! normal-equations oracle, the Riccati residual, and the stability structure
//! of the assembled system.

use nalgebra::{DMatrix, DVector};

use crate::chain::{forward_kinematics, geometric_jacobian, KinematicChain, OwnerFilter};
use crate::config::{ModeSpec, Scenario};
use crate::dynamics::{assemble_system, build_bundle};
use crate::error::{Error, Result};
use crate::human::{resolve_human_velocity, stack_errors, HumanModel, JacobianBundle};
use crate::lqg::{dare_residual, lqr_gain_with_solution};
use crate::se3::ErrorVec6;

/// Eigenvalues via an iteration-bounded Schur decomposition. The unbounded
/// form can cycle on matrices with repeated exact-zero eigenvalues.
pub fn bounded_eigenvalues(
    m: &DMatrix<f64>,
) -> Result<nalgebra::DVector<nalgebra::Complex<f64>>> {
    nalgebra::linalg::Schur::try_new(m.clone(), 1e-13, 100_000)
        .map(|schur| schur.complex_eigenvalues())
        .ok_or(Error::EigenvalueIteration)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(bounded_eigenvalues(m)?
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max))
}

/// Largest real part over the eigenvalues of the assembled system matrix.
///
/// Computed on the reduced n_h x n_h product: the nonzero spectrum of
/// A = -J_h (J_w^-1 J_hat^T W Lambda) equals that of the reversed product,
/// and the remaining 12 - n_h eigenvalues of A are exactly zero.
pub fn system_max_real_eigenvalue(
    model: &HumanModel,
    bundle: &JacobianBundle,
) -> Result<f64> {
    let j_hat = bundle.stack_human_jacobian()?;
    let j_true = bundle.stack_true_human_jacobian()?;
    let op = crate::human::velocity_operator(&j_hat, &model.weight(), &model.lambda())?;
    let small = -(op * &j_true);
    let max_re = bounded_eigenvalues(&small)?
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if j_true.ncols() < 12 {
        Ok(max_re.max(0.0))
    } else {
        Ok(max_re)
    }
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn pass(name: &str, detail: String) -> Self {
        CheckOutcome {
            name: name.to_string(),
            passed: true,
            detail,
        }
    }

    fn fail(name: &str, detail: String) -> Self {
        CheckOutcome {
            name: name.to_string(),
            passed: false,
            detail,
        }
    }
}

/// xorshift64* generator: deterministic random configurations without a
/// dependency on an RNG crate.
pub struct SmallRng(u64);

impl SmallRng {
    pub fn new(seed: u64) -> Self {
        SmallRng(seed | 1)
    }

    pub fn next_f64(&mut self) -> f64 {
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        let bits = x.wrapping_mul(0x2545_F491_4F6C_DD1D) >> 11;
        bits as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [-range, range].
    pub fn symmetric(&mut self, range: f64) -> f64 {
        (2.0 * self.next_f64() - 1.0) * range
    }
}

/// Central finite differences of the forward kinematics: translation rows are
/// position differences, rotation rows the rotation vector of the relative
/// rotation over the step.
pub fn finite_difference_jacobian(
    chain: &KinematicChain,
    q: &DVector<f64>,
    frame: &str,
    step: f64,
) -> Result<DMatrix<f64>> {
    let n = chain.n_joints();
    let mut jacobian = DMatrix::zeros(6, n);
    for j in 0..n {
        let mut plus = q.clone();
        let mut minus = q.clone();
        plus[j] += step;
        minus[j] -= step;
        let pose_plus = forward_kinematics(chain, &plus, frame)?;
        let pose_minus = forward_kinematics(chain, &minus, frame)?;
        let linear = (pose_plus.position - pose_minus.position) / (2.0 * step);
        let relative = pose_plus.orientation * pose_minus.orientation.inverse();
        let angular = crate::se3::rotation_vector(&relative) / (2.0 * step);
        for r in 0..3 {
            jacobian[(r, j)] = linear[r];
            jacobian[(r + 3, j)] = angular[r];
        }
    }
    Ok(jacobian)
}

/// Gaussian elimination with partial pivoting; the independent factorization
/// behind the weighted least-squares oracle.
pub fn gauss_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut rhs = b.clone();
    for k in 0..n {
        let pivot_row = (k..n).max_by(|&i, &j| {
            m[(i, k)]
                .abs()
                .partial_cmp(&m[(j, k)].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if m[(pivot_row, k)] == 0.0 {
            return None;
        }
        if pivot_row != k {
            m.swap_rows(k, pivot_row);
            rhs.swap_rows(k, pivot_row);
        }
        for i in (k + 1)..n {
            let factor = m[(i, k)] / m[(k, k)];
            for j in k..n {
                m[(i, j)] -= factor * m[(k, j)];
            }
            rhs[i] -= factor * rhs[k];
        }
    }
    let mut x = DVector::zeros(n);
    for i in (0..n).rev() {
        let mut sum = rhs[i];
        for j in (i + 1)..n {
            sum -= m[(i, j)] * x[j];
        }
        x[i] = sum / m[(i, i)];
    }
    Some(x)
}

fn random_configuration(s: &Scenario, rng: &mut SmallRng) -> DVector<f64> {
    DVector::from_fn(s.chain.n_joints(), |i, _| {
        s.initial_q[i] + rng.symmetric(0.3)
    })
}

/// Geometric Jacobians of every named frame against central finite
/// differences at random configurations (tolerance 1e-6 absolute).
pub fn jacobian_fd_check(s: &Scenario, configurations: usize) -> CheckOutcome {
    let name = "jacobian-finite-difference";
    let mut rng = SmallRng::new(s.seed ^ 0x9E37_79B9_7F4A_7C15);
    let frames: Vec<String> = s.chain.frame_names().map(String::from).collect();
    let mut worst = 0.0_f64;
    for trial in 0..configurations {
        let q = if trial == 0 {
            s.initial_q.clone()
        } else {
            random_configuration(s, &mut rng)
        };
        for frame in &frames {
            let analytic = match geometric_jacobian(&s.chain, &q, frame, OwnerFilter::All) {
                Ok(j) => j,
                Err(e) => return CheckOutcome::fail(name, format!("jacobian failed: {e}")),
            };
            let fd = match finite_difference_jacobian(&s.chain, &q, frame, 1e-6) {
                Ok(j) => j,
                Err(e) => return CheckOutcome::fail(name, format!("finite differences failed: {e}")),
            };
            worst = worst.max((analytic - fd).amax());
        }
    }
    if worst < 1e-6 {
        CheckOutcome::pass(name, format!("max |J - J_fd| = {worst:.3e}"))
    } else {
        CheckOutcome::fail(name, format!("max |J - J_fd| = {worst:.3e} exceeds 1e-6"))
    }
}

/// The human-velocity resolution against the normal equations solved by an
/// independent dense factorization, plus the stationarity condition.
/// The resolver is injectable so a deliberately perturbed implementation can
/// be shown to fail the check.
pub fn ls_oracle_check_with<F>(s: &Scenario, instances: usize, resolver: F) -> CheckOutcome
where
    F: Fn(&HumanModel, &JacobianBundle, &ErrorVec6, &ErrorVec6) -> Result<DVector<f64>>,
{
    let name = "weighted-least-squares-oracle";
    let mut rng = SmallRng::new(s.seed ^ 0x5851_F42D_4C95_7F2D);
    let mut worst_rel = 0.0_f64;
    for _ in 0..instances {
        let q = random_configuration(s, &mut rng);
        let bundle = match build_bundle(&s.chain, &q, s.human.internal_model) {
            Ok(b) => b,
            Err(e) => return CheckOutcome::fail(name, format!("bundle failed: {e}")),
        };
        let e_e = random_error(&mut rng, 0.3);
        let e_c = random_error(&mut rng, 0.3);
        let qdot = match resolver(&s.human, &bundle, &e_e, &e_c) {
            Ok(v) => v,
            Err(e) => return CheckOutcome::fail(name, format!("resolver failed: {e}")),
        };
        let j_hat = match bundle.stack_human_jacobian() {
            Ok(j) => j,
            Err(e) => return CheckOutcome::fail(name, format!("stack failed: {e}")),
        };
        let weight = s.human.weight();
        let lambda_xi = s.human.lambda() * stack_errors(&e_e, &e_c);
        let j_w = j_hat.transpose() * &weight * &j_hat;
        let rhs = j_hat.transpose() * &weight * &lambda_xi;
        let oracle = match gauss_solve(&j_w, &rhs) {
            Some(x) => x,
            None => return CheckOutcome::fail(name, "oracle solve failed".into()),
        };
        let rel = (&qdot - &oracle).norm() / oracle.norm().max(1e-30);
        worst_rel = worst_rel.max(rel);
    }
    if worst_rel < 1e-9 {
        CheckOutcome::pass(name, format!("max relative deviation = {worst_rel:.3e}"))
    } else {
        CheckOutcome::fail(
            name,
            format!("max relative deviation = {worst_rel:.3e} exceeds 1e-9"),
        )
    }
}

pub fn ls_oracle_check(s: &Scenario, instances: usize) -> CheckOutcome {
    ls_oracle_check_with(s, instances, resolve_human_velocity)
}

fn random_error(rng: &mut SmallRng, range: f64) -> ErrorVec6 {
    ErrorVec6 {
        translation: nalgebra::Vector3::new(
            rng.symmetric(range),
            rng.symmetric(range),
            rng.symmetric(range),
        ),
        rotation: nalgebra::Vector3::new(
            rng.symmetric(range),
            rng.symmetric(range),
            rng.symmetric(range),
        ),
    }
}

/// Riccati residual of the regulator gain solved at the initial
/// configuration (threshold 1e-8).
pub fn riccati_residual_check(s: &Scenario) -> CheckOutcome {
    let name = "riccati-residual";
    let model_ctrl = s
        .human
        .with_gain_ratios(s.lambda_hat_ratio_e, s.lambda_hat_ratio_c);
    let sys = match build_bundle(&s.chain, &s.initial_q, s.human.internal_model)
        .and_then(|b| assemble_system(&model_ctrl, &b))
    {
        Ok(sys) => sys,
        Err(e) => return CheckOutcome::fail(name, format!("assembly failed: {e}")),
    };
    let (_, p) = match lqr_gain_with_solution(&sys, &s.regulator, s.dt) {
        Ok(pair) => pair,
        Err(e) => return CheckOutcome::fail(name, format!("gain computation failed: {e}")),
    };
    let n = sys.a.nrows();
    let a_d = DMatrix::identity(n, n) + &sys.a * s.dt;
    let b_d = &sys.b * s.dt;
    let residual = dare_residual(&a_d, &b_d, &s.regulator.q, &s.regulator.r, &s.regulator.s, &p);
    if residual < 1e-8 {
        CheckOutcome::pass(name, format!("DARE residual = {residual:.3e}"))
    } else {
        CheckOutcome::fail(name, format!("DARE residual = {residual:.3e} exceeds 1e-8"))
    }
}

/// Structure of the assembled system matrix at random configurations:
/// connected mode must be (at least marginally) stable, disconnected mode
/// must have an exactly zero reaching block.
pub fn stability_structure_check(s: &Scenario, configurations: usize) -> CheckOutcome {
    let name = match s.mode {
        ModeSpec::Connected => "marginal-stability",
        ModeSpec::DisconnectedAvatar => "disconnected-structure",
    };
    let mut rng = SmallRng::new(s.seed ^ 0x94D0_49BB_1331_11EB);
    let mut worst = f64::NEG_INFINITY;
    for trial in 0..configurations {
        let q = if trial == 0 {
            s.initial_q.clone()
        } else {
            random_configuration(s, &mut rng)
        };
        let bundle = match build_bundle(&s.chain, &q, s.human.internal_model) {
            Ok(b) => b,
            Err(e) => return CheckOutcome::fail(name, format!("assembly failed: {e}")),
        };
        match s.mode {
            ModeSpec::Connected => {
                let max_re = match system_max_real_eigenvalue(&s.human, &bundle) {
                    Ok(v) => v,
                    Err(e) => return CheckOutcome::fail(name, format!("eigenvalues failed: {e}")),
                };
                worst = worst.max(max_re);
            }
            ModeSpec::DisconnectedAvatar => {
                let sys = match assemble_system(&s.human, &bundle) {
                    Ok(sys) => sys,
                    Err(e) => return CheckOutcome::fail(name, format!("assembly failed: {e}")),
                };
                worst = worst.max(sys.a.view((0, 0), (6, 12)).amax());
            }
        }
    }
    match s.mode {
        ModeSpec::Connected if worst <= 1e-8 => {
            CheckOutcome::pass(name, format!("max Re(eig A) = {worst:.3e}"))
        }
        ModeSpec::Connected => {
            CheckOutcome::fail(name, format!("max Re(eig A) = {worst:.3e} exceeds 1e-8"))
        }
        ModeSpec::DisconnectedAvatar if worst == 0.0 => {
            CheckOutcome::pass(name, "reaching block of A is exactly zero".into())
        }
        ModeSpec::DisconnectedAvatar => {
            CheckOutcome::fail(name, format!("reaching block of A has |max| = {worst:.3e}"))
        }
    }
}

/// The full fast invariant suite for one scenario.
pub fn run_scenario_checks(s: &Scenario) -> Vec<CheckOutcome> {
    vec![
        jacobian_fd_check(s, 20),
        ls_oracle_check(s, 20),
        riccati_residual_check(s),
        stability_structure_check(s, 10),
    ]
}
