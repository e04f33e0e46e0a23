//! Kalman-style observer for the unmeasured reaching error and the LQR gain
//! on the relinearized system, both recomputed every step.
//!
//! Sign convention: the Kalman gain is L = P C^T R_cov^{-1} and the observer
//! applies it to the innovation so that the estimation error is governed by
//! A - L C, the stable closed-loop observer matrix.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::LinearizedSystem;
use crate::error::{Error, Result};
use crate::se3::ErrorVec6;

/// Residual threshold of the Riccati fixed-point iteration.
pub const RICCATI_TOL: f64 = 1e-10;
/// Iteration cap of the Riccati fixed-point iteration.
pub const RICCATI_MAX_ITER: usize = 10_000;
/// Consecutive residual growths before the iteration is declared divergent.
const RICCATI_DIVERGENCE_STREAK: usize = 100;

/// Estimated error state and its covariance.
#[derive(Debug, Clone)]
pub struct ObserverState {
    pub e_hat: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl ObserverState {
    /// Estimate at zero with the given initial covariance.
    pub fn new(p0: DMatrix<f64>) -> Self {
        ObserverState {
            e_hat: DVector::zeros(12),
            p: p0,
        }
    }
}

/// Noise covariances, cost weights and initial covariance of the LQG design.
#[derive(Debug, Clone)]
pub struct RegulatorConfig {
    /// Process noise covariance (12x12, PSD).
    pub q_cov: DMatrix<f64>,
    /// Observation noise covariance (6x6, PD).
    pub r_cov: DMatrix<f64>,
    /// State cost (12x12, PSD).
    pub q: DMatrix<f64>,
    /// Input cost (n_u x n_u, PD).
    pub r: DMatrix<f64>,
    /// Mixed state-input cost (12 x n_u), normally zero.
    pub s: DMatrix<f64>,
    /// Initial estimate covariance (12x12, PSD).
    pub p0: DMatrix<f64>,
    /// Optional per-component input saturation (absolute bounds).
    pub u_max: Option<DVector<f64>>,
}

impl RegulatorConfig {
    pub fn validate(&self, n_u: usize) -> Result<()> {
        check_square(&self.q_cov, 12, "Q_cov")?;
        check_square(&self.r_cov, 6, "R_cov")?;
        check_square(&self.q, 12, "Q")?;
        check_square(&self.r, n_u, "R")?;
        check_square(&self.p0, 12, "P(0)")?;
        if self.s.nrows() != 12 || self.s.ncols() != n_u {
            return Err(Error::DimensionMismatch {
                what: "S",
                expected: n_u,
                actual: self.s.ncols(),
            });
        }
        check_psd(&self.q_cov, "Q_cov")?;
        check_psd(&self.q, "Q")?;
        check_psd(&self.p0, "P(0)")?;
        check_pd(&self.r_cov, "R_cov")?;
        check_pd(&self.r, "R")?;
        if let Some(u_max) = &self.u_max {
            if u_max.len() != n_u {
                return Err(Error::DimensionMismatch {
                    what: "u_max",
                    expected: n_u,
                    actual: u_max.len(),
                });
            }
        }
        Ok(())
    }
}

fn check_square(m: &DMatrix<f64>, n: usize, what: &'static str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch {
            what,
            expected: n,
            actual: m.nrows(),
        });
    }
    Ok(())
}

fn check_pd(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if nalgebra::Cholesky::new(m.clone()).is_none() {
        return Err(Error::InvalidConfig(format!("{what} must be positive definite")));
    }
    Ok(())
}

fn check_psd(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if (m - m.transpose()).amax() > 1e-9 {
        return Err(Error::InvalidConfig(format!("{what} must be symmetric")));
    }
    let eigen = m.clone().symmetric_eigen();
    if eigen.eigenvalues.min() < -1e-9 {
        return Err(Error::InvalidConfig(format!(
            "{what} must be positive semidefinite"
        )));
    }
    Ok(())
}

/// Kalman estimator gain L = P C^T R_cov^{-1}.
pub fn observer_gain(
    p: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r_cov: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let pct = p * c.transpose();
    let lu = r_cov.clone().lu();
    // Solve R_cov^T L^T = (P C^T)^T, i.e. L R_cov = P C^T.
    let lt = lu
        .solve(&pct.transpose())
        .ok_or(Error::SingularMatrix { what: "R_cov" })?;
    Ok(lt.transpose())
}

/// Euler step of the covariance update P_dot = AP + PA^T - LCP + Q_cov,
/// followed by symmetrization and an eigenvalue floor at zero.
pub fn covariance_step(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    l: &DMatrix<f64>,
    q_cov: &DMatrix<f64>,
    dt: f64,
) -> DMatrix<f64> {
    let ap = a * p;
    let pdot = &ap + ap.transpose() - l * (c * p) + q_cov;
    let mut next = p + pdot * dt;
    next = (&next + next.transpose()) * 0.5;
    // Fast path: a PD matrix needs no flooring.
    if nalgebra::Cholesky::new(next.clone()).is_some() {
        return next;
    }
    let eigen = next.symmetric_eigen();
    let floored = eigen.eigenvalues.map(|v| v.max(0.0));
    &eigen.eigenvectors * DMatrix::from_diagonal(&floored) * eigen.eigenvectors.transpose()
}

/// Euler step of the observer: the estimate follows the modeled dynamics plus
/// the gain applied to the innovation y - C e_hat; the covariance advances by
/// `covariance_step`.
pub fn observer_step(
    obs: &ObserverState,
    sys: &LinearizedSystem,
    u: &DVector<f64>,
    y_measured: &ErrorVec6,
    cfg: &RegulatorConfig,
    dt: f64,
) -> Result<ObserverState> {
    let l = observer_gain(&obs.p, &sys.c, &cfg.r_cov)?;
    let y = DVector::from_column_slice(y_measured.as_vector().as_slice());
    let innovation = y - &sys.c * &obs.e_hat;
    let e_hat_dot = &sys.a * &obs.e_hat + &sys.b * u + &l * innovation;
    let e_hat = &obs.e_hat + e_hat_dot * dt;
    let p = covariance_step(&obs.p, &sys.a, &sys.c, &l, &cfg.q_cov, dt);
    Ok(ObserverState { e_hat, p })
}

/// Iterate the covariance update to its steady state (frozen system).
pub fn steady_state_covariance(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    cfg: &RegulatorConfig,
    dt: f64,
) -> Result<DMatrix<f64>> {
    let mut p = cfg.p0.clone();
    for _ in 0..200_000 {
        let l = observer_gain(&p, c, &cfg.r_cov)?;
        let next = covariance_step(&p, a, c, &l, &cfg.q_cov, dt);
        let delta = (&next - &p).amax();
        p = next;
        if delta < 1e-12 * p.amax().max(1.0) {
            break;
        }
    }
    Ok(p)
}

/// Solution of the discrete algebraic Riccati equation for the Euler
/// discretization A_d = I + A dt, B_d = B dt, by the doubling form of the
/// fixed-point iteration (residual < `RICCATI_TOL`, capped iterations, with
/// divergence detection).
fn solve_dare(
    a_d: &DMatrix<f64>,
    b_d: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a_d.nrows();
    let r_chol = nalgebra::Cholesky::new(r.clone()).ok_or(Error::SingularMatrix { what: "R" })?;
    // Cross-term elimination: A_hat = A - B R^{-1} S^T, Q_hat = Q - S R^{-1} S^T.
    let r_inv_st = r_chol.solve(&s.transpose());
    let a_hat = a_d - b_d * &r_inv_st;
    let q_hat = q - s * &r_inv_st;
    let g0 = b_d * r_chol.solve(&b_d.transpose());

    let mut a_k = a_hat;
    let mut g = g0;
    let mut h = q_hat;
    let identity = DMatrix::identity(n, n);

    let mut previous_residual = f64::INFINITY;
    let mut growth_streak = 0usize;
    for iteration in 0..RICCATI_MAX_ITER {
        let w = &identity + &g * &h;
        let w_lu = w.lu();
        let wa = w_lu
            .solve(&a_k)
            .ok_or(Error::SingularMatrix { what: "I + GH" })?;
        let wg = w_lu
            .solve(&g)
            .ok_or(Error::SingularMatrix { what: "I + GH" })?;
        let h_next = &h + a_k.transpose() * &h * &wa;
        let g_next = &g + &a_k * wg * a_k.transpose();
        let a_next = &a_k * wa;

        let residual = (&h_next - &h).amax();
        if !residual.is_finite() || !h_next.amax().is_finite() {
            return Err(Error::RiccatiDivergence {
                residual,
                iterations: iteration,
            });
        }
        if residual > previous_residual {
            growth_streak += 1;
            if growth_streak >= RICCATI_DIVERGENCE_STREAK {
                return Err(Error::RiccatiDivergence {
                    residual,
                    iterations: iteration,
                });
            }
        } else {
            growth_streak = 0;
        }
        previous_residual = residual;
        a_k = a_next;
        g = g_next;
        h = h_next;
        if residual < RICCATI_TOL {
            break;
        }
        // Rounding floor: stop once the update is pure noise relative to the
        // magnitude of the solution.
        if residual < 1e-13 * h.amax().max(1.0) {
            break;
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Max-abs residual of the DARE at a candidate solution; used by the check
/// suite and tests.
pub fn dare_residual(
    a_d: &DMatrix<f64>,
    b_d: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let btp = b_d.transpose() * p;
    let gram = r + &btp * b_d;
    let cross = a_d.transpose() * p * b_d + s;
    let gain_term = match gram.lu().solve(&(&btp * a_d + s.transpose())) {
        Some(x) => &cross * x,
        None => return f64::INFINITY,
    };
    (a_d.transpose() * p * a_d - p - gain_term + q).amax()
}

/// Discretize the linearized system at `dt` and return the LQR gain for
/// u = -K e_hat. Uncontrollable-but-stable modes are left where they are.
pub fn lqr_gain(sys: &LinearizedSystem, cfg: &RegulatorConfig, dt: f64) -> Result<DMatrix<f64>> {
    lqr_gain_with_solution(sys, cfg, dt).map(|(k, _)| k)
}

/// As `lqr_gain`, additionally returning the Riccati solution so callers can
/// verify the DARE residual.
pub fn lqr_gain_with_solution(
    sys: &LinearizedSystem,
    cfg: &RegulatorConfig,
    dt: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = sys.a.nrows();
    let a_d = DMatrix::identity(n, n) + &sys.a * dt;
    let b_d = &sys.b * dt;
    let p = solve_dare(&a_d, &b_d, &cfg.q, &cfg.r, &cfg.s)?;
    let gram = &cfg.r + b_d.transpose() * &p * &b_d;
    let rhs = b_d.transpose() * &p * &a_d + cfg.s.transpose();
    let k = gram
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularMatrix { what: "R + B'PB" })?;
    Ok((k, p))
}

/// Feedback law u = -K e_hat with optional per-component saturation.
pub fn control_input(
    k: &DMatrix<f64>,
    e_hat: &DVector<f64>,
    u_max: Option<&DVector<f64>>,
) -> DVector<f64> {
    let mut u = -(k * e_hat);
    if let Some(bounds) = u_max {
        for i in 0..u.len() {
            u[i] = u[i].clamp(-bounds[i], bounds[i]);
        }
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::output_matrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config_with(n_u: usize) -> RegulatorConfig {
        RegulatorConfig {
            q_cov: DMatrix::identity(12, 12),
            r_cov: DMatrix::identity(6, 6) * 0.01,
            q: DMatrix::identity(12, 12),
            r: DMatrix::identity(n_u, n_u),
            s: DMatrix::zeros(12, n_u),
            p0: DMatrix::identity(12, 12),
            u_max: None,
        }
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn observer_gain_block_identity() {
        let c = output_matrix();
        for r in [1.0, 0.25] {
            let l = observer_gain(
                &DMatrix::identity(12, 12),
                &c,
                &(DMatrix::identity(6, 6) * r),
            )
            .unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    assert!(l[(i, j)].abs() < 1e-14);
                    let expected = if i == j { 1.0 / r } else { 0.0 };
                    assert!((l[(i + 6, j)] - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn observer_gain_scales_with_noise_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = random_spd(&mut rng, 12);
        let c = output_matrix();
        let l = observer_gain(&p, &c, &(DMatrix::identity(6, 6) * 0.01)).unwrap();
        let expected = &p * c.transpose() * 100.0;
        assert!((&l - expected).amax() < 1e-9);
    }

    #[test]
    fn observer_gain_matches_linear_solve_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..20 {
            let p = random_spd(&mut rng, 12);
            let r_cov = random_spd(&mut rng, 6) * 0.1;
            let c = output_matrix();
            let l = observer_gain(&p, &c, &r_cov).unwrap();
            // Independent check: L R_cov = P C^T.
            let residual = (&l * &r_cov - &p * c.transpose()).amax();
            assert!(residual < 1e-10);
        }
    }

    #[test]
    fn covariance_step_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p = random_spd(&mut rng, 12);
        let next = covariance_step(
            &p,
            &DMatrix::zeros(12, 12),
            &output_matrix(),
            &DMatrix::zeros(12, 6),
            &DMatrix::zeros(12, 12),
            1e-3,
        );
        assert!((&next - &p).amax() < 1e-15);
    }

    #[test]
    fn covariance_step_block_structure() {
        let c = output_matrix();
        let p = DMatrix::identity(12, 12);
        let r_cov = DMatrix::identity(6, 6);
        let l = observer_gain(&p, &c, &r_cov).unwrap();
        let dt = 1e-3;
        let next = covariance_step(&p, &DMatrix::zeros(12, 12), &c, &l, &DMatrix::zeros(12, 12), dt);
        for i in 0..6 {
            assert!((next[(i, i)] - 1.0).abs() < 1e-15, "reaching block changed");
            assert!((next[(i + 6, i + 6)] - (1.0 - dt)).abs() < 1e-12);
        }
    }

    #[test]
    fn covariance_step_symmetry_and_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let a = DMatrix::from_fn(12, 12, |_, _| rng.random_range(-1.0..1.0));
        let c = output_matrix();
        let mut p = random_spd(&mut rng, 12) * 0.1;
        let cfg = config_with(7);
        for _ in 0..200 {
            let l = observer_gain(&p, &c, &cfg.r_cov).unwrap();
            p = covariance_step(&p, &a, &c, &l, &DMatrix::zeros(12, 12), 1e-2);
            for i in 0..12 {
                for j in 0..12 {
                    assert_eq!(p[(i, j)], p[(j, i)]);
                }
            }
        }
        let eigen = p.clone().symmetric_eigen();
        assert!(eigen.eigenvalues.min() >= -1e-9);
    }

    #[test]
    fn scalar_covariance_reaches_known_steady_state() {
        // 1-state, 1-output: P_dot = 2aP - P^2/r + q has steady state
        // P_inf = r (a + sqrt(a^2 + q/r)).
        let (a, q, r) = (-1.0_f64, 2.0, 0.5);
        let expected = r * (a + (a * a + q / r).sqrt());
        let a_m = DMatrix::from_element(1, 1, a);
        let c_m = DMatrix::from_element(1, 1, 1.0);
        let q_m = DMatrix::from_element(1, 1, q);
        let r_m = DMatrix::from_element(1, 1, r);
        let mut p = DMatrix::from_element(1, 1, 10.0);
        for _ in 0..2_000_000 {
            let l = observer_gain(&p, &c_m, &r_m).unwrap();
            let next = covariance_step(&p, &a_m, &c_m, &l, &q_m, 1e-4);
            let delta = (&next - &p).amax();
            p = next;
            if delta < 1e-14 {
                break;
            }
        }
        assert!(
            (p[(0, 0)] - expected).abs() < 1e-6,
            "steady state {} vs expected {expected}",
            p[(0, 0)]
        );
    }

    fn toy_system(rng: &mut ChaCha8Rng) -> LinearizedSystem {
        // Stable random plant with full measurement coupling.
        let m = random_spd(rng, 12);
        let a = -m * 0.3;
        let b = DMatrix::from_fn(12, 7, |_, _| rng.random_range(-0.5..0.5));
        LinearizedSystem {
            a,
            b,
            c: output_matrix(),
            d: DMatrix::zeros(6, 7),
        }
    }

    #[test]
    fn observer_zero_innovation_follows_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let sys = toy_system(&mut rng);
        let cfg = config_with(7);
        let xi = DVector::from_fn(12, |_, _| rng.random_range(-0.5..0.5));
        let obs = ObserverState {
            e_hat: xi.clone(),
            p: cfg.p0.clone(),
        };
        let u = DVector::from_fn(7, |_, _| rng.random_range(-0.2..0.2));
        // Measurement consistent with the true state: innovation is zero.
        let y = ErrorVec6::from_vector(&nalgebra::Vector6::from_iterator(
            xi.rows(6, 6).iter().copied(),
        ));
        let dt = 1e-3;
        let next = observer_step(&obs, &sys, &u, &y, &cfg, dt).unwrap();
        let expected = &xi + (&sys.a * &xi + &sys.b * &u) * dt;
        assert!((next.e_hat - expected).amax() < 1e-14);
    }

    #[test]
    fn observer_error_follows_closed_loop_ode() {
        // Frozen system at steady-state covariance: the estimation error
        // epsilon = xi - e_hat obeys the discrete recursion of A - LC.
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let sys = toy_system(&mut rng);
        let mut cfg = config_with(7);
        let dt = 1e-4;
        cfg.p0 = steady_state_covariance(&sys.a, &sys.c, &cfg, dt).unwrap();
        let l = observer_gain(&cfg.p0, &sys.c, &cfg.r_cov).unwrap();

        let mut xi = DVector::from_fn(12, |_, _| rng.random_range(-0.5..0.5));
        let mut obs = ObserverState {
            e_hat: DVector::zeros(12),
            p: cfg.p0.clone(),
        };
        let u = DVector::from_fn(7, |_, _| rng.random_range(-0.2..0.2));
        let mut epsilon_oracle = &xi - &obs.e_hat;
        let closed_loop = &sys.a - &l * &sys.c;
        for _ in 0..1000 {
            let y = ErrorVec6::from_vector(&nalgebra::Vector6::from_iterator(
                xi.rows(6, 6).iter().copied(),
            ));
            let next_obs = observer_step(&obs, &sys, &u, &y, &cfg, dt).unwrap();
            xi = &xi + (&sys.a * &xi + &sys.b * &u) * dt;
            obs = next_obs;
            epsilon_oracle = &epsilon_oracle + &closed_loop * &epsilon_oracle * dt;
        }
        let epsilon_sim = &xi - &obs.e_hat;
        assert!(
            (epsilon_sim - epsilon_oracle).amax() < 1e-8,
            "observer error deviates from its closed-loop dynamics"
        );
    }

    #[test]
    fn lqr_zero_state_cost_gives_zero_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let sys = toy_system(&mut rng);
        let mut cfg = config_with(7);
        cfg.q = DMatrix::zeros(12, 12);
        let k = lqr_gain(&sys, &cfg, 1e-3).unwrap();
        assert_eq!(k.amax(), 0.0);
    }

    #[test]
    fn lqr_matches_scalar_dare_closed_form() {
        // dt = 1 makes the internal discretization the identity map on the
        // provided scalars: a_d = 1 + a, b_d = b.
        let (a_d, b_d, q, r) = (0.95, 0.1, 2.0, 0.5);
        let sys = LinearizedSystem {
            a: DMatrix::from_element(1, 1, a_d - 1.0),
            b: DMatrix::from_element(1, 1, b_d),
            c: DMatrix::zeros(1, 1),
            d: DMatrix::zeros(1, 1),
        };
        let cfg = RegulatorConfig {
            q_cov: DMatrix::identity(1, 1),
            r_cov: DMatrix::identity(1, 1),
            q: DMatrix::from_element(1, 1, q),
            r: DMatrix::from_element(1, 1, r),
            s: DMatrix::zeros(1, 1),
            p0: DMatrix::identity(1, 1),
            u_max: None,
        };
        let k = lqr_gain(&sys, &cfg, 1.0).unwrap()[(0, 0)];
        // Scalar DARE: b^2 p^2 + (r - a^2 r - q b^2) p - q r = 0.
        let bb = b_d * b_d;
        let lin = r - a_d * a_d * r - q * bb;
        let p = (-lin + (lin * lin + 4.0 * bb * q * r).sqrt()) / (2.0 * bb);
        let k_expected = b_d * p * a_d / (r + p * bb);
        assert!(
            (k - k_expected).abs() < 1e-9,
            "gain {k} vs closed form {k_expected}"
        );
    }

    #[test]
    fn lqr_cost_structure_zeroes_unweighted_columns() {
        // Decoupled blocks: with cost only on the compensation half, the gain
        // ignores the reaching components entirely.
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let mut a = DMatrix::zeros(12, 12);
        let block_e = random_spd(&mut rng, 6);
        let block_c = random_spd(&mut rng, 6);
        a.view_mut((0, 0), (6, 6)).copy_from(&(-&block_e * 0.5));
        a.view_mut((6, 6), (6, 6)).copy_from(&(-&block_c * 0.5));
        let mut b = DMatrix::zeros(12, 7);
        for i in 0..6 {
            for j in 0..7 {
                b[(i, j)] = rng.random_range(-0.5..0.5);
                b[(i + 6, j)] = rng.random_range(-0.5..0.5);
            }
        }
        let sys = LinearizedSystem {
            a,
            b,
            c: output_matrix(),
            d: DMatrix::zeros(6, 7),
        };
        let mut cfg = config_with(7);
        let diag = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 10.0, 10.0, 10.0, 0.1, 0.1, 0.1];
        cfg.q = DMatrix::from_diagonal(&DVector::from_row_slice(&diag));
        let k = lqr_gain(&sys, &cfg, 1e-2).unwrap();
        assert!(k.view((0, 0), (7, 6)).amax() < 1e-12, "reaching columns must vanish");
        assert!(k.view((0, 6), (7, 6)).amax() > 1e-6, "compensation columns must act");
    }

    #[test]
    fn dare_residual_is_small_on_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let sys = toy_system(&mut rng);
            let cfg = config_with(7);
            let dt = 1e-2;
            let a_d = DMatrix::identity(12, 12) + &sys.a * dt;
            let b_d = &sys.b * dt;
            let p = solve_dare(&a_d, &b_d, &cfg.q, &cfg.r, &cfg.s).unwrap();
            let res = dare_residual(&a_d, &b_d, &cfg.q, &cfg.r, &cfg.s, &p);
            assert!(res < 1e-8, "DARE residual {res:.3e}");
        }
    }

    #[test]
    fn dare_with_cross_term_satisfies_full_equation() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let sys = toy_system(&mut rng);
        let mut cfg = config_with(7);
        cfg.s = DMatrix::from_fn(12, 7, |_, _| rng.random_range(-0.05..0.05));
        let dt = 1e-2;
        let a_d = DMatrix::identity(12, 12) + &sys.a * dt;
        let b_d = &sys.b * dt;
        let p = solve_dare(&a_d, &b_d, &cfg.q, &cfg.r, &cfg.s).unwrap();
        let res = dare_residual(&a_d, &b_d, &cfg.q, &cfg.r, &cfg.s, &p);
        assert!(res < 1e-8, "DARE residual with cross term {res:.3e}");
    }

    #[test]
    fn unstabilizable_mode_reports_divergence() {
        // Unstable first mode is untouched by the input: no stabilizing
        // solution exists.
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 0)] = 0.2;
        a[(1, 1)] = -1.0;
        let mut b = DMatrix::zeros(2, 1);
        b[(1, 0)] = 1.0;
        let sys = LinearizedSystem {
            a,
            b,
            c: DMatrix::zeros(1, 2),
            d: DMatrix::zeros(1, 1),
        };
        let cfg = RegulatorConfig {
            q_cov: DMatrix::identity(2, 2),
            r_cov: DMatrix::identity(1, 1),
            q: DMatrix::identity(2, 2),
            r: DMatrix::identity(1, 1),
            s: DMatrix::zeros(2, 1),
            p0: DMatrix::identity(2, 2),
            u_max: None,
        };
        let err = lqr_gain(&sys, &cfg, 1.0).unwrap_err();
        assert!(matches!(err, Error::RiccatiDivergence { .. }), "got {err:?}");
    }

    #[test]
    fn control_input_basics() {
        let k = DMatrix::identity(7, 12);
        assert_eq!(control_input(&k, &DVector::zeros(12), None).amax(), 0.0);

        // Gain selecting the compensation block.
        let mut selector = DMatrix::zeros(7, 12);
        selector[(0, 6)] = 1.0;
        let mut e_hat = DVector::zeros(12);
        e_hat[6] = 0.1;
        let u = control_input(&selector, &e_hat, None);
        assert!((u[0] + 0.1).abs() < 1e-15);
        assert_eq!(u.rows(1, 6).amax(), 0.0);

        let bounds = DVector::from_element(7, 0.05);
        let saturated = control_input(&selector, &e_hat, Some(&bounds));
        assert!((saturated[0] + 0.05).abs() < 1e-15);
    }

    #[test]
    fn regulator_config_validation() {
        let mut cfg = config_with(7);
        assert!(cfg.validate(7).is_ok());
        cfg.r_cov = DMatrix::zeros(6, 6);
        assert!(cfg.validate(7).is_err());
        let mut cfg = config_with(7);
        cfg.q = -DMatrix::identity(12, 12);
        assert!(cfg.validate(7).is_err());
        let cfg = config_with(6);
        assert!(cfg.validate(7).is_err());
    }
}
