//! Trial execution: the full estimate-and-regulate loop on the nonlinear
//! chain, frozen linearized runs, and the gain-mismatch stability sweep.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::chain::{BaseMode, KinematicChain, Owner};
use crate::config::{ModeSpec, Scenario};
use crate::dynamics::{
    assemble_system, build_bundle, compute_errors, offset_targets, step_errors, LinearizedSystem,
};
use crate::error::{Error, Result};
use crate::lqg::{
    control_input, lqr_gain, observer_gain, observer_step, steady_state_covariance, ObserverState,
};
use crate::se3::ErrorVec6;

/// Equilibrium detection: the trial ends early when the max-abs error stays
/// below this for `EQUILIBRIUM_STEPS` consecutive steps.
pub const EQUILIBRIUM_TOL: f64 = 1e-4;
pub const EQUILIBRIUM_STEPS: usize = 50;

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: f64,
    pub q_h: DVector<f64>,
    pub q_r: DVector<f64>,
    pub e_e: ErrorVec6,
    pub e_c: ErrorVec6,
    pub e_hat: DVector<f64>,
    pub u: DVector<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceMetadata {
    pub scenario_name: String,
    pub config_hash: String,
    pub mode: ModeSpec,
    pub w: f64,
    pub w_defaulted: bool,
    pub lambda_e: Vec<f64>,
    pub lambda_c: Vec<f64>,
    pub lambda_hat_ratio_e: f64,
    pub lambda_hat_ratio_c: f64,
    pub n_human: usize,
    pub n_robot: usize,
    pub n_inputs: usize,
    pub dt: f64,
    pub horizon: f64,
    pub controller_enabled: bool,
    pub linearized: bool,
    pub seed: u64,
    pub steps: usize,
    pub early_terminated: bool,
    pub final_reaching_error: f64,
    pub final_compensation_error: f64,
    pub scenario: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub records: Vec<StepRecord>,
    pub metadata: TraceMetadata,
}

impl SimulationTrace {
    pub fn final_record(&self) -> &StepRecord {
        self.records.last().expect("trace has at least one record")
    }

    pub fn final_reaching_norm(&self) -> f64 {
        self.final_record().e_e.norm()
    }

    pub fn final_compensation_norm(&self) -> f64 {
        self.final_record().e_c.norm()
    }

    pub fn peak_reaching_norm(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.e_e.norm())
            .fold(0.0, f64::max)
    }

    pub fn peak_compensation_norm(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.e_c.norm())
            .fold(0.0, f64::max)
    }

    /// Norm of the estimation error xi - e_hat at every record.
    pub fn estimate_error_norms(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| {
                let xi = crate::human::stack_errors(&r.e_e, &r.e_c);
                (xi - &r.e_hat).norm()
            })
            .collect()
    }

    /// Norm of the innovation y - C e_hat at every record.
    pub fn innovation_norms(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| {
                let y = r.e_c.as_vector();
                let y_hat = r.e_hat.rows(6, 6);
                (DVector::from_column_slice(y.as_slice()) - y_hat).norm()
            })
            .collect()
    }

    /// Total planar path length of the unicycle base over the trial.
    pub fn base_path_length(&self) -> f64 {
        let mut length = 0.0;
        for pair in self.records.windows(2) {
            let dx = pair[1].q_r[0] - pair[0].q_r[0];
            let dy = pair[1].q_r[1] - pair[0].q_r[1];
            length += (dx * dx + dy * dy).sqrt();
        }
        length
    }
}

fn split_q(chain: &KinematicChain, q: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let mut q_h = Vec::new();
    let mut q_r = Vec::new();
    for (i, joint) in chain.joints().iter().enumerate() {
        match joint.owner {
            Owner::Human => q_h.push(q[i]),
            Owner::Robot => q_r.push(q[i]),
        }
    }
    (DVector::from_vec(q_h), DVector::from_vec(q_r))
}

fn make_metadata(s: &Scenario, records: &[StepRecord], early: bool) -> TraceMetadata {
    let last = records.last().expect("at least one record");
    TraceMetadata {
        scenario_name: s.name.clone(),
        config_hash: s.config_hash.clone(),
        mode: s.mode,
        w: s.human.w,
        w_defaulted: s.w_defaulted,
        lambda_e: s.config.human.lambda_e.to_vec(),
        lambda_c: s.config.human.lambda_c.to_vec(),
        lambda_hat_ratio_e: s.lambda_hat_ratio_e,
        lambda_hat_ratio_c: s.lambda_hat_ratio_c,
        n_human: s.chain.n_human(),
        n_robot: s.chain.n_robot(),
        n_inputs: s.chain.n_inputs(),
        dt: s.dt,
        horizon: s.horizon,
        controller_enabled: s.controller_enabled,
        linearized: s.linearized,
        seed: s.seed,
        steps: records.len(),
        early_terminated: early,
        final_reaching_error: last.e_e.norm(),
        final_compensation_error: last.e_c.norm(),
        scenario: serde_json::to_value(&s.config).unwrap_or(serde_json::Value::Null),
    }
}

/// Run a scenario with the dispatch implied by its flags: frozen linearized
/// run when requested, otherwise the nonlinear loop for its mode.
pub fn run(s: &Scenario) -> Result<SimulationTrace> {
    if s.linearized {
        run_linear_trial(s)
    } else {
        match s.mode {
            ModeSpec::Connected => run_trial(s),
            ModeSpec::DisconnectedAvatar => run_avatar_trial(s),
        }
    }
}

/// Nonlinear trial of a physically connected scenario.
pub fn run_trial(s: &Scenario) -> Result<SimulationTrace> {
    if s.mode != ModeSpec::Connected {
        return Err(Error::InvalidConfig(
            "run_trial expects a connected scenario; use run_avatar_trial".into(),
        ));
    }
    run_nonlinear(s)
}

/// Nonlinear trial of the physically disconnected pilot-avatar scenario.
pub fn run_avatar_trial(s: &Scenario) -> Result<SimulationTrace> {
    if s.mode != ModeSpec::DisconnectedAvatar {
        return Err(Error::InvalidConfig(
            "run_avatar_trial expects a disconnected_avatar scenario".into(),
        ));
    }
    if s.chain.base_mode() != BaseMode::Unicycle {
        return Err(Error::InvalidConfig(
            "avatar scenarios need a unicycle base".into(),
        ));
    }
    run_nonlinear(s)
}

fn run_nonlinear(s: &Scenario) -> Result<SimulationTrace> {
    let chain = &s.chain;
    let n_u = chain.n_inputs();
    let targets = offset_targets(chain, &s.initial_q, &s.target_translation, &s.target_rotation)?;
    let model_true = &s.human;
    let model_ctrl = s
        .human
        .with_gain_ratios(s.lambda_hat_ratio_e, s.lambda_hat_ratio_c);

    let n_steps = (s.horizon / s.dt).floor() as usize;
    let mut obs = ObserverState::new(s.regulator.p0.clone());
    let mut q = s.initial_q.clone();
    let mut errors = compute_errors(chain, &q, &targets)?;
    let mut records = Vec::with_capacity(n_steps + 1);
    let mut quiet = 0usize;
    let mut early = false;

    for step in 0..=n_steps {
        let t = step as f64 * s.dt;
        let tag = |e: Error| e.at_step(step, t);
        let bundle = build_bundle(chain, &q, model_true.internal_model).map_err(tag)?;
        let sys_ctrl = assemble_system(&model_ctrl, &bundle).map_err(tag)?;
        let u = if s.controller_enabled {
            let k = lqr_gain(&sys_ctrl, &s.regulator, s.dt).map_err(tag)?;
            control_input(&k, &obs.e_hat, s.regulator.u_max.as_ref())
        } else {
            DVector::zeros(n_u)
        };
        let (q_h, q_r) = split_q(chain, &q);
        records.push(StepRecord {
            t,
            q_h,
            q_r,
            e_e: errors.e_e,
            e_c: errors.e_c,
            e_hat: obs.e_hat.clone(),
            u: u.clone(),
        });
        if step == n_steps || early {
            break;
        }
        obs = observer_step(&obs, &sys_ctrl, &u, &errors.e_c, &s.regulator, s.dt).map_err(tag)?;
        let (q_next, next_errors) =
            step_errors(chain, model_true, &q, &targets, &u, s.dt).map_err(tag)?;
        q = q_next;
        errors = next_errors;
        if errors.amax() < EQUILIBRIUM_TOL {
            quiet += 1;
        } else {
            quiet = 0;
        }
        early = quiet >= EQUILIBRIUM_STEPS;
    }

    Ok(SimulationTrace {
        metadata: make_metadata(s, &records, early),
        records,
    })
}

/// Simulate the linearized system frozen at the initial configuration: the
/// error state evolves by the constant (A, B) while the observer and
/// controller run exactly as in the nonlinear loop.
pub fn run_linear_trial(s: &Scenario) -> Result<SimulationTrace> {
    let chain = &s.chain;
    let n_u = chain.n_inputs();
    let targets = offset_targets(chain, &s.initial_q, &s.target_translation, &s.target_rotation)?;
    let bundle = build_bundle(chain, &s.initial_q, s.human.internal_model)?;
    let sys_true = assemble_system(&s.human, &bundle)?;
    let model_ctrl = s
        .human
        .with_gain_ratios(s.lambda_hat_ratio_e, s.lambda_hat_ratio_c);
    let sys_ctrl = assemble_system(&model_ctrl, &bundle)?;
    // The system is frozen, so the regulator gain is constant over the trial.
    let gain = if s.controller_enabled {
        Some(lqr_gain(&sys_ctrl, &s.regulator, s.dt)?)
    } else {
        None
    };

    let n_steps = (s.horizon / s.dt).floor() as usize;
    let mut xi = compute_errors(chain, &s.initial_q, &targets)?.stacked();
    let mut obs = ObserverState::new(s.regulator.p0.clone());
    let (q_h0, q_r0) = split_q(chain, &s.initial_q);
    let mut records = Vec::with_capacity(n_steps + 1);
    let mut quiet = 0usize;
    let mut early = false;

    for step in 0..=n_steps {
        let t = step as f64 * s.dt;
        let u = match &gain {
            Some(k) => control_input(k, &obs.e_hat, s.regulator.u_max.as_ref()),
            None => DVector::zeros(n_u),
        };
        let e_e = ErrorVec6::from_vector(&nalgebra::Vector6::from_iterator(
            xi.rows(0, 6).iter().copied(),
        ));
        let e_c = ErrorVec6::from_vector(&nalgebra::Vector6::from_iterator(
            xi.rows(6, 6).iter().copied(),
        ));
        records.push(StepRecord {
            t,
            q_h: q_h0.clone(),
            q_r: q_r0.clone(),
            e_e,
            e_c,
            e_hat: obs.e_hat.clone(),
            u: u.clone(),
        });
        if step == n_steps || early {
            break;
        }
        obs = observer_step(&obs, &sys_ctrl, &u, &e_c, &s.regulator, s.dt)
            .map_err(|e| e.at_step(step, t))?;
        xi = &xi + (&sys_true.a * &xi + &sys_true.b * &u) * s.dt;
        let amax = xi.amax();
        if amax < EQUILIBRIUM_TOL {
            quiet += 1;
        } else {
            quiet = 0;
        }
        early = quiet >= EQUILIBRIUM_STEPS;
    }

    Ok(SimulationTrace {
        metadata: make_metadata(s, &records, early),
        records,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepCell {
    pub ratio_e: f64,
    pub ratio_c: f64,
    pub stable: bool,
}

#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub cells: Vec<SweepCell>,
}

/// Log-spaced ratios between 10^lo_exp and 10^hi_exp inclusive.
pub fn log_spaced_ratios(lo_exp: f64, hi_exp: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![10f64.powf(0.5 * (lo_exp + hi_exp))];
    }
    (0..n)
        .map(|i| 10f64.powf(lo_exp + (hi_exp - lo_exp) * i as f64 / (n - 1) as f64))
        .collect()
}

/// One-step map of the composite (plant + observer + controller) linearized
/// closed loop for a gain-ratio cell, using converged steady-state gains:
/// state [xi; e_hat], plant driven by the true gains, regulator designed on
/// the scaled ones.
pub fn sweep_closed_loop(
    base: &Scenario,
    ratio_e: f64,
    ratio_c: f64,
) -> Result<DMatrix<f64>> {
    let bundle = build_bundle(&base.chain, &base.initial_q, base.human.internal_model)?;
    let sys_true = assemble_system(&base.human, &bundle)?;
    let model_hat = base.human.with_gain_ratios(ratio_e, ratio_c);
    let sys_hat = assemble_system(&model_hat, &bundle)?;
    closed_loop_matrix(&sys_true, &sys_hat, base)
}

fn closed_loop_matrix(
    sys_true: &LinearizedSystem,
    sys_hat: &LinearizedSystem,
    base: &Scenario,
) -> Result<DMatrix<f64>> {
    let dt = base.dt;
    let k = lqr_gain(sys_hat, &base.regulator, dt)?;
    let p_inf = steady_state_covariance(&sys_hat.a, &sys_hat.c, &base.regulator, dt)?;
    let l = observer_gain(&p_inf, &sys_hat.c, &base.regulator.r_cov)?;

    let bk = &sys_true.b * &k;
    let lc = &l * &sys_hat.c;
    let mut m = DMatrix::identity(24, 24);
    // xi_{k+1}    = xi + dt (A_true xi - B K e_hat)
    // e_hat_{k+1} = e_hat + dt (A_hat e_hat - B K e_hat + L C (xi - e_hat))
    m.view_mut((0, 0), (12, 12))
        .copy_from(&(DMatrix::identity(12, 12) + &sys_true.a * dt));
    m.view_mut((0, 12), (12, 12)).copy_from(&(-&bk * dt));
    m.view_mut((12, 0), (12, 12)).copy_from(&(&lc * dt));
    m.view_mut((12, 12), (12, 12)).copy_from(
        &(DMatrix::identity(12, 12) + (&sys_hat.a - &sys_hat.b * &k - &lc) * dt),
    );
    Ok(m)
}

/// Initial composite state for a sweep trial: the scenario's initial error
/// with a zero estimate.
pub fn sweep_initial_state(base: &Scenario) -> Result<DVector<f64>> {
    let targets = offset_targets(
        &base.chain,
        &base.initial_q,
        &base.target_translation,
        &base.target_rotation,
    )?;
    let xi0 = compute_errors(&base.chain, &base.initial_q, &targets)?.stacked();
    let mut x0 = DVector::zeros(24);
    x0.rows_mut(0, 12).copy_from(&xi0);
    Ok(x0)
}

/// Per-step (max-abs, euclidean) norms of the error part of the composite
/// trajectory. Stops once values leave the finite range.
pub fn sweep_trajectory_norms(
    m: &DMatrix<f64>,
    x0: &DVector<f64>,
    steps: usize,
) -> Vec<(f64, f64)> {
    let mut norms = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    for _ in 0..=steps {
        let xi = x.rows(0, 12);
        let pair = (xi.amax(), xi.norm());
        norms.push(pair);
        if !pair.0.is_finite() {
            break;
        }
        x = m * x;
    }
    norms
}

/// Stability label from trajectory norms: bounded (peak max-abs below 10x the
/// initial) and settled (final euclidean norm below 1e-3 of the initial).
pub fn classify_from_norms(norms: &[(f64, f64)]) -> bool {
    let initial = norms.first().copied().unwrap_or((0.0, 0.0));
    if initial.0 == 0.0 {
        return true;
    }
    let peak = norms.iter().map(|n| n.0).fold(0.0, f64::max);
    let last = norms.last().copied().unwrap_or(initial);
    peak.is_finite() && peak < 10.0 * initial.0 && last.1 < 1e-3 * initial.1
}

/// Trial-based cell label: iterate the closed loop until the verdict under
/// the blow-up/settle thresholds is unambiguous. Slowly converging cells run
/// until the whole composite state (errors plus estimates) has decayed far
/// below the settle threshold, up to a generous cap.
pub fn classify_cell(m: &DMatrix<f64>, x0: &DVector<f64>, dt: f64) -> bool {
    let cap = (SWEEP_TIME_CAP / dt).ceil() as usize;
    let initial_inf = x0.rows(0, 12).amax();
    let initial_norm = x0.rows(0, 12).norm();
    if initial_inf == 0.0 {
        return true;
    }
    let mut x = x0.clone();
    let mut peak = initial_inf;
    for _ in 0..cap {
        x = m * &x;
        let xi = x.rows(0, 12);
        let inf = xi.amax();
        if !inf.is_finite() || inf >= 10.0 * initial_inf {
            return false;
        }
        peak = peak.max(inf);
        // Deep settle: the full composite state is so small that no bounded
        // transient can push the error back over the settle threshold.
        if x.norm() < 1e-6 * initial_norm {
            return true;
        }
    }
    peak < 10.0 * initial_inf && x.rows(0, 12).norm() < 1e-3 * initial_norm
}

/// Cap on simulated time per sweep cell (seconds).
pub const SWEEP_TIME_CAP: f64 = 3000.0;

/// Classify every (ratio_e, ratio_c) cell of the gain-mismatch grid by
/// running the linearized closed-loop trial. Riccati divergence marks the
/// cell unstable; it is a data point, not an error. Cells run in parallel and
/// are reported in row-major order (ratio_e outer).
pub fn stability_sweep(
    base: &Scenario,
    ratios_e: &[f64],
    ratios_c: &[f64],
) -> Result<SweepGrid> {
    let x0 = sweep_initial_state(base)?;
    let pairs: Vec<(f64, f64)> = ratios_e
        .iter()
        .flat_map(|&re| ratios_c.iter().map(move |&rc| (re, rc)))
        .collect();
    let cells: Result<Vec<SweepCell>> = pairs
        .par_iter()
        .map(|&(ratio_e, ratio_c)| {
            let stable = match sweep_closed_loop(base, ratio_e, ratio_c) {
                Ok(m) => classify_cell(&m, &x0, base.dt),
                Err(Error::RiccatiDivergence { .. }) => false,
                Err(other) => return Err(other),
            };
            Ok(SweepCell {
                ratio_e,
                ratio_c,
                stable,
            })
        })
        .collect();
    Ok(SweepGrid { cells: cells? })
}
