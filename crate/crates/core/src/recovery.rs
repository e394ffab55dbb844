//! Deformation recovery controller.
//!
//! After a collision the translational dynamics in the collision frame are
//! feedback-linearized into a double integrator with a spring/damper on the
//! normal axis. A fixed-horizon QP then picks virtual inputs `nu` that keep the
//! arm in contact until it has recovered its rest length and leave the robot
//! with a chosen terminal velocity.

use nalgebra::{DMatrix, DVector, Matrix4, Matrix4x2, SMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{CollisionFrame, RobotParams};
use crate::geometry::{Rot2, Vec2};
use crate::qp::{solve_qp, QpError, QpProblem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoveryError {
    #[error("invalid recovery config: {0}")]
    InvalidConfig(String),
    #[error("invalid boundary condition: {0}")]
    InvalidInput(String),
    #[error("initial offset {0} is positive; frame and readings disagree in sign")]
    PositiveOffset(f64),
    #[error("recovery QP is infeasible")]
    QpInfeasible,
    #[error("recovery QP failed: {0}")]
    Qp(QpError),
    #[error("plan queried at t_rel = {0} outside its horizon")]
    PlanExpired(f64),
}

/// How the continuous linear model is turned into the QP's step map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// Exact discretization under piecewise-constant inputs.
    #[default]
    ZeroOrderHold,
    /// `s+ = (I + F dt) s + G dt nu`.
    ForwardEuler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryConfig {
    /// Horizon `T` (s).
    pub horizon: f64,
    /// Discretization rate `f` (Hz).
    pub rate: f64,
    /// State weight on `x`, `y`.
    pub gamma: f64,
    /// Input weight.
    pub h: f64,
    pub k_r: f64,
    pub k_omega: f64,
    /// Cap on the terminal velocity (m/s).
    pub v_max: f64,
    pub discretization: Discretization,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            horizon: 0.5,
            rate: 10.0,
            gamma: 1.0,
            h: 1.0,
            k_r: 2.0,
            k_omega: 1.0,
            v_max: 0.7,
            discretization: Discretization::ZeroOrderHold,
        }
    }
}

impl RecoveryConfig {
    /// Number of QP steps `N = T f`.
    pub fn steps(&self) -> Result<usize, RecoveryError> {
        let bad = |m: String| Err(RecoveryError::InvalidConfig(m));
        if !(self.horizon > 0.0 && self.rate > 0.0) || !self.horizon.is_finite() || !self.rate.is_finite() {
            return bad("horizon and rate must be positive".into());
        }
        let n = self.horizon * self.rate;
        if (n - n.round()).abs() > 1e-9 || n.round() < 1.0 {
            return bad(format!("horizon * rate = {n} is not a positive integer"));
        }
        Ok(n.round() as usize)
    }

    pub fn validate(&self) -> Result<(), RecoveryError> {
        self.steps()?;
        let bad = |m: &str| Err(RecoveryError::InvalidConfig(m.into()));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be non-negative");
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad("h must be positive");
        }
        if !(self.k_r > 0.0 && self.k_omega > 0.0) {
            return bad("orientation gains must be positive");
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return bad("v_max must be positive");
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate
    }
}

/// Bisection steps used when shrinking an infeasible terminal velocity.
const SCALE_BISECTIONS: usize = 10;

/// Which boundary condition produced a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    /// Solved with the requested terminal velocity.
    Requested,
    /// Requested terminal velocity was infeasible; solved with the largest
    /// feasible fraction of it found by bisection.
    Scaled,
    /// Requested terminal velocity was infeasible; solved with zero.
    ZeroTerminal,
    /// Both QPs failed; `nu = 0` and the pre-tensioned spring pushes off.
    Emergency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryPlan {
    pub x0: f64,
    pub v0: Vec2,
    pub v_t: Vec2,
    pub theta: f64,
    /// `[x, y, vx, vy]` at each knot, `N + 1` entries.
    pub states: Vec<[f64; 4]>,
    /// Virtual inputs held over each step, `N` entries.
    pub controls: Vec<Vec2>,
    pub dt: f64,
    pub source: PlanSource,
}

impl RecoveryPlan {
    pub fn horizon(&self) -> f64 {
        self.dt * self.controls.len() as f64
    }
}

/// Normal offset of the robot relative to the point where the arm returns to
/// rest: the measured deflection rotated into the world and projected on `n`.
pub fn initial_offset(reading_body: Vec2, rot_wb: Rot2, frame: &CollisionFrame) -> Result<f64, RecoveryError> {
    let x0 = frame.vec_to_frame(rot_wb.apply(reading_body)).x;
    if x0 > 1e-9 {
        return Err(RecoveryError::PositiveOffset(x0));
    }
    Ok(x0.min(0.0))
}

/// Terminal velocity that hands the robot back to the preplanned segment,
/// expressed in the collision frame.
pub fn terminal_velocity(
    p_c_world: Vec2,
    p_next_world: Vec2,
    tau_c: f64,
    dt_segment: f64,
    frame: &CollisionFrame,
    v_max: f64,
) -> Vec2 {
    let remaining = (dt_segment - tau_c).max(f64::EPSILON);
    let mut v = frame.vec_to_frame((p_next_world - p_c_world) * (1.0 / remaining));
    if v.x < 0.0 {
        v.x = 0.0;
    }
    let norm = v.norm();
    if norm >= v_max && norm > 0.0 {
        v = v * (v_max / norm);
    }
    v
}

/// Continuous model `s' = F s + G nu`.
pub fn linear_model(params: &RobotParams) -> (Matrix4<f64>, Matrix4x2<f64>) {
    let km = params.k / params.m;
    let cm = params.c / params.m;
    #[rustfmt::skip]
    let f = Matrix4::new(
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
        -km, 0.0, -cm, 0.0,
        0.0, 0.0, 0.0, 0.0,
    );
    #[rustfmt::skip]
    let g = Matrix4x2::new(
        0.0, 0.0,
        0.0, 0.0,
        1.0, 0.0,
        0.0, 1.0,
    );
    (f, g)
}

/// Step map `(A, B)` for a step of `dt`.
pub fn discretize(params: &RobotParams, dt: f64, method: Discretization) -> (Matrix4<f64>, Matrix4x2<f64>) {
    let (f, g) = linear_model(params);
    match method {
        Discretization::ForwardEuler => (Matrix4::identity() + f * dt, g * dt),
        Discretization::ZeroOrderHold => {
            let mut aug = SMatrix::<f64, 6, 6>::zeros();
            aug.fixed_view_mut::<4, 4>(0, 0).copy_from(&(f * dt));
            aug.fixed_view_mut::<4, 2>(0, 4).copy_from(&(g * dt));
            let e = aug.exp();
            (e.fixed_view::<4, 4>(0, 0).into_owned(), e.fixed_view::<4, 2>(0, 4).into_owned())
        }
    }
}

/// The recovery QP over `z = [s_1 .. s_N, nu_0 .. nu_{N-1}]`, plus the
/// initial state it was built from.
pub fn recovery_qp(
    x0: f64,
    v0: Vec2,
    v_t: Vec2,
    theta: f64,
    params: &RobotParams,
    cfg: &RecoveryConfig,
) -> Result<(QpProblem, DVector<f64>), RecoveryError> {
    let n = cfg.steps()?;
    let lower = -params.travel() * theta.cos();
    let dt = cfg.dt();
    let (a, b) = discretize(params, dt, cfg.discretization);
    let s0 = DVector::from_vec(vec![x0.clamp(lower, 0.0), 0.0, v0.x, v0.y]);

    // z = [s_1 .. s_N, nu_0 .. nu_{N-1}]
    let nv = 6 * n;
    let s_idx = |k: usize, i: usize| 4 * (k - 1) + i;
    let u_idx = |k: usize, j: usize| 4 * n + 2 * k + j;

    let mut p = DMatrix::zeros(nv, nv);
    for k in 1..n {
        p[(s_idx(k, 0), s_idx(k, 0))] = 2.0 * cfg.gamma * dt;
        p[(s_idx(k, 1), s_idx(k, 1))] = 2.0 * cfg.gamma * dt;
    }
    for k in 0..n {
        for j in 0..2 {
            p[(u_idx(k, j), u_idx(k, j))] = 2.0 * cfg.h * dt;
        }
    }

    let neq = 4 * n + 3;
    let mut aeq = DMatrix::zeros(neq, nv);
    let mut beq = DVector::zeros(neq);
    for k in 0..n {
        for i in 0..4 {
            let row = 4 * k + i;
            aeq[(row, s_idx(k + 1, i))] = 1.0;
            for jj in 0..4 {
                if k == 0 {
                    beq[row] += a[(i, jj)] * s0[jj];
                } else {
                    aeq[(row, s_idx(k, jj))] -= a[(i, jj)];
                }
            }
            for j in 0..2 {
                aeq[(row, u_idx(k, j))] -= b[(i, j)];
            }
        }
    }
    let term = 4 * n;
    aeq[(term, s_idx(n, 0))] = 1.0;
    aeq[(term + 1, s_idx(n, 2))] = 1.0;
    beq[term + 1] = v_t.x;
    aeq[(term + 2, s_idx(n, 3))] = 1.0;
    beq[term + 2] = v_t.y;

    let nin = n - 1;
    let mut c = DMatrix::zeros(nin, nv);
    for k in 1..n {
        c[(k - 1, s_idx(k, 0))] = 1.0;
    }
    let prob = QpProblem::new(p, DVector::zeros(nv))
        .with_equalities(aeq, beq)
        .with_inequalities(c, DVector::from_element(nin, lower), DVector::zeros(nin));
    Ok((prob, s0))
}

/// Solves the fixed-horizon recovery QP for one boundary condition.
pub fn plan_recovery(
    x0: f64,
    v0: Vec2,
    v_t: Vec2,
    theta: f64,
    params: &RobotParams,
    cfg: &RecoveryConfig,
) -> Result<RecoveryPlan, RecoveryError> {
    cfg.validate()?;
    let n = cfg.steps()?;
    let lower = -params.travel() * theta.cos();
    if !(x0.is_finite() && v0.is_finite() && v_t.is_finite() && theta.is_finite()) {
        return Err(RecoveryError::InvalidInput("non-finite boundary condition".into()));
    }
    if x0 > 1e-9 || x0 < lower - 1e-9 {
        return Err(RecoveryError::InvalidInput(format!("x0 = {x0} outside [{lower}, 0]")));
    }
    if v_t.x < 0.0 {
        return Err(RecoveryError::InvalidInput("terminal normal velocity must be non-negative".into()));
    }
    let (prob, s0) = recovery_qp(x0, v0, v_t, theta, params, cfg)?;
    let dt = cfg.dt();
    let s_idx = |k: usize, i: usize| 4 * (k - 1) + i;
    let u_idx = |k: usize, j: usize| 4 * n + 2 * k + j;
    let sol = match solve_qp(&prob) {
        Ok(sol) => sol,
        Err(QpError::Infeasible) | Err(QpError::SingularKkt) => return Err(RecoveryError::QpInfeasible),
        Err(e) => return Err(RecoveryError::Qp(e)),
    };
    let z = sol.x;
    let mut states = vec![[s0[0], s0[1], s0[2], s0[3]]];
    for k in 1..=n {
        states.push(std::array::from_fn(|i| z[s_idx(k, i)]));
    }
    let controls = (0..n).map(|k| Vec2::new(z[u_idx(k, 0)], z[u_idx(k, 1)])).collect();
    Ok(RecoveryPlan {
        x0: s0[0],
        v0,
        v_t,
        theta,
        states,
        controls,
        dt,
        source: PlanSource::Requested,
    })
}

/// `plan_recovery` with the fallback chain: requested `v_t`, then zero
/// terminal velocity, then an all-zero input sequence.
pub fn plan_recovery_with_fallback(
    x0: f64,
    v0: Vec2,
    v_t: Vec2,
    theta: f64,
    params: &RobotParams,
    cfg: &RecoveryConfig,
) -> Result<RecoveryPlan, RecoveryError> {
    match plan_recovery(x0, v0, v_t, theta, params, cfg) {
        Ok(plan) => return Ok(plan),
        Err(RecoveryError::QpInfeasible) | Err(RecoveryError::Qp(_)) => {}
        Err(e) => return Err(e),
    }
    log::warn!("recovery QP infeasible for v_t = ({}, {}), scaling it down", v_t.x, v_t.y);
    let mut best = None;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..SCALE_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        match plan_recovery(x0, v0, v_t * mid, theta, params, cfg) {
            Ok(plan) => {
                best = Some(plan);
                lo = mid;
            }
            Err(RecoveryError::QpInfeasible) | Err(RecoveryError::Qp(_)) => hi = mid,
            Err(e) => return Err(e),
        }
    }
    if let Some(mut plan) = best {
        plan.source = PlanSource::Scaled;
        return Ok(plan);
    }
    match plan_recovery(x0, v0, Vec2::ZERO, theta, params, cfg) {
        Ok(mut plan) => {
            plan.source = PlanSource::ZeroTerminal;
            return Ok(plan);
        }
        Err(RecoveryError::QpInfeasible) | Err(RecoveryError::Qp(_)) => {}
        Err(e) => return Err(e),
    }
    log::warn!("recovery QP infeasible with zero terminal velocity, using spring push-off");
    let n = cfg.steps()?;
    let dt = cfg.dt();
    let (a, _) = discretize(params, dt, cfg.discretization);
    let mut s = nalgebra::Vector4::new(x0, 0.0, v0.x, v0.y);
    let mut states = vec![[s[0], s[1], s[2], s[3]]];
    for _ in 0..n {
        s = a * s;
        states.push([s[0], s[1], s[2], s[3]]);
    }
    Ok(RecoveryPlan {
        x0,
        v0,
        v_t: Vec2::ZERO,
        theta,
        states,
        controls: vec![Vec2::ZERO; n],
        dt,
        source: PlanSource::Emergency,
    })
}

/// Collision-frame state seen by the linearizing controller.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContactState {
    /// Normal offset, `<= 0` while the arm is compressed.
    pub x: f64,
    pub theta: f64,
    pub v: Vec2,
}

/// Tangential speeds below this count as sticking in the friction terms.
pub const SLIP_DEADBAND: f64 = 1e-3;

fn sign0(v: f64) -> f64 {
    if v > SLIP_DEADBAND {
        1.0
    } else if v < -SLIP_DEADBAND {
        -1.0
    } else {
        0.0
    }
}

/// Bias term `f0` of the tangential dynamics.
pub fn friction_bias(vy: f64, theta: f64, params: &RobotParams) -> f64 {
    params.mu * params.k * sign0(vy) * (params.ls - params.l0) * theta.cos()
}

/// Tangential acceleration of the contact model under input `u_y`.
pub fn model_tangential_accel(u_y: f64, state: &ContactState, params: &RobotParams) -> f64 {
    let coef = params.mu * sign0(state.v.y) + state.theta.tan();
    let f0 = friction_bias(state.v.y, state.theta, params);
    -(params.k * coef * state.x + f0) / params.m - params.c * coef * state.v.x / params.m + u_y
}

/// Normal acceleration of the contact model under input `u_x`.
pub fn model_normal_accel(u_x: f64, state: &ContactState, params: &RobotParams) -> f64 {
    -params.k / params.m * state.x - params.c / params.m * state.v.x + u_x
}

/// Inputs `(u_x, u_y)` that make the contact model follow `v' = nu`.
pub fn feedback_linearize(nu: Vec2, state: &ContactState, params: &RobotParams) -> Vec2 {
    let coef = params.mu * sign0(state.v.y) + state.theta.tan();
    let f0 = friction_bias(state.v.y, state.theta, params);
    let u_y = nu.y + (params.k * coef * state.x + f0) / params.m + params.c * coef * state.v.x / params.m;
    Vec2::new(nu.x, u_y)
}

pub fn orientation_control(heading: f64, heading_d: f64, omega_z: f64, cfg: &RecoveryConfig) -> f64 {
    -cfg.k_r * (heading - heading_d).sin() - cfg.k_omega * omega_z
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyCommand {
    /// World-frame commanded body acceleration (m/s^2).
    pub a_in: Vec2,
    /// Yaw-rate command (rad/s).
    pub u_theta: f64,
}

/// Live measurements used while executing a plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiveState {
    pub contact: ContactState,
    pub heading: f64,
    pub heading_d: f64,
    pub omega: f64,
    /// The arm is still pressed against the surface. When false, the
    /// contact-model cancellation and pre-tension compensation are dropped.
    pub engaged: bool,
}

/// Pre-tension compensation in the collision frame, along the deformation
/// direction.
pub fn pretension_compensation(theta: f64, params: &RobotParams) -> Vec2 {
    Vec2::from_angle(theta) * (params.k / params.m * (params.ls - params.l0))
}

pub fn command_at(
    plan: &RecoveryPlan,
    t_rel: f64,
    live: &LiveState,
    frame: &CollisionFrame,
    params: &RobotParams,
    cfg: &RecoveryConfig,
) -> Result<BodyCommand, RecoveryError> {
    let horizon = plan.horizon();
    if !(0.0..=horizon + 1e-9).contains(&t_rel) || plan.controls.is_empty() {
        return Err(RecoveryError::PlanExpired(t_rel));
    }
    let k = ((t_rel / plan.dt + 1e-9).floor() as usize).min(plan.controls.len() - 1);
    let nu = plan.controls[k];
    let u_frame = if live.engaged {
        let state = ContactState { theta: plan.theta, ..live.contact };
        feedback_linearize(nu, &state, params) + pretension_compensation(plan.theta, params)
    } else {
        nu
    };
    Ok(BodyCommand {
        a_in: frame.vec_to_world(u_frame).clamp_norm(params.a_in_max),
        u_theta: orientation_control(live.heading, live.heading_d, live.omega, cfg),
    })
}
