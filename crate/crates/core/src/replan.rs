//! Post-impact replanning: waypoint adjustment, minimum-effort piecewise
//! polynomial trajectories, time allocation and time scaling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{CollisionFrame, RobotParams};
use crate::geometry::{line_of_sight, Polygon, Vec2};
use crate::qp::{solve_equality_qp, QpError};

/// Shortest duration given to any segment.
pub const MIN_SEGMENT_DURATION: f64 = 0.05;

/// Samples per segment used when measuring peak speed and acceleration.
const SCALE_SAMPLES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplanError {
    #[error("invalid planner config: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("trajectory QP is infeasible: {0}")]
    QpInfeasible(String),
    #[error("time {0} is outside the trajectory")]
    OutOfRange(f64),
    #[error("collision at or after the next waypoint time (duration {0})")]
    NonPositiveDuration(f64),
    #[error("negative radicand {0} in the safe speed bound")]
    NegativeRadicand(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointList {
    pub points: Vec<Vec2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

impl WaypointList {
    pub fn new(points: Vec<Vec2>) -> Self {
        WaypointList { points, times: None }
    }

    pub fn with_times(points: Vec<Vec2>, times: Vec<f64>) -> Result<Self, ReplanError> {
        let wl = WaypointList { points, times: Some(times) };
        wl.validate()?;
        Ok(wl)
    }

    pub fn validate(&self) -> Result<(), ReplanError> {
        if self.points.len() < 2 {
            return Err(ReplanError::InvalidInput("a waypoint list needs at least two points".into()));
        }
        if self.points.iter().any(|p| !p.is_finite()) {
            return Err(ReplanError::InvalidInput("waypoints must be finite".into()));
        }
        if let Some(times) = &self.times {
            if times.len() != self.points.len() {
                return Err(ReplanError::InvalidInput("times and points differ in length".into()));
            }
            if times.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(ReplanError::InvalidInput("waypoint times must be strictly increasing".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Segment durations, if times are present.
    pub fn durations(&self) -> Option<Vec<f64>> {
        self.times.as_ref().map(|t| t.windows(2).map(|w| w[1] - w[0]).collect())
    }
}

/// Side of the contact surface explored when a waypoint is inserted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExploreSide {
    /// Along `+t` of the collision frame.
    #[default]
    Positive,
    /// Along `-t`.
    Negative,
}

impl ExploreSide {
    fn sign(self) -> f64 {
        match self {
            ExploreSide::Positive => 1.0,
            ExploreSide::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Derivative whose squared norm is minimized (1 velocity .. 4 snap).
    pub j: usize,
    /// Polynomial degree per segment.
    pub order: usize,
    pub epsilon_explore: f64,
    pub explore_side: ExploreSide,
    pub v_max: f64,
    pub a_max: f64,
    /// Clearance used by line-of-sight checks during path simplification.
    pub clearance: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            j: 3,
            order: 5,
            epsilon_explore: 0.5,
            explore_side: ExploreSide::Positive,
            v_max: 0.7,
            a_max: 2.5,
            clearance: 0.3,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), ReplanError> {
        let bad = |m: String| Err(ReplanError::InvalidConfig(m));
        if !(1..=4).contains(&self.j) {
            return bad(format!("j must be in 1..=4, got {}", self.j));
        }
        if self.order + 1 < 2 * self.j {
            return bad(format!("order {} is below 2j-1 = {}", self.order, 2 * self.j - 1));
        }
        if !(self.epsilon_explore > 0.0 && self.epsilon_explore.is_finite()) {
            return bad("epsilon_explore must be positive".into());
        }
        if !(self.v_max > 0.0 && self.a_max > 0.0) || !self.v_max.is_finite() || !self.a_max.is_finite() {
            return bad("v_max and a_max must be positive".into());
        }
        if !(self.clearance >= 0.0) {
            return bad("clearance must be non-negative".into());
        }
        Ok(())
    }
}

/// Which edit `adjust_waypoints` made.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjustment {
    None,
    Clamp,
    ClampInsert,
    Insert,
}

impl Adjustment {
    pub fn inserted(self) -> bool {
        matches!(self, Adjustment::ClampInsert | Adjustment::Insert)
    }
}

/// Edits the waypoint following the collided segment so the robot does not
/// head back into the surface. All edits are made in the collision frame and
/// returned in world coordinates.
pub fn adjust_waypoints(
    wl: &WaypointList,
    i_c: usize,
    p_r_world: Vec2,
    frame: &CollisionFrame,
    rho: f64,
    cfg: &PlannerConfig,
) -> Result<(WaypointList, Adjustment), ReplanError> {
    if i_c + 1 >= wl.points.len() {
        return Err(ReplanError::InvalidInput(format!("segment {i_c} has no following waypoint")));
    }
    let p_next = frame.point_to_frame(wl.points[i_c + 1]);
    let p_r = frame.point_to_frame(p_r_world);
    let p_add = Vec2::new(p_r.x, p_r.y + cfg.explore_side.sign() * cfg.epsilon_explore);

    let x = p_next.x;
    let (new_next, add, adj) = if -rho <= x && x < p_r.x {
        (Some(Vec2::new(p_r.x, p_next.y)), None, Adjustment::Clamp)
    } else if -2.0 * rho <= x && x < -rho {
        (Some(Vec2::new(-2.0 * rho, p_next.y)), Some(p_add), Adjustment::ClampInsert)
    } else if x < -2.0 * rho {
        (None, Some(p_add), Adjustment::Insert)
    } else {
        (None, None, Adjustment::None)
    };

    let mut out = wl.clone();
    if let Some(p) = new_next {
        out.points[i_c + 1] = frame.point_to_world(p);
    }
    if let Some(p) = add {
        out.points.insert(i_c + 1, frame.point_to_world(p));
        // the inserted point has no preplanned arrival time
        out.times = None;
    }
    Ok((out, adj))
}

/// Greedy line-of-sight shortcutting. Endpoints are always kept.
pub fn simplify_path(wl: &WaypointList, obstacles: &[Polygon], clearance: f64) -> WaypointList {
    let n = wl.points.len();
    if n <= 2 {
        return wl.clone();
    }
    let mut keep = vec![0];
    let mut i = 0;
    while i < n - 1 {
        let mut next = i + 1;
        for j in (i + 2..n).rev() {
            if line_of_sight(wl.points[i], wl.points[j], obstacles, clearance) {
                next = j;
                break;
            }
        }
        keep.push(next);
        i = next;
    }
    WaypointList {
        points: keep.iter().map(|&k| wl.points[k]).collect(),
        times: wl.times.as_ref().map(|t| keep.iter().map(|&k| t[k]).collect()),
    }
}

/// Rest-to-rest duration of a straight leg under speed and acceleration limits.
pub fn leg_duration(length: f64, v_max: f64, a_max: f64) -> f64 {
    if length <= 0.0 {
        return 0.0;
    }
    if length >= v_max * v_max / a_max {
        length / v_max + v_max / a_max
    } else {
        2.0 * (length / a_max).sqrt()
    }
}

/// Fills arrival times from a trapezoidal velocity profile per leg, starting
/// at `t0`. Legs never get less than `MIN_SEGMENT_DURATION`.
pub fn allocate_times(wl: &WaypointList, v_max: f64, a_max: f64, t0: f64) -> WaypointList {
    let mut times = Vec::with_capacity(wl.points.len());
    let mut t = t0;
    for (i, p) in wl.points.iter().enumerate() {
        if i > 0 {
            let leg = p.distance(wl.points[i - 1]);
            t += leg_duration(leg, v_max, a_max).max(MIN_SEGMENT_DURATION);
        }
        times.push(t);
    }
    WaypointList {
        points: wl.points.clone(),
        times: (!times.is_empty()).then_some(times),
    }
}

/// Duration of the collided segment for the replanned trajectory.
pub fn segment_time_after_collision(wl: &WaypointList, i_c: usize, t_c: f64) -> Result<f64, ReplanError> {
    let times = wl.times.as_ref().ok_or_else(|| ReplanError::InvalidInput("waypoint list has no times".into()))?;
    let t_next = *times
        .get(i_c + 1)
        .ok_or_else(|| ReplanError::InvalidInput(format!("segment {i_c} has no following waypoint")))?;
    let d = t_next - t_c;
    if d <= 0.0 {
        return Err(ReplanError::NonPositiveDuration(d));
    }
    Ok(d)
}

/// Highest walking speed for which a collision cannot flip the robot, from an
/// energy balance over the arm's compression travel.
pub fn max_safe_speed(params: &RobotParams) -> Result<f64, ReplanError> {
    if !(params.le < params.ls && params.ls < params.l0) {
        return Err(ReplanError::InvalidInput("require le < ls < l0".into()));
    }
    let spring = params.k * ((params.le - params.l0).powi(2) - (params.ls - params.l0).powi(2)) / (2.0 * params.m);
    let tilt = params.g * (params.rho - params.ls + params.le) * params.sigma_max.sin();
    let push = params.a_in_max * (params.ls - params.le);
    let radicand = spring + tilt + push;
    if radicand < 0.0 {
        return Err(ReplanError::NegativeRadicand(radicand));
    }
    Ok(radicand.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Ascending-power coefficients in local time `t` in `[0, duration]`.
    pub coeffs_x: Vec<f64>,
    pub coeffs_y: Vec<f64>,
    pub duration: f64,
}

fn falling(n: usize, k: usize) -> f64 {
    (0..k).map(|i| (n - i) as f64).product()
}

fn poly_deriv(coeffs: &[f64], t: f64, alpha: usize) -> f64 {
    let mut acc = 0.0;
    for n in (alpha..coeffs.len()).rev() {
        acc = acc * t + coeffs[n] * falling(n, alpha);
    }
    acc
}

impl Segment {
    pub fn eval(&self, t: f64, alpha: usize) -> Vec2 {
        Vec2::new(poly_deriv(&self.coeffs_x, t, alpha), poly_deriv(&self.coeffs_y, t, alpha))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub segments: Vec<Segment>,
    pub order: usize,
    pub j: usize,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Segment index and local time for global time `t`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64), ReplanError> {
        let total = self.duration();
        if !(t >= -1e-9 && t <= total + 1e-9) || self.segments.is_empty() {
            return Err(ReplanError::OutOfRange(t));
        }
        let mut start = 0.0;
        for (i, seg) in self.segments.iter().enumerate() {
            if t < start + seg.duration || i + 1 == self.segments.len() {
                return Ok((i, (t - start).clamp(0.0, seg.duration)));
            }
            start += seg.duration;
        }
        unreachable!("non-empty segment list always returns")
    }

    pub fn eval(&self, t: f64, alpha: usize) -> Result<Vec2, ReplanError> {
        let (i, local) = self.locate(t)?;
        Ok(self.segments[i].eval(local, alpha))
    }

    /// Start time of every segment.
    pub fn knot_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        let mut out = Vec::with_capacity(self.segments.len() + 1);
        out.push(0.0);
        for s in &self.segments {
            t += s.duration;
            out.push(t);
        }
        out
    }
}

/// Boundary derivatives for `plan_trajectory`. Entry `k` holds derivative
/// order `k + 1`. The start position is the first point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Boundary {
    pub start: Vec<Vec2>,
    pub end: Vec<Vec2>,
}

impl Boundary {
    /// Start at `v_r` with free higher derivatives; come to rest at the end.
    pub fn from_velocity(v_r: Vec2, j: usize) -> Self {
        Boundary {
            start: vec![v_r],
            end: vec![Vec2::ZERO; j.saturating_sub(1)],
        }
    }

    /// Rest to rest, with derivatives up to `j - 1` zero at both ends.
    pub fn rest(j: usize) -> Self {
        let n = j.saturating_sub(1).max(1);
        Boundary {
            start: vec![Vec2::ZERO; n],
            end: vec![Vec2::ZERO; j.saturating_sub(1)],
        }
    }
}

/// Cost block `int_0^1 (d^j/dtau^j p)^2 dtau` in normalized time.
fn cost_block(order: usize, j: usize) -> DMatrix<f64> {
    let n = order + 1;
    DMatrix::from_fn(n, n, |r, c| {
        if r < j || c < j {
            0.0
        } else {
            falling(r, j) * falling(c, j) / (r + c + 1 - 2 * j) as f64
        }
    })
}

/// Row mapping normalized coefficients to derivative `alpha` (w.r.t. real time)
/// at `tau` in {0, 1}.
fn deriv_row(order: usize, alpha: usize, at_end: bool, duration: f64) -> Vec<f64> {
    let scale = duration.powi(-(alpha as i32));
    (0..=order)
        .map(|n| {
            if n >= alpha && (at_end || n == alpha) {
                falling(n, alpha) * scale
            } else {
                0.0
            }
        })
        .collect()
}

/// Equality system shared by both axes; only the right-hand side differs.
struct ConstraintRow {
    coeffs: Vec<(usize, f64)>,
    rhs: [f64; 2],
}

/// Minimum-effort piecewise polynomial through `points` with the given segment
/// durations. Each axis is an equality-constrained QP solved independently.
pub fn plan_trajectory(
    points: &[Vec2],
    durations: &[f64],
    boundary: &Boundary,
    cfg: &PlannerConfig,
) -> Result<Trajectory, ReplanError> {
    cfg.validate()?;
    let segs = durations.len();
    if segs == 0 || points.len() != segs + 1 {
        return Err(ReplanError::InvalidInput(format!("{} points for {} durations", points.len(), segs)));
    }
    if durations.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(ReplanError::InvalidInput("segment durations must be positive".into()));
    }
    let (order, j) = (cfg.order, cfg.j);
    let nc = order + 1;
    let nv = segs * nc;
    let col = |seg: usize, n: usize| seg * nc + n;

    let mut rows: Vec<ConstraintRow> = Vec::new();
    let push_deriv = |rows: &mut Vec<ConstraintRow>, seg: usize, alpha: usize, at_end: bool, value: Vec2| {
        let r = deriv_row(order, alpha, at_end, durations[seg]);
        rows.push(ConstraintRow {
            coeffs: r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(n, v)| (col(seg, n), *v)).collect(),
            rhs: [value.x, value.y],
        });
    };
    push_deriv(&mut rows, 0, 0, false, points[0]);
    for (k, d) in boundary.start.iter().enumerate() {
        push_deriv(&mut rows, 0, k + 1, false, *d);
    }
    for i in 0..segs - 1 {
        push_deriv(&mut rows, i, 0, true, points[i + 1]);
        for alpha in 0..j {
            let a = deriv_row(order, alpha, true, durations[i]);
            let b = deriv_row(order, alpha, false, durations[i + 1]);
            let mut coeffs: Vec<(usize, f64)> =
                a.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(n, v)| (col(i, n), *v)).collect();
            coeffs.extend(b.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(n, v)| (col(i + 1, n), -*v)));
            rows.push(ConstraintRow { coeffs, rhs: [0.0, 0.0] });
        }
    }
    push_deriv(&mut rows, segs - 1, 0, true, points[segs]);
    for (k, d) in boundary.end.iter().enumerate() {
        push_deriv(&mut rows, segs - 1, k + 1, true, *d);
    }
    if rows.len() > nv {
        return Err(ReplanError::QpInfeasible(format!("{} constraints for {} coefficients per axis", rows.len(), nv)));
    }

    let mut p = DMatrix::zeros(nv, nv);
    let block = cost_block(order, j);
    for (i, &d) in durations.iter().enumerate() {
        let w = d.powi(1 - 2 * j as i32);
        // symmetric objective 1/2 z'Pz with P = 2 Q
        p.view_mut((col(i, 0), col(i, 0)), (nc, nc)).copy_from(&(&block * (2.0 * w)));
    }
    let mut a = DMatrix::zeros(rows.len(), nv);
    for (r, row) in rows.iter().enumerate() {
        for &(c, v) in &row.coeffs {
            a[(r, c)] += v;
        }
    }
    let q = DVector::zeros(nv);
    let mut axis = [Vec::new(), Vec::new()];
    for (ax, out) in axis.iter_mut().enumerate() {
        let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.rhs[ax]));
        let sol = solve_equality_qp(&p, &q, &a, &b).map_err(|e| match e {
            QpError::SingularKkt => ReplanError::QpInfeasible("constraints are redundant or inconsistent".into()),
            other => ReplanError::QpInfeasible(other.to_string()),
        })?;
        *out = sol.x.iter().copied().collect::<Vec<f64>>();
    }
    let segments = durations
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let real = |z: &[f64]| (0..nc).map(|n| z[col(i, n)] / d.powi(n as i32)).collect();
            Segment {
                coeffs_x: real(&axis[0]),
                coeffs_y: real(&axis[1]),
                duration: d,
            }
        })
        .collect();
    Ok(Trajectory { segments, order, j })
}

/// Largest sampled norm of derivative `alpha` within one segment, refined by
/// a golden-section search around the best sample.
fn segment_peak(seg: &Segment, alpha: usize) -> f64 {
    let f = |t: f64| seg.eval(t, alpha).norm();
    let h = seg.duration / (SCALE_SAMPLES - 1) as f64;
    let (mut best_t, mut best) = (0.0, f(0.0));
    for k in 1..SCALE_SAMPLES {
        let t = k as f64 * h;
        let v = f(t);
        if v > best {
            best = v;
            best_t = t;
        }
    }
    let (mut lo, mut hi) = ((best_t - h).max(0.0), (best_t + h).min(seg.duration));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..40 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if f(m1) > f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    best.max(f(0.5 * (lo + hi)))
}

/// Peak sampled speed and acceleration over the whole trajectory.
pub fn peak_speed_accel(traj: &Trajectory) -> (f64, f64) {
    traj.segments.iter().fold((0.0f64, 0.0f64), |(v, a), s| (v.max(segment_peak(s, 1)), a.max(segment_peak(s, 2))))
}

/// Uniformly stretches time by `kappa >= 1` until the peak speed and
/// acceleration respect the limits. Returns the new trajectory and `kappa`.
pub fn scale_time(traj: &Trajectory, v_max: f64, a_max: f64) -> (Trajectory, f64) {
    let (v, a) = peak_speed_accel(traj);
    // small margin for peaks that fall between samples
    let margin = 1.0 + 1e-3;
    let kappa = [1.0, v * margin / v_max, (a * margin / a_max).sqrt()].into_iter().fold(1.0, f64::max);
    if kappa <= 1.0 {
        return (traj.clone(), 1.0);
    }
    (retime(traj, kappa), kappa)
}

/// Re-parameterizes `t -> t / kappa`.
pub fn retime(traj: &Trajectory, kappa: f64) -> Trajectory {
    let segments = traj
        .segments
        .iter()
        .map(|s| {
            let scale = |c: &Vec<f64>| c.iter().enumerate().map(|(n, v)| v / kappa.powi(n as i32)).collect();
            Segment {
                coeffs_x: scale(&s.coeffs_x),
                coeffs_y: scale(&s.coeffs_y),
                duration: s.duration * kappa,
            }
        })
        .collect();
    Trajectory { segments, order: traj.order, j: traj.j }
}

/// A trajectory together with the waypoints and absolute times it passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub waypoints: WaypointList,
    pub trajectory: Trajectory,
    /// Absolute time at which the trajectory starts.
    pub t_start: f64,
}

impl Plan {
    pub fn t_end(&self) -> f64 {
        self.t_start + self.trajectory.duration()
    }

    /// Reference derivative `alpha` at absolute time `t`, held at the end.
    pub fn reference(&self, t: f64, alpha: usize) -> Vec2 {
        let local = (t - self.t_start).clamp(0.0, self.trajectory.duration());
        self.trajectory.eval(local, alpha).expect("clamped time is in range")
    }

    /// Segment index and time into that segment at absolute time `t`.
    pub fn segment_at(&self, t: f64) -> (usize, f64) {
        let local = (t - self.t_start).clamp(0.0, self.trajectory.duration());
        self.trajectory.locate(local).expect("clamped time is in range")
    }
}

fn times_from(t0: f64, durations: &[f64]) -> Vec<f64> {
    let mut out = vec![t0];
    for d in durations {
        out.push(out.last().unwrap() + d);
    }
    out
}

/// Rest-to-rest plan through `points` starting at `t0`.
pub fn preplan(points: &[Vec2], cfg: &PlannerConfig, t0: f64) -> Result<Plan, ReplanError> {
    let wl = WaypointList::new(points.to_vec());
    wl.validate()?;
    let timed = allocate_times(&wl, cfg.v_max, cfg.a_max, 0.0);
    let durations = timed.durations().expect("times were just allocated");
    let traj = plan_trajectory(&wl.points, &durations, &Boundary::rest(cfg.j), cfg)?;
    let (traj, _) = scale_time(&traj, cfg.v_max, cfg.a_max);
    let durations: Vec<f64> = traj.segments.iter().map(|s| s.duration).collect();
    Ok(Plan {
        waypoints: WaypointList { points: wl.points, times: Some(times_from(t0, &durations)) },
        trajectory: traj,
        t_start: t0,
    })
}

/// What happened during one replanning step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplanOutcome {
    pub plan: Plan,
    pub adjustment: Adjustment,
    pub kappa: f64,
}

/// Adjusts the waypoints after a recovery and plans from the post-recovery
/// state `(p_r, v_r)` at absolute time `t_r`. `plan` is the trajectory that
/// was being tracked, collided in segment `i_c` at time `t_c`.
#[allow(clippy::too_many_arguments)]
pub fn replan_after_collision(
    plan: &Plan,
    i_c: usize,
    t_c: f64,
    p_r: Vec2,
    v_r: Vec2,
    t_r: f64,
    frame: &CollisionFrame,
    rho: f64,
    cfg: &PlannerConfig,
) -> Result<ReplanOutcome, ReplanError> {
    let (adjusted, adjustment) = adjust_waypoints(&plan.waypoints, i_c, p_r, frame, rho, cfg)?;
    let mut points = vec![p_r];
    points.extend_from_slice(&adjusted.points[i_c + 1..]);

    let kept_times = if adjustment.inserted() {
        None
    } else {
        match segment_time_after_collision(&plan.waypoints, i_c, t_c) {
            Ok(first) => {
                let old = plan.waypoints.durations().expect("checked by segment_time_after_collision");
                let mut d = vec![first.max(MIN_SEGMENT_DURATION)];
                d.extend(old[i_c + 1..].iter().map(|v| v.max(MIN_SEGMENT_DURATION)));
                Some(d)
            }
            Err(ReplanError::NonPositiveDuration(_)) => None,
            Err(e) => return Err(e),
        }
    };
    let durations = kept_times.unwrap_or_else(|| {
        allocate_times(&WaypointList::new(points.clone()), cfg.v_max, cfg.a_max, 0.0)
            .durations()
            .expect("times were just allocated")
    });
    let traj = plan_trajectory(&points, &durations, &Boundary::from_velocity(v_r, cfg.j), cfg)?;
    let (traj, kappa) = scale_time(&traj, cfg.v_max, cfg.a_max);
    let durations: Vec<f64> = traj.segments.iter().map(|s| s.duration).collect();
    Ok(ReplanOutcome {
        plan: Plan {
            waypoints: WaypointList { points, times: Some(times_from(t_r, &durations)) },
            trajectory: traj,
            t_start: t_r,
        },
        adjustment,
        kappa,
    })
}
