//! Fixed-step planar simulation of the compliant-arm robot, the nominal
//! trajectory tracker and the detect / recover / replan loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{
    arm_axis_world, arm_compression, arm_length_rate, build_frame, compound_deformation, contact_force, detect,
    sense_noisy, ArmReading, CollisionEvent, CollisionFrame, ContactError, FrameMode, RobotParams,
};
use crate::geometry::{point_segment_distance, polygon_contains, Polygon, Pose2, Vec2};
use crate::recovery::{
    command_at, initial_offset, orientation_control, plan_recovery_with_fallback, terminal_velocity, BodyCommand,
    ContactState, LiveState, PlanSource, RecoveryConfig, RecoveryError, RecoveryPlan,
};
use crate::replan::{preplan, replan_after_collision, simplify_path, Adjustment, Plan, PlannerConfig, ReplanError, WaypointList};

/// Stiffness of the arm end stop and of the chassis (N/m).
const HARD_STIFFNESS: f64 = 5.0e4;
/// Damping paired with `HARD_STIFFNESS` (N s/m).
const HARD_DAMPING: f64 = 550.0;
/// Tangential speed below which Coulomb friction is ramped linearly (m/s).
const FRICTION_EPS: f64 = 1e-2;
/// Arm compression below which the arm counts as released (m).
const ENGAGED_EPS: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("planner failure: {0}")]
    Planner(#[from] ReplanError),
    #[error("recovery failure: {0}")]
    Recovery(#[from] RecoveryError),
    #[error("contact failure: {0}")]
    Contact(#[from] ContactError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub kp: f64,
    pub kd: f64,
    pub goal_tolerance: f64,
    /// Deflection that counts as a collision (m).
    pub detection_threshold: f64,
    /// Rate at which the arm sensors are checked for a collision (Hz).
    pub sensor_hz: f64,
    /// Standard deviation of deflection noise (m).
    pub noise_std: f64,
    /// Standard deviation of the start position jitter (m).
    pub start_jitter: f64,
    pub frame_mode: FrameMode,
    /// Record one log line every this many plant steps.
    pub log_stride: usize,
    /// Radius of the rigid chassis between the arms (m).
    pub body_radius: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            kp: 4.0,
            kd: 4.0,
            goal_tolerance: 0.05,
            detection_threshold: 0.002,
            sensor_hz: 1000.0,
            noise_std: 0.0,
            start_jitter: 0.0,
            frame_mode: FrameMode::Sensor,
            log_stride: 10,
            body_radius: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub params: RobotParams,
    pub recovery: RecoveryConfig,
    pub planner: PlannerConfig,
    pub sim: SimConfig,
    pub obstacles: Vec<Polygon>,
    pub waypoints: Vec<Vec2>,
    /// Defaults to the first waypoint with zero heading.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<Pose2>,
    /// Shortcut the waypoint list by line of sight before planning.
    pub simplify: bool,
    pub sim_dt: f64,
    pub control_hz: f64,
    pub max_sim_time: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            params: RobotParams::default(),
            recovery: RecoveryConfig::default(),
            planner: PlannerConfig::default(),
            sim: SimConfig::default(),
            obstacles: Vec::new(),
            waypoints: Vec::new(),
            start: None,
            simplify: false,
            sim_dt: 0.001,
            control_hz: 10.0,
            max_sim_time: 60.0,
            trials: 1,
            seed: 0,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        self.params.validate()?;
        self.recovery.validate()?;
        self.planner.validate()?;
        if self.waypoints.len() < 2 {
            return bad("at least two waypoints are required".into());
        }
        if self.waypoints.iter().any(|p| !p.is_finite()) {
            return bad("waypoints must be finite".into());
        }
        if self.waypoints.windows(2).any(|w| w[0].distance(w[1]) < 1e-9) {
            return bad("consecutive waypoints must be distinct".into());
        }
        if !(self.sim_dt > 0.0 && self.control_hz > 0.0 && self.max_sim_time > 0.0) {
            return bad("sim_dt, control_hz and max_sim_time must be positive".into());
        }
        if self.sim_dt > 1.0 / self.control_hz {
            return bad("sim_dt must not exceed the control period".into());
        }
        for (name, hz) in [("control", self.control_hz), ("sensor", self.sim.sensor_hz)] {
            let ratio = 1.0 / (hz * self.sim_dt);
            if !(hz > 0.0) || ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-6 {
                return bad(format!("the {name} period must be a whole number of plant steps"));
            }
        }
        let s = &self.sim;
        if !(s.kp >= 0.0 && s.kd >= 0.0 && s.goal_tolerance > 0.0 && s.detection_threshold > 0.0) {
            return bad("tracker gains, goal tolerance and detection threshold must be positive".into());
        }
        if !(s.noise_std >= 0.0 && s.start_jitter >= 0.0 && s.body_radius >= 0.0) {
            return bad("noise, jitter and body radius must be non-negative".into());
        }
        if s.body_radius >= self.params.rho - self.params.travel() {
            return bad("body radius must be inside the fully compressed arm tips".into());
        }
        if s.log_stride == 0 {
            return bad("log_stride must be at least 1".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        let start = self.start_pose();
        if self.obstacles.iter().any(|o| polygon_contains(o, start.position)) {
            return bad("start lies inside an obstacle".into());
        }
        Ok(())
    }

    pub fn start_pose(&self) -> Pose2 {
        self.start.unwrap_or_else(|| Pose2::new(self.waypoints.first().copied().unwrap_or_default(), 0.0))
    }

    pub fn goal(&self) -> Vec2 {
        self.waypoints.last().copied().unwrap_or_default()
    }

    fn steps_per_tick(&self) -> usize {
        (1.0 / (self.control_hz * self.sim_dt)).round() as usize
    }

    fn steps_per_sense(&self) -> usize {
        (1.0 / (self.sim.sensor_hz * self.sim_dt)).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Tracking,
    Recovering,
    Replanning,
}

/// Whether collisions are handled or ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Drr,
    /// Track the initial trajectory and never react to contact.
    Preplanned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub pose: Pose2,
    pub vel: Vec2,
    pub omega: f64,
    pub arm_lengths: Vec<f64>,
    pub arm_rates: Vec<f64>,
    pub t: f64,
    pub mode: Mode,
}

impl WorldState {
    pub fn at_rest(pose: Pose2, params: &RobotParams, obstacles: &[Polygon]) -> Self {
        let mut s = WorldState {
            pose,
            vel: Vec2::ZERO,
            omega: 0.0,
            arm_lengths: vec![params.ls; params.num_arms()],
            arm_rates: vec![0.0; params.num_arms()],
            t: 0.0,
            mode: Mode::Tracking,
        };
        s.refresh_arms(params, obstacles);
        s
    }

    /// Re-derives arm lengths and rates from the pose.
    pub fn refresh_arms(&mut self, params: &RobotParams, obstacles: &[Polygon]) {
        for i in 0..params.num_arms() {
            let c = arm_compression(&self.pose, i, params, obstacles);
            self.arm_lengths[i] = c.length;
            self.arm_rates[i] = match c.face_normal {
                Some(m) if !c.over_compressed => {
                    let axis = arm_axis_world(&self.pose, i, params);
                    arm_length_rate(axis, m, tip_velocity(self.vel, self.omega, axis * params.rho))
                }
                _ => 0.0,
            };
        }
    }

    pub fn compressions(&self, params: &RobotParams) -> Vec<f64> {
        self.arm_lengths.iter().map(|l| params.ls - l).collect()
    }
}

fn tip_velocity(vel: Vec2, omega: f64, r: Vec2) -> Vec2 {
    vel + r.perp() * omega
}

/// Closest point of the polygon boundary to `p`.
fn nearest_boundary_point(poly: &Polygon, p: Vec2) -> Vec2 {
    let mut best = (f64::INFINITY, p);
    for (a, b) in poly.edges() {
        let ab = b - a;
        let t = ((p - a).dot(ab) / ab.norm_squared()).clamp(0.0, 1.0);
        let q = a + ab * t;
        let d = point_segment_distance(p, a, b);
        if d < best.0 {
            best = (d, q);
        }
    }
    best.1
}

/// Stiff penalty contact along `normal` with regularized Coulomb friction.
fn penalty_force(normal: Vec2, depth: f64, vel: Vec2, mu: f64) -> Vec2 {
    let mag = (HARD_STIFFNESS * depth - HARD_DAMPING * vel.dot(normal)).max(0.0);
    let t = normal.perp();
    let vt = vel.dot(t);
    normal * mag - t * (mu * mag * vt / vt.abs().max(FRICTION_EPS))
}

/// Acceleration from every arm and chassis contact.
pub fn contact_accel(pose: &Pose2, vel: Vec2, omega: f64, params: &RobotParams, body_radius: f64, obstacles: &[Polygon]) -> Vec2 {
    let mut force = Vec2::ZERO;
    for i in 0..params.num_arms() {
        let c = arm_compression(pose, i, params, obstacles);
        let axis = arm_axis_world(pose, i, params);
        let v_tip = tip_velocity(vel, omega, axis * params.rho);
        if let Some((m, depth)) = c.side_contact {
            force += penalty_force(m, depth, v_tip, params.mu);
        }
        let Some(m) = c.face_normal else { continue };
        let rate = arm_length_rate(axis, m, v_tip);
        let mut mag = if c.over_compressed {
            contact_force(params.le, 0.0, params)
                + HARD_STIFFNESS * (c.penetration - params.travel())
                - HARD_DAMPING * rate
        } else {
            contact_force(c.length, rate, params)
        };
        mag = mag.max(0.0);
        force -= axis * mag;
        let normal = mag * (-axis.dot(m)).max(0.0);
        let t = m.perp();
        let vt = v_tip.dot(t);
        force -= t * (params.mu * normal * vt / vt.abs().max(FRICTION_EPS));
    }
    if body_radius > 0.0 {
        for poly in obstacles {
            let q = nearest_boundary_point(poly, pose.position);
            let inside = polygon_contains(poly, pose.position);
            let d = q.distance(pose.position);
            if !inside && d >= body_radius {
                continue;
            }
            let pen = if inside { body_radius + d } else { body_radius - d };
            let Some(dir) = (if inside { q - pose.position } else { pose.position - q }).normalized() else { continue };
            force += penalty_force(dir, pen, vel, params.mu);
        }
    }
    force * (1.0 / params.m)
}

/// Advances the plant by `dt` with RK4 under a held command. Heading follows
/// the yaw-rate command directly.
pub fn step(world: &WorldState, cmd: &BodyCommand, params: &RobotParams, sim: &SimConfig, obstacles: &[Polygon], dt: f64) -> WorldState {
    let omega = cmd.u_theta;
    let deriv = |p: Vec2, v: Vec2, h: f64| {
        let a = cmd.a_in + contact_accel(&Pose2::new(p, h), v, omega, params, sim.body_radius, obstacles);
        (v, a)
    };
    let (p0, v0, h0) = (world.pose.position, world.vel, world.pose.heading);
    let (k1p, k1v) = deriv(p0, v0, h0);
    let (k2p, k2v) = deriv(p0 + k1p * (dt / 2.0), v0 + k1v * (dt / 2.0), h0 + omega * dt / 2.0);
    let (k3p, k3v) = deriv(p0 + k2p * (dt / 2.0), v0 + k2v * (dt / 2.0), h0 + omega * dt / 2.0);
    let (k4p, k4v) = deriv(p0 + k3p * dt, v0 + k3v * dt, h0 + omega * dt);
    let p = p0 + (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (dt / 6.0);
    let v = v0 + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0);
    let mut next = WorldState {
        pose: Pose2::new(p, h0 + omega * dt),
        vel: v,
        omega,
        arm_lengths: world.arm_lengths.clone(),
        arm_rates: world.arm_rates.clone(),
        t: world.t + dt,
        mode: world.mode,
    };
    next.refresh_arms(params, obstacles);
    next
}

/// PD tracking of the reference with acceleration feedforward.
pub fn track(plan: &Plan, state: &WorldState, heading_d: f64, sim: &SimConfig, params: &RobotParams, rcfg: &RecoveryConfig) -> BodyCommand {
    let p_ref = plan.reference(state.t, 0);
    let v_ref = plan.reference(state.t, 1);
    let a_ref = if state.t > plan.t_end() { Vec2::ZERO } else { plan.reference(state.t, 2) };
    let a = a_ref + (p_ref - state.pose.position) * sim.kp + (v_ref - state.vel) * sim.kd;
    BodyCommand {
        a_in: a.clamp_norm(params.a_in_max),
        u_theta: orientation_control(state.pose.heading, heading_d, state.omega, rcfg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
    /// Compression `ls - l` of each arm (m).
    pub arms: Vec<f64>,
    pub mode: Mode,
    pub ax: f64,
    pub ay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SimEvent {
    Collision {
        t: f64,
        arms: Vec<usize>,
        segment: usize,
        n: Vec2,
        theta: f64,
        x0: f64,
        v0: Vec2,
        v_t: Vec2,
        source: PlanSource,
    },
    Replan {
        t: f64,
        adjustment: Adjustment,
        kappa: f64,
        waypoints: Vec<Vec2>,
    },
    Arrived {
        t: f64,
    },
}

/// One JSON line of a step log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogLine {
    Event(SimEvent),
    Step(LogRecord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Reached,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub records: Vec<LogRecord>,
    pub events: Vec<SimEvent>,
    pub goal: Vec2,
    pub outcome: Outcome,
    /// Time the goal tolerance was first met.
    pub arrival: Option<f64>,
}

impl SimLog {
    /// Records and events merged in time order, events first on ties.
    pub fn lines(&self) -> Vec<LogLine> {
        let mut out = Vec::with_capacity(self.records.len() + self.events.len());
        let mut ev = self.events.iter().peekable();
        for r in &self.records {
            while let Some(e) = ev.next_if(|e| event_time(e) <= r.t) {
                out.push(LogLine::Event(e.clone()));
            }
            out.push(LogLine::Step(r.clone()));
        }
        out.extend(ev.map(|e| LogLine::Event(e.clone())));
        out
    }
}

fn event_time(e: &SimEvent) -> f64 {
    match e {
        SimEvent::Collision { t, .. } | SimEvent::Replan { t, .. } | SimEvent::Arrived { t } => *t,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Arrival time, or the last logged time when the goal was not reached.
    pub t_end: f64,
    /// Path length (m).
    pub path_length: f64,
    /// Integral of the squared commanded acceleration (m^2/s^3).
    pub control_energy: f64,
    pub collisions: usize,
    pub goal_error: f64,
}

pub fn metrics(log: &SimLog) -> Metrics {
    let recs = &log.records;
    let path_length = recs.windows(2).map(|w| Vec2::new(w[1].x - w[0].x, w[1].y - w[0].y).norm()).sum();
    let control_energy = recs.windows(2).map(|w| (w[0].ax * w[0].ax + w[0].ay * w[0].ay) * (w[1].t - w[0].t)).sum();
    let last = recs.last();
    Metrics {
        t_end: log.arrival.or(last.map(|r| r.t)).unwrap_or(0.0),
        path_length,
        control_energy,
        collisions: log.events.iter().filter(|e| matches!(e, SimEvent::Collision { .. })).count(),
        goal_error: last.map(|r| Vec2::new(r.x, r.y).distance(log.goal)).unwrap_or(0.0),
    }
}

/// State carried through one recovery episode.
struct Episode {
    t_c: f64,
    segment: usize,
    arms: Vec<usize>,
    frame: CollisionFrame,
    plan: RecoveryPlan,
    heading_d: f64,
    p_c: Vec2,
}

fn recovery_command(world: &WorldState, ep: &Episode, p: &RobotParams, rcfg: &RecoveryConfig) -> Result<BodyCommand, SimError> {
    let engaged = ep.arms.iter().any(|&i| p.ls - world.arm_lengths[i] > ENGAGED_EPS);
    let live = LiveState {
        contact: ContactState {
            x: ep.plan.x0 + ep.frame.n.dot(world.pose.position - ep.p_c),
            theta: ep.frame.theta,
            v: ep.frame.vec_to_frame(world.vel),
        },
        heading: world.pose.heading,
        heading_d: ep.heading_d,
        omega: world.omega,
        engaged,
    };
    let t_rel = (world.t - ep.t_c).min(ep.plan.horizon());
    Ok(command_at(&ep.plan, t_rel, &live, &ep.frame, p, rcfg)?)
}

struct Runner<'a> {
    sc: &'a Scenario,
    mode: RunMode,
    rng: ChaCha8Rng,
    noise: f64,
}

impl Runner<'_> {
    fn readings(&mut self, world: &WorldState) -> Vec<ArmReading> {
        sense_noisy(&world.arm_lengths, &self.sc.params, self.noise, &mut self.rng)
    }

    fn start_recovery(&self, world: &WorldState, hits: Vec<ArmReading>, plan: &Plan) -> Result<(Episode, SimEvent), SimError> {
        let sc = self.sc;
        let event = CollisionEvent {
            t_c: world.t,
            segment_index: plan.segment_at(world.t).0,
            tau_c: plan.segment_at(world.t).1,
            readings: hits.clone(),
            pose_at_impact: world.pose,
            vel_at_impact: world.vel,
        };
        let frame = match build_frame(&event, &sc.params, sc.sim.frame_mode, &sc.obstacles) {
            Ok(f) => f,
            Err(ContactError::DegenerateDeformation) => {
                // opposing arms cancel; fall back on the most deflected one
                let main = *hits.iter().max_by(|a, b| a.magnitude().total_cmp(&b.magnitude())).expect("detection is non-empty");
                let single = CollisionEvent { readings: vec![main], ..event.clone() };
                build_frame(&single, &sc.params, FrameMode::Sensor, &sc.obstacles)?
            }
            Err(ContactError::NoContactFace(_)) => build_frame(&event, &sc.params, FrameMode::Sensor, &sc.obstacles)?,
            Err(e) => return Err(e.into()),
        };
        let lower = -sc.params.travel() * frame.theta.cos();
        let x0 = match initial_offset(compound_deformation(&hits), world.pose.rotation(), &frame) {
            Ok(x) => x,
            Err(e) => {
                log::warn!("{e}; using zero offset");
                0.0
            }
        }
        .max(lower);
        let v0 = frame.vec_to_frame(world.vel);
        let i_c = event.segment_index;
        let durations = plan.waypoints.durations().expect("plans carry times");
        let v_t = terminal_velocity(
            world.pose.position,
            plan.waypoints.points[i_c + 1],
            event.tau_c,
            durations[i_c],
            &frame,
            sc.recovery.v_max,
        );
        let rplan = plan_recovery_with_fallback(x0, v0, v_t, frame.theta, &sc.params, &sc.recovery)?;
        let arms: Vec<usize> = hits.iter().map(|r| r.arm_index).collect();
        let ev = SimEvent::Collision {
            t: world.t,
            arms: arms.clone(),
            segment: i_c,
            n: frame.n,
            theta: frame.theta,
            x0,
            v0,
            v_t: rplan.v_t,
            source: rplan.source,
        };
        log::debug!("collision at t={:.3} arms {:?} n=({:.3},{:.3})", world.t, arms, frame.n.x, frame.n.y);
        Ok((
            Episode {
                t_c: world.t,
                segment: i_c,
                arms,
                frame,
                plan: rplan,
                heading_d: world.pose.heading,
                p_c: world.pose.position,
            },
            ev,
        ))
    }

    fn run(&mut self) -> Result<SimLog, SimError> {
        let sc = self.sc;
        let params = &sc.params;
        let mut start = sc.start_pose();
        if sc.sim.start_jitter > 0.0 {
            let n = Normal::new(0.0, sc.sim.start_jitter).expect("jitter is finite and positive");
            start.position += Vec2::new(n.sample(&mut self.rng), n.sample(&mut self.rng));
        }
        let mut points = sc.waypoints.clone();
        if sc.simplify {
            points = simplify_path(&WaypointList::new(points), &sc.obstacles, sc.planner.clearance).points;
        }
        let mut plan = preplan(&points, &sc.planner, 0.0)?;
        let goal = sc.goal();
        let heading0 = start.heading;
        let mut world = WorldState::at_rest(start, params, &sc.obstacles);
        let mut log = SimLog { records: Vec::new(), events: Vec::new(), goal, outcome: Outcome::Timeout, arrival: None };
        let mut episode: Option<Episode> = None;
        let mut cmd = BodyCommand::default();
        let per_tick = sc.steps_per_tick();
        let per_sense = sc.steps_per_sense();
        let total_steps = (sc.max_sim_time / sc.sim_dt).round() as usize;
        let period = 1.0 / sc.control_hz;
        let mut next_control = 0usize;

        for k in 0..=total_steps {
            world.t = k as f64 * sc.sim_dt;
            let arrived = world.pose.position.distance(goal) <= sc.sim.goal_tolerance;
            if !arrived {
                let mut control_now = k >= next_control;
                if self.mode == RunMode::Drr && k % per_sense == 0 {
                    let readings = self.readings(&world);
                    let fresh = detect(&readings, sc.sim.detection_threshold).filter(|hits| match &episode {
                        // during recovery only an arm outside the current event starts a new one
                        Some(ep) => hits.iter().any(|r| !ep.arms.contains(&r.arm_index)),
                        None => true,
                    });
                    if let Some(hits) = fresh {
                        let (ep, ev) = self.start_recovery(&world, hits, &plan)?;
                        log.events.push(ev);
                        episode = Some(ep);
                        world.mode = Mode::Recovering;
                        control_now = true;
                    }
                }
                if control_now {
                    if let Some(ep) = episode.as_ref().filter(|ep| world.t - ep.t_c >= ep.plan.horizon() - 0.5 * period) {
                        world.mode = Mode::Replanning;
                        // record the replanning tick before switching back
                        self.record(&mut log, &world, &cmd);
                        let out = replan_after_collision(
                            &plan,
                            ep.segment,
                            ep.t_c,
                            world.pose.position,
                            world.vel,
                            world.t,
                            &ep.frame,
                            params.rho,
                            &sc.planner,
                        )?;
                        log::debug!("replan at t={:.3}: {:?}, kappa {:.3}", world.t, out.adjustment, out.kappa);
                        log.events.push(SimEvent::Replan {
                            t: world.t,
                            adjustment: out.adjustment,
                            kappa: out.kappa,
                            waypoints: out.plan.waypoints.points.clone(),
                        });
                        plan = out.plan;
                        episode = None;
                        world.mode = Mode::Tracking;
                    }
                    cmd = match &episode {
                        Some(ep) => recovery_command(&world, ep, params, &sc.recovery)?,
                        None => track(&plan, &world, heading0, &sc.sim, params, &sc.recovery),
                    };
                    next_control = k + per_tick;
                }
            }
            if arrived {
                log.outcome = Outcome::Reached;
                log.arrival = Some(world.t);
                log.events.push(SimEvent::Arrived { t: world.t });
                self.record(&mut log, &world, &cmd);
                break;
            }
            if k % sc.sim.log_stride == 0 || k == total_steps {
                self.record(&mut log, &world, &cmd);
            }
            if k == total_steps {
                break;
            }
            world = step(&world, &cmd, params, &sc.sim, &sc.obstacles, sc.sim_dt);
        }
        Ok(log)
    }

    fn record(&self, log: &mut SimLog, world: &WorldState, cmd: &BodyCommand) {
        if log.records.last().is_some_and(|r| r.t == world.t && r.mode == world.mode) {
            return;
        }
        log.records.push(LogRecord {
            t: world.t,
            x: world.pose.position.x,
            y: world.pose.position.y,
            heading: world.pose.heading,
            vx: world.vel.x,
            vy: world.vel.y,
            arms: world.compressions(&self.sc.params),
            mode: world.mode,
            ax: cmd.a_in.x,
            ay: cmd.a_in.y,
        });
    }
}

/// Runs one trial. The seed drives start jitter and sensor noise.
pub fn run_drr(scenario: &Scenario, seed: u64, mode: RunMode) -> Result<(SimLog, Metrics), SimError> {
    scenario.validate()?;
    let mut runner = Runner {
        sc: scenario,
        mode,
        rng: ChaCha8Rng::seed_from_u64(seed),
        noise: scenario.sim.noise_std,
    };
    let log = runner.run()?;
    let m = metrics(&log);
    Ok((log, m))
}

/// Runs `trials` independent trials with seeds `seed, seed + 1, ...` in parallel.
pub fn run_trials(scenario: &Scenario, trials: usize, seed: u64, mode: RunMode) -> Vec<Result<(SimLog, Metrics), SimError>> {
    (0..trials)
        .into_par_iter()
        .map(|i| run_drr(scenario, seed.wrapping_add(i as u64), mode))
        .collect()
}

/// Drive-into-a-wall experiment: the robot approaches a flat wall at a held
/// velocity, and on detection runs one recovery toward `v_out`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactSpec {
    /// Incidence speed (m/s).
    pub speed: f64,
    /// Angle between the approach direction and the inward wall normal (rad).
    pub angle: f64,
    /// Requested outgoing velocity in the collision frame (m/s).
    pub v_out: Vec2,
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactResult {
    pub t_c: f64,
    /// Velocity at detection, collision frame.
    pub v_in: Vec2,
    /// Velocity at the end of the recovery horizon, collision frame.
    pub v_out: Vec2,
    /// Largest arm compression at the end of the horizon (m).
    pub compression_at_t: f64,
    /// Largest arm compression over the whole episode (m).
    pub peak_compression: f64,
    pub source: PlanSource,
}

pub fn impact_trial(sc: &Scenario, spec: &ImpactSpec) -> Result<Option<ImpactResult>, SimError> {
    let params = &sc.params;
    let face_x = params.rho + 0.05;
    let wall = vec![Polygon::rectangle(Vec2::new(face_x, -20.0), Vec2::new(face_x + 1.0, 20.0)).expect("valid rectangle")];
    let v_hold = Vec2::from_angle(spec.angle) * spec.speed;
    let mut world = WorldState::at_rest(Pose2::new(Vec2::ZERO, spec.heading), params, &wall);
    world.vel = v_hold;
    let per_tick = sc.steps_per_tick();
    let per_sense = sc.steps_per_sense();
    let max_steps = (3.0 / sc.sim_dt).round() as usize;
    let mut cmd = BodyCommand::default();
    let mut episode: Option<Episode> = None;
    let mut next_control = 0usize;
    let mut peak: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    for k in 0..max_steps {
        world.t = k as f64 * sc.sim_dt;
        peak = peak.max(world.compressions(params).into_iter().fold(0.0, f64::max));
        let mut control_now = k >= next_control;
        if episode.is_none() && k % per_sense == 0 {
            let readings = sense_noisy(&world.arm_lengths, params, sc.sim.noise_std, &mut rng);
            if let Some(hits) = detect(&readings, sc.sim.detection_threshold) {
                let event = CollisionEvent {
                    t_c: world.t,
                    segment_index: 0,
                    tau_c: 0.0,
                    readings: hits.clone(),
                    pose_at_impact: world.pose,
                    vel_at_impact: world.vel,
                };
                let frame = build_frame(&event, params, sc.sim.frame_mode, &wall)?;
                let lower = -params.travel() * frame.theta.cos();
                let x0 = initial_offset(compound_deformation(&hits), world.pose.rotation(), &frame)?.max(lower);
                let v_t = Vec2::new(spec.v_out.x.max(0.0), spec.v_out.y).clamp_norm(sc.recovery.v_max);
                let v0 = frame.vec_to_frame(world.vel);
                let plan = plan_recovery_with_fallback(x0, v0, v_t, frame.theta, params, &sc.recovery)?;
                episode = Some(Episode {
                    t_c: world.t,
                    segment: 0,
                    arms: hits.iter().map(|r| r.arm_index).collect(),
                    frame,
                    plan,
                    heading_d: spec.heading,
                    p_c: world.pose.position,
                });
                control_now = true;
            }
        }
        if control_now {
            if let Some(ep) = &episode {
                if world.t - ep.t_c >= ep.plan.horizon() - 1e-9 {
                    return Ok(Some(ImpactResult {
                        t_c: ep.t_c,
                        v_in: ep.plan.v0,
                        v_out: ep.frame.vec_to_frame(world.vel),
                        compression_at_t: world.compressions(params).into_iter().fold(0.0, f64::max),
                        peak_compression: peak,
                        source: ep.plan.source,
                    }));
                }
            }
            cmd = match &episode {
                None => BodyCommand {
                    a_in: ((v_hold - world.vel) * sc.sim.kd).clamp_norm(params.a_in_max),
                    u_theta: 0.0,
                },
                Some(ep) => recovery_command(&world, ep, params, &sc.recovery)?,
            };
            next_control = k + per_tick;
        }
        world = step(&world, &cmd, params, &sc.sim, &wall, sc.sim_dt);
    }
    Ok(None)
}
