//! Compliant-arm contact model: Voigt arm forces, simulated Hall-effect
//! deflection sensing, threshold detection and the collision frame.
//!
//! Each arm is a pre-tensioned prismatic spring/damper along a fixed body
//! axis whose tip rests on a circle of radius `rho`. Lengths follow the usual
//! ordering `le < ls < l0`: the arm rests at `ls` against its retainer and can
//! compress down to `le`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{polygon_contains, Polygon, Pose2, Rot2, Vec2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContactError {
    #[error("invalid robot parameters: {0}")]
    InvalidParams(String),
    #[error("compound deformation vector is zero")]
    DegenerateDeformation,
    #[error("no obstacle face in contact with arm {0}")]
    NoContactFace(usize),
    #[error("deformation angle {0} rad is outside (-pi/2, pi/2)")]
    ObliqueLimit(f64),
}

/// Physical constants of the robot. Defaults are the in-house omni-directional
/// platform: 6 kg, 2.31 N/mm arms, 0.3 m radius, four arms at 90 degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotParams {
    /// Mass (kg).
    pub m: f64,
    /// Arm spring constant (N/m).
    pub k: f64,
    /// Arm damping (N s/m).
    pub c: f64,
    /// Neutral spring length (m).
    pub l0: f64,
    /// Pre-tensioned (rest) length (m).
    pub ls: f64,
    /// Length at maximum load (m).
    pub le: f64,
    /// Robot radius to the arm tips (m).
    pub rho: f64,
    /// Coulomb friction coefficient at the contact.
    pub mu: f64,
    /// Unit arm axes in the body frame.
    pub arm_dirs: Vec<Vec2>,
    /// Gravitational acceleration (m/s^2).
    pub g: f64,
    /// Maximum commanded body acceleration (m/s^2).
    pub a_in_max: f64,
    /// Largest tolerated flip angle (rad).
    pub sigma_max: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        RobotParams {
            m: 6.0,
            k: 2310.0,
            c: 100.0,
            l0: 0.0415,
            ls: 0.030,
            le: 0.015,
            rho: 0.3,
            mu: 0.3,
            arm_dirs: vec![
                Vec2::new(1.0, 0.0),
                Vec2::new(0.0, 1.0),
                Vec2::new(-1.0, 0.0),
                Vec2::new(0.0, -1.0),
            ],
            g: 9.81,
            a_in_max: 5.0,
            sigma_max: 3f64.to_radians(),
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<(), ContactError> {
        let bad = |msg: String| Err(ContactError::InvalidParams(msg));
        let all = [self.m, self.k, self.c, self.l0, self.ls, self.le, self.rho, self.mu, self.g, self.a_in_max, self.sigma_max];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite".into());
        }
        if !(self.le < self.ls && self.ls < self.l0) {
            return bad(format!("require le < ls < l0, got le={} ls={} l0={}", self.le, self.ls, self.l0));
        }
        if self.le < 0.0 {
            return bad("le must be non-negative".into());
        }
        for (name, v) in [("m", self.m), ("k", self.k), ("c", self.c), ("rho", self.rho)] {
            if v <= 0.0 {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.mu < 0.0 || self.a_in_max < 0.0 || self.g < 0.0 {
            return bad("mu, g and a_in_max must be non-negative".into());
        }
        if self.arm_dirs.is_empty() {
            return bad("at least one arm is required".into());
        }
        for (i, d) in self.arm_dirs.iter().enumerate() {
            if !d.is_finite() || (d.norm() - 1.0).abs() > 1e-9 {
                return bad(format!("arm_dirs[{i}] is not a unit vector"));
            }
            if self.arm_dirs[..i].iter().any(|o| (*o - *d).norm() < 1e-9) {
                return bad(format!("arm_dirs[{i}] duplicates an earlier arm"));
            }
        }
        Ok(())
    }

    pub fn num_arms(&self) -> usize {
        self.arm_dirs.len()
    }

    /// Maximum compression travel `ls - le`.
    pub fn travel(&self) -> f64 {
        self.ls - self.le
    }
}

/// Deflection measured on one arm, `b_l - b_ls` in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmReading {
    pub arm_index: usize,
    pub deflection_body: Vec2,
}

impl ArmReading {
    pub fn magnitude(&self) -> f64 {
        self.deflection_body.norm()
    }
}

/// Geometric state of one arm against the obstacle set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmCompression {
    /// Spring length, clamped to `[le, ls]`.
    pub length: f64,
    /// The tip penetrates deeper than the available travel.
    pub over_compressed: bool,
    /// Unclamped penetration of the tip along the arm axis.
    pub penetration: f64,
    /// Outward normal of the face the tip is pressed against.
    pub face_normal: Option<Vec2>,
    /// Outward normal and depth of a face the rigid tip entered sideways.
    pub side_contact: Option<(Vec2, f64)>,
}

impl ArmCompression {
    pub fn in_contact(&self) -> bool {
        self.face_normal.is_some()
    }
}

/// World-frame axis of arm `arm_index` at `pose`.
pub fn arm_axis_world(pose: &Pose2, arm_index: usize, params: &RobotParams) -> Vec2 {
    pose.rotation().apply(params.arm_dirs[arm_index])
}

/// Faces met at more than this angle from the arm axis (cosine below) are
/// side contacts of the rigid rod and do not compress the spring.
pub const AXIAL_CONTACT_COS: f64 = 0.5;

/// Current spring length of one arm. The rigid tip sits at `rho` along the arm
/// axis. If it lies inside an obstacle, the face nearest the tip is the one
/// being pressed and the arm shortens by the distance from the tip back along
/// the axis to that face.
pub fn arm_compression(pose: &Pose2, arm_index: usize, params: &RobotParams, obstacles: &[Polygon]) -> ArmCompression {
    let axis = arm_axis_world(pose, arm_index, params);
    let tip = pose.position + axis * params.rho;
    let mut penetration = 0.0;
    let mut face_normal = None;
    let mut side = None;
    for poly in obstacles {
        if !polygon_contains(poly, tip) {
            continue;
        }
        let (edge, depth) = poly.nearest_edge(tip);
        let m = poly.edge_normal(edge);
        let cos = -axis.dot(m);
        if cos >= AXIAL_CONTACT_COS {
            let s = depth / cos;
            if face_normal.is_none() || s > penetration {
                penetration = s;
                face_normal = Some(m);
            }
        } else if side.is_none_or(|(_, d)| depth > d) {
            side = Some((m, depth));
        }
    }
    let raw = params.ls - penetration;
    ArmCompression {
        length: raw.max(params.le),
        over_compressed: raw < params.le,
        penetration,
        face_normal,
        side_contact: side,
    }
}

/// Rate of change of the arm length while the tip slides on a face with
/// outward normal `face_normal`. `tip_velocity` is the world velocity of the tip
/// rest point.
pub fn arm_length_rate(axis_world: Vec2, face_normal: Vec2, tip_velocity: Vec2) -> f64 {
    let cos = axis_world.dot(face_normal);
    if cos.abs() < 1e-9 {
        return 0.0;
    }
    -tip_velocity.dot(face_normal) / cos
}

/// Ideal readings: deflection `(ls - l)` along each arm axis.
pub fn sense(lengths: &[f64], params: &RobotParams) -> Vec<ArmReading> {
    lengths
        .iter()
        .zip(&params.arm_dirs)
        .enumerate()
        .map(|(i, (&l, &dir))| ArmReading {
            arm_index: i,
            deflection_body: dir * (params.ls - l),
        })
        .collect()
}

/// Readings with zero-mean Gaussian noise of standard deviation `noise_std`
/// on each deflection magnitude. Magnitudes never go negative.
pub fn sense_noisy<R: Rng + ?Sized>(lengths: &[f64], params: &RobotParams, noise_std: f64, rng: &mut R) -> Vec<ArmReading> {
    if noise_std <= 0.0 {
        return sense(lengths, params);
    }
    let normal = Normal::new(0.0, noise_std).expect("noise std is finite and positive");
    lengths
        .iter()
        .zip(&params.arm_dirs)
        .enumerate()
        .map(|(i, (&l, &dir))| {
            let mag = (params.ls - l + normal.sample(rng)).max(0.0);
            ArmReading {
                arm_index: i,
                deflection_body: dir * mag,
            }
        })
        .collect()
}

/// Arms whose deflection reaches `threshold`, or `None` if no arm does.
pub fn detect(readings: &[ArmReading], threshold: f64) -> Option<Vec<ArmReading>> {
    let hits: Vec<ArmReading> = readings.iter().filter(|r| r.magnitude() >= threshold).copied().collect();
    (!hits.is_empty()).then_some(hits)
}

/// Vector sum of the deflections, used in place of a single arm's deformation.
pub fn compound_deformation(readings: &[ArmReading]) -> Vec2 {
    readings.iter().fold(Vec2::ZERO, |acc, r| acc + r.deflection_body)
}

/// Voigt force along the arm, positive when pushing the robot away from the
/// obstacle. Callers apply it only while the tip is in contact.
pub fn contact_force(l: f64, l_dot: f64, params: &RobotParams) -> f64 {
    params.k * (params.l0 - l) - params.c * l_dot
}

/// What is known about a detected collision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub t_c: f64,
    pub segment_index: usize,
    pub tau_c: f64,
    pub readings: Vec<ArmReading>,
    pub pose_at_impact: Pose2,
    pub vel_at_impact: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameMode {
    /// Normal from the measured compound deformation.
    #[default]
    Sensor,
    /// Normal from the contacted obstacle face.
    GroundTruth,
}

/// Local frame frozen at detection: `n` points away from the obstacle,
/// `t = Rot(+90deg) n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionFrame {
    pub origin: Vec2,
    pub n: Vec2,
    pub t: Vec2,
    /// Angle of the deformation vector (tip to centre) measured from `n`.
    pub theta: f64,
    /// Collision-to-world rotation.
    pub rot_wc: Rot2,
}

impl CollisionFrame {
    pub fn new(origin: Vec2, n: Vec2, theta: f64) -> Self {
        let rot_wc = Rot2::from_x_axis(n);
        CollisionFrame {
            origin,
            n: rot_wc.apply(Vec2::new(1.0, 0.0)),
            t: rot_wc.apply(Vec2::new(0.0, 1.0)),
            theta,
            rot_wc,
        }
    }

    pub fn point_to_frame(&self, p_world: Vec2) -> Vec2 {
        crate::geometry::transform_to_frame(self.origin, self.rot_wc, p_world)
    }

    pub fn point_to_world(&self, p_frame: Vec2) -> Vec2 {
        crate::geometry::transform_from_frame(self.origin, self.rot_wc, p_frame)
    }

    pub fn vec_to_frame(&self, v_world: Vec2) -> Vec2 {
        self.rot_wc.apply_inverse(v_world)
    }

    pub fn vec_to_world(&self, v_frame: Vec2) -> Vec2 {
        self.rot_wc.apply(v_frame)
    }
}

pub fn build_frame(
    event: &CollisionEvent,
    params: &RobotParams,
    mode: FrameMode,
    obstacles: &[Polygon],
) -> Result<CollisionFrame, ContactError> {
    let pose = event.pose_at_impact;
    let deformation_world = pose.rotation().apply(compound_deformation(&event.readings));
    let toward_centre = (-deformation_world).normalized().ok_or(ContactError::DegenerateDeformation)?;
    match mode {
        FrameMode::Sensor => Ok(CollisionFrame::new(pose.position, toward_centre, 0.0)),
        FrameMode::GroundTruth => {
            let primary = event
                .readings
                .iter()
                .max_by(|a, b| a.magnitude().total_cmp(&b.magnitude()))
                .ok_or(ContactError::DegenerateDeformation)?;
            let state = arm_compression(&pose, primary.arm_index, params, obstacles);
            let n = state.face_normal.ok_or(ContactError::NoContactFace(primary.arm_index))?;
            let theta = n.cross(toward_centre).atan2(n.dot(toward_centre));
            if theta.abs() >= std::f64::consts::FRAC_PI_2 {
                return Err(ContactError::ObliqueLimit(theta));
            }
            Ok(CollisionFrame::new(pose.position, n, theta))
        }
    }
}
