//! Planar vectors, rotations, poses and polygon predicates.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used for boundary tests (metres).
pub const BOUNDARY_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon vertex {0} is not finite")]
    NonFinite(usize),
    #[error("polygon has zero area")]
    Degenerate,
    #[error("polygon edges {0} and {1} intersect")]
    SelfIntersecting(usize, usize),
}

/// A planar vector. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Vec2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Vec2 { x, y }
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    /// Unit vector at `angle` radians from the +x axis.
    pub fn from_angle(angle: f64) -> Self {
        Vec2::new(angle.cos(), angle.sin())
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    /// Returns `None` for vectors shorter than `1e-15`.
    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        (n > 1e-15).then(|| self * (1.0 / n))
    }

    /// The vector rotated by +90 degrees.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Rescales to at most `max_norm`, preserving direction.
    pub fn clamp_norm(self, max_norm: f64) -> Vec2 {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self * (max_norm / n)
        } else {
            self
        }
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        v * self
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// A planar rotation stored as its angle; the matrix is formed on demand.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rot2 {
    pub angle: f64,
}

impl Rot2 {
    pub const IDENTITY: Rot2 = Rot2 { angle: 0.0 };

    pub const fn new(angle: f64) -> Self {
        Rot2 { angle }
    }

    /// Rotation whose first column (image of +x) is `x_axis`.
    pub fn from_x_axis(x_axis: Vec2) -> Self {
        Rot2::new(x_axis.angle())
    }

    pub fn inverse(self) -> Rot2 {
        Rot2::new(-self.angle)
    }

    pub fn then(self, other: Rot2) -> Rot2 {
        Rot2::new(self.angle + other.angle)
    }

    /// Row-major 2x2 matrix.
    pub fn matrix(self) -> [[f64; 2]; 2] {
        let (s, c) = self.angle.sin_cos();
        [[c, -s], [s, c]]
    }

    pub fn apply(self, v: Vec2) -> Vec2 {
        let [[a, b], [c, d]] = self.matrix();
        Vec2::new(a * v.x + b * v.y, c * v.x + d * v.y)
    }

    /// Applies the transpose (inverse) rotation.
    pub fn apply_inverse(self, v: Vec2) -> Vec2 {
        let [[a, b], [c, d]] = self.matrix();
        Vec2::new(a * v.x + c * v.y, b * v.x + d * v.y)
    }
}

/// Position and heading in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub position: Vec2,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(position: Vec2, heading: f64) -> Self {
        Pose2 {
            position,
            heading: wrap_angle(heading),
        }
    }

    /// Body-to-world rotation.
    pub fn rotation(&self) -> Rot2 {
        Rot2::new(self.heading)
    }
}

pub fn rotate(r: Rot2, v: Vec2) -> Vec2 {
    r.apply(v)
}

/// Expresses a world point in the frame with the given origin and orientation.
pub fn transform_to_frame(origin: Vec2, r: Rot2, p_world: Vec2) -> Vec2 {
    r.apply_inverse(p_world - origin)
}

/// Inverse of [`transform_to_frame`].
pub fn transform_from_frame(origin: Vec2, r: Rot2, p_local: Vec2) -> Vec2 {
    origin + r.apply(p_local)
}

/// A simple polygon with counter-clockwise vertex order.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "Vec<Vec2>")]
pub struct Polygon {
    vertices: Vec<Vec2>,
}

impl From<Polygon> for Vec<Vec2> {
    fn from(p: Polygon) -> Self {
        p.vertices
    }
}

impl<'de> Deserialize<'de> for Polygon {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let vertices = Vec::<Vec2>::deserialize(d)?;
        Polygon::new(vertices).map_err(serde::de::Error::custom)
    }
}

impl Polygon {
    /// Validates the vertex list. Clockwise input is reversed into
    /// counter-clockwise order.
    pub fn new(mut vertices: Vec<Vec2>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        if let Some(i) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite(i));
        }
        let area = signed_area(&vertices);
        if area.abs() < 1e-14 {
            return Err(GeometryError::Degenerate);
        }
        if area < 0.0 {
            vertices.reverse();
        }
        let n = vertices.len();
        for i in 0..n {
            for j in (i + 1)..n {
                // adjacent edges share a vertex
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                let (c, d) = (vertices[j], vertices[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return Err(GeometryError::SelfIntersecting(i, j));
                }
            }
        }
        Ok(Polygon { vertices })
    }

    /// Axis-aligned rectangle from two opposite corners.
    pub fn rectangle(min: Vec2, max: Vec2) -> Result<Self, GeometryError> {
        Polygon::new(vec![
            min,
            Vec2::new(max.x, min.y),
            max,
            Vec2::new(min.x, max.y),
        ])
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    /// Outward unit normal of edge `i` (from vertex `i` to `i + 1`).
    pub fn edge_normal(&self, i: usize) -> Vec2 {
        let n = self.vertices.len();
        let d = self.vertices[(i + 1) % n] - self.vertices[i];
        // CCW: interior on the left, outward normal on the right
        Vec2::new(d.y, -d.x).normalized().unwrap_or(Vec2::ZERO)
    }

    /// Index of the edge nearest to `p` and the distance to it.
    pub fn nearest_edge(&self, p: Vec2) -> (usize, f64) {
        self.edges()
            .enumerate()
            .map(|(i, (a, b))| (i, point_segment_distance(p, a, b)))
            .fold((0, f64::INFINITY), |best, cur| {
                if cur.1 < best.1 {
                    cur
                } else {
                    best
                }
            })
    }
}

fn signed_area(vertices: &[Vec2]) -> f64 {
    let n = vertices.len();
    0.5 * (0..n)
        .map(|i| vertices[i].cross(vertices[(i + 1) % n]))
        .sum::<f64>()
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(p: Vec2, a: Vec2, b: Vec2) -> bool {
    point_segment_distance(p, a, b) <= BOUNDARY_EPS
}

/// Closed-segment intersection test (touching counts).
pub fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) || on_segment(d, a, b)
}

pub fn segment_segment_distance(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> f64 {
    if segments_intersect(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

/// Point-in-polygon; points on the boundary count as inside.
pub fn polygon_contains(poly: &Polygon, p: Vec2) -> bool {
    if poly.edges().any(|(a, b)| on_segment(p, a, b)) {
        return true;
    }
    // crossing number with the half-open rule
    let mut inside = false;
    for (a, b) in poly.edges() {
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Distance from segment `ab` to the polygon region (zero when touching or inside).
pub fn segment_polygon_distance(a: Vec2, b: Vec2, poly: &Polygon) -> f64 {
    if polygon_contains(poly, a) || polygon_contains(poly, b) {
        return 0.0;
    }
    poly.edges()
        .map(|(c, d)| segment_segment_distance(a, b, c, d))
        .fold(f64::INFINITY, f64::min)
}

/// True when the segment `ab` swept by a disc of radius `clearance` touches no obstacle.
pub fn line_of_sight(a: Vec2, b: Vec2, obstacles: &[Polygon], clearance: f64) -> bool {
    obstacles
        .iter()
        .all(|poly| segment_polygon_distance(a, b, poly) > clearance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit_square() -> Polygon {
        Polygon::rectangle(Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0)).unwrap()
    }

    fn thin_square() -> Polygon {
        Polygon::new(vec![
            Vec2::new(0.9, -0.5),
            Vec2::new(1.1, -0.5),
            Vec2::new(1.1, 0.5),
            Vec2::new(0.9, 0.5),
        ])
        .unwrap()
    }

    /// Winding number by summing subtended angles.
    fn winding_oracle(poly: &Polygon, p: Vec2) -> bool {
        let total: f64 = poly
            .edges()
            .map(|(a, b)| {
                let (u, v) = (a - p, b - p);
                u.cross(v).atan2(u.dot(v))
            })
            .sum();
        (total / (2.0 * PI)).round() != 0.0
    }

    /// Dense sampling of both the segment and every polygon edge.
    fn brute_distance(a: Vec2, b: Vec2, poly: &Polygon) -> f64 {
        let n = 2000;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            let p = a + (b - a) * (i as f64 / n as f64);
            for (c, d) in poly.edges() {
                best = best.min(point_segment_distance(p, c, d));
            }
        }
        best
    }

    #[test]
    fn rotate_examples() {
        let r = rotate(Rot2::new(0.0), Vec2::new(1.0, 0.0));
        assert_eq!(r, Vec2::new(1.0, 0.0));
        let r = rotate(Rot2::new(PI / 2.0), Vec2::new(1.0, 0.0));
        assert_abs_diff_eq!(r.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.y, 1.0, epsilon = 1e-15);
        let r = rotate(Rot2::new(PI / 4.0), Vec2::new(1.0, 0.0));
        assert_abs_diff_eq!(r.x, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(r.y, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
    }

    #[test]
    fn transform_examples() {
        let p = Vec2::new(2.0, 3.0);
        assert_eq!(transform_to_frame(Vec2::ZERO, Rot2::IDENTITY, p), p);
        assert_eq!(
            transform_to_frame(Vec2::new(1.0, 0.0), Rot2::IDENTITY, p),
            Vec2::new(1.0, 3.0)
        );
        let q = transform_to_frame(Vec2::ZERO, Rot2::new(PI / 2.0), Vec2::new(0.0, 1.0));
        assert_abs_diff_eq!(q.x, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn contains_examples() {
        let sq = unit_square();
        assert!(polygon_contains(&sq, Vec2::new(0.5, 0.5)));
        assert!(!polygon_contains(&sq, Vec2::new(2.0, 2.0)));
        assert!(polygon_contains(&sq, Vec2::new(1.0, 0.5)));
    }

    #[test]
    fn line_of_sight_examples() {
        let sq = thin_square();
        let obstacles = [sq.clone()];
        assert!(!line_of_sight(
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 0.0),
            &obstacles,
            0.0
        ));
        assert!(line_of_sight(
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 0.0),
            &[],
            0.0
        ));
        let (a, b) = (Vec2::new(0.0, 1.0), Vec2::new(2.0, 1.0));
        let oracle = brute_distance(a, b, &sq);
        assert_abs_diff_eq!(oracle, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(segment_polygon_distance(a, b, &sq), oracle, epsilon = 1e-9);
        assert!(line_of_sight(a, b, &obstacles, 0.3));
        assert!(!line_of_sight(a, b, &obstacles, 0.6));
    }

    #[test]
    fn clockwise_input_is_reoriented() {
        let cw = Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
        ])
        .unwrap();
        assert!(cw.area() > 0.0);
        // bottom edge after reorientation points outward along -y
        let (i, _) = cw.nearest_edge(Vec2::new(0.5, -0.1));
        assert_abs_diff_eq!(cw.edge_normal(i).y, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn invalid_polygons() {
        assert_eq!(
            Polygon::new(vec![Vec2::ZERO, Vec2::new(1.0, 0.0)]),
            Err(GeometryError::TooFewVertices(2))
        );
        assert_eq!(
            Polygon::new(vec![Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)]),
            Err(GeometryError::Degenerate)
        );
        let bowtie = Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 2.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(0.0, 1.0),
        ]);
        assert!(matches!(bowtie, Err(GeometryError::SelfIntersecting(..))));
    }

    #[test]
    fn heading_is_wrapped() {
        assert_abs_diff_eq!(Pose2::new(Vec2::ZERO, 3.0 * PI).heading, PI, epsilon = 1e-12);
        assert_abs_diff_eq!(Pose2::new(Vec2::ZERO, -PI).heading, PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-0.5), -0.5, epsilon = 1e-15);
    }

    fn arb_vec(range: f64) -> impl Strategy<Value = Vec2> {
        (-range..range, -range..range).prop_map(|(x, y)| Vec2::new(x, y))
    }

    fn arb_polygon() -> impl Strategy<Value = Polygon> {
        // star-shaped polygons around the origin are always simple
        prop::collection::vec((0.2f64..2.0, 0.0f64..1.0), 3..9).prop_map(|pts| {
            let n = pts.len();
            let verts = pts
                .iter()
                .enumerate()
                .map(|(i, (r, jitter))| {
                    let ang = (i as f64 + 0.8 * jitter) * 2.0 * PI / n as f64;
                    Vec2::from_angle(ang) * *r
                })
                .collect();
            Polygon::new(verts).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn rotation_round_trip(angle in -10.0f64..10.0, v in arb_vec(100.0)) {
            let r = Rot2::new(angle);
            let back = rotate(r.inverse(), rotate(r, v));
            prop_assert!((back - v).norm() <= 1e-12 * (1.0 + v.norm()));
            prop_assert!((rotate(r, v).norm() - v.norm()).abs() <= 1e-12 * (1.0 + v.norm()));
        }

        #[test]
        fn frame_round_trip(angle in -10.0f64..10.0, o in arb_vec(10.0), p in arb_vec(10.0)) {
            let r = Rot2::new(angle);
            let back = transform_from_frame(o, r, transform_to_frame(o, r, p));
            prop_assert!((back - p).norm() <= 1e-12 * (1.0 + p.norm() + o.norm()));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn contains_matches_winding(poly in arb_polygon(), pts in prop::collection::vec(arb_vec(2.5), 1000)) {
            for p in pts {
                let near_boundary = poly.nearest_edge(p).1 < 1e-9;
                if !near_boundary {
                    prop_assert_eq!(polygon_contains(&poly, p), winding_oracle(&poly, p));
                }
            }
        }

        #[test]
        fn line_of_sight_symmetric(poly in arb_polygon(), a in arb_vec(4.0), b in arb_vec(4.0), c in 0.0f64..0.5) {
            let obs = [poly];
            prop_assert_eq!(line_of_sight(a, b, &obs, c), line_of_sight(b, a, &obs, c));
        }
    }
}
