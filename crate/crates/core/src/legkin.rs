//! Analytic kinematics of a single 3-DOF leg.
//!
//! The leg is modelled as an abduction joint followed by a planar two-link
//! chain (hip, knee). All positions are in the leg frame: origin at the hip
//! mount, x forward, y left, z up (so a standing foot has negative z).
//!
//! Angle conventions:
//! - `hip` is measured from the downward vertical, positive swings the foot
//!   forward (+x).
//! - `knee` is measured relative to the upper link; the inverse solution
//!   always returns `knee <= 0` (knee flexes backward).
//! - `abd` rotates the planar chain about the leg-frame x axis.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::gaitgen::LegId;

/// Foot position in the leg frame, meters.
pub type FootPosition = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("target {0:?} is outside the reachable annulus")]
    Unreachable([f64; 3]),
    #[error("solution {0:?} violates joint limits")]
    JointLimitViolation([f64; 3]),
    #[error("invalid leg geometry: {0}")]
    InvalidGeometry(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegJointAngles {
    pub abd: f64,
    pub hip: f64,
    pub knee: f64,
}

impl LegJointAngles {
    pub const ZERO: Self = Self { abd: 0.0, hip: 0.0, knee: 0.0 };

    pub fn new(abd: f64, hip: f64, knee: f64) -> Self {
        Self { abd, hip, knee }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.abd, self.hip, self.knee]
    }

    pub fn is_finite(&self) -> bool {
        self.abd.is_finite() && self.hip.is_finite() && self.knee.is_finite()
    }
}

/// Closed interval `[min, max]` in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointRange {
    pub min: f64,
    pub max: f64,
}

impl JointRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min - LIMIT_TOL && v <= self.max + LIMIT_TOL
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    pub abd: JointRange,
    pub hip: JointRange,
    pub knee: JointRange,
}

impl JointLimits {
    pub fn contains(&self, q: &LegJointAngles) -> bool {
        self.abd.contains(q.abd) && self.hip.contains(q.hip) && self.knee.contains(q.knee)
    }
}

const LIMIT_TOL: f64 = 1e-12;
const REACH_TOL: f64 = 1e-12;

/// Leg dimensions, mount points and the safe planar workspace.
///
/// Defaults are placeholders for an equivalent serial leg: the hardware's
/// exact link lengths and workspace trapezoid are not published.
#[derive(Debug, Clone, PartialEq)]
pub struct LegGeometry {
    pub upper_link_len: f64,
    pub lower_link_len: f64,
    /// Lateral distance between the abduction axis and the hip/knee plane.
    pub abduction_offset: f64,
    /// Hip mount points in the body frame, indexed by [`LegId::index`].
    pub hip_positions_body: [Vector3<f64>; 4],
    pub joint_limits: JointLimits,
    /// Convex polygon in the planar (x, z) leg coordinates, ordered either way.
    pub workspace_polygon: Vec<Vector2<f64>>,
}

impl Default for LegGeometry {
    fn default() -> Self {
        Self {
            upper_link_len: 0.15,
            lower_link_len: 0.175,
            abduction_offset: 0.0,
            hip_positions_body: [
                Vector3::new(0.22, 0.12, 0.0),
                Vector3::new(0.22, -0.12, 0.0),
                Vector3::new(-0.22, 0.12, 0.0),
                Vector3::new(-0.22, -0.12, 0.0),
            ],
            joint_limits: JointLimits {
                abd: JointRange::new(-0.6, 0.6),
                hip: JointRange::new(-1.7, 1.7),
                knee: JointRange::new(-2.6, 0.0),
            },
            workspace_polygon: vec![
                Vector2::new(-0.05, -0.18),
                Vector2::new(0.05, -0.18),
                Vector2::new(0.11, -0.30),
                Vector2::new(-0.11, -0.30),
            ],
        }
    }
}

impl LegGeometry {
    pub fn total_length(&self) -> f64 {
        self.upper_link_len + self.lower_link_len
    }

    pub fn hip_position(&self, leg: LegId) -> Vector3<f64> {
        self.hip_positions_body[leg.index()]
    }

    /// Checks link lengths, joint ranges and the workspace polygon.
    pub fn validate(&self) -> Result<(), KinematicsError> {
        let bad = |m: &str| Err(KinematicsError::InvalidGeometry(m.to_string()));
        if !(self.upper_link_len > 0.0 && self.lower_link_len > 0.0) {
            return bad("link lengths must be positive");
        }
        if !self.abduction_offset.is_finite() {
            return bad("abduction offset must be finite");
        }
        for r in [self.joint_limits.abd, self.joint_limits.hip, self.joint_limits.knee] {
            if !(r.min <= r.max) {
                return bad("joint range min exceeds max");
            }
        }
        let poly = &self.workspace_polygon;
        if poly.len() < 3 {
            return bad("workspace polygon needs at least three vertices");
        }
        if polygon_area(poly).abs() < 1e-12 {
            return bad("workspace polygon is degenerate");
        }
        if !polygon_is_convex(poly) {
            return bad("workspace polygon is not convex");
        }
        let reach = self.total_length();
        let inner = (self.upper_link_len - self.lower_link_len).abs();
        for v in poly {
            let r = v.norm();
            if r > reach + REACH_TOL || r < inner - REACH_TOL {
                return bad("workspace vertex is not reachable");
            }
        }
        Ok(())
    }

    pub fn forward_kinematics(&self, q: &LegJointAngles) -> FootPosition {
        forward_kinematics(q, self)
    }

    pub fn inverse_kinematics(&self, p: &FootPosition) -> Result<LegJointAngles, KinematicsError> {
        inverse_kinematics(p, self)
    }

    pub fn in_workspace(&self, p: &FootPosition) -> bool {
        in_workspace(p, self)
    }
}

/// Foot position for the given joint angles.
pub fn forward_kinematics(q: &LegJointAngles, g: &LegGeometry) -> FootPosition {
    let (l1, l2) = (g.upper_link_len, g.lower_link_len);
    let x = l1 * q.hip.sin() + l2 * (q.hip + q.knee).sin();
    let zp = -(l1 * q.hip.cos() + l2 * (q.hip + q.knee).cos());
    let d = g.abduction_offset;
    let (s, c) = q.abd.sin_cos();
    Vector3::new(x, d * c - zp * s, d * s + zp * c)
}

/// Splits a leg-frame point into the abduction angle and the planar (x, z)
/// coordinates of the hip/knee chain. Returns both sign branches of the
/// planar z, lower (foot below hip) first.
fn abduction_candidates(p: &FootPosition, d: f64) -> [(f64, f64); 2] {
    let r2 = p.y * p.y + p.z * p.z;
    let zp = -(r2 - d * d).max(0.0).sqrt();
    let base = p.z.atan2(p.y);
    let branch = |zp: f64| {
        if r2 < 1e-24 {
            (0.0, zp)
        } else {
            (wrap_angle(base - zp.atan2(d)), zp)
        }
    };
    [branch(zp), branch(-zp)]
}

/// Planar (x, z) projection of a foot point after removing abduction.
pub fn planar_projection(p: &FootPosition, g: &LegGeometry) -> Vector2<f64> {
    let [(_, zp), _] = abduction_candidates(p, g.abduction_offset);
    Vector2::new(p.x, zp)
}

/// Knee-backward inverse kinematics.
pub fn inverse_kinematics(p: &FootPosition, g: &LegGeometry) -> Result<LegJointAngles, KinematicsError> {
    let (l1, l2) = (g.upper_link_len, g.lower_link_len);
    let d = g.abduction_offset;
    let r2 = p.y * p.y + p.z * p.z;
    if !p.iter().all(|v| v.is_finite()) || r2 < d * d - REACH_TOL {
        return Err(KinematicsError::Unreachable([p.x, p.y, p.z]));
    }
    let candidates = abduction_candidates(p, d);
    // Prefer the branch with the foot below the hip; fall back to the other
    // one only when the abduction angle would otherwise leave its range.
    let (abd, zp) = candidates.iter().copied().find(|(a, _)| g.joint_limits.abd.contains(*a)).unwrap_or(candidates[0]);

    let dist2 = p.x * p.x + zp * zp;
    let dist = dist2.sqrt();
    if dist > l1 + l2 + REACH_TOL || dist < (l1 - l2).abs() - REACH_TOL {
        return Err(KinematicsError::Unreachable([p.x, p.y, p.z]));
    }
    let cos_knee = ((dist2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let knee = -cos_knee.acos();
    let heading = p.x.atan2(-zp);
    let hip = wrap_angle(heading - (l2 * knee.sin()).atan2(l1 + l2 * knee.cos()));
    let q = LegJointAngles { abd, hip, knee };
    if !g.joint_limits.contains(&q) {
        return Err(KinematicsError::JointLimitViolation(q.as_array()));
    }
    Ok(q)
}

/// Whether the planar projection of `p` lies in the workspace polygon,
/// boundary included.
pub fn in_workspace(p: &FootPosition, g: &LegGeometry) -> bool {
    if !p.iter().all(|v| v.is_finite()) {
        return false;
    }
    point_in_convex_polygon(&planar_projection(p, g), &g.workspace_polygon)
}

/// Moves `p` onto the closest point of the workspace polygon (in planar
/// coordinates) while keeping its abduction angle. Points already inside
/// are returned unchanged. The boolean reports whether clamping happened.
pub fn clamp_to_workspace(p: &FootPosition, g: &LegGeometry) -> (FootPosition, bool) {
    if in_workspace(p, g) {
        return (*p, false);
    }
    let d = g.abduction_offset;
    let [(abd, zp), _] = abduction_candidates(p, d);
    let planar = Vector2::new(p.x, zp);
    let q = closest_point_on_polygon(&planar, &g.workspace_polygon);
    let (s, c) = abd.sin_cos();
    (Vector3::new(q.x, d * c - q.y * s, d * s + q.y * c), true)
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| cross2(&poly[i], &poly[(i + 1) % n])).sum::<f64>() * 0.5
}

fn polygon_is_convex(poly: &[Vector2<f64>]) -> bool {
    let n = poly.len();
    let mut sign = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        let turn = cross2(&(b - a), &(c - b));
        if turn.abs() < 1e-15 {
            continue;
        }
        if sign == 0.0 {
            sign = turn.signum();
        } else if turn.signum() != sign {
            return false;
        }
    }
    sign != 0.0
}

/// Boundary-inclusive containment test, independent of vertex orientation.
pub fn point_in_convex_polygon(p: &Vector2<f64>, poly: &[Vector2<f64>]) -> bool {
    const EPS: f64 = 1e-12;
    let n = poly.len();
    let (mut pos, mut neg) = (false, false);
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = cross2(&(b - a), &(p - a));
        if c > EPS {
            pos = true;
        } else if c < -EPS {
            neg = true;
        }
        if pos && neg {
            return false;
        }
    }
    true
}

fn closest_point_on_polygon(p: &Vector2<f64>, poly: &[Vector2<f64>]) -> Vector2<f64> {
    let n = poly.len();
    let mut best = poly[0];
    let mut best_d2 = f64::INFINITY;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let ab = b - a;
        let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
        let q = a + ab * t;
        let d2 = (p - q).norm_squared();
        if d2 < best_d2 {
            best_d2 = d2;
            best = q;
        }
    }
    best
}
