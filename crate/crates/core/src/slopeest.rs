//! Support-plane estimation from stance-foot positions.
//!
//! Angle convention, shared by the torso orientation and the plane estimate:
//! `roll = atan2(u_y, u_z)` and `pitch = -asin(u_x)` where `u` is the unit
//! up-vector (plane normal or body z axis) in the world frame. A plane that
//! rises toward +x has positive pitch; a plane that rises toward -y has
//! positive roll. Torso yaw is the heading of the body x axis.

use nalgebra::{Rotation3, Vector3};
use thiserror::Error;

use crate::gaitgen::LegId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SlopeError {
    #[error("no stance exchange has been observed yet")]
    NoExchangeYet,
    #[error("contact points are degenerate (cross-product norm {0:e})")]
    DegenerateContacts(f64),
    #[error("pair samples do not form a diagonal exchange")]
    MismatchedPairs,
    #[error("pair samples are {0} s apart, beyond the pairing tolerance")]
    SamplesTooFarApart(f64),
}

const DEGENERATE_NORM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneEstimate {
    pub normal: Vector3<f64>,
    pub roll: f64,
    pub pitch: f64,
}

impl PlaneEstimate {
    pub fn flat() -> Self {
        Self { normal: Vector3::z(), roll: 0.0, pitch: 0.0 }
    }

    /// Builds an estimate from any non-zero normal; the sign is flipped so the
    /// normal faces up.
    pub fn from_normal(n: &Vector3<f64>) -> Self {
        let mut n = n.normalize();
        if n.z < 0.0 {
            n = -n;
        }
        let (roll, pitch) = tilt_angles(&n);
        Self { normal: n, roll, pitch }
    }

    /// Inclination of the plane from horizontal.
    pub fn inclination(&self) -> f64 {
        self.normal.z.clamp(-1.0, 1.0).acos()
    }
}

impl Default for PlaneEstimate {
    fn default() -> Self {
        Self::flat()
    }
}

/// (roll, pitch) of a unit up-vector.
pub fn tilt_angles(up: &Vector3<f64>) -> (f64, f64) {
    (up.y.atan2(up.z), -up.x.clamp(-1.0, 1.0).asin())
}

/// (roll, pitch, yaw) of a body→world rotation in the shared convention.
pub fn torso_angles(rotation: &Rotation3<f64>) -> [f64; 3] {
    let m = rotation.matrix();
    let up = m.column(2).into_owned();
    let (roll, pitch) = tilt_angles(&up);
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    [roll, pitch, yaw]
}

/// Four foot positions (body frame) plus the torso rotation used to express
/// them in the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSnapshot {
    /// Indexed by [`LegId::index`].
    pub feet_body: [Vector3<f64>; 4],
    pub torso_rotation: Rotation3<f64>,
    pub timestamp: f64,
}

impl ContactSnapshot {
    pub fn world_feet(&self) -> [Vector3<f64>; 4] {
        self.feet_body.map(|p| self.torso_rotation * p)
    }
}

/// Foot positions of one diagonal pair, sampled at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub legs: [LegId; 2],
    pub feet_body: [Vector3<f64>; 2],
    pub time: f64,
}

fn is_diagonal(legs: &[LegId; 2]) -> bool {
    let mut l = *legs;
    l.sort();
    l == [LegId::FrontLeft, LegId::BackRight] || l == [LegId::FrontRight, LegId::BackLeft]
}

/// Combines the outgoing stance pair (sampled just before lift-off) with the
/// incoming pair (just after touch-down). Both are expressed with the torso
/// rotation at the incoming sample.
pub fn capture_contact_pair(
    outgoing: Option<&PairSample>,
    incoming: &PairSample,
    torso_rotation: Rotation3<f64>,
    max_time_gap: f64,
) -> Result<ContactSnapshot, SlopeError> {
    let outgoing = outgoing.ok_or(SlopeError::NoExchangeYet)?;
    if !is_diagonal(&outgoing.legs) || !is_diagonal(&incoming.legs) {
        return Err(SlopeError::MismatchedPairs);
    }
    let mut feet_body = [Vector3::zeros(); 4];
    let mut seen = [false; 4];
    for sample in [outgoing, incoming] {
        for (leg, p) in sample.legs.iter().zip(sample.feet_body.iter()) {
            feet_body[leg.index()] = *p;
            seen[leg.index()] = true;
        }
    }
    if !seen.iter().all(|s| *s) {
        return Err(SlopeError::MismatchedPairs);
    }
    let gap = (incoming.time - outgoing.time).abs();
    if gap > max_time_gap + 1e-12 {
        return Err(SlopeError::SamplesTooFarApart(gap));
    }
    Ok(ContactSnapshot { feet_body, torso_rotation, timestamp: incoming.time })
}

/// Plane normal from the two foot diagonals.
pub fn estimate_support_plane(s: &ContactSnapshot) -> Result<PlaneEstimate, SlopeError> {
    let w = s.world_feet();
    let p = |leg: LegId| w[leg.index()];
    let n = (p(LegId::FrontRight) - p(LegId::BackLeft)).cross(&(p(LegId::FrontLeft) - p(LegId::BackRight)));
    let norm = n.norm();
    if !(norm >= DEGENERATE_NORM) {
        return Err(SlopeError::DegenerateContacts(norm));
    }
    Ok(PlaneEstimate::from_normal(&n))
}

/// Result of feeding one snapshot to the estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateUpdate {
    pub estimate: PlaneEstimate,
    /// Set when the snapshot was rejected and the previous estimate kept.
    pub degenerate: bool,
}

/// Holds the latest plane estimate for one environment.
#[derive(Debug, Clone)]
pub struct SlopeEstimator {
    current: PlaneEstimate,
    /// Weight of the newest raw estimate in a single-pole filter; `None`
    /// disables filtering.
    smoothing: Option<f64>,
}

impl SlopeEstimator {
    pub fn new(smoothing: Option<f64>) -> Self {
        Self { current: PlaneEstimate::flat(), smoothing }
    }

    pub fn reset(&mut self) {
        self.current = PlaneEstimate::flat();
    }

    pub fn current(&self) -> PlaneEstimate {
        self.current
    }

    pub fn update(&mut self, snapshot: &ContactSnapshot) -> EstimateUpdate {
        match estimate_support_plane(snapshot) {
            Ok(raw) => {
                self.current = match self.smoothing {
                    Some(alpha) => {
                        let n = self.current.normal * (1.0 - alpha) + raw.normal * alpha;
                        PlaneEstimate::from_normal(&n)
                    }
                    None => raw,
                };
                EstimateUpdate { estimate: self.current, degenerate: false }
            }
            Err(_) => EstimateUpdate { estimate: self.current, degenerate: true },
        }
    }
}

impl Default for SlopeEstimator {
    fn default() -> Self {
        Self::new(None)
    }
}
