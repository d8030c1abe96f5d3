//! Semi-elliptic end-foot trajectories for a trot gait.
//!
//! Each leg follows a flat stance segment for the first half of its cycle and
//! an elliptic swing arc for the second half. The policy reshapes the curve
//! per leg with a step length, a yaw rotation and a 3D shift.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::Vector3;
use thiserror::Error;

use crate::legkin::{in_workspace, LegGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LegId {
    FrontLeft,
    FrontRight,
    BackLeft,
    BackRight,
}

impl LegId {
    /// Fixed order used by action vectors and geometry tables.
    pub const ALL: [LegId; 4] = [LegId::FrontLeft, LegId::FrontRight, LegId::BackLeft, LegId::BackRight];

    pub fn index(self) -> usize {
        match self {
            LegId::FrontLeft => 0,
            LegId::FrontRight => 1,
            LegId::BackLeft => 2,
            LegId::BackRight => 3,
        }
    }

    /// Trot phase offset: diagonal pairs share a phase.
    pub fn phase_offset(self) -> f64 {
        match self {
            LegId::FrontLeft | LegId::BackRight => 0.0,
            LegId::FrontRight | LegId::BackLeft => 0.5,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            LegId::FrontLeft => "FL",
            LegId::FrontRight => "FR",
            LegId::BackLeft => "BL",
            LegId::BackRight => "BR",
        }
    }
}

impl fmt::Display for LegId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitParams {
    pub max_step_len: f64,
    pub desired_height: f64,
    pub foot_clearance: f64,
    pub cycle_period: f64,
}

impl Default for GaitParams {
    fn default() -> Self {
        Self { max_step_len: 0.136, desired_height: 0.243, foot_clearance: 0.06, cycle_period: 0.4 }
    }
}

impl GaitParams {
    pub fn validate(&self) -> Result<(), GaitError> {
        let all_positive = [self.max_step_len, self.desired_height, self.foot_clearance, self.cycle_period]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if all_positive {
            Ok(())
        } else {
            Err(GaitError::InvalidParams(*self))
        }
    }
}

/// Per-leg trajectory transform produced by the policy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LegAction {
    pub step_len: f64,
    pub steer: f64,
    pub shift_x: f64,
    pub shift_y: f64,
    pub shift_z: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaitError {
    #[error("gait parameters must be finite and positive: {0:?}")]
    InvalidParams(GaitParams),
    #[error("transformed foot point {0:?} leaves the leg workspace")]
    WorkspaceViolation([f64; 3]),
}

/// Normalized phase of `leg` at time `t` for a trot with period `period`.
pub fn trot_phase(t: f64, period: f64, leg: LegId) -> f64 {
    let tau = (t / period + leg.phase_offset()).fract();
    // fract of a value just below an integer can round up to exactly 1.0
    if tau >= 1.0 {
        0.0
    } else {
        tau
    }
}

/// Whether phase `tau` falls in the stance half of the cycle.
pub fn is_stance(tau: f64) -> bool {
    tau < 0.5
}

/// Untransformed semi-ellipse point in the leg frame, hip at the origin.
pub fn base_trajectory_point(tau: f64, action: &LegAction, gait: &GaitParams) -> Vector3<f64> {
    let angle = 2.0 * PI * (1.0 - tau);
    let x = 0.5 * action.step_len * angle.cos();
    let z =
        if is_stance(tau) { -gait.desired_height } else { -gait.desired_height + gait.foot_clearance * angle.sin() };
    Vector3::new(x, 0.0, z)
}

/// Applies the yaw rotation and shift of `action` to a base point.
pub fn transform_point(pt: &Vector3<f64>, action: &LegAction) -> Vector3<f64> {
    let (s, c) = action.steer.sin_cos();
    Vector3::new(action.shift_x + pt.x * c, action.shift_y + pt.x * s, action.shift_z + pt.z)
}

/// Transformed point, rejected when it leaves the leg workspace.
pub fn checked_transform_point(
    pt: &Vector3<f64>,
    action: &LegAction,
    geometry: &LegGeometry,
) -> Result<Vector3<f64>, GaitError> {
    let p = transform_point(pt, action);
    if in_workspace(&p, geometry) {
        Ok(p)
    } else {
        Err(GaitError::WorkspaceViolation([p.x, p.y, p.z]))
    }
}

/// Foot reference for `leg` at time `t`, leg frame.
pub fn foot_reference(t: f64, leg: LegId, action: &LegAction, gait: &GaitParams) -> Vector3<f64> {
    let tau = trot_phase(t, gait.cycle_period, leg);
    transform_point(&base_trajectory_point(tau, action, gait), action)
}
