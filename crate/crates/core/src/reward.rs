//! Per-control-step reward: Gaussian posture kernels, normalized forward
//! progress and a standing penalty.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("kernel width must be positive, got {0}")]
    InvalidWidth(f64),
    #[error("maximum step must be positive, got {0}")]
    InvalidMaxStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub w_roll: f64,
    pub w_pitch: f64,
    pub w_yaw: f64,
    pub w_height: f64,
    /// Forward-progress weight.
    pub progress: f64,
    pub standing_penalty: f64,
    pub desired_yaw: f64,
    pub desired_height: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_roll: 40.0,
            w_pitch: 40.0,
            w_yaw: 20.0,
            w_height: 800.0,
            progress: 1.5,
            standing_penalty: 1.0,
            desired_yaw: 0.0,
            desired_height: 0.243,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), RewardError> {
        for w in [self.w_roll, self.w_pitch, self.w_yaw, self.w_height] {
            if !(w > 0.0) {
                return Err(RewardError::InvalidWidth(w));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardInputs {
    pub torso_roll: f64,
    pub torso_pitch: f64,
    pub torso_yaw: f64,
    pub plane_roll: f64,
    pub plane_pitch: f64,
    /// Torso height along the plane normal.
    pub height: f64,
    /// Forward displacement this step.
    pub dx: f64,
    pub standing: bool,
}

/// `exp(-w x²)`.
pub fn gaussian_kernel(w: f64, x: f64) -> Result<f64, RewardError> {
    if !(w > 0.0) {
        return Err(RewardError::InvalidWidth(w));
    }
    Ok((-w * x * x).exp())
}

pub fn compute_reward(inp: &RewardInputs, wt: &RewardWeights, max_step: f64) -> Result<f64, RewardError> {
    if !(max_step > 0.0) {
        return Err(RewardError::InvalidMaxStep(max_step));
    }
    let posture = gaussian_kernel(wt.w_roll, inp.torso_roll - inp.plane_roll)?
        + gaussian_kernel(wt.w_pitch, inp.torso_pitch - inp.plane_pitch)?
        + gaussian_kernel(wt.w_yaw, inp.torso_yaw - wt.desired_yaw)?
        + gaussian_kernel(wt.w_height, inp.height - wt.desired_height)?;
    let penalty = if inp.standing { wt.standing_penalty } else { 0.0 };
    Ok(posture + wt.progress * (inp.dx / max_step) - penalty)
}

/// Flags the robot as standing when it moved less than `threshold` along x
/// over the last `window` control steps.
#[derive(Debug, Clone)]
pub struct StandingDetector {
    window: usize,
    threshold: f64,
    positions: VecDeque<f64>,
}

impl StandingDetector {
    pub fn new(window: usize, threshold: f64) -> Self {
        Self { window, threshold, positions: VecDeque::with_capacity(window + 1) }
    }

    /// Starts a new episode at forward position `x0`.
    pub fn reset(&mut self, x0: f64) {
        self.positions.clear();
        self.positions.push_back(x0);
    }

    /// Records the position after a control step and reports the flag.
    pub fn record(&mut self, x: f64) -> bool {
        self.positions.push_back(x);
        if self.positions.len() > self.window + 1 {
            self.positions.pop_front();
        }
        self.positions.len() == self.window + 1 && (x - self.positions[0]).abs() < self.threshold
    }
}

impl Default for StandingDetector {
    fn default() -> Self {
        Self::new(50, 0.02)
    }
}
