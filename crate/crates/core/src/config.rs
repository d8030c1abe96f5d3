//! Run configuration in a flat `section.key = value` text format.
//!
//! Lines starting with `#` and blank lines are ignored. Ranges are written as
//! `lo, hi`; optional ranges accept `off`. Every key has a default, unknown
//! keys are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::policy::ChannelRange;
use crate::simenv::{Interval, PushConfig};
use crate::trainer::TrainSettings;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("`{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Everything a `train`, `eval` or `rollout` invocation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub settings: TrainSettings,
    pub iterations: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { settings: TrainSettings::default(), iterations: 30, out_dir: PathBuf::from("runs/default") }
    }
}

/// Keys that do not change results and are left out of the hash.
const UNHASHED: [&str; 2] = ["ars.workers", "run.out"];

fn fmt_range(lo: f64, hi: f64) -> String {
    format!("{lo}, {hi}")
}

fn fmt_opt_range(r: Option<(f64, f64)>) -> String {
    r.map_or_else(|| "off".to_string(), |(lo, hi)| fmt_range(lo, hi))
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    v.trim()
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| ConfigError::Value { key: key.to_string(), msg: format!("expected a finite number, got `{v}`") })
}

fn parse_usize(key: &str, v: &str) -> Result<usize, ConfigError> {
    v.trim().parse::<usize>().map_err(|_| ConfigError::Value {
        key: key.to_string(),
        msg: format!("expected a non-negative integer, got `{v}`"),
    })
}

fn parse_u64(key: &str, v: &str) -> Result<u64, ConfigError> {
    v.trim().parse::<u64>().map_err(|_| ConfigError::Value {
        key: key.to_string(),
        msg: format!("expected a non-negative integer, got `{v}`"),
    })
}

fn parse_list(key: &str, v: &str, n: usize) -> Result<Vec<f64>, ConfigError> {
    let out: Vec<f64> = v.split(',').map(|p| parse_f64(key, p)).collect::<Result<_, _>>()?;
    if out.len() != n {
        return Err(ConfigError::Value { key: key.to_string(), msg: format!("expected {n} comma-separated numbers") });
    }
    Ok(out)
}

fn parse_range(key: &str, v: &str) -> Result<(f64, f64), ConfigError> {
    let r = parse_list(key, v, 2)?;
    if r[0] > r[1] {
        return Err(ConfigError::Value { key: key.to_string(), msg: "lower bound exceeds upper bound".into() });
    }
    Ok((r[0], r[1]))
}

fn parse_opt_range(key: &str, v: &str) -> Result<Option<(f64, f64)>, ConfigError> {
    if v.trim() == "off" {
        Ok(None)
    } else {
        parse_range(key, v).map(Some)
    }
}

fn parse_polygon(key: &str, v: &str) -> Result<Vec<Vector2<f64>>, ConfigError> {
    v.split(';').map(|p| parse_list(key, p, 2).map(|xy| Vector2::new(xy[0], xy[1]))).collect()
}

impl RunConfig {
    /// `(key, value)` pairs in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.settings;
        let g = &s.sim.geometry;
        let lim = &g.joint_limits;
        let hip = g.hip_positions_body[0];
        let gait = &s.sim.gait;
        let a = &s.scaling;
        let r = &s.sim.reward;
        let e = &s.sim.env;
        let rz = &s.randomization;
        let ars = &s.ars;
        let poly: Vec<String> = g.workspace_polygon.iter().map(|p| format!("{}, {}", p.x, p.y)).collect();
        let ch = |c: &ChannelRange| fmt_range(c.min, c.max);
        let iv = |i: &Interval| fmt_range(i.lo, i.hi);
        vec![
            ("geometry.upper_link", g.upper_link_len.to_string()),
            ("geometry.lower_link", g.lower_link_len.to_string()),
            ("geometry.abduction_offset", g.abduction_offset.to_string()),
            ("geometry.hip_x", hip.x.to_string()),
            ("geometry.hip_y", hip.y.to_string()),
            ("geometry.abduction_limits", fmt_range(lim.abd.min, lim.abd.max)),
            ("geometry.hip_limits", fmt_range(lim.hip.min, lim.hip.max)),
            ("geometry.knee_limits", fmt_range(lim.knee.min, lim.knee.max)),
            ("geometry.workspace", poly.join("; ")),
            ("gait.max_step_len", gait.max_step_len.to_string()),
            ("gait.desired_height", gait.desired_height.to_string()),
            ("gait.foot_clearance", gait.foot_clearance.to_string()),
            ("gait.cycle_period", gait.cycle_period.to_string()),
            ("action.step_len", ch(&a.step_len)),
            ("action.steer", ch(&a.steer)),
            ("action.shift_x", ch(&a.shift_x)),
            ("action.shift_y", ch(&a.shift_y)),
            ("action.shift_z", ch(&a.shift_z)),
            ("reward.w_roll", r.w_roll.to_string()),
            ("reward.w_pitch", r.w_pitch.to_string()),
            ("reward.w_yaw", r.w_yaw.to_string()),
            ("reward.w_height", r.w_height.to_string()),
            ("reward.progress", r.progress.to_string()),
            ("reward.standing_penalty", r.standing_penalty.to_string()),
            ("reward.desired_yaw", r.desired_yaw.to_string()),
            ("env.dt", e.dt.to_string()),
            ("env.substeps", e.substeps.to_string()),
            ("env.episode_len", e.episode_len.to_string()),
            ("env.torso_mass", e.torso_mass.to_string()),
            ("env.torso_dims", e.torso_dims.map(|v| v.to_string()).join(", ")),
            ("env.added_mass_lever", e.added_mass_lever.to_string()),
            ("env.contact_stiffness", e.contact_stiffness.to_string()),
            ("env.contact_damping", e.contact_damping.to_string()),
            ("env.friction_stiffness", e.friction_stiffness.to_string()),
            ("env.friction_damping", e.friction_damping.to_string()),
            ("env.tracking_time_constant", e.tracking_time_constant.to_string()),
            ("env.motor_moment_arm", e.motor_moment_arm.to_string()),
            ("env.gravity", e.gravity.to_string()),
            ("env.fall_height_ratio", e.fall_height_ratio.to_string()),
            ("env.fall_angle_deg", e.fall_angle_deg.to_string()),
            ("env.standing_window", e.standing_window.to_string()),
            ("env.standing_threshold", e.standing_threshold.to_string()),
            ("env.slope_smoothing", e.slope_smoothing.map_or_else(|| "off".to_string(), |v| v.to_string())),
            ("randomization.friction", fmt_opt_range(rz.friction.map(|i| (i.lo, i.hi)))),
            ("randomization.front_mass", iv(&rz.front_mass)),
            ("randomization.back_mass", iv(&rz.back_mass)),
            ("randomization.motor_strength", iv(&rz.motor_strength)),
            ("randomization.push_force", fmt_opt_range(rz.push.map(|p| (p.force.lo, p.force.hi)))),
            (
                "randomization.push_steps",
                rz.push.map_or(PushConfig::default().duration_steps, |p| p.duration_steps).to_string(),
            ),
            ("ars.step_size", ars.step_size.to_string()),
            ("ars.noise", ars.noise.to_string()),
            ("ars.directions", ars.num_directions.to_string()),
            ("ars.top_directions", ars.top_directions.to_string()),
            ("ars.workers", ars.workers.to_string()),
            ("ars.seed", ars.master_seed.to_string()),
            ("curriculum.stage_two_from", s.stage_two_from.to_string()),
            ("eval.every", s.eval_every.to_string()),
            ("eval.seed", s.eval_seed.to_string()),
            ("run.iterations", self.iterations.to_string()),
            ("run.out", self.out_dir.display().to_string()),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        Self::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let s = &mut self.settings;
        let f = |v: &str| parse_f64(key, v);
        let range = |v: &str| parse_range(key, v);
        let chan = |v: &str| parse_range(key, v).map(|(lo, hi)| ChannelRange::new(lo, hi));
        let interval = |v: &str| parse_range(key, v).map(|(lo, hi)| Interval::new(lo, hi));
        let g = &mut s.sim.geometry;
        let lim = &mut g.joint_limits;
        let e = &mut s.sim.env;
        match key {
            "geometry.upper_link" => g.upper_link_len = f(v)?,
            "geometry.lower_link" => g.lower_link_len = f(v)?,
            "geometry.abduction_offset" => g.abduction_offset = f(v)?,
            "geometry.hip_x" | "geometry.hip_y" => {
                let val = f(v)?.abs();
                let axis = usize::from(key == "geometry.hip_y");
                for (i, p) in g.hip_positions_body.iter_mut().enumerate() {
                    // FL, FR, BL, BR: front legs at +x, left legs at +y.
                    let sign = if axis == 0 {
                        if i < 2 {
                            1.0
                        } else {
                            -1.0
                        }
                    } else if i % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    };
                    p[axis] = sign * val;
                }
            }
            "geometry.abduction_limits" => lim.abd = range(v).map(|(a, b)| crate::legkin::JointRange::new(a, b))?,
            "geometry.hip_limits" => lim.hip = range(v).map(|(a, b)| crate::legkin::JointRange::new(a, b))?,
            "geometry.knee_limits" => lim.knee = range(v).map(|(a, b)| crate::legkin::JointRange::new(a, b))?,
            "geometry.workspace" => g.workspace_polygon = parse_polygon(key, v)?,
            "gait.max_step_len" => s.sim.gait.max_step_len = f(v)?,
            "gait.desired_height" => s.sim.gait.desired_height = f(v)?,
            "gait.foot_clearance" => s.sim.gait.foot_clearance = f(v)?,
            "gait.cycle_period" => s.sim.gait.cycle_period = f(v)?,
            "action.step_len" => s.scaling.step_len = chan(v)?,
            "action.steer" => s.scaling.steer = chan(v)?,
            "action.shift_x" => s.scaling.shift_x = chan(v)?,
            "action.shift_y" => s.scaling.shift_y = chan(v)?,
            "action.shift_z" => s.scaling.shift_z = chan(v)?,
            "reward.w_roll" => s.sim.reward.w_roll = f(v)?,
            "reward.w_pitch" => s.sim.reward.w_pitch = f(v)?,
            "reward.w_yaw" => s.sim.reward.w_yaw = f(v)?,
            "reward.w_height" => s.sim.reward.w_height = f(v)?,
            "reward.progress" => s.sim.reward.progress = f(v)?,
            "reward.standing_penalty" => s.sim.reward.standing_penalty = f(v)?,
            "reward.desired_yaw" => s.sim.reward.desired_yaw = f(v)?,
            "env.dt" => e.dt = f(v)?,
            "env.substeps" => e.substeps = parse_usize(key, v)?,
            "env.episode_len" => e.episode_len = parse_usize(key, v)?,
            "env.torso_mass" => e.torso_mass = f(v)?,
            "env.torso_dims" => {
                let d = parse_list(key, v, 3)?;
                e.torso_dims = [d[0], d[1], d[2]];
            }
            "env.added_mass_lever" => e.added_mass_lever = f(v)?,
            "env.contact_stiffness" => e.contact_stiffness = f(v)?,
            "env.contact_damping" => e.contact_damping = f(v)?,
            "env.friction_stiffness" => e.friction_stiffness = f(v)?,
            "env.friction_damping" => e.friction_damping = f(v)?,
            "env.tracking_time_constant" => e.tracking_time_constant = f(v)?,
            "env.motor_moment_arm" => e.motor_moment_arm = f(v)?,
            "env.gravity" => e.gravity = f(v)?,
            "env.fall_height_ratio" => e.fall_height_ratio = f(v)?,
            "env.fall_angle_deg" => e.fall_angle_deg = f(v)?,
            "env.standing_window" => e.standing_window = parse_usize(key, v)?,
            "env.standing_threshold" => e.standing_threshold = f(v)?,
            "env.slope_smoothing" => e.slope_smoothing = if v.trim() == "off" { None } else { Some(f(v)?) },
            "randomization.friction" => {
                s.randomization.friction = parse_opt_range(key, v)?.map(|(lo, hi)| Interval::new(lo, hi))
            }
            "randomization.front_mass" => s.randomization.front_mass = interval(v)?,
            "randomization.back_mass" => s.randomization.back_mass = interval(v)?,
            "randomization.motor_strength" => s.randomization.motor_strength = interval(v)?,
            "randomization.push_force" => {
                let steps = s.randomization.push.map_or(PushConfig::default().duration_steps, |p| p.duration_steps);
                s.randomization.push = parse_opt_range(key, v)?
                    .map(|(lo, hi)| PushConfig { force: Interval::new(lo, hi), duration_steps: steps });
            }
            "randomization.push_steps" => {
                let steps = parse_usize(key, v)?;
                if let Some(p) = s.randomization.push.as_mut() {
                    p.duration_steps = steps;
                }
            }
            "ars.step_size" => s.ars.step_size = f(v)?,
            "ars.noise" => s.ars.noise = f(v)?,
            "ars.directions" => s.ars.num_directions = parse_usize(key, v)?,
            "ars.top_directions" => s.ars.top_directions = parse_usize(key, v)?,
            "ars.workers" => s.ars.workers = parse_usize(key, v)?,
            "ars.seed" => s.ars.master_seed = parse_u64(key, v)?,
            "curriculum.stage_two_from" => s.stage_two_from = parse_usize(key, v)?,
            "eval.every" => s.eval_every = parse_usize(key, v)?,
            "eval.seed" => s.eval_seed = parse_u64(key, v)?,
            "run.iterations" => self.iterations = parse_usize(key, v)?,
            "run.out" => self.out_dir = PathBuf::from(v.trim()),
            _ => unreachable!("key list and setter disagree on `{key}`"),
        }
        Ok(())
    }
}

impl RunConfig {
    /// Parses config text. Keys are applied in canonical order, so their
    /// order in the file does not matter.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let known = Self::keys();
        let mut values: Vec<Option<String>> = vec![None; known.len()];
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                msg: format!("expected `section.key = value`, got `{content}`"),
            })?;
            let key = key.trim();
            let idx = known
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| ConfigError::UnknownKey { line, key: key.to_string() })?;
            if values[idx].is_some() {
                return Err(ConfigError::DuplicateKey { line, key: key.to_string() });
            }
            values[idx] = Some(value.trim().to_string());
        }
        let mut cfg = Self::default();
        for (key, value) in known.iter().zip(values) {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        cfg.settings.sim.reward.desired_height = cfg.settings.sim.gait.desired_height;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    /// Applies one `section.key = value` override on top of this config.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self, ConfigError> {
        if !Self::keys().contains(&key) {
            return Err(ConfigError::UnknownKey { line: 0, key: key.to_string() });
        }
        let mut cfg = self.clone();
        cfg.set(key, value)?;
        cfg.settings.sim.reward.desired_height = cfg.settings.sim.gait.desired_height;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.settings;
        s.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for c in s.scaling.channels() {
            if !(c.min < c.max) {
                return Err(ConfigError::Invalid("action ranges must have min < max".into()));
            }
        }
        let r = &s.randomization;
        let intervals =
            [Some(r.front_mass), Some(r.back_mass), Some(r.motor_strength), r.friction, r.push.map(|p| p.force)];
        if intervals.iter().flatten().any(|i| i.lo < 0.0) {
            return Err(ConfigError::Invalid("randomization ranges must be non-negative".into()));
        }
        if r.push.is_some_and(|p| p.duration_steps == 0) {
            return Err(ConfigError::Invalid("push duration must be at least one step".into()));
        }
        if r.motor_strength.lo <= 0.0 {
            return Err(ConfigError::Invalid("motor strength must be positive".into()));
        }
        Ok(())
    }

    /// One `key = value` line per entry, canonical order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 over the canonical text, ignoring keys that cannot change
    /// results (worker count, output directory).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if !UNHASHED.contains(&k) {
                h.update(format!("{k} = {v}\n").as_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// First 16 hex digits of [`Self::hash`].
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }
}
