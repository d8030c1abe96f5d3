//! Simplified quadruped environment.
//!
//! A single rigid torso carries four massless, kinematic legs. Each leg
//! tracks its inverse-kinematics target through a first-order lag, and feet
//! interact with the terrain plane through a penalty spring-damper plus a
//! Coulomb-limited tangential spring (stick/slip anchor). The torso is
//! integrated with semi-implicit Euler over fixed substeps.

mod episode_log;
mod terrain;

pub use episode_log::{EpisodeLog, EpisodeRow};
pub use terrain::{
    full_grid, sample_terrain, schedule_push, terrain_grid, CurriculumStage, EpisodeParams, Interval, PushConfig,
    PushEvent, RandomizationConfig, TerrainPlane, INCLINATIONS_DEG, NOMINAL_FRICTION, ORIENTATIONS_DEG,
};

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::gaitgen::{base_trajectory_point, foot_reference, is_stance, trot_phase, GaitParams, LegAction, LegId};
use crate::legkin::{clamp_to_workspace, forward_kinematics, inverse_kinematics, LegGeometry, LegJointAngles};
use crate::policy::{build_observation, ActionVector, Observation, OrientationHistory};
use crate::reward::{compute_reward, RewardInputs, RewardWeights, StandingDetector};
use crate::seeding::rng_from;
use crate::slopeest::{capture_contact_pair, torso_angles, PairSample, PlaneEstimate, SlopeEstimator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("environment must be reset before stepping")]
    NotReset,
    #[error("invalid environment configuration: {0}")]
    Config(String),
}

/// Numerical and physical constants of the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    /// Control step, s.
    pub dt: f64,
    pub substeps: usize,
    pub episode_len: usize,
    pub torso_mass: f64,
    /// Box dimensions (length, width, height) used for the inertia.
    pub torso_dims: [f64; 3],
    /// Distance from the body origin of the front/back added masses.
    pub added_mass_lever: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub friction_stiffness: f64,
    pub friction_damping: f64,
    pub tracking_time_constant: f64,
    /// Converts motor torque into the per-foot force cap.
    pub motor_moment_arm: f64,
    pub gravity: f64,
    pub fall_height_ratio: f64,
    pub fall_angle_deg: f64,
    pub standing_window: usize,
    pub standing_threshold: f64,
    pub slope_smoothing: Option<f64>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.005,
            substeps: 5,
            episode_len: 400,
            torso_mass: 10.0,
            torso_dims: [0.55, 0.3, 0.1],
            added_mass_lever: 0.25,
            contact_stiffness: 5000.0,
            contact_damping: 100.0,
            friction_stiffness: 5000.0,
            friction_damping: 100.0,
            tracking_time_constant: 0.005,
            motor_moment_arm: 0.07,
            gravity: 9.81,
            fall_height_ratio: 0.5,
            fall_angle_deg: 45.0,
            standing_window: 50,
            standing_threshold: 0.02,
            slope_smoothing: None,
        }
    }
}

/// Everything needed to build an environment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimConfig {
    pub geometry: LegGeometry,
    pub gait: GaitParams,
    pub reward: RewardWeights,
    pub env: EnvConfig,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let cfg = |e: String| EnvError::Config(e);
        self.geometry.validate().map_err(|e| cfg(e.to_string()))?;
        self.gait.validate().map_err(|e| cfg(e.to_string()))?;
        self.reward.validate().map_err(|e| cfg(e.to_string()))?;
        let e = &self.env;
        if !(e.dt > 0.0) || e.substeps == 0 {
            return Err(cfg("dt and substeps must be positive".into()));
        }
        let half = self.gait.cycle_period / (2.0 * e.dt);
        if (half - half.round()).abs() > 1e-9 || half.round() < 1.0 {
            return Err(cfg(format!(
                "half gait cycle ({} s) must be a whole number of control steps",
                self.gait.cycle_period / 2.0
            )));
        }
        let positive = [
            e.torso_mass,
            e.contact_stiffness,
            e.friction_stiffness,
            e.tracking_time_constant,
            e.motor_moment_arm,
            e.gravity,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || e.torso_dims.iter().any(|v| !(*v > 0.0)) {
            return Err(cfg("masses, gains and time constants must be positive".into()));
        }
        if e.contact_damping < 0.0 || e.friction_damping < 0.0 {
            return Err(cfg("damping must be non-negative".into()));
        }
        let nominal = Vector3::new(0.0, 0.0, -self.gait.desired_height);
        if !self.geometry.in_workspace(&nominal) || inverse_kinematics(&nominal, &self.geometry).is_err() {
            return Err(cfg(format!("desired height {} m is outside the leg workspace", self.gait.desired_height)));
        }
        Ok(())
    }

    /// Largest forward torso displacement per control step: a full step
    /// length covered in half a gait cycle.
    pub fn max_forward_per_step(&self) -> f64 {
        self.gait.max_step_len * self.env.dt / (0.5 * self.gait.cycle_period)
    }

    pub fn steps_per_half_cycle(&self) -> usize {
        (self.gait.cycle_period / (2.0 * self.env.dt)).round() as usize
    }
}

/// Force and torque (world frame) applied at the torso centre of mass.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

/// Full dynamic state of one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    /// Centre of mass, world frame.
    pub com: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub velocity: Vector3<f64>,
    /// World-frame angular velocity.
    pub angular_velocity: Vector3<f64>,
    pub joints: [LegJointAngles; 4],
    pub joint_velocities: [[f64; 3]; 4],
    pub step: usize,
    pub time: f64,
    pub contact: [bool; 4],
    /// Tangential stick point of each foot in contact.
    pub anchors: [Option<Vector3<f64>>; 4],
    /// Foot positions relative to the centre of mass (body frame) at the
    /// last substep; used for foot velocities.
    pub feet_com: [Vector3<f64>; 4],
}

impl SimState {
    pub fn rotation(&self) -> Rotation3<f64> {
        self.orientation.to_rotation_matrix()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct MassProperties {
    mass: f64,
    com_body: Vector3<f64>,
    inertia_body: Matrix3<f64>,
    inertia_body_inv: Matrix3<f64>,
}

impl MassProperties {
    fn new(env: &EnvConfig, front: f64, back: f64) -> Self {
        let m = env.torso_mass;
        let [l, w, h] = env.torso_dims;
        let lever = env.added_mass_lever;
        let mass = m + front + back;
        let cx = lever * (front - back) / mass;
        let mut inertia = Matrix3::from_diagonal(&Vector3::new(
            m / 12.0 * (w * w + h * h),
            m / 12.0 * (l * l + h * h),
            m / 12.0 * (l * l + w * w),
        ));
        // Parallel-axis terms about the shifted centre of mass.
        let offaxis = m * cx * cx + front * (lever - cx).powi(2) + back * (lever + cx).powi(2);
        inertia[(1, 1)] += offaxis;
        inertia[(2, 2)] += offaxis;
        let inv = inertia.try_inverse().expect("diagonal inertia is invertible");
        Self { mass, com_body: Vector3::new(cx, 0.0, 0.0), inertia_body: inertia, inertia_body_inv: inv }
    }
}

/// Diagnostics emitted with every control step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub step: usize,
    pub time: f64,
    /// A stance exchange just happened; the observation was refreshed and
    /// the policy should be queried.
    pub policy_step: bool,
    pub plane_updated: bool,
    pub degenerate_contacts: bool,
    pub torso: [f64; 3],
    pub plane: PlaneEstimate,
    pub height: f64,
    pub dx: f64,
    /// Forward (x) position of the body origin.
    pub forward_position: f64,
    pub standing: bool,
    pub push_active: bool,
    pub fell: bool,
    pub workspace_clamps: usize,
    pub contact: [bool; 4],
    /// Actions in effect during this step.
    pub actions: ActionVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
struct Episode {
    terrain: TerrainPlane,
    params: EpisodeParams,
    mass: MassProperties,
    state: SimState,
    latched: [LegAction; 4],
    latched_half: Option<usize>,
    estimator: SlopeEstimator,
    history: OrientationHistory,
    observation: Observation,
    standing: StandingDetector,
    done: bool,
}

/// One environment instance; single-owner, not shared between threads.
#[derive(Debug, Clone)]
pub struct SimEnv {
    config: SimConfig,
    episode: Option<Episode>,
    scripted: Option<Wrench>,
    gait_frozen: bool,
}

impl SimEnv {
    pub fn new(config: SimConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self { config, episode: None, scripted: None, gait_frozen: false })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn reset(
        &mut self,
        terrain: TerrainPlane,
        rand: &RandomizationConfig,
        seed: u64,
    ) -> Result<Observation, EnvError> {
        if !terrain.is_valid() {
            return Err(EnvError::Config(format!("invalid terrain {terrain:?}")));
        }
        let cfg = &self.config;
        let mut rng = rng_from(&[seed, 0x5e7]);
        let params = EpisodeParams::sample(&terrain, rand, cfg.env.episode_len, &mut rng);
        let mass = MassProperties::new(&cfg.env, params.front_mass, params.back_mass);

        // Torso aligned with the plane, heading along world x projected on it.
        let n = terrain.normal();
        let x_axis = (Vector3::x() - n * n.x).normalize();
        let y_axis = n.cross(&x_axis);
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x_axis, y_axis, n]));
        let orientation = UnitQuaternion::from_rotation_matrix(&rot);
        let origin = n * cfg.gait.desired_height;
        let com = origin + rot * mass.com_body;

        let spawn = LegAction { step_len: 0.5 * cfg.gait.max_step_len, ..Default::default() };
        let mut joints = [LegJointAngles::ZERO; 4];
        let mut feet_com = [Vector3::zeros(); 4];
        for leg in LegId::ALL {
            let tau = trot_phase(0.0, cfg.gait.cycle_period, leg);
            let p = base_trajectory_point(tau, &spawn, &cfg.gait);
            let q = inverse_kinematics(&p, &cfg.geometry).map_err(|e| EnvError::Config(e.to_string()))?;
            joints[leg.index()] = q;
            feet_com[leg.index()] =
                cfg.geometry.hip_position(leg) + forward_kinematics(&q, &cfg.geometry) - mass.com_body;
        }
        let state = SimState {
            com,
            orientation,
            velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
            joints,
            joint_velocities: [[0.0; 3]; 4],
            step: 0,
            time: 0.0,
            contact: [false; 4],
            anchors: [None; 4],
            feet_com,
        };
        let mut estimator = SlopeEstimator::new(cfg.env.slope_smoothing);
        estimator.reset();
        let history = OrientationHistory::filled(torso_angles(&rot));
        let observation = build_observation(&history, &estimator.current());
        let mut standing = StandingDetector::new(cfg.env.standing_window, cfg.env.standing_threshold);
        standing.reset(origin.x);
        self.episode = Some(Episode {
            terrain: TerrainPlane { friction_mu: params.friction, ..terrain },
            params,
            mass,
            state,
            latched: [spawn; 4],
            latched_half: None,
            estimator,
            history,
            observation,
            standing,
            done: false,
        });
        Ok(observation)
    }

    pub fn is_ready(&self) -> bool {
        self.episode.as_ref().is_some_and(|e| !e.done)
    }

    pub fn state(&self) -> Option<&SimState> {
        self.episode.as_ref().map(|e| &e.state)
    }

    /// Direct state access for scripted experiments and tests.
    pub fn state_mut(&mut self) -> Option<&mut SimState> {
        self.episode.as_mut().map(|e| &mut e.state)
    }

    pub fn terrain(&self) -> Option<TerrainPlane> {
        self.episode.as_ref().map(|e| e.terrain)
    }

    pub fn episode_params(&self) -> Option<&EpisodeParams> {
        self.episode.as_ref().map(|e| &e.params)
    }

    /// Replaces the randomized push schedule of the current episode.
    pub fn set_push(&mut self, push: Option<PushEvent>) {
        if let Some(ep) = self.episode.as_mut() {
            ep.params.push = push;
        }
    }

    /// Constant external wrench applied every substep until cleared.
    pub fn set_scripted_wrench(&mut self, wrench: Option<Wrench>) {
        self.scripted = wrench;
    }

    /// Holds the gait clock so feet keep their current references.
    pub fn set_gait_frozen(&mut self, frozen: bool) {
        self.gait_frozen = frozen;
    }

    /// Position of the body origin (hip plane centre) in the world frame.
    pub fn body_origin(&self) -> Option<Vector3<f64>> {
        self.episode.as_ref().map(|e| e.state.com - e.state.rotation() * e.mass.com_body)
    }

    pub fn total_mass(&self) -> Option<f64> {
        self.episode.as_ref().map(|e| e.mass.mass)
    }

    /// Kinetic + gravitational + contact-spring energy.
    pub fn mechanical_energy(&self) -> Option<f64> {
        let ep = self.episode.as_ref()?;
        let s = &ep.state;
        let env = &self.config.env;
        let r = s.rotation();
        let inertia = r.matrix() * ep.mass.inertia_body * r.matrix().transpose();
        let kinetic = 0.5 * ep.mass.mass * s.velocity.norm_squared()
            + 0.5 * s.angular_velocity.dot(&(inertia * s.angular_velocity));
        let potential = ep.mass.mass * env.gravity * s.com.z;
        let n = ep.terrain.normal();
        let mut springs = 0.0;
        for i in 0..4 {
            let p = s.com + r * s.feet_com[i];
            let depth = -n.dot(&p);
            if depth > 0.0 {
                springs += 0.5 * env.contact_stiffness * depth * depth;
            }
            if let Some(a) = s.anchors[i] {
                let pt = p - n * n.dot(&p);
                springs += 0.5 * env.friction_stiffness * (pt - a).norm_squared();
            }
        }
        Some(kinetic + potential + springs)
    }

    /// Advances one control step with `actions` as the pending command.
    /// Actions take effect per leg at the next stance/swing boundary.
    pub fn step(&mut self, actions: &ActionVector) -> Result<StepOutcome, EnvError> {
        let cfg = &self.config;
        let ep = self.episode.as_mut().filter(|e| !e.done).ok_or(EnvError::NotReset)?;
        let env = &cfg.env;
        let half_steps = cfg.steps_per_half_cycle();
        let k = ep.state.step;
        let gait_step = if self.gait_frozen { 0 } else { k };

        // (1) latch at phase boundaries; all legs share boundary instants.
        let half = gait_step / half_steps;
        if ep.latched_half != Some(half) {
            ep.latched = actions.0;
            ep.latched_half = Some(half);
        }
        let stance_at_start =
            LegId::ALL.map(|leg| is_stance(trot_phase(gait_step as f64 * env.dt, cfg.gait.cycle_period, leg)));

        let push_force = ep.params.push.filter(|p| p.active_at(k)).map(|p| p.force);
        let scripted = self.scripted.unwrap_or_default();
        let external =
            Wrench { force: scripted.force + push_force.unwrap_or_else(Vector3::zeros), torque: scripted.torque };
        let origin_before = ep.state.com - ep.state.rotation() * ep.mass.com_body;

        let h = env.dt / env.substeps as f64;
        let lag = 1.0 - (-h / env.tracking_time_constant).exp();
        let force_cap = ep.params.motor_strength / env.motor_moment_arm;
        let mut clamps = 0;
        for j in 0..env.substeps {
            let t_ref = if self.gait_frozen { 0.0 } else { k as f64 * env.dt + (j + 1) as f64 * h };
            // (2)-(3) foot references, workspace clamp, IK, first-order tracking.
            for leg in LegId::ALL {
                let i = leg.index();
                let reference = foot_reference(t_ref, leg, &ep.latched[i], &cfg.gait);
                let (target, clamped) = clamp_to_workspace(&reference, &cfg.geometry);
                clamps += clamped as usize;
                let q = &mut ep.state.joints[i];
                if let Ok(goal) = inverse_kinematics(&target, &cfg.geometry) {
                    let dq = [goal.abd - q.abd, goal.hip - q.hip, goal.knee - q.knee].map(|d| d * lag);
                    q.abd += dq[0];
                    q.hip += dq[1];
                    q.knee += dq[2];
                    ep.state.joint_velocities[i] = dq.map(|d| d / h);
                } else {
                    ep.state.joint_velocities[i] = [0.0; 3];
                }
            }
            // (4)-(5) contact forces and rigid-body integration.
            integrate_substep(&cfg.geometry, env, ep, &external, force_cap, h);
        }

        let s = &mut ep.state;
        s.step = k + 1;
        s.time = s.step as f64 * env.dt;
        let rot = s.rotation();
        let origin = s.com - rot * ep.mass.com_body;

        // (6) stance exchange at the end of every half cycle.
        let mut policy_step = false;
        let mut plane_updated = false;
        let mut degenerate = false;
        if !self.gait_frozen && (k + 1) % half_steps == 0 {
            let feet_body = LegId::ALL
                .map(|leg| cfg.geometry.hip_position(leg) + forward_kinematics(&s.joints[leg.index()], &cfg.geometry));
            let pair = |stance: bool| {
                let legs: Vec<LegId> =
                    LegId::ALL.into_iter().filter(|l| stance_at_start[l.index()] == stance).collect();
                PairSample {
                    legs: [legs[0], legs[1]],
                    feet_body: [feet_body[legs[0].index()], feet_body[legs[1].index()]],
                    time: s.time,
                }
            };
            let outgoing = pair(true);
            let incoming = pair(false);
            if let Ok(snapshot) = capture_contact_pair(Some(&outgoing), &incoming, rot, env.dt) {
                let update = ep.estimator.update(&snapshot);
                degenerate = update.degenerate;
                plane_updated = !update.degenerate;
            }
            ep.history.push(torso_angles(&rot));
            ep.observation = build_observation(&ep.history, &ep.estimator.current());
            policy_step = true;
        }

        // (7) reward.
        let torso = torso_angles(&rot);
        let plane = ep.estimator.current();
        let feet_world: Vec<(bool, Vector3<f64>)> =
            (0..4).map(|i| (s.contact[i], s.com + rot * s.feet_com[i])).collect();
        let lowest = |only_contact: bool| {
            feet_world
                .iter()
                .filter(|(c, _)| *c || !only_contact)
                .map(|(_, p)| plane.normal.dot(p))
                .fold(f64::INFINITY, f64::min)
        };
        let base = if s.contact.iter().any(|c| *c) { lowest(true) } else { lowest(false) };
        let height = plane.normal.dot(&origin) - base;
        let dx = origin.x - origin_before.x;
        let standing = ep.standing.record(origin.x);
        let inputs = RewardInputs {
            torso_roll: torso[0],
            torso_pitch: torso[1],
            torso_yaw: torso[2],
            plane_roll: plane.roll,
            plane_pitch: plane.pitch,
            height,
            dx,
            standing,
        };
        let reward = compute_reward(&inputs, &cfg.reward, cfg.max_forward_per_step())
            .map_err(|e| EnvError::Config(e.to_string()))?;

        // (8) termination.
        let limit = env.fall_angle_deg.to_radians();
        let fell = ep.terrain.height_of(&origin) < env.fall_height_ratio * cfg.gait.desired_height
            || torso[0].abs() > limit
            || torso[1].abs() > limit
            || !s.com.iter().all(|v| v.is_finite());
        let done = fell || s.step >= env.episode_len;
        ep.done = done;

        let info = StepInfo {
            step: s.step,
            time: s.time,
            policy_step,
            plane_updated,
            degenerate_contacts: degenerate,
            torso,
            plane,
            height,
            dx,
            forward_position: origin.x,
            standing,
            push_active: push_force.is_some(),
            fell,
            workspace_clamps: clamps,
            contact: s.contact,
            actions: ActionVector(ep.latched),
        };
        Ok(StepOutcome { observation: ep.observation, reward, done, info })
    }
}

/// Per-foot contact force (world frame); updates the stick anchor.
#[allow(clippy::too_many_arguments)]
fn contact_force(
    env: &EnvConfig,
    normal: &Vector3<f64>,
    friction: f64,
    force_cap: f64,
    foot: &Vector3<f64>,
    foot_vel: &Vector3<f64>,
    anchor: &mut Option<Vector3<f64>>,
) -> Option<Vector3<f64>> {
    let depth = -normal.dot(foot);
    if depth <= 0.0 {
        *anchor = None;
        return None;
    }
    let vn = normal.dot(foot_vel);
    let fn_mag = (env.contact_stiffness * depth - env.contact_damping * vn).max(0.0);
    let tangential = foot - normal * normal.dot(foot);
    let vt = foot_vel - normal * vn;
    let a = *anchor.get_or_insert(tangential);
    let mut ft = -(tangential - a) * env.friction_stiffness - vt * env.friction_damping;
    let limit = friction * fn_mag;
    let ft_norm = ft.norm();
    if ft_norm > limit {
        ft = if ft_norm > 0.0 { ft * (limit / ft_norm) } else { ft };
        // Slide: move the anchor so the spring alone reproduces the limited force.
        *anchor = Some(tangential + (ft + vt * env.friction_damping) / env.friction_stiffness);
    }
    let mut f = normal * fn_mag + ft;
    let mag = f.norm();
    if mag > force_cap {
        f *= force_cap / mag;
    }
    Some(f)
}

fn integrate_substep(
    geometry: &LegGeometry,
    env: &EnvConfig,
    ep: &mut Episode,
    external: &Wrench,
    force_cap: f64,
    h: f64,
) {
    let normal = ep.terrain.normal();
    let friction = ep.terrain.friction_mu;
    let mass = ep.mass;
    let s = &mut ep.state;
    let rot = s.rotation();

    let mut force = Vector3::new(0.0, 0.0, -env.gravity * mass.mass) + external.force;
    let mut torque = external.torque;
    for leg in LegId::ALL {
        let i = leg.index();
        let foot_com = geometry.hip_position(leg) + forward_kinematics(&s.joints[i], geometry) - mass.com_body;
        let rel_body_vel = (foot_com - s.feet_com[i]) / h;
        s.feet_com[i] = foot_com;
        let r = rot * foot_com;
        let p = s.com + r;
        let v = s.velocity + s.angular_velocity.cross(&r) + rot * rel_body_vel;
        match contact_force(env, &normal, friction, force_cap, &p, &v, &mut s.anchors[i]) {
            Some(f) => {
                s.contact[i] = true;
                force += f;
                torque += r.cross(&f);
            }
            None => s.contact[i] = false,
        }
    }

    s.velocity += force / mass.mass * h;
    s.com += s.velocity * h;

    let inertia = rot.matrix() * mass.inertia_body * rot.matrix().transpose();
    let inertia_inv = rot.matrix() * mass.inertia_body_inv * rot.matrix().transpose();
    let gyro = s.angular_velocity.cross(&(inertia * s.angular_velocity));
    s.angular_velocity += inertia_inv * (torque - gyro) * h;
    let delta = s.angular_velocity * h;
    let dq = match Unit::try_new(delta, 1e-300) {
        Some(axis) => UnitQuaternion::from_axis_angle(&axis, delta.norm()),
        None => UnitQuaternion::identity(),
    };
    s.orientation = UnitQuaternion::new_normalize((dq * s.orientation).into_inner());
}

#[cfg(test)]
mod tests;
