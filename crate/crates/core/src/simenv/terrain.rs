//! Terrain planes, the curriculum sampler, and per-episode randomization.

use std::fmt;

use nalgebra::Vector3;
use rand::Rng;

pub const INCLINATIONS_DEG: [f64; 5] = [0.0, 5.0, 7.0, 9.0, 11.0];
pub const ORIENTATIONS_DEG: [f64; 7] = [0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0];
pub const NOMINAL_FRICTION: f64 = 0.65;

/// An infinite inclined plane through the world origin.
///
/// `yaw_orientation` rotates the uphill direction about world z: 0° climbs
/// along +x, 90° climbs along +y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainPlane {
    pub inclination: f64,
    pub yaw_orientation: f64,
    pub friction_mu: f64,
}

impl TerrainPlane {
    pub fn new(inclination_deg: f64, yaw_deg: f64) -> Self {
        Self { inclination: inclination_deg, yaw_orientation: yaw_deg, friction_mu: NOMINAL_FRICTION }
    }

    pub fn flat() -> Self {
        Self::new(0.0, 0.0)
    }

    /// Upward unit normal in the world frame.
    pub fn normal(&self) -> Vector3<f64> {
        let (st, ct) = self.inclination.to_radians().sin_cos();
        let (sp, cp) = self.yaw_orientation.to_radians().sin_cos();
        Vector3::new(-st * cp, -st * sp, ct)
    }

    /// Signed distance of a world point above the plane.
    pub fn height_of(&self, p: &Vector3<f64>) -> f64 {
        self.normal().dot(p)
    }

    pub fn is_valid(&self) -> bool {
        self.inclination.is_finite()
            && (0.0..90.0).contains(&self.inclination)
            && self.yaw_orientation.is_finite()
            && self.friction_mu.is_finite()
            && self.friction_mu >= 0.0
    }
}

impl fmt::Display for TerrainPlane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "incline {}° @ {}°", self.inclination, self.yaw_orientation)
    }
}

/// Inclination/orientation grid, flat ground listed once.
pub fn terrain_grid(inclinations: &[f64]) -> Vec<TerrainPlane> {
    let mut out = Vec::new();
    for &inc in inclinations {
        if inc == 0.0 {
            out.push(TerrainPlane::new(0.0, 0.0));
        } else {
            out.extend(ORIENTATIONS_DEG.iter().map(|&yaw| TerrainPlane::new(inc, yaw)));
        }
    }
    out
}

/// All 29 training combinations.
pub fn full_grid() -> Vec<TerrainPlane> {
    terrain_grid(&INCLINATIONS_DEG)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CurriculumStage {
    One,
    Two,
}

impl CurriculumStage {
    pub fn grid(self) -> Vec<TerrainPlane> {
        match self {
            CurriculumStage::One => terrain_grid(&[0.0, 5.0, 7.0]),
            CurriculumStage::Two => full_grid(),
        }
    }

    /// Relative sampling weight of one grid combination.
    pub fn weight(self, terrain: &TerrainPlane) -> f64 {
        match self {
            CurriculumStage::One => 1.0,
            CurriculumStage::Two => match terrain.inclination {
                i if i == 0.0 => 0.5,
                i if i >= 9.0 => 2.0,
                _ => 1.0,
            },
        }
    }

    /// Grid combinations paired with their normalized probabilities.
    pub fn distribution(self) -> Vec<(TerrainPlane, f64)> {
        let grid = self.grid();
        let total: f64 = grid.iter().map(|t| self.weight(t)).sum();
        grid.into_iter().map(|t| (t, self.weight(&t) / total)).collect()
    }
}

pub fn sample_terrain<R: Rng + ?Sized>(stage: CurriculumStage, rng: &mut R) -> TerrainPlane {
    let dist = stage.distribution();
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (t, p) in &dist {
        acc += p;
        if u < acc {
            return *t;
        }
    }
    dist.last().expect("non-empty grid").0
}

/// Closed interval sampled uniformly; a zero-width interval is a constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // Always draw so the stream position does not depend on the width.
        let u: f64 = rng.gen();
        self.lo + (self.hi - self.lo) * u
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PushConfig {
    /// Magnitude of the lateral (+y world) force, N.
    pub force: Interval,
    pub duration_steps: usize,
}

impl Default for PushConfig {
    fn default() -> Self {
        Self { force: Interval::new(60.0, 120.0), duration_steps: 10 }
    }
}

/// External force applied to the torso for control steps `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PushEvent {
    pub start_step: usize,
    pub end_step: usize,
    pub force: Vector3<f64>,
}

impl PushEvent {
    pub fn active_at(&self, step: usize) -> bool {
        (self.start_step..self.end_step).contains(&step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomizationConfig {
    /// `None` keeps the terrain's own friction coefficient.
    pub friction: Option<Interval>,
    pub front_mass: Interval,
    pub back_mass: Interval,
    /// Motor torque, N·m.
    pub motor_strength: Interval,
    pub push: Option<PushConfig>,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        Self {
            friction: Some(Interval::new(0.5, 0.8)),
            front_mass: Interval::new(0.0, 0.2),
            back_mass: Interval::new(0.0, 0.2),
            motor_strength: Interval::new(5.0, 8.0),
            push: Some(PushConfig::default()),
        }
    }
}

impl RandomizationConfig {
    /// Nominal parameters, no pushes.
    pub fn none() -> Self {
        Self {
            friction: None,
            front_mass: Interval::fixed(0.0),
            back_mass: Interval::fixed(0.0),
            motor_strength: Interval::fixed(6.5),
            push: None,
        }
    }

    pub fn without_push(self) -> Self {
        Self { push: None, ..self }
    }
}

/// Lateral push over the ten control steps starting at the episode midpoint.
pub fn schedule_push<R: Rng + ?Sized>(
    rand: &RandomizationConfig,
    episode_len: usize,
    rng: &mut R,
) -> Option<PushEvent> {
    let cfg = rand.push?;
    let magnitude = cfg.force.sample(rng);
    let start = episode_len / 2;
    Some(PushEvent {
        start_step: start,
        end_step: start + cfg.duration_steps,
        force: Vector3::new(0.0, magnitude, 0.0),
    })
}

/// Physical parameters drawn for one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeParams {
    pub friction: f64,
    pub front_mass: f64,
    pub back_mass: f64,
    pub motor_strength: f64,
    pub push: Option<PushEvent>,
}

impl EpisodeParams {
    pub fn sample<R: Rng + ?Sized>(
        terrain: &TerrainPlane,
        rand: &RandomizationConfig,
        episode_len: usize,
        rng: &mut R,
    ) -> Self {
        let friction = match rand.friction {
            Some(i) => i.sample(rng),
            None => terrain.friction_mu,
        };
        let front_mass = rand.front_mass.sample(rng);
        let back_mass = rand.back_mass.sample(rng);
        let motor_strength = rand.motor_strength.sample(rng);
        let push = schedule_push(rand, episode_len, rng);
        Self { friction, front_mass, back_mass, motor_strength, push }
    }
}
