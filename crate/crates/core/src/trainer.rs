//! Augmented Random Search (V-1t) over linear policies.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::gaitgen::LegAction;
use crate::policy::{
    act, scale_clip_action, unscale_action, ActionScaling, ActionVector, Observation, PolicyMatrix, RawAction,
    ACTION_DIM, OBS_DIM, PARAM_COUNT,
};
use crate::seeding::{derive_seed, rng_from};
use crate::simenv::{
    full_grid, sample_terrain, CurriculumStage, EnvError, RandomizationConfig, SimConfig, SimEnv, TerrainPlane,
};

const TAG_DELTA: u64 = 0xde17a;
const TAG_TERRAIN: u64 = 0x7e77a1;
const TAG_EPISODE: u64 = 0xe915;
const TAG_EVAL: u64 = 0xe7a1;
const TAG_DEMO: u64 = 0xde30;

/// Returns with a standard deviation below this leave θ unchanged.
pub const DEGENERATE_SIGMA: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("update needs {expected} paired returns, got {got}")]
    MissingReturns { expected: usize, got: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArsHyperparams {
    /// β.
    pub step_size: f64,
    /// ν.
    pub noise: f64,
    /// N.
    pub num_directions: usize,
    /// b.
    pub top_directions: usize,
    pub workers: usize,
    pub master_seed: u64,
}

impl Default for ArsHyperparams {
    fn default() -> Self {
        Self { step_size: 0.05, noise: 0.04, num_directions: 16, top_directions: 8, workers: 1, master_seed: 0 }
    }
}

impl ArsHyperparams {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidHyperparams(m.to_string()));
        if !(self.step_size > 0.0) || !(self.noise > 0.0) {
            return bad("step size and noise must be positive");
        }
        if self.num_directions == 0 || self.num_directions % 2 != 0 {
            return bad("number of directions must be positive and even");
        }
        if self.top_directions == 0 || self.top_directions > self.num_directions {
            return bad("top directions must lie in 1..=N");
        }
        if self.workers == 0 {
            return bad("at least one worker is required");
        }
        Ok(())
    }
}

/// Inputs of one parameter update.
#[derive(Debug, Clone, PartialEq)]
pub struct ArsIterationState {
    pub theta: Vec<f64>,
    pub iteration: usize,
    pub deltas: Vec<Vec<f64>>,
    /// `(R(θ + νδ_k), R(θ − νδ_k))` per direction.
    pub returns: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub theta: Vec<f64>,
    pub sigma_r: f64,
    /// Directions kept, best first.
    pub kept: Vec<usize>,
    /// All kept returns were equal; θ was left unchanged.
    pub degenerate: bool,
}

/// Population standard deviation.
fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// θ' = θ + β / (b σ_R) Σ_top-b (R⁺ − R⁻) δ, ranking directions by max(R⁺, R⁻).
pub fn ars_update(state: &ArsIterationState, hp: &ArsHyperparams) -> Result<UpdateOutcome, TrainError> {
    let n = state.deltas.len();
    if state.returns.len() != n || n == 0 {
        return Err(TrainError::MissingReturns { expected: n.max(1), got: state.returns.len() });
    }
    if hp.top_directions == 0 || hp.top_directions > n {
        return Err(TrainError::InvalidHyperparams(format!(
            "top directions {} with {n} directions",
            hp.top_directions
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let best = |k: usize| state.returns[k].0.max(state.returns[k].1);
    order.sort_by(|&a, &b| best(b).total_cmp(&best(a)));
    order.truncate(hp.top_directions);

    let mut kept: Vec<f64> = order.iter().flat_map(|&k| [state.returns[k].0, state.returns[k].1]).collect();
    // Sorted so σ_R does not depend on the order of a pair.
    kept.sort_by(f64::total_cmp);
    let sigma_r = std_dev(&kept);
    if !(sigma_r >= DEGENERATE_SIGMA) {
        return Ok(UpdateOutcome { theta: state.theta.clone(), sigma_r, kept: order, degenerate: true });
    }
    let mut step = vec![0.0; state.theta.len()];
    for &k in &order {
        let diff = state.returns[k].0 - state.returns[k].1;
        for (s, d) in step.iter_mut().zip(&state.deltas[k]) {
            *s += diff * d;
        }
    }
    let scale = hp.step_size / (hp.top_directions as f64 * sigma_r);
    let theta = state.theta.iter().zip(&step).map(|(t, s)| t + scale * s).collect();
    Ok(UpdateOutcome { theta, sigma_r, kept: order, degenerate: false })
}

/// Everything a training run needs besides the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub sim: SimConfig,
    pub scaling: ActionScaling,
    pub randomization: RandomizationConfig,
    pub ars: ArsHyperparams,
    /// First iteration sampled from the stage-two curriculum.
    pub stage_two_from: usize,
    pub eval_every: usize,
    pub eval_seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            scaling: ActionScaling::default(),
            randomization: RandomizationConfig::default(),
            ars: ArsHyperparams::default(),
            stage_two_from: 30,
            eval_every: 3,
            eval_seed: 0,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.ars.validate()?;
        self.sim.validate()?;
        if self.eval_every == 0 {
            return Err(TrainError::InvalidHyperparams("evaluation interval must be positive".into()));
        }
        Ok(())
    }

    pub fn curriculum_stage(&self, iteration: usize) -> CurriculumStage {
        if iteration < self.stage_two_from {
            CurriculumStage::One
        } else {
            CurriculumStage::Two
        }
    }

    pub fn is_eval_iteration(&self, iteration: usize) -> bool {
        iteration % self.eval_every == 0
    }
}

/// Result of one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub total_reward: f64,
    /// Forward (x) displacement of the body origin.
    pub displacement: f64,
    pub steps: usize,
    pub fell: bool,
}

/// Runs one episode driven by an arbitrary observation-to-action controller,
/// queried at reset and after every policy step.
pub fn run_episode<F>(
    sim: &SimConfig,
    terrain: TerrainPlane,
    rand: &RandomizationConfig,
    seed: u64,
    episode_len: usize,
    mut controller: F,
) -> Result<EpisodeSummary, TrainError>
where
    F: FnMut(&Observation) -> ActionVector,
{
    if episode_len == 0 {
        return Ok(EpisodeSummary { total_reward: 0.0, displacement: 0.0, steps: 0, fell: false });
    }
    let mut cfg = sim.clone();
    cfg.env.episode_len = episode_len;
    let mut env = SimEnv::new(cfg)?;
    let obs = env.reset(terrain, rand, seed)?;
    let x0 = env.body_origin().map_or(0.0, |o| o.x);
    let mut action = controller(&obs);
    let mut summary = EpisodeSummary { total_reward: 0.0, displacement: 0.0, steps: 0, fell: false };
    loop {
        let out = env.step(&action)?;
        summary.total_reward += out.reward;
        summary.steps = out.info.step;
        summary.displacement = out.info.forward_position - x0;
        if out.done {
            summary.fell = out.info.fell;
            return Ok(summary);
        }
        if out.info.policy_step {
            action = controller(&out.observation);
        }
    }
}

pub fn policy_controller<'a>(
    m: &'a PolicyMatrix,
    scaling: &'a ActionScaling,
) -> impl FnMut(&Observation) -> ActionVector + 'a {
    move |obs| scale_clip_action(&act(m, obs), scaling)
}

pub fn rollout(
    m: &PolicyMatrix,
    settings: &TrainSettings,
    terrain: TerrainPlane,
    rand: &RandomizationConfig,
    seed: u64,
) -> Result<EpisodeSummary, TrainError> {
    run_episode(
        &settings.sim,
        terrain,
        rand,
        seed,
        settings.sim.env.episode_len,
        policy_controller(m, &settings.scaling),
    )
}

/// Sum of per-step rewards of one episode.
pub fn rollout_return(
    m: &PolicyMatrix,
    settings: &TrainSettings,
    terrain: TerrainPlane,
    rand: &RandomizationConfig,
    seed: u64,
    episode_len: usize,
) -> Result<f64, TrainError> {
    let summary =
        run_episode(&settings.sim, terrain, rand, seed, episode_len, policy_controller(m, &settings.scaling))?;
    Ok(summary.total_reward)
}

/// Perturbation directions of one iteration, i.i.d. standard normal.
pub fn sample_deltas(master_seed: u64, iteration: usize, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|k| {
            let mut rng = rng_from(&[master_seed, TAG_DELTA, iteration as u64, k as u64]);
            (0..PARAM_COUNT).map(|_| rng.sample(StandardNormal)).collect()
        })
        .collect()
}

/// Episode seed shared by both signs of a direction.
pub fn episode_seed(master_seed: u64, iteration: usize, direction: usize) -> u64 {
    derive_seed(&[master_seed, TAG_EPISODE, iteration as u64, direction as u64])
}

pub fn iteration_terrain(settings: &TrainSettings, iteration: usize) -> TerrainPlane {
    let mut rng = rng_from(&[settings.ars.master_seed, TAG_TERRAIN, iteration as u64]);
    sample_terrain(settings.curriculum_stage(iteration), &mut rng)
}

pub fn build_pool(workers: usize) -> Result<rayon::ThreadPool, TrainError> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| TrainError::Pool(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub iteration: usize,
    pub terrain: TerrainPlane,
    pub stage: CurriculumStage,
    pub returns: Vec<(f64, f64)>,
    pub episodes: usize,
    pub update: UpdateOutcome,
}

impl IterationReport {
    fn all_returns(&self) -> impl Iterator<Item = f64> + '_ {
        self.returns.iter().flat_map(|(p, m)| [*p, *m])
    }

    pub fn mean_return(&self) -> f64 {
        self.all_returns().sum::<f64>() / (2 * self.returns.len()) as f64
    }

    pub fn max_return(&self) -> f64 {
        self.all_returns().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_return(&self) -> f64 {
        self.all_returns().fold(f64::INFINITY, f64::min)
    }
}

/// Evaluates 2N perturbed policies on one sampled terrain and updates θ.
/// Episodes run on `pool`; results are collected in direction order.
pub fn run_iteration(
    theta: &[f64],
    settings: &TrainSettings,
    iteration: usize,
    pool: &rayon::ThreadPool,
) -> Result<IterationReport, TrainError> {
    let hp = &settings.ars;
    let n = hp.num_directions;
    let terrain = iteration_terrain(settings, iteration);
    let deltas = sample_deltas(hp.master_seed, iteration, n);
    let perturbed = |k: usize, sign: f64| {
        let p: Vec<f64> = theta.iter().zip(&deltas[k]).map(|(t, d)| t + sign * hp.noise * d).collect();
        PolicyMatrix::from_params(&p)
    };
    let jobs: Vec<(usize, f64)> = (0..n).flat_map(|k| [(k, 1.0), (k, -1.0)]).collect();
    let results: Vec<Result<f64, TrainError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(k, sign)| {
                let m = perturbed(k, sign);
                let seed = episode_seed(hp.master_seed, iteration, k);
                rollout_return(&m, settings, terrain, &settings.randomization, seed, settings.sim.env.episode_len)
            })
            .collect()
    });
    let flat = results.into_iter().collect::<Result<Vec<f64>, _>>()?;
    let returns: Vec<(f64, f64)> = flat.chunks(2).map(|c| (c[0], c[1])).collect();
    let state = ArsIterationState { theta: theta.to_vec(), iteration, deltas, returns: returns.clone() };
    let update = ars_update(&state, hp)?;
    Ok(IterationReport {
        iteration,
        terrain,
        stage: settings.curriculum_stage(iteration),
        returns,
        episodes: jobs.len(),
        update,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_terrain: Vec<(TerrainPlane, EpisodeSummary)>,
}

impl EvalReport {
    pub fn mean_return(&self) -> f64 {
        if self.per_terrain.is_empty() {
            return 0.0;
        }
        self.per_terrain.iter().map(|(_, s)| s.total_reward).sum::<f64>() / self.per_terrain.len() as f64
    }

    pub fn find(&self, inclination: f64, orientation: f64) -> Option<&EpisodeSummary> {
        self.per_terrain
            .iter()
            .find(|(t, _)| t.inclination == inclination && t.yaw_orientation == orientation)
            .map(|(_, s)| s)
    }
}

/// Seed of the evaluation episode on terrain `index` of the grid.
pub fn eval_seed(settings: &TrainSettings, terrain: &TerrainPlane) -> u64 {
    derive_seed(&[settings.eval_seed, TAG_EVAL, terrain.inclination.to_bits(), terrain.yaw_orientation.to_bits()])
}

/// Randomized parameters, no pushes, one pinned seed per terrain.
pub fn evaluate_on(
    m: &PolicyMatrix,
    settings: &TrainSettings,
    grid: &[TerrainPlane],
    pool: &rayon::ThreadPool,
) -> Result<EvalReport, TrainError> {
    let rand = settings.randomization.without_push();
    let results: Vec<Result<EpisodeSummary, TrainError>> =
        pool.install(|| grid.par_iter().map(|t| rollout(m, settings, *t, &rand, eval_seed(settings, t))).collect());
    let summaries = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport { per_terrain: grid.iter().copied().zip(summaries).collect() })
}

/// Mean return over the 29-combination grid.
pub fn evaluate(
    m: &PolicyMatrix,
    settings: &TrainSettings,
    pool: &rayon::ThreadPool,
) -> Result<EvalReport, TrainError> {
    evaluate_on(m, settings, &full_grid(), pool)
}

/// Keeps the feet vertically under the hips on the estimated slope.
pub fn telescopic_strut_action(obs: &Observation, settings: &TrainSettings) -> ActionVector {
    let roll = obs.0[9];
    let pitch = obs.0[10];
    let h = settings.sim.gait.desired_height;
    let s = &settings.scaling;
    ActionVector::uniform(LegAction {
        step_len: s.step_len.midpoint(),
        steer: s.steer.midpoint(),
        shift_x: s.shift_x.clamp(-h * pitch.tan()),
        shift_y: s.shift_y.clamp(h * roll.tan()),
        shift_z: s.shift_z.midpoint(),
    })
}

pub type Demo = (Observation, RawAction);

/// Observation/raw-action pairs recorded while the telescopic-strut
/// controller walks every stage-one terrain.
pub fn collect_strut_demos(settings: &TrainSettings, seed: u64) -> Result<Vec<Demo>, TrainError> {
    let rand = settings.randomization.without_push();
    let mut demos = Vec::new();
    for terrain in CurriculumStage::One.grid() {
        let ep_seed = derive_seed(&[seed, TAG_DEMO, terrain.inclination.to_bits(), terrain.yaw_orientation.to_bits()]);
        run_episode(&settings.sim, terrain, &rand, ep_seed, settings.sim.env.episode_len, |obs| {
            let a = telescopic_strut_action(obs, settings);
            demos.push((*obs, unscale_action(&a, &settings.scaling)));
            a
        })?;
    }
    Ok(demos)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidedFit {
    pub matrix: PolicyMatrix,
    pub rank: usize,
    /// Fewer than eleven independent observations; the minimum-norm
    /// solution was returned.
    pub rank_deficient: bool,
}

/// Least-squares M minimizing Σ‖M s − a‖².
pub fn guided_init(demos: &[Demo]) -> GuidedFit {
    if demos.is_empty() {
        return GuidedFit { matrix: PolicyMatrix::zeros(), rank: 0, rank_deficient: true };
    }
    let n = demos.len();
    let s = DMatrix::from_fn(n, OBS_DIM, |r, c| demos[r].0 .0[c]);
    let a = DMatrix::from_fn(n, ACTION_DIM, |r, c| demos[r].1[c]);
    let svd = s.svd(true, true);
    let sigma_max = svd.singular_values.max();
    let tol = sigma_max * f64::EPSILON * n.max(OBS_DIM) as f64;
    let rank = svd.singular_values.iter().filter(|v| **v > tol).count();
    // Columns of the solution are rows of M.
    let mt = svd.solve(&a, tol).unwrap_or_else(|_| DMatrix::zeros(OBS_DIM, ACTION_DIM));
    let mut m = PolicyMatrix::zeros();
    for r in 0..ACTION_DIM {
        for c in 0..OBS_DIM {
            m.0[(r, c)] = mt[(c, r)];
        }
    }
    GuidedFit { matrix: m, rank, rank_deficient: rank < OBS_DIM }
}

/// Fits the guided policy from freshly simulated demonstrations.
pub fn guided_policy(settings: &TrainSettings) -> Result<GuidedFit, TrainError> {
    Ok(guided_init(&collect_strut_demos(settings, settings.ars.master_seed)?))
}

/// Hooks called by [`train`].
pub trait TrainObserver {
    type Error: From<TrainError>;
    fn on_guided(&mut self, _fit: &GuidedFit) -> Result<(), Self::Error> {
        Ok(())
    }
    fn on_iteration(
        &mut self,
        report: &IterationReport,
        eval: Option<&EvalReport>,
        theta: &PolicyMatrix,
    ) -> Result<(), Self::Error>;
    fn on_initial_eval(&mut self, _eval: &EvalReport) -> Result<(), Self::Error> {
        Ok(())
    }
}

/// Guided initialization followed by `iterations` ARS updates, with an
/// evaluation of the initial policy and after every `eval_every` updates.
pub fn train<O: TrainObserver>(
    settings: &TrainSettings,
    iterations: usize,
    observer: &mut O,
) -> Result<PolicyMatrix, O::Error> {
    settings.validate()?;
    let pool = build_pool(settings.ars.workers)?;
    let fit = guided_policy(settings)?;
    observer.on_guided(&fit)?;
    let mut theta = fit.matrix.params();
    observer.on_initial_eval(&evaluate(&fit.matrix, settings, &pool)?)?;
    for it in 0..iterations {
        let report = run_iteration(&theta, settings, it, &pool)?;
        theta = report.update.theta.clone();
        let m = PolicyMatrix::from_params(&theta);
        let eval = if settings.is_eval_iteration(it + 1) { Some(evaluate(&m, settings, &pool)?) } else { None };
        observer.on_iteration(&report, eval.as_ref(), &m)?;
    }
    Ok(PolicyMatrix::from_params(&theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn hp(b: usize) -> ArsHyperparams {
        ArsHyperparams { top_directions: b, num_directions: 2, ..Default::default() }
    }

    #[test]
    fn hand_computed_update() {
        let state = ArsIterationState {
            theta: vec![0.0],
            iteration: 0,
            deltas: vec![vec![1.0], vec![0.5]],
            returns: vec![(2.0, 0.0), (1.0, 1.0)],
        };
        let out = ars_update(&state, &hp(1)).unwrap();
        assert_eq!(out.kept, vec![0]);
        assert_eq!(out.sigma_r, 1.0);
        assert_eq!(out.theta, vec![0.1]);
        assert!(!out.degenerate);
    }

    #[test]
    fn equal_returns_are_degenerate() {
        let state = ArsIterationState {
            theta: vec![0.3, -0.2],
            iteration: 0,
            deltas: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            returns: vec![(5.0, 5.0), (5.0, 5.0)],
        };
        let out = ars_update(&state, &hp(2)).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.theta, state.theta);
    }

    #[test]
    fn missing_returns_rejected() {
        let state =
            ArsIterationState { theta: vec![0.0], iteration: 0, deltas: vec![vec![1.0]; 2], returns: vec![(1.0, 0.0)] };
        assert!(matches!(ars_update(&state, &hp(1)), Err(TrainError::MissingReturns { .. })));
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(ArsHyperparams::default().validate().is_ok());
        assert!(ArsHyperparams { num_directions: 15, ..Default::default() }.validate().is_err());
        assert!(ArsHyperparams { top_directions: 17, ..Default::default() }.validate().is_err());
        assert!(ArsHyperparams { step_size: 0.0, ..Default::default() }.validate().is_err());
        assert!(ArsHyperparams { workers: 0, ..Default::default() }.validate().is_err());
    }

    /// Distance to the optimum after each update on R(θ) = −‖θ − θ*‖².
    fn quadratic_errors(hp: &ArsHyperparams, iterations: usize) -> Vec<f64> {
        let target = [0.5, -1.0, 0.25, 2.0, -0.75];
        let r = |t: &[f64]| -t.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let mut theta = vec![0.0; 5];
        let mut errors = Vec::with_capacity(iterations);
        for it in 0..iterations {
            let mut rng = rng_from(&[hp.master_seed, it as u64]);
            let deltas: Vec<Vec<f64>> =
                (0..hp.num_directions).map(|_| (0..5).map(|_| rng.sample(StandardNormal)).collect()).collect();
            let returns = deltas
                .iter()
                .map(|d| {
                    let plus: Vec<f64> = theta.iter().zip(d).map(|(t, d)| t + hp.noise * d).collect();
                    let minus: Vec<f64> = theta.iter().zip(d).map(|(t, d)| t - hp.noise * d).collect();
                    (r(&plus), r(&minus))
                })
                .collect();
            let state = ArsIterationState { theta: theta.clone(), iteration: it, deltas, returns };
            theta = ars_update(&state, hp).unwrap().theta;
            errors.push(theta.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
        }
        errors
    }

    #[test]
    fn approaches_quadratic_optimum() {
        let errors = quadratic_errors(&ArsHyperparams::default(), 300);
        assert!(errors[299] < 0.15, "{}", errors[299]);
        let all = ArsHyperparams { top_directions: 16, ..Default::default() };
        assert!(quadratic_errors(&all, 300).iter().any(|e| *e < 1e-2));
    }

    #[test]
    fn stage_switch_at_thirty() {
        let s = TrainSettings::default();
        assert_eq!(s.curriculum_stage(29), CurriculumStage::One);
        assert_eq!(s.curriculum_stage(30), CurriculumStage::Two);
        assert!(s.is_eval_iteration(3) && !s.is_eval_iteration(4));
    }

    #[test]
    fn guided_fit_recovers_generating_matrix() {
        let mut rng = rng_from(&[42]);
        let truth = PolicyMatrix::from_params(&(0..PARAM_COUNT).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
        let demos: Vec<Demo> = (0..60)
            .map(|_| {
                let s = Observation(nalgebra::SVector::from_fn(|_, _| rng.gen_range(-0.3..0.3)));
                (s, act(&truth, &s))
            })
            .collect();
        let fit = guided_init(&demos);
        assert!(!fit.rank_deficient);
        assert_eq!(fit.rank, OBS_DIM);
        assert!((fit.matrix.0 - truth.0).amax() < 1e-8);
    }

    #[test]
    fn constant_observations_are_rank_deficient() {
        let s = Observation(nalgebra::SVector::from_fn(|i, _| 0.01 * i as f64));
        let a = RawAction::from_fn(|i, _| 0.1 * i as f64);
        let fit = guided_init(&vec![(s, a); 30]);
        assert!(fit.rank_deficient);
        assert_eq!(fit.rank, 1);
        // Minimum-norm solution still reproduces the single target.
        assert!((act(&fit.matrix, &s) - a).amax() < 1e-9);
    }

    #[test]
    fn zero_length_episode_returns_zero() {
        let s = TrainSettings::default();
        let r = rollout_return(&PolicyMatrix::zeros(), &s, TerrainPlane::flat(), &RandomizationConfig::none(), 1, 0);
        assert_eq!(r.unwrap(), 0.0);
    }

    #[test]
    fn deltas_are_reproducible() {
        assert_eq!(sample_deltas(3, 4, 2), sample_deltas(3, 4, 2));
        assert_ne!(sample_deltas(3, 4, 2), sample_deltas(3, 5, 2));
        assert_eq!(sample_deltas(3, 4, 16).len(), 16);
        assert!(sample_deltas(3, 4, 1)[0].len() == PARAM_COUNT);
    }

    #[test]
    fn strut_action_matches_slope() {
        let s = TrainSettings::default();
        let mut obs = Observation::zeros();
        obs.0[9] = 0.05;
        obs.0[10] = 0.1;
        let a = telescopic_strut_action(&obs, &s);
        let leg = a.0[0];
        assert_eq!(leg.step_len, 0.068);
        assert!((leg.shift_x + 0.243 * 0.1f64.tan()).abs() < 1e-15);
        assert!((leg.shift_y - 0.243 * 0.05f64.tan()).abs() < 1e-15);
        obs.0[9] = 0.5;
        assert_eq!(telescopic_strut_action(&obs, &s).0[0].shift_y, 0.035);
    }

    fn arb_state() -> impl Strategy<Value = ArsIterationState> {
        (2usize..6, 1usize..4).prop_flat_map(|(n, dim)| {
            (
                proptest::collection::vec(-1.0f64..1.0, dim),
                proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, dim), n),
                proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), n),
            )
                .prop_map(|(theta, deltas, returns)| ArsIterationState {
                    theta,
                    iteration: 0,
                    deltas,
                    returns,
                })
        })
    }

    proptest! {
        #[test]
        fn sign_swap_invariance(state in arb_state(), b in 1usize..6) {
            let hp = ArsHyperparams { top_directions: b.min(state.deltas.len()), ..Default::default() };
            let mirrored = ArsIterationState {
                deltas: state.deltas.iter().map(|d| d.iter().map(|v| -v).collect()).collect(),
                returns: state.returns.iter().map(|(p, m)| (*m, *p)).collect(),
                ..state.clone()
            };
            let a = ars_update(&state, &hp).unwrap();
            let b = ars_update(&mirrored, &hp).unwrap();
            prop_assert_eq!(a.theta, b.theta);
        }

        #[test]
        fn scale_and_shift_invariance(state in arb_state(), c in 0.1f64..10.0, shift in -50.0f64..50.0) {
            let hp = ArsHyperparams { top_directions: state.deltas.len(), ..Default::default() };
            let base = ars_update(&state, &hp).unwrap();
            prop_assume!(!base.degenerate);
            let scaled = ArsIterationState {
                returns: state.returns.iter().map(|(p, m)| (c * p, c * m)).collect(),
                ..state.clone()
            };
            let shifted = ArsIterationState {
                returns: state.returns.iter().map(|(p, m)| (p + shift, m + shift)).collect(),
                ..state.clone()
            };
            for other in [scaled, shifted] {
                let out = ars_update(&other, &hp).unwrap();
                for (x, y) in out.theta.iter().zip(&base.theta) {
                    prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
                }
            }
        }
    }
}
