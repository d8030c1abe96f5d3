//! Experiment runs that write CSV logs and policy files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use thiserror::Error;

use crate::config::RunConfig;
use crate::policy::{act, load_policy, save_policy, scale_clip_action, ActionScaling, PolicyError, PolicyMatrix};
use crate::simenv::{full_grid, EpisodeLog, PushEvent, SimEnv, TerrainPlane};
use crate::trainer::{
    build_pool, eval_seed, evaluate_on, guided_policy, train, EvalReport, GuidedFit, IterationReport, TrainError,
    TrainObserver,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// Header lines shared by every CSV written for `cfg`.
pub fn csv_header(cfg: &RunConfig) -> Vec<String> {
    vec![
        format!("slopewalk {VERSION}"),
        format!("config_hash={}", cfg.hash()),
        format!("seed={}", cfg.settings.ars.master_seed),
    ]
}

/// Lateral force applied over a time window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedPush {
    /// Newtons along world +y.
    pub magnitude: f64,
    pub at: f64,
    pub duration: f64,
}

impl ScriptedPush {
    pub fn to_event(&self, dt: f64) -> PushEvent {
        let start = (self.at / dt).round() as usize;
        let len = ((self.duration / dt).round() as usize).max(1);
        PushEvent { start_step: start, end_step: start + len, force: Vector3::new(0.0, self.magnitude, 0.0) }
    }
}

/// One episode with its full per-step log. Episode randomization follows
/// the config without random pushes; `push` replaces them.
pub fn logged_episode(
    m: &PolicyMatrix,
    cfg: &RunConfig,
    terrain: TerrainPlane,
    seed: u64,
    push: Option<ScriptedPush>,
) -> Result<(EpisodeLog, bool), HarnessError> {
    let s = &cfg.settings;
    let mut env = SimEnv::new(s.sim.clone()).map_err(TrainError::from)?;
    let rand = s.randomization.without_push();
    let mut obs = env.reset(terrain, &rand, seed).map_err(TrainError::from)?;
    env.set_push(push.map(|p| p.to_event(s.sim.env.dt)));
    let mut log = EpisodeLog::default();
    let mut action = scale_clip_action(&act(m, &obs), &s.scaling);
    loop {
        let out = env.step(&action).map_err(TrainError::from)?;
        log.push(&out);
        if out.done {
            return Ok((log, out.info.fell));
        }
        if out.info.policy_step {
            obs = out.observation;
            action = scale_clip_action(&act(m, &obs), &s.scaling);
        }
    }
}

/// How the step-length and steering channels settle after a push.
#[derive(Debug, Clone, PartialEq)]
pub struct PushRecovery {
    /// Mean of each tracked channel over the window before the push.
    pub baseline: Vec<f64>,
    /// Seconds from the end of the push until every tracked channel stays
    /// within its band; `None` if that never happens.
    pub recovery_time: Option<f64>,
}

/// Log column offsets of the SL and SA channels of all legs.
pub const GAIT_CHANNELS: [usize; 8] = [0, 1, 5, 6, 10, 11, 15, 16];

/// Default band floor for [`push_recovery`]: 5% of each tracked channel's range.
pub fn recovery_floor(scaling: &ActionScaling) -> [f64; 8] {
    let sl = 0.05 * (scaling.step_len.max - scaling.step_len.min);
    let sa = 0.05 * (scaling.steer.max - scaling.steer.min);
    [sl, sa, sl, sa, sl, sa, sl, sa]
}

/// Band around the pre-push mean: `rel` of its magnitude, at least the
/// per-channel `floor`. A logged action applies from the start of its step.
pub fn push_recovery(
    log: &EpisodeLog,
    push: &PushEvent,
    dt: f64,
    window_steps: usize,
    rel: f64,
    floor: &[f64],
) -> PushRecovery {
    let before = &log.rows[push.start_step.saturating_sub(window_steps)..push.start_step.min(log.rows.len())];
    let baseline: Vec<f64> = GAIT_CHANNELS
        .iter()
        .map(|&c| before.iter().map(|r| r.actions[c]).sum::<f64>() / before.len().max(1) as f64)
        .collect();
    let within = |row: &crate::simenv::EpisodeRow| {
        GAIT_CHANNELS
            .iter()
            .zip(&baseline)
            .zip(floor)
            .all(|((&c, b), f)| (row.actions[c] - b).abs() <= (rel * b.abs()).max(*f))
    };
    // Row i covers control step i, i.e. [i dt, (i + 1) dt).
    let after = push.end_step.min(log.rows.len());
    let first_settled = match log.rows[after..].iter().rposition(|r| !within(r)) {
        None => Some(after),
        Some(i) if after + i + 1 >= log.rows.len() => None,
        Some(i) => Some(after + i + 1),
    };
    let recovery_time = first_settled.map(|k| (k - push.end_step.min(k)) as f64 * dt);
    PushRecovery { baseline, recovery_time }
}

/// Files produced by [`train_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutputs {
    pub training_csv: PathBuf,
    pub timing_csv: PathBuf,
    pub guided_policy: PathBuf,
    pub final_policy: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub initial_eval: f64,
    pub last_eval: Option<f64>,
}

struct FileObserver<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    csv: csv::Writer<BufWriter<File>>,
    timing: BufWriter<File>,
    started: Instant,
    outputs: TrainOutputs,
}

impl FileObserver<'_> {
    fn meta(&self, extra: &[(&'static str, String)]) -> Vec<(&'static str, String)> {
        let mut m = vec![("version", VERSION.to_string()), ("config_hash", self.cfg.hash())];
        m.extend_from_slice(extra);
        m
    }

    fn flush(&mut self) -> Result<(), HarnessError> {
        self.csv.flush().map_err(io_err(&self.outputs.training_csv))?;
        self.timing.flush().map_err(io_err(&self.outputs.timing_csv))
    }
}

impl TrainObserver for FileObserver<'_> {
    type Error = HarnessError;

    fn on_guided(&mut self, fit: &GuidedFit) -> Result<(), HarnessError> {
        let meta = self.meta(&[("source", "guided-init".into()), ("rank", fit.rank.to_string())]);
        save_policy(&fit.matrix, &self.outputs.guided_policy, &meta)?;
        Ok(())
    }

    fn on_initial_eval(&mut self, eval: &EvalReport) -> Result<(), HarnessError> {
        let score = eval.mean_return();
        self.outputs.initial_eval = score;
        let row = ["0", "", "", "", "", "", "", "", "", &score.to_string()];
        self.csv.write_record(row).map_err(|e| HarnessError::Invalid(e.to_string()))?;
        writeln!(self.timing, "0,{:.3}", self.started.elapsed().as_secs_f64())
            .map_err(io_err(&self.outputs.timing_csv))?;
        self.flush()
    }

    fn on_iteration(
        &mut self,
        r: &IterationReport,
        eval: Option<&EvalReport>,
        theta: &PolicyMatrix,
    ) -> Result<(), HarnessError> {
        let it = r.iteration + 1;
        let stage = match r.stage {
            crate::simenv::CurriculumStage::One => "1",
            crate::simenv::CurriculumStage::Two => "2",
        };
        let score = eval.map(|e| e.mean_return());
        let row = [
            it.to_string(),
            stage.to_string(),
            r.terrain.inclination.to_string(),
            r.terrain.yaw_orientation.to_string(),
            r.mean_return().to_string(),
            r.max_return().to_string(),
            r.min_return().to_string(),
            r.update.sigma_r.to_string(),
            u8::from(r.update.degenerate).to_string(),
            score.map_or(String::new(), |s| s.to_string()),
        ];
        self.csv.write_record(&row).map_err(|e| HarnessError::Invalid(e.to_string()))?;
        writeln!(self.timing, "{it},{:.3}", self.started.elapsed().as_secs_f64())
            .map_err(io_err(&self.outputs.timing_csv))?;
        if let Some(score) = score {
            self.outputs.last_eval = Some(score);
            let path = self.dir.join("checkpoints").join(format!("iter_{it:04}.policy"));
            let meta = self.meta(&[("iteration", it.to_string()), ("eval", score.to_string())]);
            save_policy(theta, &path, &meta)?;
            self.outputs.checkpoints.push(path);
        }
        self.flush()
    }
}

/// Guided initialization plus `cfg.iterations` ARS updates. Writes
/// `training.csv`, `timing.csv`, `config.cfg`, `guided.policy`,
/// `final.policy` and `checkpoints/iter_NNNN.policy` under `cfg.out_dir`.
/// Everything except `timing.csv` is independent of the worker count.
pub fn train_run(cfg: &RunConfig) -> Result<TrainOutputs, HarnessError> {
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(dir.join("checkpoints")).map_err(io_err(&dir))?;
    let cfg_path = dir.join("config.cfg");
    fs::write(&cfg_path, cfg.to_text()).map_err(io_err(&cfg_path))?;

    let training_csv = dir.join("training.csv");
    let mut out = create(&training_csv)?;
    for line in csv_header(cfg).iter().chain(std::iter::once(&format!("iterations={}", cfg.iterations))) {
        writeln!(out, "# {line}").map_err(io_err(&training_csv))?;
    }
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record([
        "iteration",
        "stage",
        "inclination",
        "orientation",
        "mean_return",
        "max_return",
        "min_return",
        "sigma_r",
        "degenerate",
        "eval_score",
    ])
    .map_err(|e| HarnessError::Invalid(e.to_string()))?;

    let timing_csv = dir.join("timing.csv");
    let mut timing = create(&timing_csv)?;
    writeln!(timing, "iteration,wall_seconds").map_err(io_err(&timing_csv))?;

    let mut obs = FileObserver {
        cfg,
        dir: dir.clone(),
        csv,
        timing,
        started: Instant::now(),
        outputs: TrainOutputs {
            training_csv,
            timing_csv,
            guided_policy: dir.join("guided.policy"),
            final_policy: dir.join("final.policy"),
            checkpoints: Vec::new(),
            initial_eval: 0.0,
            last_eval: None,
        },
    };
    let m = train(&cfg.settings, cfg.iterations, &mut obs)?;
    let meta = obs.meta(&[("iteration", cfg.iterations.to_string())]);
    save_policy(&m, &obs.outputs.final_policy, &meta)?;
    obs.flush()?;
    Ok(obs.outputs)
}

/// Where a policy comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySource {
    File(PathBuf),
    GuidedInit,
}

impl PolicySource {
    pub fn describe(&self) -> String {
        match self {
            PolicySource::File(p) => format!("file:{}", p.display()),
            PolicySource::GuidedInit => "guided-init".to_string(),
        }
    }

    pub fn load(&self, cfg: &RunConfig) -> Result<PolicyMatrix, HarnessError> {
        match self {
            PolicySource::File(p) => Ok(load_policy(p)?),
            PolicySource::GuidedInit => Ok(guided_policy(&cfg.settings)?.matrix),
        }
    }
}

/// Evaluates a policy on `grid` (the 29-combination grid when `None`) and
/// writes `eval.csv` into `cfg.out_dir`.
pub fn eval_run(
    cfg: &RunConfig,
    source: &PolicySource,
    grid: Option<Vec<TerrainPlane>>,
) -> Result<(EvalReport, PathBuf), HarnessError> {
    let m = source.load(cfg)?;
    let grid = grid.unwrap_or_else(full_grid);
    let pool = build_pool(cfg.settings.ars.workers)?;
    let report = evaluate_on(&m, &cfg.settings, &grid, &pool)?;
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("eval.csv");
    let mut out = create(&path)?;
    for line in csv_header(cfg).iter().chain(std::iter::once(&format!("policy={}", source.describe()))) {
        writeln!(out, "# {line}").map_err(io_err(&path))?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(["inclination", "orientation", "seed", "return", "displacement", "steps", "fell"])
            .map_err(|e| HarnessError::Invalid(e.to_string()))?;
        for (t, s) in &report.per_terrain {
            w.write_record([
                t.inclination.to_string(),
                t.yaw_orientation.to_string(),
                eval_seed(&cfg.settings, t).to_string(),
                s.total_reward.to_string(),
                s.displacement.to_string(),
                s.steps.to_string(),
                u8::from(s.fell).to_string(),
            ])
            .map_err(|e| HarnessError::Invalid(e.to_string()))?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    writeln!(out, "# mean_return={}", report.mean_return()).map_err(io_err(&path))?;
    out.flush().map_err(io_err(&path))?;
    Ok((report, path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOutputs {
    pub csv: PathBuf,
    pub log: EpisodeLog,
    pub fell: bool,
}

/// One logged episode written to `rollout.csv` in `cfg.out_dir`.
pub fn rollout_run(
    cfg: &RunConfig,
    source: &PolicySource,
    terrain: TerrainPlane,
    push: Option<ScriptedPush>,
) -> Result<RolloutOutputs, HarnessError> {
    let m = source.load(cfg)?;
    let seed = cfg.settings.ars.master_seed;
    let (log, fell) = logged_episode(&m, cfg, terrain, seed, push)?;
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("rollout.csv");
    let mut header = csv_header(cfg);
    header.push(format!("policy={}", source.describe()));
    header.push(format!("terrain_inclination={}", terrain.inclination));
    header.push(format!("terrain_orientation={}", terrain.yaw_orientation));
    header.push(match push {
        Some(p) => format!("push={} N at {} s for {} s", p.magnitude, p.at, p.duration),
        None => "push=none".to_string(),
    });
    let out = create(&path)?;
    log.write_csv(out, &header).map_err(io_err(&path))?;
    Ok(RolloutOutputs { csv: path, log, fell })
}
