use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slopewalk::config::{ConfigError, RunConfig};
use slopewalk::harness::{eval_run, rollout_run, train_run, HarnessError, PolicySource, ScriptedPush};
use slopewalk::simenv::TerrainPlane;

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "slopewalk", version, about = "Train and run linear slope-walking policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Guided initialization followed by ARS training.
    Train {
        #[command(flatten)]
        common: Common,
        /// Number of ARS iterations.
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Mean return over the evaluation grid or a single terrain.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Policy file to evaluate.
        #[arg(long)]
        policy: PathBuf,
        #[command(flatten)]
        terrain: TerrainArgs,
    },
    /// One logged episode written as a per-step CSV.
    Rollout {
        #[command(flatten)]
        common: Common,
        /// Policy file; the guided initial policy is used when omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[command(flatten)]
        terrain: TerrainArgs,
        /// Lateral push force in newtons.
        #[arg(long)]
        push: Option<f64>,
        /// Push start time in seconds.
        #[arg(long, default_value_t = 0.7, requires = "push")]
        push_at: f64,
        /// Push duration in seconds.
        #[arg(long, default_value_t = 0.2, requires = "push")]
        push_dur: f64,
    },
}

#[derive(Args)]
struct Common {
    /// Config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for episode rollouts.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `section.key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TerrainArgs {
    /// Slope inclination in degrees.
    #[arg(long, alias = "incline")]
    inclination: Option<f64>,
    /// Slope orientation (yaw) in degrees.
    #[arg(long)]
    orientation: Option<f64>,
}

impl TerrainArgs {
    fn plane(&self) -> Option<TerrainPlane> {
        match (self.inclination, self.orientation) {
            (None, None) => None,
            (i, o) => Some(TerrainPlane::new(i.unwrap_or(0.0), o.unwrap_or(0.0))),
        }
    }
}

enum Failure {
    Config(ConfigError),
    Runtime(HarnessError),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Runtime(e)
    }
}

fn load_config(c: &Common, iters: Option<usize>) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut set = |key: &str, value: String| -> Result<(), ConfigError> {
        cfg = cfg.with_override(key, &value)?;
        Ok(())
    };
    if let Some(s) = c.seed {
        set("ars.seed", s.to_string())?;
    }
    if let Some(w) = c.workers {
        set("ars.workers", w.to_string())?;
    }
    if let Some(o) = &c.out {
        set("run.out", o.display().to_string())?;
    }
    if let Some(n) = iters {
        set("run.iterations", n.to_string())?;
    }
    for kv in &c.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: 0, msg: format!("override `{kv}` is not KEY=VALUE") })?;
        set(k.trim(), v.trim().to_string())?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { common, iters } => {
            let cfg = load_config(&common, iters)?;
            let out = train_run(&cfg)?;
            println!("initial eval: {:.3}", out.initial_eval);
            if let Some(last) = out.last_eval {
                println!("last eval: {last:.3}");
            }
            println!("wrote {}", out.training_csv.display());
            println!("wrote {}", out.final_policy.display());
        }
        Command::Eval { common, policy, terrain } => {
            let cfg = load_config(&common, None)?;
            let grid = terrain.plane().map(|t| vec![t]);
            let (report, path) = eval_run(&cfg, &PolicySource::File(policy), grid)?;
            println!("{:>11} {:>11} {:>12}", "inclination", "orientation", "return");
            for (t, s) in &report.per_terrain {
                println!("{:>11} {:>11} {:>12.3}", t.inclination, t.yaw_orientation, s.total_reward);
            }
            println!("mean return: {:.3}", report.mean_return());
            println!("wrote {}", path.display());
        }
        Command::Rollout { common, policy, terrain, push, push_at, push_dur } => {
            let cfg = load_config(&common, None)?;
            let source = policy.map_or(PolicySource::GuidedInit, PolicySource::File);
            let push = push.map(|magnitude| ScriptedPush { magnitude, at: push_at, duration: push_dur });
            let plane = terrain.plane().unwrap_or_else(TerrainPlane::flat);
            let out = rollout_run(&cfg, &source, plane, push)?;
            println!("policy: {}", source.describe());
            println!("steps: {}, fell: {}", out.log.rows.len(), out.fell);
            println!("wrote {}", out.csv.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
