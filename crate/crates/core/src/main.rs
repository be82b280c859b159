use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use cdmp::compliance::ComplianceParams;
use cdmp::contact::CrossSection;
use cdmp::env::{hand_tuned_params, run_episode, sample_episode, write_trace_csv, EnvConfig, EpisodeLimits};
use cdmp::eval_stats::{quarter, summarize, sweep, write_cells_csv, CompliancePolicy, SweepGrid};
use cdmp::ppo::{retrain, train, write_curve_csv, PolicyNet, Progress, TrainConfig, TrainOutcome, UpdateStats};
use cdmp::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_PHYSICS: u8 = 3;
const EXIT_HYPOTHESIS: u8 = 4;

#[derive(Parser)]
#[command(name = "cdmp", version, about = "Train and evaluate compliant peg-in-hole insertion policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy from random initialisation.
    Train(Common),
    /// Warm-start training from a saved policy on a new shape set.
    Retrain {
        #[command(flatten)]
        common: Common,
        /// Comma-separated cross-sections, e.g. `triangle`.
        #[arg(long, value_delimiter = ',', required = true)]
        shapes: Vec<CrossSection>,
    },
    /// Run a batch of episodes with a fixed policy.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
    },
    /// Evaluate a policy over an error-range grid and test the quarter
    /// ordering.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Run one episode and write its trace.
    Rollout(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Task configuration (JSON). Defaults apply to omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Policy checkpoint, or `hand-tuned` / `rigid`.
    #[arg(long, alias = "base")]
    policy: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for episode collection.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Everything a run reads from its config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TaskFile {
    env: EnvConfig,
    limits: EpisodeLimits,
    train: TrainConfig,
}

enum Failure {
    Config(String),
    Physics(String),
    Hypothesis(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::InvalidArgument { .. } | Error::Json(_) | Error::Incompatible(_) => {
                Failure::Config(e.to_string())
            }
            Error::PhysicsInvalid(_) => Failure::Physics(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

/// One JSON object per line on stderr and in `log.jsonl`.
struct Logger {
    file: Option<BufWriter<File>>,
}

impl Logger {
    fn open(dir: &Path) -> Result<Self, Failure> {
        Ok(Self {
            file: Some(BufWriter::new(File::create(dir.join("log.jsonl"))?)),
        })
    }

    fn log(&mut self, event: &str, fields: Value) {
        let mut obj = json!({ "event": event });
        if let (Value::Object(o), Value::Object(f)) = (&mut obj, fields) {
            o.extend(f);
        }
        let line = obj.to_string();
        eprintln!("{line}");
        if let Some(f) = &mut self.file {
            let _ = writeln!(f, "{line}");
        }
    }
}

impl Progress for Logger {
    fn update(&mut self, episodes: usize, cell: usize, moving_avg: f64, stats: &UpdateStats) {
        self.log(
            "update",
            json!({
                "episodes": episodes,
                "cell": cell,
                "moving_avg": moving_avg,
                "generation": stats.generation,
                "approx_kl": stats.approx_kl,
                "clip_fraction": stats.clip_fraction,
                "entropy": stats.entropy,
                "value_loss": stats.value_loss,
            }),
        );
    }
}

fn load_task(path: Option<&Path>) -> Result<(TaskFile, String), Failure> {
    let Some(path) = path else {
        let task = TaskFile::default();
        let text = serde_json::to_string(&task).map_err(|e| Failure::Other(e.to_string()))?;
        return Ok((task, sha256_hex(text.as_bytes())));
    };
    let bytes = fs::read(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let task: TaskFile = serde_json::from_slice(&bytes)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    task.env.validate()?;
    task.train.validate()?;
    Ok((task, sha256_hex(&bytes)))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("output dir {}: {e}", dir.display())))?;
    let probe = dir.join(".write-test");
    File::create(&probe).map_err(|e| Failure::Config(format!("output dir {} is not writable: {e}", dir.display())))?;
    let _ = fs::remove_file(probe);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, value).map_err(|e| Failure::Other(e.to_string()))
}

fn write_manifest(dir: &Path, command: &str, common: &Common, task: &TaskFile, config_hash: &str, seed: u64) -> Result<(), Failure> {
    let policy_hash = match common.policy.as_deref() {
        Some(p) if Path::new(p).is_file() => Some(sha256_hex(&fs::read(p)?)),
        _ => None,
    };
    write_json(
        &dir.join("manifest.json"),
        &json!({
            "command": command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "code_version": env!("CARGO_PKG_VERSION"),
            "config_path": common.config.as_ref().map(|p| p.display().to_string()),
            "config_sha256": config_hash,
            "config": task,
            "policy": common.policy,
            "policy_sha256": policy_hash,
            "seed": seed,
            "workers": common.workers,
        }),
    )
}

enum PolicySource {
    Fixed(ComplianceParams),
    Net(Box<PolicyNet>),
}

impl PolicySource {
    fn load(spec: Option<&str>) -> Result<Self, Failure> {
        match spec {
            None | Some("hand-tuned") => Ok(Self::Fixed(hand_tuned_params())),
            Some("rigid") => {
                let h = hand_tuned_params();
                Ok(Self::Fixed(ComplianceParams::rigid(h.k_t, h.k_theta)?))
            }
            Some(path) => Ok(Self::Net(Box::new(PolicyNet::load(Path::new(path))?))),
        }
    }

    fn as_policy(&self) -> &dyn CompliancePolicy {
        match self {
            Self::Fixed(p) => p,
            Self::Net(n) => n.as_ref(),
        }
    }
}

fn finish_training(dir: &Path, log: &mut Logger, outcome: &TrainOutcome, threshold: f64) -> Result<(), Failure> {
    outcome.policy.save(&dir.join("policy.json"))?;
    write_curve_csv(&outcome.curve, BufWriter::new(File::create(dir.join("curve.csv"))?))?;
    for (i, batch) in outcome.rejected_batches.iter().enumerate() {
        let file = File::create(dir.join(format!("rejected_batch_{i}.json")))?;
        serde_json::to_writer(BufWriter::new(file), batch).map_err(cdmp::error::Error::from)?;
    }
    let last = outcome.curve.last();
    log.log(
        "done",
        json!({
            "episodes": outcome.curve.len(),
            "final_moving_avg": last.map(|p| p.moving_avg),
            "threshold": threshold,
            "episodes_to_threshold": outcome.episodes_to_threshold,
            "rejected_batches": outcome.rejected_batches.len(),
        }),
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (name, common) = match &cli.command {
        Command::Train(c) => ("train", c),
        Command::Retrain { common, .. } => ("retrain", common),
        Command::Eval { common, .. } => ("eval", common),
        Command::Sweep { common, .. } => ("sweep", common),
        Command::Rollout(c) => ("rollout", c),
    };
    if let Some(w) = common.workers {
        if w == 0 {
            return Err(Failure::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Failure::Other(e.to_string()))?;
    }
    let (mut task, hash) = load_task(common.config.as_deref())?;
    let seed = common.seed.unwrap_or(task.train.seed);
    task.train.seed = seed;
    let dir = &common.out;
    prepare_out(dir)?;
    write_manifest(dir, name, common, &task, &hash, seed)?;
    let mut log = Logger::open(dir)?;
    log.log("start", json!({ "command": name, "seed": seed, "config_sha256": hash }));

    match &cli.command {
        Command::Train(_) => {
            let outcome = train(&task.env, &task.limits, &task.train, &mut log)?;
            finish_training(dir, &mut log, &outcome, task.train.target_fraction)?;
        }
        Command::Retrain { shapes, .. } => {
            let path = common
                .policy
                .as_deref()
                .ok_or_else(|| Failure::Config("retrain needs --policy <checkpoint>".into()))?;
            let base = PolicyNet::load(Path::new(path))?;
            let outcome = retrain(base, shapes, &task.env, &task.limits, &task.train, &mut log)?;
            finish_training(dir, &mut log, &outcome, task.train.target_fraction)?;
        }
        Command::Eval { episodes, .. } => {
            let source = PolicySource::load(common.policy.as_deref())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = BufWriter::new(File::create(dir.join("episodes.csv"))?);
            writeln!(out, "episode,shape,success,time_s,reward,final_depth_m,invalid,stalled")?;
            let mut successes = 0;
            let mut invalid = 0;
            for k in 0..*episodes {
                let spec = sample_episode(&task.env, &mut rng)?;
                let params = source.as_policy().params(&spec.observation())?;
                let r = run_episode(&task.env, &spec, &params, &task.limits)?;
                successes += r.success as usize;
                invalid += r.invalid as usize;
                writeln!(
                    out,
                    "{k},{},{},{},{:.1},{:.5},{},{}",
                    spec.peg.cross_section.name(),
                    r.success as u8,
                    r.time_to_complete_s.map(|t| format!("{t:.3}")).unwrap_or_default(),
                    r.reward,
                    r.final_depth_m,
                    r.invalid as u8,
                    r.stalled as u8
                )?;
            }
            out.flush()?;
            log.log(
                "done",
                json!({ "episodes": episodes, "successes": successes, "invalid": invalid }),
            );
        }
        Command::Sweep { grid, alpha, .. } => {
            let text = fs::read(grid).map_err(|e| Failure::Config(format!("cannot read {}: {e}", grid.display())))?;
            let grid: SweepGrid = serde_json::from_slice(&text)
                .map_err(|e| Failure::Config(format!("{}: {e}", grid.display())))?;
            grid.validate()?;
            let source = PolicySource::load(common.policy.as_deref())?;
            let result = sweep(source.as_policy(), &task.env, &grid, &task.limits, seed)?;
            write_cells_csv(&result, BufWriter::new(File::create(dir.join("cells.csv"))?))?;
            let quarters = quarter(&result);
            let summary = summarize(&result, &quarters, *alpha)?;
            let report = summary.report();
            fs::write(dir.join("summary.txt"), &report)?;
            write_json(&dir.join("summary.json"), &summary)?;
            println!("{report}");
            let confirmed = summary.hypotheses_confirmed();
            log.log("done", json!({ "cells": grid.cell_count(), "hypotheses_confirmed": confirmed }));
            if !confirmed {
                return Err(Failure::Hypothesis("quarter ordering hypotheses were not confirmed".into()));
            }
        }
        Command::Rollout(_) => {
            let source = PolicySource::load(common.policy.as_deref())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = sample_episode(&task.env, &mut rng)?;
            let params = source.as_policy().params(&spec.observation())?;
            let limits = EpisodeLimits {
                record_trace: true,
                ..task.limits
            };
            let r = run_episode(&task.env, &spec, &params, &limits)?;
            if let Some(trace) = &r.trace {
                write_trace_csv(trace, BufWriter::new(File::create(dir.join("trace.csv"))?))?;
            }
            write_json(&dir.join("episode.json"), &json!({ "spec": spec, "params": params, "result": r }))?;
            log.log(
                "done",
                json!({ "success": r.success, "time_s": r.time_to_complete_s, "reward": r.reward }),
            );
            if r.invalid {
                return Err(Failure::Physics(
                    r.diagnostic.unwrap_or_else(|| "physically invalid episode".into()),
                ));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, kind, msg) = match f {
                Failure::Config(m) => (EXIT_CONFIG, "config", m),
                Failure::Physics(m) => (EXIT_PHYSICS, "physics_invalid", m),
                Failure::Hypothesis(m) => (EXIT_HYPOTHESIS, "hypothesis_failed", m),
                Failure::Other(m) => (EXIT_FAILURE, "error", m),
            };
            eprintln!("{}", json!({ "event": "error", "kind": kind, "message": msg }));
            ExitCode::from(code)
        }
    }
}
