//! `rdpg` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rdpg::harness::{self, gradcheck, RunConfig};
use rdpg::networks::Checkpoint;
use rdpg::tdlearn::interp_weights;
use rdpg::Error;

#[derive(Parser, Debug)]
#[command(name = "rdpg", version, about = "Recurrent deterministic policy gradient on a partially observable corridor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// Plain-text `key=value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set lambda=0.8`. Repeatable; applied after
    /// the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train an agent; writes config, metrics and checkpoints to --out.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Noise-free evaluation of a checkpoint.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the configured eval_episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Record noise-free teacher trajectories from a checkpoint.
    RecordTeacher {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train with teacher trajectories injected into the replay buffer.
    InjectTrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Teacher trajectory files; repeatable.
        #[arg(long = "teacher", required = true)]
        teachers: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with central finite differences.
    CheckGrad {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the TD weight tables and per-position TD decompositions.
    TdDemo {
        #[arg(long, default_value_t = 0.9)]
        lambda: f64,
        #[arg(long)]
        u: Option<usize>,
        #[arg(long)]
        l: Option<usize>,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
    },
}

/// Failures that map to exit status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_config(args: &ConfigArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_file(p).map_err(|e| usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    for s in &args.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        cfg.set(k, v).map_err(|e| usage(e.to_string()))?;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn print_run_summary(out: &harness::TrainOutcome, dir: &Path) {
    match out.metrics.last() {
        Some(m) => println!(
            "episodes={} final_r100ma={:.3} best_r100ma={:.3} out={}",
            out.metrics.len(),
            m.r100ma,
            out.best_r100ma.unwrap_or(f64::NAN),
            dir.display()
        ),
        None => println!("episodes=0 out={}", dir.display()),
    }
}

fn td_demo(lambda: f64, u: usize, l: usize, gamma: f64) -> anyhow::Result<()> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(usage(format!("lambda {lambda} outside (0, 1]")));
    }
    if u == 0 || l == 0 || u > l {
        return Err(usage(format!("need 1 <= u <= l, got u={u} l={l}")));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(usage(format!("gamma {gamma} outside [0, 1]")));
    }
    let w = interp_weights(lambda, u);
    println!("lambda={lambda} u={u} l={l} gamma={gamma}");
    println!();
    println!("weights by window position (applied: lambda^i, normalized over i<u)");
    println!("{:>4} {:>8} {:>14}", "i", "backup", "weight");
    for (i, wi) in w.iter().enumerate() {
        println!("{:>4} {:>8} {:>14.10}", i, l - i, wi);
    }
    let rev: Vec<f64> = (0..u).map(|i| lambda.powi((l - i) as i32)).collect();
    let z: f64 = rev.iter().sum();
    println!();
    println!("weights by backup length (lambda^k over the same positions, normalized)");
    println!("{:>4} {:>8} {:>14}", "i", "backup", "weight");
    for (i, r) in rev.iter().enumerate() {
        println!("{:>4} {:>8} {:>14.10}", i, l - i, r / z);
    }
    println!();
    println!("TD decompositions (tail bootstrap at step {l})");
    for i in 0..l {
        let mut terms: Vec<String> = (i..l)
            .map(|t| format!("{:.6}*r{t}", gamma.powi((t - i) as i32)))
            .collect();
        terms.push(format!("{:.6}*Qtar{l}", gamma.powi((l - i) as i32)));
        let tag = if i < u { format!("w={:.6}", w[i]) } else { "w=0".to_string() };
        println!("TD{i} = {} - Q{i}    [{tag}]", terms.join(" + "));
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Train { cfg, out } => {
            let cfg = load_config(&cfg)?;
            let res = harness::train(&cfg, Some(&out))?;
            print_run_summary(&res, &out);
        }
        Command::InjectTrain { cfg, teachers, out } => {
            let mut cfg = load_config(&cfg)?;
            cfg.injection_on = true;
            cfg.teacher_files = teachers.iter().map(|p| p.display().to_string()).collect();
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            let res = harness::train(&cfg, Some(&out))?;
            print_run_summary(&res, &out);
        }
        Command::Eval {
            cfg,
            checkpoint,
            episodes,
            json,
        } => {
            let cfg = load_config(&cfg)?;
            let ck = load_checkpoint(&checkpoint)?;
            let n = episodes.unwrap_or(cfg.eval_episodes);
            let rep = harness::evaluate(&cfg, ck, n)?;
            if json {
                println!("{}", serde_json_string(&rep)?);
            } else {
                println!(
                    "episodes={} successes={} success_ratio={:.4} mean_return={:.3} std_return={:.3} min_return={:.3} max_return={:.3}",
                    rep.episodes,
                    rep.successes,
                    rep.success_ratio,
                    rep.mean_return,
                    rep.std_return,
                    rep.min_return,
                    rep.max_return
                );
            }
        }
        Command::RecordTeacher {
            cfg,
            checkpoint,
            episodes,
            out,
        } => {
            let cfg = load_config(&cfg)?;
            let ck = load_checkpoint(&checkpoint)?;
            let file = harness::record_teacher(&cfg, ck, episodes)?;
            file.save(&out)
                .with_context(|| format!("writing {}", out.display()))?;
            let steps: usize = file.episodes.iter().map(|e| e.len()).sum();
            println!("episodes={} transitions={steps} out={}", file.episodes.len(), out.display());
        }
        Command::CheckGrad { seed } => {
            let checks = gradcheck::run_suite(seed)?;
            let mut ok = true;
            for c in &checks {
                println!(
                    "{} {:<32} derivatives={:<5} max_rel_err={:.3e}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.checked,
                    c.max_rel_err
                );
                ok &= c.passed;
            }
            return Ok(ok);
        }
        Command::TdDemo { lambda, u, l, gamma } => {
            let (u, l) = match (u, l) {
                (Some(u), Some(l)) => (u, l),
                (Some(u), None) => (u, u),
                (None, Some(l)) => (l, l),
                (None, None) => (8, 8),
            };
            td_demo(lambda, u, l, gamma)?;
        }
    }
    Ok(true)
}

fn serde_json_string(rep: &harness::EvalReport) -> anyhow::Result<String> {
    let mut buf = Vec::new();
    rdpg::harness::write_json(&mut buf, rep)?;
    Ok(String::from_utf8(buf)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let is_usage = e.downcast_ref::<UsageError>().is_some()
                || matches!(
                    e.downcast_ref::<Error>(),
                    Some(Error::Usage(_) | Error::Config(_))
                );
            ExitCode::from(if is_usage { 2 } else { 1 })
        }
    }
}
