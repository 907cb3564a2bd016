//! Training and evaluation loops, metrics, checkpoints and teacher
//! recording.

mod config;
pub mod gradcheck;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{RunConfig, UpdateCount};

use crate::env::{generate_terrain, Cause, Corridor, Terrain};
use crate::error::{Error, Result};
use crate::explore::{apply_param_noise, noisy_action, ou_step, remove_param_noise, OuProcess, ParamNoiseStash};
use crate::networks::{ActorNet, Agent, Checkpoint};
use crate::replay::{Episode, EpisodeStore, TeacherFile, Transition};
use crate::tdlearn::{update, UpdateReport};

pub const METRICS_VERSION: u32 = 1;

/// Independent random streams of a run.
const STREAM_INIT: u64 = 1;
const STREAM_EXPLORE: u64 = 2;
const STREAM_SAMPLE: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub v: u32,
    pub episode: u64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub steps: usize,
    pub cause: Cause,
    pub r100ma: f64,
    pub updates: usize,
    pub critic_loss: Option<f64>,
    pub mean_q: Option<f64>,
    pub critic_grad_norm: Option<f64>,
    pub actor_grad_norm: Option<f64>,
    pub injected_share: Option<f64>,
    pub anneal: f64,
    pub param_noise: bool,
    /// Phases of the episode in the order they ran.
    pub phases: Vec<String>,
}

/// Writes `value` as one line of JSON.
pub fn write_json<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(|e| Error::format("json", e.to_string()))?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Mean of the last `min(100, n)` returns, summed oldest first.
pub fn moving_average(returns: &[f64]) -> f64 {
    let k = returns.len().min(100);
    if k == 0 {
        return 0.0;
    }
    let tail = &returns[returns.len() - k..];
    tail.iter().sum::<f64>() / k as f64
}

/// Terrain of a given episode: the fixed flat corridor at difficulty 0,
/// otherwise a fresh corridor per episode.
pub fn episode_terrain(cfg: &RunConfig, base_seed: u64, index: u64) -> Result<Terrain> {
    let seed = if cfg.env.difficulty == 0.0 {
        base_seed
    } else {
        base_seed.wrapping_add(index)
    };
    generate_terrain(seed, cfg.env.difficulty, cfg.env.x_goal)
}

/// Result of one rollout.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub ret: f64,
    pub cause: Cause,
    pub transitions: Vec<Transition>,
}

/// Runs one episode with `actor` at `params`. With `noise`, OU noise is
/// added to every action.
pub fn rollout(
    env: &mut Corridor,
    actor: &ActorNet,
    params: &crate::ParamSet,
    mut noise: Option<(&mut OuProcess, &mut ChaCha8Rng)>,
) -> Result<Rollout> {
    let mut obs = env.reset().to_vec();
    let mut state = actor.zero_state();
    let mut transitions = Vec::new();
    let mut ret = 0.0;
    if let Some((ou, _)) = noise.as_mut() {
        ou.reset();
    }
    loop {
        let (a, next_state) = actor.step(params, &obs, &state)?;
        state = next_state;
        let a = match noise.as_mut() {
            Some((ou, rng)) => noisy_action(&a, &ou_step(ou, &mut **rng)),
            None => a,
        };
        let r = env.step(&a)?;
        ret += r.reward;
        let o_next = r.obs.to_vec();
        transitions.push(Transition {
            o: std::mem::replace(&mut obs, o_next.clone()),
            a,
            r: r.reward,
            o_next,
            done: matches!(r.cause, Cause::Goal | Cause::Collision),
        });
        if r.done {
            return Ok(Rollout {
                ret,
                cause: r.cause,
                transitions,
            });
        }
    }
}

/// Files written by a training run.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn config(&self) -> PathBuf {
        self.dir.join("config.txt")
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }
    pub fn timing(&self) -> PathBuf {
        self.dir.join("timing.jsonl")
    }
    pub fn checkpoint(&self, episode: u64) -> PathBuf {
        self.dir.join(format!("ckpt-{episode:06}.bin"))
    }
    pub fn best(&self) -> PathBuf {
        self.dir.join("best.bin")
    }
    pub fn last(&self) -> PathBuf {
        self.dir.join("last.bin")
    }
    pub fn halt(&self) -> PathBuf {
        self.dir.join("halt.bin")
    }
}

struct Outputs {
    paths: RunPaths,
    metrics: BufWriter<File>,
    timing: BufWriter<File>,
}

impl Outputs {
    fn create(dir: &Path, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let paths = RunPaths { dir: dir.to_path_buf() };
        fs::write(paths.config(), cfg.to_text())?;
        Ok(Outputs {
            metrics: BufWriter::new(File::create(paths.metrics())?),
            timing: BufWriter::new(File::create(paths.timing())?),
            paths,
        })
    }
}

/// What a training run returns.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub metrics: Vec<EpisodeMetrics>,
    pub agent: Agent,
    pub best_r100ma: Option<f64>,
}

fn load_teachers(cfg: &RunConfig) -> Result<Vec<Episode>> {
    let mut episodes = Vec::new();
    for f in &cfg.teacher_files {
        let t = TeacherFile::load(Path::new(f))?;
        episodes.extend(t.episodes);
    }
    Ok(episodes)
}

/// The training loop. With `out_dir`, the config, metrics stream, timing
/// stream and checkpoints are written there.
pub fn train(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let td = cfg.effective_td();
    let net = cfg.effective_net();
    let mut out = match out_dir {
        Some(d) => Some(Outputs::create(d, cfg)?),
        None => None,
    };

    let mut init_rng = stream(cfg.seed, STREAM_INIT);
    let mut explore_rng = stream(cfg.seed, STREAM_EXPLORE);
    let mut sample_rng = stream(cfg.seed, STREAM_SAMPLE);

    let mut agent = Agent::new(&net, td.actor_lr, td.critic_lr, &mut init_rng, cfg.seed)?;
    let mut buffer = EpisodeStore::new(cfg.replay, net.obs_dim(), net.action_dim)?;
    if cfg.injection_on {
        buffer.inject(load_teachers(cfg)?)?;
    }
    let mut ou = OuProcess::new(net.action_dim, cfg.ou.clone());
    let mut stash = ParamNoiseStash::new(cfg.param_noise_sigma);
    let mut env = Corridor::new(cfg.env.clone(), episode_terrain(cfg, cfg.terrain_seed, 0)?)?;

    if let Some(o) = out.as_ref() {
        agent.checkpoint(0).save(&o.paths.checkpoint(0))?;
    }

    let mut returns = Vec::with_capacity(cfg.episodes as usize);
    let mut metrics = Vec::with_capacity(cfg.episodes as usize);
    let mut best: Option<(f64, u64, Agent)> = None;
    let started = Instant::now();

    for ep in 0..cfg.episodes {
        let mut phases = Vec::new();
        let noisy = cfg.param_noise_period > 0 && ep % cfg.param_noise_period == 0;
        if noisy {
            apply_param_noise(&mut agent.actor_params, &mut stash, &mut explore_rng)?;
            phases.push("param_noise".to_string());
        }
        if ep > 0 && cfg.env.difficulty > 0.0 {
            env.reset_with(episode_terrain(cfg, cfg.terrain_seed, ep)?)?;
        }
        phases.push("rollout".to_string());
        let roll = rollout(
            &mut env,
            &agent.actor,
            &agent.actor_params,
            Some((&mut ou, &mut explore_rng)),
        );
        if stash.active() {
            remove_param_noise(&mut agent.actor_params, &mut stash)?;
            phases.push("denoise".to_string());
        }
        let roll = roll?;
        let steps = roll.transitions.len();
        for t in roll.transitions {
            buffer.push(t)?;
        }
        buffer.end_episode();

        let anneal = buffer.set_anneal(ep);
        let n_updates = cfg.updates_per_episode.for_steps(steps);
        let mut reports: Vec<UpdateReport> = Vec::with_capacity(n_updates);
        if n_updates > 0 {
            phases.push("update".to_string());
        }
        for _ in 0..n_updates {
            match update(&buffer, &mut agent, &td, &mut sample_rng) {
                Ok(Some(r)) => reports.push(r),
                Ok(None) => break,
                Err(e @ Error::NonFinite { .. }) => {
                    if let Some(o) = out.as_mut() {
                        agent.checkpoint(ep).save(&o.paths.halt())?;
                        o.metrics.flush()?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }

        returns.push(roll.ret);
        let r100ma = moving_average(&returns);
        let mean = |f: fn(&UpdateReport) -> f64| -> Option<f64> {
            if reports.is_empty() {
                None
            } else {
                Some(reports.iter().map(f).sum::<f64>() / reports.len() as f64)
            }
        };
        let share = if reports.is_empty() {
            None
        } else {
            let inj: usize = reports.iter().map(|r| r.injected_slices).sum();
            Some(inj as f64 / (reports.len() * td.batch_size) as f64)
        };
        let m = EpisodeMetrics {
            v: METRICS_VERSION,
            episode: ep,
            ret: roll.ret,
            steps,
            cause: roll.cause,
            r100ma,
            updates: reports.len(),
            critic_loss: mean(|r| r.critic_loss),
            mean_q: mean(|r| r.mean_q),
            critic_grad_norm: mean(|r| r.critic_grad_norm),
            actor_grad_norm: mean(|r| r.actor_grad_norm),
            injected_share: share,
            anneal,
            param_noise: noisy,
            phases,
        };
        if best.as_ref().is_none_or(|(b, _, _)| r100ma > *b) {
            best = Some((r100ma, ep + 1, agent.clone()));
        }
        if let Some(o) = out.as_mut() {
            write_json(&mut o.metrics, &m)?;
            writeln!(
                o.timing,
                "{{\"episode\":{ep},\"wall_time\":{}}}",
                started.elapsed().as_secs_f64()
            )?;
            let done = ep + 1;
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                agent.checkpoint(done).save(&o.paths.checkpoint(done))?;
                if let Some((_, at, a)) = best.as_ref() {
                    a.checkpoint(*at).save(&o.paths.best())?;
                }
                o.metrics.flush()?;
                o.timing.flush()?;
            }
        }
        metrics.push(m);
    }

    if let Some(o) = out.as_mut() {
        agent.checkpoint(cfg.episodes).save(&o.paths.last())?;
        if let Some((_, at, a)) = best.as_ref() {
            a.checkpoint(*at).save(&o.paths.best())?;
        }
        o.metrics.flush()?;
        o.timing.flush()?;
    }
    Ok(TrainOutcome {
        metrics,
        agent,
        best_r100ma: best.map(|(b, _, _)| b),
    })
}

/// Noise-free evaluation summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub successes: usize,
    pub success_ratio: f64,
    pub mean_return: f64,
    pub std_return: f64,
    pub min_return: f64,
    pub max_return: f64,
    pub returns: Vec<f64>,
    pub causes: Vec<Cause>,
}

fn summarize(results: Vec<(f64, Cause)>) -> EvalReport {
    let n = results.len();
    let returns: Vec<f64> = results.iter().map(|r| r.0).collect();
    let causes: Vec<Cause> = results.iter().map(|r| r.1).collect();
    let successes = causes.iter().filter(|c| **c == Cause::Goal).count();
    let (mean, std, min, max) = if n == 0 {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        let mean = returns.iter().sum::<f64>() / n as f64;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
        let min = returns.iter().copied().fold(f64::INFINITY, f64::min);
        let max = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (mean, var.sqrt(), min, max)
    };
    EvalReport {
        episodes: n,
        successes,
        success_ratio: if n == 0 { 0.0 } else { successes as f64 / n as f64 },
        mean_return: mean,
        std_return: std,
        min_return: min,
        max_return: max,
        returns,
        causes,
    }
}

fn checked_agent(cfg: &RunConfig, ck: Checkpoint) -> Result<Agent> {
    let want = cfg.effective_net();
    let have = ck.net_config()?;
    if have != want {
        return Err(Error::config(format!(
            "checkpoint layout {have:?} does not match configuration {want:?}"
        )));
    }
    Agent::from_checkpoint(&want, ck)
}

/// Noise-free rollouts of the checkpoint's actor on `episodes` corridors
/// seeded from `cfg.eval_seed`. Episodes run in parallel and are merged in
/// seed order.
pub fn evaluate(cfg: &RunConfig, ck: Checkpoint, episodes: usize) -> Result<EvalReport> {
    cfg.validate()?;
    let agent = checked_agent(cfg, ck)?;
    let results: Vec<Result<(f64, Cause)>> = (0..episodes as u64)
        .into_par_iter()
        .map(|i| {
            let mut env = Corridor::new(cfg.env.clone(), episode_terrain(cfg, cfg.eval_seed, i)?)?;
            let r = rollout(&mut env, &agent.actor, &agent.actor_params, None)?;
            Ok((r.ret, r.cause))
        })
        .collect();
    Ok(summarize(results.into_iter().collect::<Result<_>>()?))
}

/// Noise-free rollouts of the checkpoint's actor, as a teacher file.
pub fn record_teacher(cfg: &RunConfig, ck: Checkpoint, episodes: usize) -> Result<TeacherFile> {
    cfg.validate()?;
    let agent = checked_agent(cfg, ck)?;
    let net = cfg.effective_net();
    let mut out = Vec::with_capacity(episodes);
    for i in 0..episodes as u64 {
        let mut env = Corridor::new(cfg.env.clone(), episode_terrain(cfg, cfg.eval_seed, i)?)?;
        let r = rollout(&mut env, &agent.actor, &agent.actor_params, None)?;
        out.push(Episode { transitions: r.transitions });
    }
    Ok(TeacherFile {
        obs_dim: net.obs_dim(),
        act_dim: net.action_dim,
        episodes: out,
    })
}
