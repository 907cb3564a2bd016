use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::env::{EnvConfig, ACTION_DIM, PROPRIO_DIM};
use crate::error::{Error, Result};
use crate::explore::OuConfig;
use crate::networks::NetConfig;
use crate::replay::ReplayConfig;
use crate::tdlearn::TdConfig;

/// How many `update()` calls follow each episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateCount {
    /// A quarter of the episode's steps, rounded up.
    Auto,
    Fixed(usize),
}

impl UpdateCount {
    pub fn for_steps(self, steps: usize) -> usize {
        match self {
            UpdateCount::Auto => steps.div_ceil(4),
            UpdateCount::Fixed(n) => n,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub td: TdConfig,
    pub net: NetConfig,
    pub env: EnvConfig,
    pub replay: ReplayConfig,
    pub ou: OuConfig,
    pub param_noise_sigma: f64,
    /// Parameter noise is applied on every episode whose index is a
    /// multiple of this; 0 disables it.
    pub param_noise_period: u64,
    pub episodes: u64,
    pub updates_per_episode: UpdateCount,
    pub checkpoint_every: u64,
    pub seed: u64,
    pub terrain_seed: u64,
    pub eval_seed: u64,
    pub eval_episodes: usize,
    pub scan_off: bool,
    pub td0_baseline: bool,
    pub ddpg: bool,
    pub injection_on: bool,
    pub teacher_files: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            td: TdConfig::default(),
            net: NetConfig::default(),
            env: EnvConfig::default(),
            replay: ReplayConfig::default(),
            ou: OuConfig::default(),
            param_noise_sigma: 0.05,
            param_noise_period: 5,
            episodes: 1500,
            updates_per_episode: UpdateCount::Auto,
            checkpoint_every: 100,
            seed: 0,
            terrain_seed: 1000,
            eval_seed: 900_000,
            eval_episodes: 200,
            scan_off: false,
            td0_baseline: false,
            ddpg: false,
            injection_on: false,
            teacher_files: Vec::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::usage(format!("invalid value {value:?} for key {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::usage(format!("invalid boolean {value:?} for key {key}"))),
    }
}

impl RunConfig {
    /// Sets one key. Unknown keys and unparsable values are usage errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = key.trim();
        let v = value;
        match k {
            "episodes" => self.episodes = parse(k, v)?,
            "updates_per_episode" => {
                self.updates_per_episode = if v.trim() == "auto" {
                    UpdateCount::Auto
                } else {
                    UpdateCount::Fixed(parse(k, v)?)
                }
            }
            "checkpoint_every" => self.checkpoint_every = parse(k, v)?,
            "seed" => self.seed = parse(k, v)?,
            "terrain_seed" => self.terrain_seed = parse(k, v)?,
            "eval_seed" => self.eval_seed = parse(k, v)?,
            "eval_episodes" => self.eval_episodes = parse(k, v)?,

            "gamma" => self.td.gamma = parse(k, v)?,
            "lambda" => self.td.lambda = parse(k, v)?,
            "l" => self.td.l = parse(k, v)?,
            "u" => self.td.u = parse(k, v)?,
            "s" => self.td.s = parse(k, v)?,
            "tau" => self.td.tau = parse(k, v)?,
            "batch_size" => self.td.batch_size = parse(k, v)?,
            "actor_lr" => self.td.actor_lr = parse(k, v)?,
            "critic_lr" => self.td.critic_lr = parse(k, v)?,
            "grad_clip" => self.td.grad_clip = parse(k, v)?,

            "conv_channels" => self.net.conv_channels = parse(k, v)?,
            "conv_width" => self.net.conv_width = parse(k, v)?,
            "visual_width" => self.net.visual_width = parse(k, v)?,
            "proprio_width" => self.net.proprio_width = parse(k, v)?,
            "action_width" => self.net.action_width = parse(k, v)?,
            "actor_core" => self.net.actor_core = parse(k, v)?,
            "critic_core" => self.net.critic_core = parse(k, v)?,

            "dt" => self.env.dt = parse(k, v)?,
            "thrust" => self.env.thrust = parse(k, v)?,
            "jump_speed" => self.env.jump_speed = parse(k, v)?,
            "gravity" => self.env.gravity = parse(k, v)?,
            "max_speed" => self.env.max_speed = parse(k, v)?,
            "x_start" => self.env.x_start = parse(k, v)?,
            "x_goal" => self.env.x_goal = parse(k, v)?,
            "max_steps" => self.env.max_steps = parse(k, v)?,
            "collision_penalty" => self.env.collision_penalty = parse(k, v)?,
            "step_over" => self.env.step_over = parse(k, v)?,
            "fall_limit" => self.env.fall_limit = parse(k, v)?,
            "rays" => self.env.rays = parse(k, v)?,
            "range_max" => self.env.range_max = parse(k, v)?,
            "sensor_height" => self.env.sensor_height = parse(k, v)?,
            "ray_fan_deg" => self.env.ray_fan_deg = parse(k, v)?,
            "difficulty" => self.env.difficulty = parse(k, v)?,

            "capacity" => self.replay.capacity = parse(k, v)?,
            "injected_capacity" => self.replay.injected_capacity = parse(k, v)?,
            "anneal_half_life" => self.replay.anneal_half_life = parse(k, v)?,

            "ou_theta" => self.ou.theta = parse(k, v)?,
            "ou_sigma" => self.ou.sigma = parse(k, v)?,
            "ou_mu" => self.ou.mu = parse(k, v)?,
            "ou_dt" => self.ou.dt = parse(k, v)?,
            "param_noise_sigma" => self.param_noise_sigma = parse(k, v)?,
            "param_noise_period" => self.param_noise_period = parse(k, v)?,

            "scan_off" => self.scan_off = parse_bool(k, v)?,
            "td0_baseline" => self.td0_baseline = parse_bool(k, v)?,
            "ddpg" => self.ddpg = parse_bool(k, v)?,
            "injection_on" => self.injection_on = parse_bool(k, v)?,
            "teacher_files" => {
                self.teacher_files = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            _ => return Err(Error::usage(format!("unknown config key {k:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::usage(format!("line {}: expected key=value, got {raw:?}", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let ups = match self.updates_per_episode {
            UpdateCount::Auto => "auto".to_string(),
            UpdateCount::Fixed(n) => n.to_string(),
        };
        vec![
            ("episodes", self.episodes.to_string()),
            ("updates_per_episode", ups),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("seed", self.seed.to_string()),
            ("terrain_seed", self.terrain_seed.to_string()),
            ("eval_seed", self.eval_seed.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("gamma", self.td.gamma.to_string()),
            ("lambda", self.td.lambda.to_string()),
            ("l", self.td.l.to_string()),
            ("u", self.td.u.to_string()),
            ("s", self.td.s.to_string()),
            ("tau", self.td.tau.to_string()),
            ("batch_size", self.td.batch_size.to_string()),
            ("actor_lr", self.td.actor_lr.to_string()),
            ("critic_lr", self.td.critic_lr.to_string()),
            ("grad_clip", self.td.grad_clip.to_string()),
            ("conv_channels", self.net.conv_channels.to_string()),
            ("conv_width", self.net.conv_width.to_string()),
            ("visual_width", self.net.visual_width.to_string()),
            ("proprio_width", self.net.proprio_width.to_string()),
            ("action_width", self.net.action_width.to_string()),
            ("actor_core", self.net.actor_core.to_string()),
            ("critic_core", self.net.critic_core.to_string()),
            ("dt", self.env.dt.to_string()),
            ("thrust", self.env.thrust.to_string()),
            ("jump_speed", self.env.jump_speed.to_string()),
            ("gravity", self.env.gravity.to_string()),
            ("max_speed", self.env.max_speed.to_string()),
            ("x_start", self.env.x_start.to_string()),
            ("x_goal", self.env.x_goal.to_string()),
            ("max_steps", self.env.max_steps.to_string()),
            ("collision_penalty", self.env.collision_penalty.to_string()),
            ("step_over", self.env.step_over.to_string()),
            ("fall_limit", self.env.fall_limit.to_string()),
            ("rays", self.env.rays.to_string()),
            ("range_max", self.env.range_max.to_string()),
            ("sensor_height", self.env.sensor_height.to_string()),
            ("ray_fan_deg", self.env.ray_fan_deg.to_string()),
            ("difficulty", self.env.difficulty.to_string()),
            ("capacity", self.replay.capacity.to_string()),
            ("injected_capacity", self.replay.injected_capacity.to_string()),
            ("anneal_half_life", self.replay.anneal_half_life.to_string()),
            ("ou_theta", self.ou.theta.to_string()),
            ("ou_sigma", self.ou.sigma.to_string()),
            ("ou_mu", self.ou.mu.to_string()),
            ("ou_dt", self.ou.dt.to_string()),
            ("param_noise_sigma", self.param_noise_sigma.to_string()),
            ("param_noise_period", self.param_noise_period.to_string()),
            ("scan_off", self.scan_off.to_string()),
            ("td0_baseline", self.td0_baseline.to_string()),
            ("ddpg", self.ddpg.to_string()),
            ("injection_on", self.injection_on.to_string()),
            ("teacher_files", self.teacher_files.join(",")),
        ]
    }

    /// `key=value` rendering that [`RunConfig::from_text`] reads back
    /// unchanged.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// TD settings after the ablation flags are applied.
    pub fn effective_td(&self) -> TdConfig {
        let mut td = self.td.clone();
        if self.td0_baseline {
            td.l = 1;
            td.u = 1;
            td.s = 0;
        }
        if self.scan_off || self.ddpg {
            td.s = 0;
        }
        td
    }

    /// Network layout with observation and action sizes taken from the
    /// environment.
    pub fn effective_net(&self) -> NetConfig {
        NetConfig {
            visual_dim: self.env.rays,
            proprio_dim: PROPRIO_DIM,
            action_dim: ACTION_DIM,
            recurrent: !self.ddpg,
            ..self.net.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.effective_td().validate()?;
        self.effective_net().validate()?;
        self.env.validate()?;
        if self.replay.capacity == 0 {
            return Err(Error::config("capacity must be positive"));
        }
        if !(self.replay.anneal_half_life > 0.0) {
            return Err(Error::config("anneal_half_life must be positive"));
        }
        if !(self.ou.theta >= 0.0 && self.ou.sigma >= 0.0 && self.ou.dt > 0.0) {
            return Err(Error::config("OU parameters must be non-negative with dt > 0"));
        }
        if !(self.param_noise_sigma >= 0.0) {
            return Err(Error::config("param_noise_sigma must be non-negative"));
        }
        if self.injection_on && self.teacher_files.is_empty() {
            return Err(Error::config("injection_on needs at least one teacher file"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("lambda", "0.37").unwrap();
        cfg.set("teacher_files", "a.traj, b.traj").unwrap();
        cfg.set("updates_per_episode", "7").unwrap();
        cfg.set("actor_lr", "0.00012345678901234").unwrap();
        let back = RunConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_and_bad_value() {
        assert!(matches!(RunConfig::from_text("nope=1"), Err(Error::Usage(_))));
        assert!(matches!(RunConfig::from_text("l=x"), Err(Error::Usage(_))));
        assert!(matches!(RunConfig::from_text("ddpg=maybe"), Err(Error::Usage(_))));
        assert!(matches!(RunConfig::from_text("just text"), Err(Error::Usage(_))));
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = RunConfig::from_text("# header\n\nl = 4 # window\nu=2\n").unwrap();
        assert_eq!((cfg.td.l, cfg.td.u), (4, 2));
    }

    #[test]
    fn baseline_flags() {
        let cfg = RunConfig::from_text("td0_baseline=true").unwrap();
        let td = cfg.effective_td();
        assert_eq!((td.l, td.u, td.s), (1, 1, 0));
        let cfg = RunConfig::from_text("scan_off=true").unwrap();
        assert_eq!(cfg.effective_td().s, 0);
        assert_eq!(cfg.effective_td().l, 8);
        let cfg = RunConfig::from_text("ddpg=true").unwrap();
        assert!(!cfg.effective_net().recurrent);
        assert_eq!(cfg.effective_td().s, 0);
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        assert!(RunConfig::from_text("u=9").unwrap().validate().is_err());
        assert!(RunConfig::from_text("injection_on=true").unwrap().validate().is_err());
        // the baseline forces u=1, so an otherwise invalid u is accepted
        assert!(RunConfig::from_text("u=9\ntd0_baseline=true").unwrap().validate().is_ok());
    }

    #[test]
    fn auto_update_count() {
        assert_eq!(UpdateCount::Auto.for_steps(10), 3);
        assert_eq!(UpdateCount::Fixed(2).for_steps(10), 2);
    }

    #[test]
    fn long_scan_setting_is_accepted() {
        let cfg = RunConfig::from_text("l=8\nu=8\ns=120").unwrap();
        cfg.validate().unwrap();
        let td = cfg.effective_td();
        assert_eq!((td.l, td.u, td.s), (8, 8, 120));
    }
}
