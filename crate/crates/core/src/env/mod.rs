//! A 2-D corridor with slopes, stairs, gaps and hurdles.
//!
//! The body is a point mass driven by a horizontal thrust and a jump
//! impulse. It senses the corridor through a fan of forward-down rays of
//! limited range plus its own height above ground, velocity and contact
//! flag. Reward is forward progress per second; collisions cost 20 and end
//! the episode.

mod terrain;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use terrain::{generate_terrain, Block, Feature, FeatureKind, Terrain, TerrainBuilder, GAP_FLOOR};

/// Positions are kept on a grid of `2^-32` m. Differences and sums of grid
/// values below `2^15` m are exact, and so is scaling them by 50.
const X_GRID: f64 = 4_294_967_296.0;

fn snap(x: f64) -> f64 {
    (x * X_GRID).round() / X_GRID
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Control and integration step (s).
    pub dt: f64,
    pub thrust: f64,
    pub jump_speed: f64,
    pub gravity: f64,
    /// Horizontal speed limit (m/s).
    pub max_speed: f64,
    pub x_start: f64,
    pub x_goal: f64,
    pub max_steps: usize,
    pub collision_penalty: f64,
    /// Rises up to this height are walked over; taller ones are walls.
    pub step_over: f64,
    /// Falling below this height is a collision.
    pub fall_limit: f64,
    pub rays: usize,
    pub range_max: f64,
    pub sensor_height: f64,
    /// Angle of the steepest ray below horizontal (degrees).
    pub ray_fan_deg: f64,
    pub difficulty: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            dt: 0.02,
            thrust: 8.0,
            jump_speed: 6.0,
            gravity: 9.8,
            max_speed: 10.0,
            x_start: 1.0,
            x_goal: 60.0,
            max_steps: 2000,
            collision_penalty: -20.0,
            step_over: 0.25,
            fall_limit: -2.0,
            rays: 10,
            range_max: 8.0,
            sensor_height: 0.5,
            ray_fan_deg: 75.0,
            difficulty: 0.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("thrust", self.thrust),
            ("jump_speed", self.jump_speed),
            ("gravity", self.gravity),
            ("max_speed", self.max_speed),
            ("range_max", self.range_max),
            ("step_over", self.step_over),
        ];
        for (k, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{k} must be positive, got {v}")));
            }
        }
        if self.rays < 2 {
            return Err(Error::config("need at least two rays"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps must be positive"));
        }
        if !(self.x_start >= 0.0 && self.x_start < self.x_goal) {
            return Err(Error::config("x_start must lie in [0, x_goal)"));
        }
        if !(0.0..=1.0).contains(&self.difficulty) {
            return Err(Error::config(format!("difficulty {} outside [0, 1]", self.difficulty)));
        }
        if !(self.ray_fan_deg > 0.0 && self.ray_fan_deg < 90.0) {
            return Err(Error::config("ray_fan_deg must lie in (0, 90)"));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.rays + PROPRIO_DIM
    }

    /// Control rate `1 / dt`. At the default 50 Hz this is exactly 50, and
    /// grid displacements times 50 are exact, so per-episode progress
    /// rewards divided by the rate sum to the net displacement exactly.
    pub fn rate(&self) -> f64 {
        1.0 / self.dt
    }

    /// Ray angles below horizontal, radians, from level to steepest.
    pub fn ray_angles(&self) -> Vec<f64> {
        let n = self.rays;
        (0..n)
            .map(|i| -(self.ray_fan_deg * i as f64 / (n - 1) as f64).to_radians())
            .collect()
    }
}

pub const PROPRIO_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub grounded: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub ranges: Vec<f64>,
    /// Height above ground, vx, vy, contact flag.
    pub proprio: [f64; PROPRIO_DIM],
}

impl Observation {
    /// Rangefinder components first, then proprioception.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.ranges.clone();
        v.extend_from_slice(&self.proprio);
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cause {
    Running,
    Goal,
    Collision,
    Timeout,
}

impl Cause {
    pub fn as_str(self) -> &'static str {
        match self {
            Cause::Running => "running",
            Cause::Goal => "goal",
            Cause::Collision => "collision",
            Cause::Timeout => "timeout",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    /// Progress reward plus the collision penalty, if any.
    pub reward: f64,
    /// `(x' - x) / dt` alone, computed as `(x' - x) * rate`.
    pub progress: f64,
    pub done: bool,
    pub cause: Cause,
}

/// Distance along a ray to the nearest segment, if any. Horizontal and
/// vertical segments use a closed form that depends only on the line they
/// lie on, so splitting a flat run into pieces never changes a reading.
fn ray_hit(origin: (f64, f64), dir: (f64, f64), seg: &[(f64, f64); 2]) -> Option<f64> {
    let (ax, ay) = seg[0];
    let (bx, by) = seg[1];
    let within = |v: f64, p: f64, q: f64| p.min(q) <= v && v <= p.max(q);
    if ay == by {
        if dir.1 == 0.0 {
            return None;
        }
        let t = (ay - origin.1) / dir.1;
        let x = origin.0 + t * dir.0;
        return (t >= 0.0 && within(x, ax, bx)).then_some(t);
    }
    if ax == bx {
        if dir.0 == 0.0 {
            return None;
        }
        let t = (ax - origin.0) / dir.0;
        let y = origin.1 + t * dir.1;
        return (t >= 0.0 && within(y, ay, by)).then_some(t);
    }
    let (ex, ey) = (bx - ax, by - ay);
    let denom = dir.0 * ey - dir.1 * ex;
    if denom == 0.0 {
        return None;
    }
    let (wx, wy) = (ax - origin.0, ay - origin.1);
    let t = (wx * ey - wy * ex) / denom;
    let s = (wx * dir.1 - wy * dir.0) / denom;
    (t >= 0.0 && (0.0..=1.0).contains(&s)).then_some(t)
}

/// Range readings from a sensor `sensor_height` above the body.
pub fn raycast(body: &BodyState, terrain: &Terrain, cfg: &EnvConfig) -> Vec<f64> {
    let origin = (body.x, body.y + cfg.sensor_height);
    let lo = body.x;
    let hi = body.x + cfg.range_max;
    let segs: Vec<_> = terrain
        .segments()
        .into_iter()
        .filter(|s| s[0].0.max(s[1].0) >= lo && s[0].0.min(s[1].0) <= hi)
        .collect();
    cfg.ray_angles()
        .into_iter()
        .map(|a| {
            let dir = (a.cos(), a.sin());
            let mut best = cfg.range_max;
            for seg in &segs {
                if let Some(t) = ray_hit(origin, dir, seg) {
                    best = best.min(t);
                }
            }
            best.max(1e-6)
        })
        .collect()
}

/// Runs one corridor episode at a time.
#[derive(Clone, Debug)]
pub struct Corridor {
    cfg: EnvConfig,
    terrain: Terrain,
    body: BodyState,
    steps: usize,
    done: bool,
}

impl Corridor {
    pub fn new(cfg: EnvConfig, terrain: Terrain) -> Result<Self> {
        cfg.validate()?;
        let y = terrain
            .surface(cfg.x_start)
            .ok_or_else(|| Error::config("start position is over a gap"))?;
        let body = BodyState {
            x: snap(cfg.x_start),
            y,
            vx: 0.0,
            vy: 0.0,
            grounded: true,
        };
        Ok(Corridor {
            cfg,
            terrain,
            body,
            steps: 0,
            done: false,
        })
    }

    /// Corridor over a freshly generated terrain.
    pub fn generated(cfg: EnvConfig, seed: u64) -> Result<Self> {
        let t = generate_terrain(seed, cfg.difficulty, cfg.x_goal)?;
        Corridor::new(cfg, t)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn terrain(&self) -> &Terrain {
        &self.terrain
    }

    pub fn body(&self) -> &BodyState {
        &self.body
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn reset(&mut self) -> Observation {
        let y = self.terrain.surface(self.cfg.x_start).unwrap_or(0.0);
        self.body = BodyState {
            x: snap(self.cfg.x_start),
            y,
            vx: 0.0,
            vy: 0.0,
            grounded: true,
        };
        self.steps = 0;
        self.done = false;
        self.observe()
    }

    /// Resets onto a new terrain.
    pub fn reset_with(&mut self, terrain: Terrain) -> Result<Observation> {
        if terrain.surface(self.cfg.x_start).is_none() {
            return Err(Error::config("start position is over a gap"));
        }
        self.terrain = terrain;
        Ok(self.reset())
    }

    /// Observation at an arbitrary pose, without changing the episode.
    pub fn observe_at(&self, body: &BodyState) -> Observation {
        let ground = self.terrain.surface(body.x).unwrap_or(self.cfg.fall_limit);
        Observation {
            ranges: raycast(body, &self.terrain, &self.cfg),
            proprio: [
                body.y - ground,
                body.vx,
                body.vy,
                if body.grounded { 1.0 } else { 0.0 },
            ],
        }
    }

    pub fn observe(&self) -> Observation {
        self.observe_at(&self.body)
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::usage("step called after the episode ended"));
        }
        if action.len() != ACTION_DIM {
            return Err(Error::config(format!(
                "action has {} components, expected {ACTION_DIM}",
                action.len()
            )));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::non_finite("action", format!("{action:?}")));
        }
        let cfg = &self.cfg;
        let thrust = action[0].clamp(-1.0, 1.0);
        let jump = action[1].clamp(-1.0, 1.0).max(0.0);
        let dt = cfg.dt;
        let b = self.body;

        let mut vx = (b.vx + thrust * cfg.thrust * dt).clamp(-cfg.max_speed, cfg.max_speed);
        let mut vy = b.vy;
        let mut grounded = b.grounded;
        if grounded && jump > 0.0 {
            vy = jump * cfg.jump_speed;
            grounded = false;
        }
        if !grounded {
            vy -= cfg.gravity * dt;
        }
        let mut x = snap(b.x + vx * dt);
        if x < 0.0 {
            x = 0.0;
            vx = 0.0;
        }
        let mut y = b.y + vy * dt;

        let mut collided = false;
        if let Some(top) = self.terrain.surface_max(b.x, x) {
            if y < top - cfg.step_over {
                collided = true;
            }
        }
        let here = self.terrain.surface(x);
        if !collided {
            match here {
                Some(h) if grounded => {
                    if b.y - h > cfg.step_over {
                        grounded = false;
                    } else {
                        y = h;
                        vy = 0.0;
                    }
                }
                Some(h) if y <= h => {
                    y = h;
                    vy = 0.0;
                    grounded = true;
                }
                Some(_) => {}
                None => grounded = false,
            }
        }
        if y < cfg.fall_limit {
            collided = true;
        }

        self.body = BodyState { x, y, vx, vy, grounded };
        self.steps += 1;
        let progress = (x - b.x) * self.cfg.rate();
        let mut reward = progress;
        let cause = if collided {
            reward += cfg.collision_penalty;
            Cause::Collision
        } else if x >= cfg.x_goal {
            Cause::Goal
        } else if self.steps >= cfg.max_steps {
            Cause::Timeout
        } else {
            Cause::Running
        };
        self.done = cause != Cause::Running;
        Ok(StepResult {
            obs: self.observe(),
            reward,
            progress,
            done: self.done,
            cause,
        })
    }
}

/// One line of a trajectory dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub action: Vec<f64>,
    pub reward: f64,
    pub ranges: Vec<f64>,
}

pub fn write_trace<W: Write>(w: &mut W, records: &[TraceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r).map_err(|e| Error::format("trace", e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Feature list of a terrain as line-delimited JSON.
pub fn write_terrain<W: Write>(w: &mut W, terrain: &Terrain) -> Result<()> {
    for f in &terrain.features {
        serde_json::to_writer(&mut *w, f).map_err(|e| Error::format("terrain", e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat() -> Corridor {
        Corridor::generated(EnvConfig::default(), 0).unwrap()
    }

    #[test]
    fn zero_action_stays_put() {
        let mut env = flat();
        env.reset();
        for _ in 0..50 {
            let r = env.step(&[0.0, 0.0]).unwrap();
            assert_eq!(r.reward, 0.0);
            assert!(!r.done);
        }
        assert_eq!(env.body().x, 1.0);
    }

    #[test]
    fn unit_speed_rewards_one() {
        let mut env = flat();
        env.reset();
        env.body.vx = 1.0;
        let r = env.step(&[0.0, 0.0]).unwrap();
        // x lives on a 2^-32 grid
        assert!((r.reward - 1.0).abs() < 1e-8);
        assert_eq!(r.reward, r.progress);
    }

    #[test]
    fn initial_ranges_on_flat_ground() {
        let env = flat();
        let obs = env.observe();
        let cfg = env.config();
        for (r, a) in obs.ranges.iter().zip(cfg.ray_angles()) {
            let expected = if a == 0.0 {
                cfg.range_max
            } else {
                (cfg.sensor_height / (-a).sin()).min(cfg.range_max)
            };
            assert!((r - expected).abs() < 1e-12, "{r} vs {expected}");
        }
        assert_eq!(obs.proprio, [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn hurdle_face_range() {
        let mut b = TerrainBuilder::new();
        b.flat(4.0).hurdle(0.5, 1.0).flat(20.0);
        let env = Corridor::new(EnvConfig { x_goal: 20.0, ..EnvConfig::default() }, b.build(0, 0.5, 20.0))
            .unwrap();
        let r = env.observe().ranges[0];
        assert!((r - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gap_lengthens_steep_ray() {
        let mut b = TerrainBuilder::new();
        b.flat(1.05).gap(2.0).flat(20.0);
        let gap = Corridor::new(EnvConfig { x_goal: 20.0, ..EnvConfig::default() }, b.build(0, 0.5, 20.0))
            .unwrap();
        let plain = flat();
        let steep = gap.config().rays - 1;
        assert!(gap.observe().ranges[steep] > plain.observe().ranges[steep]);
    }

    #[test]
    fn running_into_hurdle_collides() {
        let mut b = TerrainBuilder::new();
        b.flat(4.0).hurdle(0.5, 0.8).flat(20.0);
        let mut env =
            Corridor::new(EnvConfig { x_goal: 20.0, ..EnvConfig::default() }, b.build(0, 0.5, 20.0))
                .unwrap();
        env.reset();
        let mut last = None;
        for _ in 0..500 {
            let r = env.step(&[1.0, 0.0]).unwrap();
            if r.done {
                last = Some(r);
                break;
            }
        }
        let r = last.expect("episode ends");
        assert_eq!(r.cause, Cause::Collision);
        assert_eq!(r.reward, r.progress - 20.0);
        assert!(env.body().x <= 4.0 + 0.2);
    }

    #[test]
    fn step_after_done_is_usage_error() {
        let mut env = Corridor::generated(EnvConfig { max_steps: 1, ..EnvConfig::default() }, 0).unwrap();
        env.reset();
        assert_eq!(env.step(&[0.0, 0.0]).unwrap().cause, Cause::Timeout);
        assert!(matches!(env.step(&[0.0, 0.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn full_thrust_reaches_goal() {
        let mut env = flat();
        env.reset();
        let mut total = 0.0;
        loop {
            let r = env.step(&[1.0, 0.0]).unwrap();
            total += r.progress / env.config().rate();
            if r.done {
                assert_eq!(r.cause, Cause::Goal);
                break;
            }
        }
        assert_eq!(total, env.body().x - 1.0);
    }

    #[test]
    fn ballistic_arc() {
        let mut env = flat();
        env.reset();
        let cfg = env.config().clone();
        env.step(&[0.0, 1.0]).unwrap();
        // after k airborne steps: vy_k = J - k g dt, y_k = dt * sum_{j=1..k} vy_j
        let mut y = 0.0;
        let mut vy = cfg.jump_speed;
        vy -= cfg.gravity * cfg.dt;
        y += vy * cfg.dt;
        assert!((env.body().y - y).abs() <= 1e-12);
        for k in 2..20 {
            env.step(&[0.0, 0.0]).unwrap();
            let vk = cfg.jump_speed - k as f64 * cfg.gravity * cfg.dt;
            let yk = cfg.dt * (1..=k).map(|j| cfg.jump_speed - j as f64 * cfg.gravity * cfg.dt).sum::<f64>();
            assert!((env.body().vy - vk).abs() <= 1e-9);
            assert!((env.body().y - yk).abs() <= 1e-9);
        }
    }
}
