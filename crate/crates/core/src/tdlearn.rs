//! Critic and actor updates on sampled slices.
//!
//! Critic: every slice bootstraps once, at its tail. The target networks run
//! over the scan prefix and the whole window to reach the tail state and
//! produce `q_tar = Q'(o_l, pi'(o_l))` (zero after a terminal transition).
//! Window position `i` is then measured with backup length `l - i`:
//!
//! ```text
//! TD_i = sum_{t=i}^{l-1} gamma^(t-i) r_t + gamma^(l-i) q_tar - Q(o_i, a_i | h_{i-1})
//! loss = mean over slices of sum_{i<u} w_i TD_i^2,   w_i = lambda^i / sum_{j<u} lambda^j
//! ```
//!
//! and the gradient flows back through the critic's recurrence across the
//! window. The scan prefix only sets `h_{-1}` and carries no gradient.
//!
//! Actor: at every window position the actor proposes `a_i` from its
//! scanned-and-stepped state, the critic scores it from its own state, and
//! `dQ/da` is chained into the actor. Both recurrent states are treated as
//! constants, so no gradient crosses time.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{soft_update, ParamSet, Tape};
use crate::error::{Error, Result};
use crate::networks::{ActorNet, Agent, CriticNet, RecurrentState};
use crate::replay::{EpisodeStore, Origin, Slice, SliceBatch};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdConfig {
    pub gamma: f64,
    pub lambda: f64,
    /// Optimization length: window size and critic BPTT horizon.
    pub l: usize,
    /// Update length: leading window positions that carry loss.
    pub u: usize,
    /// Scan length.
    pub s: usize,
    pub tau: f64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Global L2 norm bound applied to each gradient before ADAM.
    pub grad_clip: f64,
}

impl Default for TdConfig {
    fn default() -> Self {
        TdConfig {
            gamma: 0.99,
            lambda: 0.9,
            l: 8,
            u: 8,
            s: 24,
            tau: 0.001,
            batch_size: 32,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            grad_clip: 10.0,
        }
    }
}

impl TdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::config(format!("lambda {} outside (0, 1]", self.lambda)));
        }
        if self.l == 0 || self.u == 0 {
            return Err(Error::config("l and u must be at least 1"));
        }
        if self.u > self.l {
            return Err(Error::config(format!(
                "update length u={} exceeds optimization length l={}",
                self.u, self.l
            )));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.grad_clip > 0.0) {
            return Err(Error::config("learning rates and grad_clip must be positive"));
        }
        Ok(())
    }
}

/// Normalized weights `lambda^i / sum_{j<u} lambda^j` for window positions
/// `0..u`.
pub fn interp_weights(lambda: f64, u: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..u).map(|i| lambda.powi(i as i32)).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / z).collect()
}

/// Backup length of window position `i` in an `l`-step window.
pub fn backup_length(l: usize, i: usize) -> usize {
    l - i
}

/// Tail-bootstrapped TD at window position `i`; `rewards` is the whole
/// window `r_0..r_{l-1}`.
pub fn multi_step_td(rewards: &[f64], i: usize, q_beh: f64, q_tar: f64, gamma: f64) -> f64 {
    let l = rewards.len();
    debug_assert!(i < l);
    let mut ret = 0.0;
    for (k, r) in rewards[i..].iter().enumerate() {
        ret += gamma.powi(k as i32) * r;
    }
    ret + gamma.powi((l - i) as i32) * q_tar - q_beh
}

/// Per-update TD diagnostics.
#[derive(Clone, Debug, Default)]
pub struct TdReport {
    /// `td[n][i]` for every slice and window position.
    pub td: Vec<Vec<f64>>,
    pub q_beh: Vec<Vec<f64>>,
    pub q_tar: Vec<f64>,
    pub masked: Vec<bool>,
    pub weights: Vec<f64>,
    pub loss: f64,
}

fn window_obs(slice: &Slice) -> impl Iterator<Item = &[f64]> {
    slice.window.iter().map(|t| t.o.as_slice())
}

fn prefix_obs(slice: &Slice) -> impl Iterator<Item = &[f64]> {
    slice.prefix.iter().map(|t| t.o.as_slice())
}

fn prefix_pairs(slice: &Slice) -> impl Iterator<Item = (&[f64], &[f64])> {
    slice.prefix.iter().map(|t| (t.o.as_slice(), t.a.as_slice()))
}

fn window_pairs(slice: &Slice) -> impl Iterator<Item = (&[f64], &[f64])> {
    slice.window.iter().map(|t| (t.o.as_slice(), t.a.as_slice()))
}

/// Target value at the slice tail. Target networks scan and step with their
/// own parameters over prefix and window; a terminal tail bootstraps to 0.
pub fn tail_target_q(
    slice: &Slice,
    actor: &ActorNet,
    critic: &CriticNet,
    actor_target: &ParamSet,
    critic_target: &ParamSet,
) -> Result<(f64, bool)> {
    if slice.done_at_tail {
        return Ok((0.0, true));
    }
    let ha = actor.scan(actor_target, prefix_obs(slice).chain(window_obs(slice)))?;
    let hc = critic.scan(critic_target, prefix_pairs(slice).chain(window_pairs(slice)))?;
    let (a_tail, _) = actor.step(actor_target, &slice.tail_obs, &ha)?;
    let (q, _) = critic.step(critic_target, &slice.tail_obs, &a_tail, &hc)?;
    Ok((q, false))
}

/// Loss and gradient contribution of one slice for a critic whose state at
/// the window start is fixed to `h0`.
pub struct SliceLoss {
    pub loss: f64,
    pub td: Vec<f64>,
    pub q_beh: Vec<f64>,
    pub grads: ParamSet,
}

pub fn slice_critic_loss(
    slice: &Slice,
    critic: &CriticNet,
    params: &ParamSet,
    h0: &RecurrentState,
    q_tar: f64,
    weights: &[f64],
    gamma: f64,
) -> Result<SliceLoss> {
    let l = slice.window.len();
    let u = weights.len();
    let mut tape = Tape::new(params);
    let mut state = tape.leaf(h0.flat());
    let mut q_vars = Vec::with_capacity(l);
    for t in &slice.window {
        let step = critic.record_step(&mut tape, &t.o, &t.a, state)?;
        q_vars.push(step.q);
        state = step.state;
    }
    let rewards: Vec<f64> = slice.window.iter().map(|t| t.r).collect();
    let q_beh: Vec<f64> = q_vars.iter().map(|v| tape.value(*v)[0]).collect();
    let td: Vec<f64> = (0..l)
        .map(|i| multi_step_td(&rewards, i, q_beh[i], q_tar, gamma))
        .collect();
    if let Some(i) = td.iter().position(|v| !v.is_finite()) {
        return Err(Error::non_finite(
            "critic TD",
            format!("position {i}: q_beh={} q_tar={q_tar}", q_beh[i]),
        ));
    }
    let mut loss = 0.0;
    for i in 0..u {
        loss += weights[i] * td[i] * td[i];
    }
    // dL/dQ_i = -2 w_i TD_i
    let seeds: Vec<[f64; 1]> = (0..u).map(|i| [-2.0 * weights[i] * td[i]]).collect();
    let seed_refs: Vec<_> = (0..u).map(|i| (q_vars[i], &seeds[i][..])).collect();
    let mut grads = params.zeros_like();
    tape.backward(&seed_refs, &mut grads);
    Ok(SliceLoss {
        loss,
        td,
        q_beh,
        grads,
    })
}

/// Critic loss gradient over a batch, averaged over slices. Scans use the
/// current behavioural critic; tail targets use the target networks.
pub fn critic_update(
    batch: &SliceBatch,
    agent: &Agent,
    cfg: &TdConfig,
) -> Result<(ParamSet, TdReport)> {
    let weights = interp_weights(cfg.lambda, cfg.u.min(batch.l));
    let per_slice: Vec<Result<(SliceLoss, f64, bool)>> = batch
        .slices
        .par_iter()
        .map(|slice| {
            let h0 = agent.critic.scan(&agent.critic_params, prefix_pairs(slice))?;
            let (q_tar, masked) = tail_target_q(
                slice,
                &agent.actor,
                &agent.critic,
                &agent.actor_target,
                &agent.critic_target,
            )?;
            if !q_tar.is_finite() {
                return Err(Error::non_finite("target Q", format!("{q_tar}")));
            }
            let sl = slice_critic_loss(
                slice,
                &agent.critic,
                &agent.critic_params,
                &h0,
                q_tar,
                &weights,
                cfg.gamma,
            )?;
            Ok((sl, q_tar, masked))
        })
        .collect();

    let n = batch.len() as f64;
    let mut grads = agent.critic_params.zeros_like();
    let mut report = TdReport {
        weights: weights.clone(),
        ..Default::default()
    };
    let mut loss_sum = 0.0;
    // fixed-order reduction keeps results bitwise reproducible
    for r in per_slice {
        let (sl, q_tar, masked) = r?;
        loss_sum += sl.loss;
        grads.add_scaled(&sl.grads, 1.0);
        report.td.push(sl.td);
        report.q_beh.push(sl.q_beh);
        report.q_tar.push(q_tar);
        report.masked.push(masked);
    }
    grads.scale(1.0 / n);
    report.loss = loss_sum / n;
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::non_finite("critic gradient", format!("parameter {name:?}")));
    }
    Ok((grads, report))
}

/// Actor gradient of the slice's positions, with `h0_actor` / `h0_critic`
/// the states before the window. Returns the ascent direction of
/// `sum_i Q(o_i, pi(o_i))` and that sum.
pub fn slice_actor_gradient(
    slice: &Slice,
    agent_actor: (&ActorNet, &ParamSet),
    agent_critic: (&CriticNet, &ParamSet),
    h0_actor: RecurrentState,
    h0_critic: RecurrentState,
) -> Result<(ParamSet, f64)> {
    let (actor, ap) = agent_actor;
    let (critic, cp) = agent_critic;
    let mut grads = ap.zeros_like();
    let mut critic_scratch = cp.zeros_like();
    let mut q_sum = 0.0;
    let mut ha = h0_actor;
    let mut hc = h0_critic;
    for t in &slice.window {
        let mut atape = Tape::new(ap);
        let s = atape.leaf(ha.flat());
        let astep = actor.record_step(&mut atape, &t.o, s)?;
        let action = atape.value(astep.action).to_vec();

        let mut ctape = Tape::new(cp);
        let cs = ctape.leaf(hc.flat());
        let cstep = critic.record_step(&mut ctape, &t.o, &action, cs)?;
        q_sum += ctape.value(cstep.q)[0];
        let node_grads = ctape.backward(&[(cstep.q, &[1.0])], &mut critic_scratch);
        let dq_da = node_grads
            .get(cstep.action)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; action.len()]);
        atape.backward(&[(astep.action, &dq_da)], &mut grads);

        ha = RecurrentState::from_flat(atape.value(astep.state));
        // the critic's history follows the stored actions
        hc = critic.step(cp, &t.o, &t.a, &hc)?.1;
    }
    Ok((grads, q_sum))
}

/// Deterministic policy gradient over a batch: ascent direction of
/// `1/(N l) sum_n sum_i Q(o_i, pi(o_i))`, plus the mean Q itself.
pub fn actor_update(batch: &SliceBatch, agent: &Agent, cfg: &TdConfig) -> Result<(ParamSet, f64)> {
    let _ = cfg;
    let per_slice: Vec<Result<(ParamSet, f64)>> = batch
        .slices
        .par_iter()
        .map(|slice| {
            let ha = agent.actor.scan(&agent.actor_params, prefix_obs(slice))?;
            let hc = agent.critic.scan(&agent.critic_params, prefix_pairs(slice))?;
            slice_actor_gradient(
                slice,
                (&agent.actor, &agent.actor_params),
                (&agent.critic, &agent.critic_params),
                ha,
                hc,
            )
        })
        .collect();
    let scale = 1.0 / (batch.len() * batch.l) as f64;
    let mut grads = agent.actor_params.zeros_like();
    let mut q_sum = 0.0;
    for r in per_slice {
        let (g, q) = r?;
        grads.add_scaled(&g, 1.0);
        q_sum += q;
    }
    grads.scale(scale);
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::non_finite("actor gradient", format!("parameter {name:?}")));
    }
    Ok((grads, q_sum * scale))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UpdateReport {
    pub critic_loss: f64,
    pub mean_q: f64,
    pub critic_grad_norm: f64,
    pub actor_grad_norm: f64,
    pub injected_slices: usize,
}

/// One `Update()`: sample, critic step, actor step (against the updated
/// critic), soft target updates. Returns `Ok(None)` when the buffer cannot
/// yet supply a batch. On error nothing in `agent` changes.
pub fn update<R: Rng + ?Sized>(
    buffer: &EpisodeStore,
    agent: &mut Agent,
    cfg: &TdConfig,
    rng: &mut R,
) -> Result<Option<UpdateReport>> {
    if !buffer.ready(cfg.l) {
        return Ok(None);
    }
    let batch = buffer.sample_batch(cfg.batch_size, cfg.s, cfg.l, rng)?;
    update_on_batch(&batch, agent, cfg).map(Some)
}

pub fn update_on_batch(batch: &SliceBatch, agent: &mut Agent, cfg: &TdConfig) -> Result<UpdateReport> {
    let (mut critic_grads, td) = critic_update(batch, agent, cfg)?;
    let critic_grad_norm = critic_grads.clip_global_norm(cfg.grad_clip);

    let mut next = agent.clone();
    next.critic_adam.step(&mut next.critic_params, &critic_grads)?;

    let (mut actor_grads, mean_q) = actor_update(batch, &next, cfg)?;
    let actor_grad_norm = actor_grads.clip_global_norm(cfg.grad_clip);
    // ADAM descends; the actor ascends Q
    actor_grads.scale(-1.0);
    next.actor_adam.step(&mut next.actor_params, &actor_grads)?;

    soft_update(&mut next.critic_target, &next.critic_params, cfg.tau)?;
    soft_update(&mut next.actor_target, &next.actor_params, cfg.tau)?;
    if !next.critic_params.is_finite() || !next.actor_params.is_finite() {
        return Err(Error::non_finite("parameters after update", "ADAM step"));
    }
    *agent = next;
    Ok(UpdateReport {
        critic_loss: td.loss,
        mean_q,
        critic_grad_norm,
        actor_grad_norm,
        injected_slices: batch
            .slices
            .iter()
            .filter(|s| s.origin == Origin::Injected)
            .count(),
    })
}
