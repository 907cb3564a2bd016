//! Recurrent actor and critic.
//!
//! Both networks share a front end: the rangefinder part of the observation
//! goes through a conv + global max-pool block and a dense layer, the
//! proprioceptive part through its own dense layer, and the two are
//! concatenated. The critic additionally lifts the action through a dense
//! layer and concatenates it with the other features before its recurrent
//! core. The core is an LSTM whose hidden output passes through a relu
//! before the head (tanh for the actor, linear scalar for the critic). With
//! `recurrent = false` the LSTM is replaced by an equal-width dense relu
//! layer and the recurrent state is empty.
//!
//! Observation layout: the first `visual_dim` components are ranges, the
//! remaining `proprio_dim` components are proprioception.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::diffcore::{
    Activation, Adam, AdamConfig, Array, ConvRef, DenseRef, LstmRef, ParamId, ParamSet, Tape, Var,
};
use crate::error::{Error, Result};

/// Layer sizes shared by actor and critic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub visual_dim: usize,
    pub proprio_dim: usize,
    pub action_dim: usize,
    pub conv_channels: usize,
    pub conv_width: usize,
    pub visual_width: usize,
    pub proprio_width: usize,
    /// Critic only: width of the action lifting layer.
    pub action_width: usize,
    pub actor_core: usize,
    pub critic_core: usize,
    pub recurrent: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            visual_dim: 10,
            proprio_dim: 4,
            action_dim: 2,
            conv_channels: 16,
            conv_width: 3,
            visual_width: 16,
            proprio_width: 48,
            action_width: 16,
            actor_core: 64,
            critic_core: 80,
            recurrent: true,
        }
    }
}

impl NetConfig {
    /// Full-size widths: 64 conv channels, 64/192 dense branches, 64-wide
    /// action lifting, LSTM 256 (actor) and 320 (critic).
    pub fn full_scale(visual_dim: usize, proprio_dim: usize, action_dim: usize) -> Self {
        NetConfig {
            visual_dim,
            proprio_dim,
            action_dim,
            conv_channels: 64,
            conv_width: 3,
            visual_width: 64,
            proprio_width: 192,
            action_width: 64,
            actor_core: 256,
            critic_core: 320,
            recurrent: true,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.visual_dim + self.proprio_dim
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("visual_dim", self.visual_dim),
            ("proprio_dim", self.proprio_dim),
            ("action_dim", self.action_dim),
            ("conv_channels", self.conv_channels),
            ("conv_width", self.conv_width),
            ("visual_width", self.visual_width),
            ("proprio_width", self.proprio_width),
            ("action_width", self.action_width),
            ("actor_core", self.actor_core),
            ("critic_core", self.critic_core),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if self.conv_width > self.visual_dim {
            return Err(Error::config(format!(
                "conv_width {} exceeds visual_dim {}",
                self.conv_width, self.visual_dim
            )));
        }
        Ok(())
    }

    fn to_meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        for (k, v) in [
            ("visual_dim", self.visual_dim),
            ("proprio_dim", self.proprio_dim),
            ("action_dim", self.action_dim),
            ("conv_channels", self.conv_channels),
            ("conv_width", self.conv_width),
            ("visual_width", self.visual_width),
            ("proprio_width", self.proprio_width),
            ("action_width", self.action_width),
            ("actor_core", self.actor_core),
            ("critic_core", self.critic_core),
        ] {
            m.insert(k.to_string(), v.to_string());
        }
        m.insert("recurrent".into(), self.recurrent.to_string());
        m
    }

    /// Reads the widths recorded in a parameter set's metadata.
    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| -> Result<usize> {
            meta.get(k)
                .ok_or_else(|| Error::format("parameter metadata", format!("missing {k}")))?
                .parse()
                .map_err(|_| Error::format("parameter metadata", format!("bad value for {k}")))
        };
        let recurrent = match meta.get("recurrent").map(String::as_str) {
            Some("true") => true,
            Some("false") => false,
            _ => return Err(Error::format("parameter metadata", "missing recurrent flag")),
        };
        Ok(NetConfig {
            visual_dim: get("visual_dim")?,
            proprio_dim: get("proprio_dim")?,
            action_dim: get("action_dim")?,
            conv_channels: get("conv_channels")?,
            conv_width: get("conv_width")?,
            visual_width: get("visual_width")?,
            proprio_width: get("proprio_width")?,
            action_width: get("action_width")?,
            actor_core: get("actor_core")?,
            critic_core: get("critic_core")?,
            recurrent,
        })
    }
}

/// Hidden and cell vectors of the recurrent core. Empty for feedforward
/// cores. The all-zero state is the initial state of every episode.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros(width: usize) -> Self {
        RecurrentState {
            h: vec![0.0; width],
            c: vec![0.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.h.len()
    }

    /// `[h, c]` concatenated: the layout `record_step` expects for its state leaf.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.h.len());
        v.extend_from_slice(&self.h);
        v.extend_from_slice(&self.c);
        v
    }

    pub fn from_flat(v: &[f64]) -> Self {
        let (h, c) = v.split_at(v.len() / 2);
        RecurrentState {
            h: h.to_vec(),
            c: c.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Core {
    Lstm { cell: LstmRef, width: usize },
    Dense(DenseRef),
}

#[derive(Clone, Copy, Debug)]
struct FrontEnd {
    conv: ConvRef,
    visual: DenseRef,
    proprio: DenseRef,
}

/// Parameter layout builder: registers names in a fixed order so the ids
/// computed here are valid for every parameter set the network creates.
struct Layout {
    shapes: Vec<(String, Vec<usize>, Init)>,
}

#[derive(Clone, Copy)]
enum Init {
    Uniform(f64),
    LstmBias(usize),
}

impl Layout {
    fn new() -> Self {
        Layout { shapes: Vec::new() }
    }

    fn add(&mut self, name: &str, shape: Vec<usize>, init: Init) -> ParamId {
        self.shapes.push((name.to_string(), shape, init));
        ParamId(self.shapes.len() - 1)
    }

    fn dense(&mut self, prefix: &str, n_in: usize, n_out: usize, act: Activation) -> DenseRef {
        let bound = 1.0 / (n_in as f64).sqrt();
        DenseRef {
            w: self.add(&format!("{prefix}.w"), vec![n_out, n_in], Init::Uniform(bound)),
            b: self.add(&format!("{prefix}.b"), vec![n_out], Init::Uniform(bound)),
            act,
        }
    }

    fn front_end(&mut self, cfg: &NetConfig) -> FrontEnd {
        let bound = 1.0 / (cfg.conv_width as f64).sqrt();
        let conv = ConvRef {
            w: self.add(
                "conv.w",
                vec![cfg.conv_channels, cfg.conv_width],
                Init::Uniform(bound),
            ),
            b: self.add("conv.b", vec![cfg.conv_channels], Init::Uniform(bound)),
            width: cfg.conv_width,
        };
        FrontEnd {
            conv,
            visual: self.dense("visual", cfg.conv_channels, cfg.visual_width, Activation::Relu),
            proprio: self.dense("proprio", cfg.proprio_dim, cfg.proprio_width, Activation::Relu),
        }
    }

    fn core(&mut self, n_in: usize, width: usize, recurrent: bool) -> Core {
        if recurrent {
            let bound = 1.0 / ((n_in + width) as f64).sqrt();
            Core::Lstm {
                cell: LstmRef {
                    wx: self.add("lstm.wx", vec![4 * width, n_in], Init::Uniform(bound)),
                    wh: self.add("lstm.wh", vec![4 * width, width], Init::Uniform(bound)),
                    b: self.add("lstm.b", vec![4 * width], Init::LstmBias(width)),
                },
                width,
            }
        } else {
            Core::Dense(self.dense("core", n_in, width, Activation::Relu))
        }
    }

    fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let mut set = ParamSet::new();
        for (name, shape, init) in &self.shapes {
            let n: usize = shape.iter().product();
            let data = match *init {
                Init::Uniform(bound) => (0..n).map(|_| rng.random_range(-bound..=bound)).collect(),
                Init::LstmBias(width) => {
                    let mut b = vec![0.0; n];
                    b[width..2 * width].iter_mut().for_each(|v| *v = 1.0);
                    b
                }
            };
            set.insert(name.clone(), Array::from_vec(shape, data).expect("layout shape"))
                .expect("layout names are unique");
        }
        set
    }

    fn check(&self, params: &ParamSet) -> Result<()> {
        if params.len() != self.shapes.len() {
            return Err(Error::config(format!(
                "expected {} parameter arrays, found {}",
                self.shapes.len(),
                params.len()
            )));
        }
        for ((name, shape, _), (pname, arr)) in self.shapes.iter().zip(params.iter()) {
            if name != pname || shape.as_slice() != arr.shape() {
                return Err(Error::config(format!(
                    "parameter {pname:?} {:?} does not match layout {name:?} {shape:?}",
                    arr.shape()
                )));
            }
        }
        Ok(())
    }
}

fn record_front_end(
    tape: &mut Tape<'_>,
    fe: &FrontEnd,
    cfg: &NetConfig,
    obs: &[f64],
) -> Result<(Var, Var)> {
    if obs.len() != cfg.obs_dim() {
        return Err(Error::config(format!(
            "observation has {} components, network expects {} (+{})",
            obs.len(),
            cfg.visual_dim,
            cfg.proprio_dim
        )));
    }
    let (ranges, proprio) = obs.split_at(cfg.visual_dim);
    let r = tape.leaf(ranges.to_vec());
    let p = tape.leaf(proprio.to_vec());
    let conv = tape.conv1d_pool(r, fe.conv)?;
    let vis = tape.dense(conv, fe.visual)?;
    let pro = tape.dense(p, fe.proprio)?;
    Ok((vis, pro))
}

fn record_core(tape: &mut Tape<'_>, core: &Core, feat: Var, state: Var) -> Result<(Var, Var)> {
    match core {
        Core::Lstm { cell, width } => {
            let next = tape.lstm(feat, state, *cell)?;
            let h = tape.slice(next, 0, *width);
            Ok((tape.relu(h), next))
        }
        Core::Dense(layer) => Ok((tape.dense(feat, *layer)?, state)),
    }
}

fn state_width(core: &Core) -> usize {
    match core {
        Core::Lstm { width, .. } => *width,
        Core::Dense(_) => 0,
    }
}

fn check_state(core: &Core, state: &RecurrentState) -> Result<()> {
    let w = state_width(core);
    if state.h.len() != w || state.c.len() != w {
        return Err(Error::config(format!(
            "recurrent state width {}/{} does not match layer width {w}",
            state.h.len(),
            state.c.len()
        )));
    }
    Ok(())
}

/// Deterministic policy network.
#[derive(Clone, Debug)]
pub struct ActorNet {
    cfg: NetConfig,
    layout_len: usize,
    front: FrontEnd,
    core: Core,
    head: DenseRef,
}

/// Tape nodes of one recorded actor step.
#[derive(Clone, Copy, Debug)]
pub struct ActorStep {
    pub action: Var,
    pub state: Var,
}

impl ActorNet {
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let (net, _) = Self::build(cfg);
        Ok(net)
    }

    fn build(cfg: &NetConfig) -> (Self, Layout) {
        let mut l = Layout::new();
        let front = l.front_end(cfg);
        let core = l.core(cfg.visual_width + cfg.proprio_width, cfg.actor_core, cfg.recurrent);
        let head = l.dense("head", cfg.actor_core, cfg.action_dim, Activation::Tanh);
        let net = ActorNet {
            cfg: cfg.clone(),
            layout_len: l.shapes.len(),
            front,
            core,
            head,
        };
        (net, l)
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R, seed: u64) -> ParamSet {
        let (_, layout) = Self::build(&self.cfg);
        debug_assert_eq!(layout.shapes.len(), self.layout_len);
        let mut p = layout.init(rng);
        for (k, v) in self.cfg.to_meta() {
            p.set_meta(k, v);
        }
        p.set_meta("net", "actor");
        p.set_meta("seed", seed.to_string());
        p
    }

    /// Errors unless `params` has exactly this network's names and shapes.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        Self::build(&self.cfg).1.check(params)
    }

    pub fn zero_state(&self) -> RecurrentState {
        RecurrentState::zeros(state_width(&self.core))
    }

    /// Records one step; `state` must hold `[h | c]` (empty when feedforward).
    pub fn record_step(&self, tape: &mut Tape<'_>, obs: &[f64], state: Var) -> Result<ActorStep> {
        let (vis, pro) = record_front_end(tape, &self.front, &self.cfg, obs)?;
        let feat = tape.concat(&[vis, pro]);
        let (z, next) = record_core(tape, &self.core, feat, state)?;
        let action = tape.dense(z, self.head)?;
        Ok(ActorStep {
            action,
            state: next,
        })
    }

    /// `a_t = pi(o_t, h_{t-1})`, advancing the recurrent state.
    pub fn step(
        &self,
        params: &ParamSet,
        obs: &[f64],
        state: &RecurrentState,
    ) -> Result<(Vec<f64>, RecurrentState)> {
        check_state(&self.core, state)?;
        let mut tape = Tape::new(params);
        let s = tape.leaf(state.flat());
        let out = self.record_step(&mut tape, obs, s)?;
        Ok((
            tape.value(out.action).to_vec(),
            RecurrentState::from_flat(tape.value(out.state)),
        ))
    }

    /// Runs the network over `observations` from the zero state and returns
    /// the resulting state. No gradients are recorded.
    pub fn scan<'a, I>(&self, params: &ParamSet, observations: I) -> Result<RecurrentState>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        self.scan_from(params, self.zero_state(), observations)
    }

    pub fn scan_from<'a, I>(
        &self,
        params: &ParamSet,
        mut state: RecurrentState,
        observations: I,
    ) -> Result<RecurrentState>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        for o in observations {
            state = self.step(params, o, &state)?.1;
        }
        Ok(state)
    }
}

/// State-action value network.
#[derive(Clone, Debug)]
pub struct CriticNet {
    cfg: NetConfig,
    front: FrontEnd,
    action: DenseRef,
    core: Core,
    head: DenseRef,
}

/// Tape nodes of one recorded critic step.
#[derive(Clone, Copy, Debug)]
pub struct CriticStep {
    pub q: Var,
    pub action: Var,
    pub state: Var,
}

impl CriticNet {
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::build(cfg).0)
    }

    fn build(cfg: &NetConfig) -> (Self, Layout) {
        let mut l = Layout::new();
        let front = l.front_end(cfg);
        let action = l.dense("action", cfg.action_dim, cfg.action_width, Activation::Relu);
        let core = l.core(
            cfg.visual_width + cfg.proprio_width + cfg.action_width,
            cfg.critic_core,
            cfg.recurrent,
        );
        let head = l.dense("head", cfg.critic_core, 1, Activation::Identity);
        (
            CriticNet {
                cfg: cfg.clone(),
                front,
                action,
                core,
                head,
            },
            l,
        )
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R, seed: u64) -> ParamSet {
        let mut p = Self::build(&self.cfg).1.init(rng);
        for (k, v) in self.cfg.to_meta() {
            p.set_meta(k, v);
        }
        p.set_meta("net", "critic");
        p.set_meta("seed", seed.to_string());
        p
    }

    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        Self::build(&self.cfg).1.check(params)
    }

    pub fn zero_state(&self) -> RecurrentState {
        RecurrentState::zeros(state_width(&self.core))
    }

    /// Records one step with the action as its own leaf, so `dQ/da` can be
    /// read off the backward pass.
    pub fn record_step(
        &self,
        tape: &mut Tape<'_>,
        obs: &[f64],
        action: &[f64],
        state: Var,
    ) -> Result<CriticStep> {
        if action.len() != self.cfg.action_dim {
            return Err(Error::config(format!(
                "action has {} components, critic expects {}",
                action.len(),
                self.cfg.action_dim
            )));
        }
        let (vis, pro) = record_front_end(tape, &self.front, &self.cfg, obs)?;
        let a = tape.leaf(action.to_vec());
        let lifted = tape.dense(a, self.action)?;
        let feat = tape.concat(&[vis, pro, lifted]);
        let (z, next) = record_core(tape, &self.core, feat, state)?;
        let q = tape.dense(z, self.head)?;
        Ok(CriticStep {
            q,
            action: a,
            state: next,
        })
    }

    /// `Q(o_t, a_t | h_{t-1})`, advancing the recurrent state.
    pub fn step(
        &self,
        params: &ParamSet,
        obs: &[f64],
        action: &[f64],
        state: &RecurrentState,
    ) -> Result<(f64, RecurrentState)> {
        check_state(&self.core, state)?;
        let mut tape = Tape::new(params);
        let s = tape.leaf(state.flat());
        let out = self.record_step(&mut tape, obs, action, s)?;
        Ok((
            tape.value(out.q)[0],
            RecurrentState::from_flat(tape.value(out.state)),
        ))
    }

    /// Runs over `(o, a)` pairs from the zero state. No gradients.
    pub fn scan<'a, I>(&self, params: &ParamSet, pairs: I) -> Result<RecurrentState>
    where
        I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
    {
        self.scan_from(params, self.zero_state(), pairs)
    }

    pub fn scan_from<'a, I>(
        &self,
        params: &ParamSet,
        mut state: RecurrentState,
        pairs: I,
    ) -> Result<RecurrentState>
    where
        I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
    {
        for (o, a) in pairs {
            state = self.step(params, o, a, &state)?.1;
        }
        Ok(state)
    }
}

/// Fresh target copy of a behavioural parameter set.
pub fn clone_target(params: &ParamSet) -> ParamSet {
    params.clone()
}

/// Everything needed to resume or evaluate a run.
///
/// Byte layout (little-endian):
///
/// ```text
/// magic    8 bytes "RDPGCKPT"
/// version  u32 = 1
/// episode  u64           episodes completed
/// actor, critic, actor_target, critic_target   4 x parameter-set container
/// actor_adam, critic_adam                      2 x (t u64, alpha/beta1/beta2/eps f64,
///                                                   m container, v container)
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub episode: u64,
    pub actor: ParamSet,
    pub critic: ParamSet,
    pub actor_target: ParamSet,
    pub critic_target: ParamSet,
    pub actor_adam: Adam,
    pub critic_adam: Adam,
}

const CKPT_MAGIC: &[u8; 8] = b"RDPGCKPT";
const CKPT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        codec::write_magic(w, CKPT_MAGIC, CKPT_VERSION)?;
        codec::write_u64(w, self.episode)?;
        self.actor.write_to(w)?;
        self.critic.write_to(w)?;
        self.actor_target.write_to(w)?;
        self.critic_target.write_to(w)?;
        self.actor_adam.write_to(w)?;
        self.critic_adam.write_to(w)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        codec::read_magic(r, CKPT_MAGIC, "checkpoint", CKPT_VERSION)?;
        let episode = codec::read_u64(r)?;
        let ck = Checkpoint {
            episode,
            actor: ParamSet::read_from(r)?,
            critic: ParamSet::read_from(r)?,
            actor_target: ParamSet::read_from(r)?,
            critic_target: ParamSet::read_from(r)?,
            actor_adam: Adam::read_from(r)?,
            critic_adam: Adam::read_from(r)?,
        };
        ck.actor.check_compatible(&ck.actor_target)?;
        ck.critic.check_compatible(&ck.critic_target)?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Widths recorded in the actor parameters.
    pub fn net_config(&self) -> Result<NetConfig> {
        NetConfig::from_meta(self.actor.meta())
    }
}

/// Behavioural and target networks with their optimizers.
#[derive(Clone, Debug)]
pub struct Agent {
    pub actor: ActorNet,
    pub critic: CriticNet,
    pub actor_params: ParamSet,
    pub critic_params: ParamSet,
    pub actor_target: ParamSet,
    pub critic_target: ParamSet,
    pub actor_adam: Adam,
    pub critic_adam: Adam,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        cfg: &NetConfig,
        actor_lr: f64,
        critic_lr: f64,
        rng: &mut R,
        seed: u64,
    ) -> Result<Self> {
        let actor = ActorNet::new(cfg)?;
        let critic = CriticNet::new(cfg)?;
        let actor_params = actor.init_params(rng, seed);
        let critic_params = critic.init_params(rng, seed);
        Ok(Agent {
            actor_target: clone_target(&actor_params),
            critic_target: clone_target(&critic_params),
            actor_adam: Adam::new(&actor_params, AdamConfig::with_lr(actor_lr)),
            critic_adam: Adam::new(&critic_params, AdamConfig::with_lr(critic_lr)),
            actor,
            critic,
            actor_params,
            critic_params,
        })
    }

    pub fn checkpoint(&self, episode: u64) -> Checkpoint {
        Checkpoint {
            episode,
            actor: self.actor_params.clone(),
            critic: self.critic_params.clone(),
            actor_target: self.actor_target.clone(),
            critic_target: self.critic_target.clone(),
            actor_adam: self.actor_adam.clone(),
            critic_adam: self.critic_adam.clone(),
        }
    }

    /// Rebuilds an agent from a checkpoint, checking every parameter set
    /// against the layout implied by `cfg`.
    pub fn from_checkpoint(cfg: &NetConfig, ck: Checkpoint) -> Result<Self> {
        let actor = ActorNet::new(cfg)?;
        let critic = CriticNet::new(cfg)?;
        actor.check_params(&ck.actor)?;
        actor.check_params(&ck.actor_target)?;
        critic.check_params(&ck.critic)?;
        critic.check_params(&ck.critic_target)?;
        ck.actor.check_compatible(ck.actor_adam.moments())?;
        ck.critic.check_compatible(ck.critic_adam.moments())?;
        Ok(Agent {
            actor,
            critic,
            actor_params: ck.actor,
            critic_params: ck.critic,
            actor_target: ck.actor_target,
            critic_target: ck.critic_target,
            actor_adam: ck.actor_adam,
            critic_adam: ck.critic_adam,
        })
    }
}
