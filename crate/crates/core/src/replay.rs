//! Episodic replay buffer.
//!
//! Transitions are stored grouped by episode. A minibatch is built in two
//! stages: pick an episode (native episodes weigh 1, injected teacher
//! episodes weigh the current anneal factor), then pick a window start
//! uniformly among the positions where a full `l`-step window fits. Each
//! slice also carries up to `s` preceding transitions for scanning the
//! recurrent state, and the observation that follows the window.
//!
//! Injected episodes live in their own FIFO with a separate capacity, so
//! injection never evicts native experience.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::codec;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub o: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub o_next: Vec<f64>,
    /// True terminal (collision or goal). Episodes cut short by the time
    /// limit end without a `done` transition.
    pub done: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Native,
    Injected,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub transitions: Vec<Transition>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Valid window starts for an episode of length `len`: `0..=len - l`, or
/// empty when the episode is shorter than `l`.
pub fn window_starts(len: usize, l: usize) -> Range<usize> {
    if l == 0 || len < l {
        0..0
    } else {
        0..len - l + 1
    }
}

/// One sampled subtrajectory.
#[derive(Clone, Debug)]
pub struct Slice {
    /// Up to `s` transitions immediately preceding the window.
    pub prefix: Vec<Transition>,
    /// Exactly `l` transitions.
    pub window: Vec<Transition>,
    /// `o_next` of the last window transition.
    pub tail_obs: Vec<f64>,
    pub done_at_tail: bool,
    pub origin: Origin,
    pub episode: usize,
    pub start: usize,
}

#[derive(Clone, Debug)]
pub struct SliceBatch {
    pub slices: Vec<Slice>,
    pub l: usize,
}

impl SliceBatch {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub injected_capacity: usize,
    /// Episodes over which the injected sampling weight halves.
    pub anneal_half_life: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            capacity: 300,
            injected_capacity: 200,
            anneal_half_life: 500.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeStore {
    cfg: ReplayConfig,
    obs_dim: usize,
    act_dim: usize,
    native: VecDeque<Episode>,
    injected: VecDeque<Episode>,
    open: Vec<Transition>,
    awaiting_end: bool,
    anneal: f64,
}

impl EpisodeStore {
    pub fn new(cfg: ReplayConfig, obs_dim: usize, act_dim: usize) -> Result<Self> {
        if cfg.capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        if !(cfg.anneal_half_life > 0.0) {
            return Err(Error::config("anneal half-life must be positive"));
        }
        Ok(EpisodeStore {
            cfg,
            obs_dim,
            act_dim,
            native: VecDeque::new(),
            injected: VecDeque::new(),
            open: Vec::new(),
            awaiting_end: false,
            anneal: 1.0,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.cfg
    }

    fn check_dims(&self, t: &Transition) -> Result<()> {
        if t.o.len() != self.obs_dim || t.o_next.len() != self.obs_dim || t.a.len() != self.act_dim
        {
            return Err(Error::config(format!(
                "transition dims o={} a={} o'={} do not match buffer dims o={} a={}",
                t.o.len(),
                t.a.len(),
                t.o_next.len(),
                self.obs_dim,
                self.act_dim
            )));
        }
        Ok(())
    }

    /// Appends to the open episode. A `done` transition closes it; the next
    /// push must be preceded by [`end_episode`](Self::end_episode).
    pub fn push(&mut self, t: Transition) -> Result<()> {
        if self.awaiting_end {
            return Err(Error::usage(
                "push after a terminal transition without end_episode",
            ));
        }
        self.check_dims(&t)?;
        let done = t.done;
        self.open.push(t);
        if done {
            self.commit();
            self.awaiting_end = true;
        }
        Ok(())
    }

    /// Closes the open episode (a no-op after a terminal transition).
    pub fn end_episode(&mut self) {
        if !self.open.is_empty() {
            self.commit();
        }
        self.awaiting_end = false;
    }

    fn commit(&mut self) {
        let transitions = std::mem::take(&mut self.open);
        self.native.push_back(Episode { transitions });
        while self.native.len() > self.cfg.capacity {
            self.native.pop_front();
        }
    }

    /// Adds teacher episodes. All episodes are validated before any is
    /// stored.
    pub fn inject(&mut self, episodes: Vec<Episode>) -> Result<()> {
        for (i, ep) in episodes.iter().enumerate() {
            for t in &ep.transitions {
                self.check_dims(t)
                    .map_err(|e| Error::config(format!("injected episode {i}: {e}")))?;
            }
            if let Some(pos) = ep.transitions.iter().position(|t| t.done) {
                if pos + 1 != ep.len() {
                    return Err(Error::config(format!(
                        "injected episode {i}: terminal transition at {pos} of {}",
                        ep.len()
                    )));
                }
            }
        }
        for ep in episodes {
            self.injected.push_back(ep);
            while self.injected.len() > self.cfg.injected_capacity {
                self.injected.pop_front();
            }
        }
        Ok(())
    }

    /// Sets and returns the injected sampling weight for `episode_index`:
    /// `0.5^(episode_index / half_life)`.
    pub fn set_anneal(&mut self, episode_index: u64) -> f64 {
        self.anneal = anneal_factor(episode_index, self.cfg.anneal_half_life);
        self.anneal
    }

    /// Overrides the anneal factor directly (clamped to `[0, 1]`).
    pub fn set_anneal_factor(&mut self, factor: f64) {
        self.anneal = factor.clamp(0.0, 1.0);
    }

    pub fn anneal(&self) -> f64 {
        self.anneal
    }

    pub fn native_len(&self) -> usize {
        self.native.len()
    }

    pub fn injected_len(&self) -> usize {
        self.injected.len()
    }

    pub fn native_episodes(&self) -> impl Iterator<Item = &Episode> {
        self.native.iter()
    }

    pub fn injected_episodes(&self) -> impl Iterator<Item = &Episode> {
        self.injected.iter()
    }

    pub fn transitions(&self) -> usize {
        self.native.iter().chain(&self.injected).map(Episode::len).sum()
    }

    fn eligible(&self, l: usize) -> (Vec<(Origin, usize)>, Vec<f64>) {
        let mut ids = Vec::new();
        let mut weights = Vec::new();
        for (i, ep) in self.native.iter().enumerate() {
            if ep.len() >= l {
                ids.push((Origin::Native, i));
                weights.push(1.0);
            }
        }
        if self.anneal > 0.0 {
            for (i, ep) in self.injected.iter().enumerate() {
                if ep.len() >= l {
                    ids.push((Origin::Injected, i));
                    weights.push(self.anneal);
                }
            }
        }
        (ids, weights)
    }

    /// True when at least one episode can host an `l`-step window.
    pub fn ready(&self, l: usize) -> bool {
        !self.eligible(l).0.is_empty()
    }

    /// Samples `n` slices with windows of length `l` and scan prefixes of
    /// up to `s` steps.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        n: usize,
        s: usize,
        l: usize,
        rng: &mut R,
    ) -> Result<SliceBatch> {
        if l == 0 || n == 0 {
            return Err(Error::config("batch size and window length must be positive"));
        }
        let (ids, weights) = self.eligible(l);
        if ids.is_empty() {
            return Err(Error::NotReady(format!("no episode with at least {l} transitions")));
        }
        let dist = WeightedIndex::new(&weights).expect("weights are positive");
        let mut slices = Vec::with_capacity(n);
        for _ in 0..n {
            let (origin, idx) = ids[dist.sample(rng)];
            let ep = match origin {
                Origin::Native => &self.native[idx],
                Origin::Injected => &self.injected[idx],
            };
            let start = rng.random_range(window_starts(ep.len(), l));
            slices.push(make_slice(ep, origin, idx, start, s, l));
        }
        Ok(SliceBatch { slices, l })
    }
}

/// Cuts the slice starting at `start` out of `ep`.
pub fn make_slice(
    ep: &Episode,
    origin: Origin,
    episode: usize,
    start: usize,
    s: usize,
    l: usize,
) -> Slice {
    let scan = s.min(start);
    let window = ep.transitions[start..start + l].to_vec();
    let last = window.last().expect("l > 0");
    Slice {
        prefix: ep.transitions[start - scan..start].to_vec(),
        tail_obs: last.o_next.clone(),
        done_at_tail: last.done,
        window,
        origin,
        episode,
        start,
    }
}

pub fn anneal_factor(episode_index: u64, half_life: f64) -> f64 {
    0.5f64.powf(episode_index as f64 / half_life)
}

const TRAJ_MAGIC: &[u8; 8] = b"RDPGTRAJ";
const TRAJ_VERSION: u32 = 1;

/// Teacher trajectory container.
///
/// Byte layout (little-endian):
///
/// ```text
/// magic     8 bytes "RDPGTRAJ"
/// version   u32 = 1
/// obs_dim   u32
/// act_dim   u32
/// episodes  u64
///   steps   u64
///     o       f64 * obs_dim
///     a       f64 * act_dim
///     r       f64
///     o_next  f64 * obs_dim
///     done    u8 (0 or 1)
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherFile {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub episodes: Vec<Episode>,
}

impl TeacherFile {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        codec::write_magic(w, TRAJ_MAGIC, TRAJ_VERSION)?;
        codec::write_u32(w, self.obs_dim as u32)?;
        codec::write_u32(w, self.act_dim as u32)?;
        codec::write_u64(w, self.episodes.len() as u64)?;
        for ep in &self.episodes {
            codec::write_u64(w, ep.len() as u64)?;
            for t in &ep.transitions {
                if t.o.len() != self.obs_dim
                    || t.o_next.len() != self.obs_dim
                    || t.a.len() != self.act_dim
                {
                    return Err(Error::config("teacher transition dims do not match header"));
                }
                codec::write_f64s(w, &t.o)?;
                codec::write_f64s(w, &t.a)?;
                codec::write_f64(w, t.r)?;
                codec::write_f64s(w, &t.o_next)?;
                codec::write_u8(w, t.done as u8)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        const WHAT: &str = "teacher file";
        codec::read_magic(r, TRAJ_MAGIC, WHAT, TRAJ_VERSION)?;
        let obs_dim = codec::read_u32(r)? as usize;
        let act_dim = codec::read_u32(r)? as usize;
        let n = codec::read_u64(r)?;
        let mut episodes = Vec::new();
        for _ in 0..n {
            let steps = codec::read_u64(r)?;
            let mut transitions = Vec::new();
            for _ in 0..steps {
                let o = codec::read_f64s(r, obs_dim)?;
                let a = codec::read_f64s(r, act_dim)?;
                let rew = codec::read_f64(r)?;
                let o_next = codec::read_f64s(r, obs_dim)?;
                let done = match codec::read_u8(r)? {
                    0 => false,
                    1 => true,
                    b => return Err(Error::format(WHAT, format!("bad done flag {b}"))),
                };
                transitions.push(Transition {
                    o,
                    a,
                    r: rew,
                    o_next,
                    done,
                });
            }
            episodes.push(Episode { transitions });
        }
        Ok(TeacherFile {
            obs_dim,
            act_dim,
            episodes,
        })
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
}
