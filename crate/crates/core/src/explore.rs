//! Exploration noise: Ornstein-Uhlenbeck action noise and parameter-space
//! noise on the actor.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuConfig {
    pub theta: f64,
    pub sigma: f64,
    pub mu: f64,
    pub dt: f64,
}

impl Default for OuConfig {
    fn default() -> Self {
        OuConfig {
            theta: 0.15,
            sigma: 0.2,
            mu: 0.0,
            dt: 0.02,
        }
    }
}

/// Discrete OU process `x <- x + theta (mu - x) dt + sigma sqrt(dt) N(0, I)`.
#[derive(Clone, Debug)]
pub struct OuProcess {
    pub x: Vec<f64>,
    pub cfg: OuConfig,
}

impl OuProcess {
    pub fn new(dim: usize, cfg: OuConfig) -> Self {
        OuProcess {
            x: vec![cfg.mu; dim],
            cfg,
        }
    }

    pub fn reset(&mut self) {
        let mu = self.cfg.mu;
        self.x.iter_mut().for_each(|v| *v = mu);
    }

    /// Stationary variance of the discrete recurrence,
    /// `sigma^2 dt / (1 - (1 - theta dt)^2)`.
    pub fn stationary_variance(&self) -> f64 {
        let c = &self.cfg;
        let k = 1.0 - c.theta * c.dt;
        c.sigma * c.sigma * c.dt / (1.0 - k * k)
    }
}

pub fn ou_step<R: Rng + ?Sized>(p: &mut OuProcess, rng: &mut R) -> Vec<f64> {
    let OuConfig { theta, sigma, mu, dt } = p.cfg;
    let scale = sigma * dt.sqrt();
    for x in p.x.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *x += theta * (mu - *x) * dt + scale * z;
    }
    p.x.clone()
}

/// Adds noise to an action and clips the result to `[-1, 1]`.
pub fn noisy_action(action: &[f64], noise: &[f64]) -> Vec<f64> {
    action
        .iter()
        .zip(noise)
        .map(|(a, n)| (a + n).clamp(-1.0, 1.0))
        .collect()
}

/// Holds the clean actor parameters while perturbed ones are in use.
#[derive(Clone, Debug, Default)]
pub struct ParamNoiseStash {
    clean: Option<ParamSet>,
    pub sigma_p: f64,
}

impl ParamNoiseStash {
    pub fn new(sigma_p: f64) -> Self {
        ParamNoiseStash {
            clean: None,
            sigma_p,
        }
    }

    pub fn active(&self) -> bool {
        self.clean.is_some()
    }

    pub fn clean(&self) -> Option<&ParamSet> {
        self.clean.as_ref()
    }
}

pub fn apply_param_noise<R: Rng + ?Sized>(
    actor: &mut ParamSet,
    stash: &mut ParamNoiseStash,
    rng: &mut R,
) -> Result<()> {
    if stash.active() {
        return Err(Error::usage("parameter noise is already applied"));
    }
    stash.clean = Some(actor.clone());
    let sigma = stash.sigma_p;
    if sigma == 0.0 {
        return Ok(());
    }
    for a in actor.arrays_mut() {
        for v in a.data_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += sigma * z;
        }
    }
    Ok(())
}

pub fn remove_param_noise(actor: &mut ParamSet, stash: &mut ParamNoiseStash) -> Result<()> {
    match stash.clean.take() {
        Some(clean) => {
            *actor = clean;
            Ok(())
        }
        None => Err(Error::usage("no parameter noise to remove")),
    }
}
