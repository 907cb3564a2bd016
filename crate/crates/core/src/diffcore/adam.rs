use std::io::{Read, Write};

use super::array::Array;
use super::params::ParamSet;
use crate::codec;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(alpha: f64) -> Self {
        AdamConfig {
            alpha,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for a single array.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Array,
    pub v: Array,
    pub t: u64,
    pub cfg: AdamConfig,
}

impl AdamState {
    pub fn new(shape: &[usize], cfg: AdamConfig) -> Self {
        AdamState {
            m: Array::zeros(shape),
            v: Array::zeros(shape),
            t: 0,
            cfg,
        }
    }
}

/// Bias-corrected ADAM update of one array. Leaves `p` and `s` untouched
/// when the gradient is not finite or shapes disagree.
pub fn adam_step(p: &mut Array, g: &Array, s: &mut AdamState) -> Result<()> {
    if p.shape() != g.shape() || s.m.shape() != p.shape() || s.v.shape() != p.shape() {
        return Err(Error::config(format!(
            "adam: shapes differ (param {:?}, grad {:?}, moments {:?})",
            p.shape(),
            g.shape(),
            s.m.shape()
        )));
    }
    if !g.is_finite() {
        return Err(Error::non_finite("adam gradient", describe_non_finite(g)));
    }
    apply(p.data_mut(), g.data(), s.m.data_mut(), s.v.data_mut(), s.t + 1, &s.cfg);
    s.t += 1;
    Ok(())
}

fn apply(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &AdamConfig) {
    let bc1 = 1.0 - cfg.beta1.powf(t as f64);
    let bc2 = 1.0 - cfg.beta2.powf(t as f64);
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= cfg.alpha * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

fn describe_non_finite(g: &Array) -> String {
    let bad = g.data().iter().filter(|v| !v.is_finite()).count();
    format!("{bad} of {} entries", g.len())
}

/// ADAM over every array of a [`ParamSet`], with one shared step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: ParamSet,
    v: ParamSet,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamSet, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// First-moment estimates, shaped like the parameters.
    pub fn moments(&self) -> &ParamSet {
        &self.m
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Descends along `grads`. All-or-nothing: a non-finite gradient or a
    /// shape mismatch leaves both the parameters and the moments unchanged.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        params.check_compatible(grads)?;
        params.check_compatible(&self.m)?;
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::non_finite(
                "adam gradient",
                format!("parameter {name:?}"),
            ));
        }
        let t = self.t + 1;
        for (((p, g), m), v) in params
            .arrays_mut()
            .zip(grads.arrays())
            .zip(self.m.arrays_mut())
            .zip(self.v.arrays_mut())
        {
            apply(p.data_mut(), g.data(), m.data_mut(), v.data_mut(), t, &self.cfg);
        }
        self.t = t;
        Ok(())
    }

    pub(crate) fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        codec::write_u64(w, self.t)?;
        for x in [self.cfg.alpha, self.cfg.beta1, self.cfg.beta2, self.cfg.eps] {
            codec::write_f64(w, x)?;
        }
        self.m.write_to(w)?;
        self.v.write_to(w)
    }

    pub(crate) fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let t = codec::read_u64(r)?;
        let cfg = AdamConfig {
            alpha: codec::read_f64(r)?,
            beta1: codec::read_f64(r)?,
            beta2: codec::read_f64(r)?,
            eps: codec::read_f64(r)?,
        };
        let m = ParamSet::read_from(r)?;
        let v = ParamSet::read_from(r)?;
        m.check_compatible(&v)?;
        Ok(Adam { cfg, m, v, t })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_first_step_is_identity() {
        let mut p = Array::vector(vec![1.5, -2.0]);
        let mut s = AdamState::new(&[2], AdamConfig::default());
        adam_step(&mut p, &Array::zeros(&[2]), &mut s).unwrap();
        assert_eq!(p.data(), &[1.5, -2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_matches_hand_substitution() {
        let mut p = Array::scalar(0.0);
        let mut s = AdamState::new(&[1], AdamConfig::with_lr(0.1));
        adam_step(&mut p, &Array::scalar(1.0), &mut s).unwrap();
        // m_hat = 1, v_hat = 1
        let expected = -0.1 * (1.0 / (1.0 + 1e-8));
        assert!((p.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_steps_approach_alpha() {
        for scale in [1e-3, 1.0, 250.0] {
            let mut p = Array::scalar(0.0);
            let mut s = AdamState::new(&[1], AdamConfig::with_lr(0.01));
            let g = Array::scalar(scale);
            let mut last = 0.0;
            for _ in 0..5000 {
                let before = p.data()[0];
                adam_step(&mut p, &g, &mut s).unwrap();
                last = before - p.data()[0];
            }
            assert!((last - 0.01).abs() < 1e-6, "scale {scale}: step {last}");
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let mut p = Array::vector(vec![1.0, 2.0]);
        let mut s = AdamState::new(&[2], AdamConfig::default());
        let err = adam_step(&mut p, &Array::vector(vec![0.1, f64::NAN]), &mut s);
        assert!(matches!(err, Err(Error::NonFinite { .. })));
        assert_eq!(p.data(), &[1.0, 2.0]);
        assert_eq!(s.t, 0);
        assert_eq!(s.m.data(), &[0.0, 0.0]);
    }

    #[test]
    fn set_optimizer_is_transactional() {
        let mut params = ParamSet::new();
        params.insert("a", Array::vector(vec![1.0])).unwrap();
        params.insert("b", Array::vector(vec![2.0])).unwrap();
        let mut opt = Adam::new(&params, AdamConfig::default());
        let mut g = params.zeros_like();
        g.by_name_mut("a").unwrap().data_mut()[0] = 1.0;
        g.by_name_mut("b").unwrap().data_mut()[0] = f64::INFINITY;
        let before = (params.clone(), opt.clone());
        assert!(opt.step(&mut params, &g).is_err());
        assert_eq!((params, opt), before);
    }
}
