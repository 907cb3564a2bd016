//! Differentiable kernel: arrays, named parameter sets, a reverse-mode tape
//! over dense / conv+pool / LSTM layers, ADAM, soft target updates and a
//! finite-difference gradient oracle.

mod adam;
mod array;
mod fd;
pub mod kernels;
mod params;
mod tape;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use array::Array;
pub use fd::{finite_diff_grad, relative_error};
pub use kernels::Activation;
pub use params::{ParamId, ParamSet};
pub use tape::{backprop, ConvRef, DenseRef, LstmRef, NodeGrads, Tape, Var};

use crate::error::{Error, Result};

/// `target = tau * source + (1 - tau) * target`, elementwise.
pub fn soft_update(target: &mut ParamSet, source: &ParamSet, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::config(format!("soft update rate {tau} outside [0, 1]")));
    }
    target.check_compatible(source)?;
    for (t, s) in target.arrays_mut().zip(source.arrays()) {
        for (a, b) in t.data_mut().iter_mut().zip(s.data()) {
            *a = tau * b + (1.0 - tau) * *a;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("x", Array::vector(vec![v, 2.0 * v])).unwrap();
        p
    }

    #[test]
    fn soft_update_endpoints_and_midpoint() {
        let mut t = one(0.0);
        soft_update(&mut t, &one(1.0), 1.0).unwrap();
        assert_eq!(t, one(1.0));

        let mut t = one(3.0);
        soft_update(&mut t, &one(1.0), 0.0).unwrap();
        assert_eq!(t, one(3.0));

        let mut t = one(0.0);
        soft_update(&mut t, &one(2.0), 0.5).unwrap();
        assert_eq!(t, one(1.0));
    }

    #[test]
    fn soft_update_twice_contracts_quadratically() {
        let tau = 0.3;
        let src = one(5.0);
        let mut t = one(-1.0);
        soft_update(&mut t, &src, tau).unwrap();
        soft_update(&mut t, &src, tau).unwrap();
        let eff = 1.0 - (1.0 - tau) * (1.0 - tau);
        let mut once = one(-1.0);
        soft_update(&mut once, &src, eff).unwrap();
        for (a, b) in t.by_name("x").unwrap().data().iter().zip(once.by_name("x").unwrap().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_update_rejects_mismatch() {
        let mut t = one(0.0);
        let mut other = ParamSet::new();
        other.insert("y", Array::vector(vec![0.0, 0.0])).unwrap();
        assert!(soft_update(&mut t, &other, 0.5).is_err());
        assert!(soft_update(&mut t, &one(1.0), 1.5).is_err());
    }
}
