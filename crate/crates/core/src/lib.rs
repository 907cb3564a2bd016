//! Recurrent deterministic policy gradient for partially observable
//! continuous control.
//!
//! The crate is organised bottom-up:
//!
//! * [`diffcore`]: arrays, parameter sets, a reverse-mode tape over dense,
//!   conv+max-pool and LSTM layers, ADAM and soft target updates.
//! * [`networks`]: the recurrent actor and critic, trajectory scanning and
//!   checkpoints.
//! * [`replay`]: the episodic replay buffer with slice sampling and teacher
//!   episode injection.
//! * [`tdlearn`]: tail-step bootstrapped, λ-weighted multi-step TD for the
//!   critic and the truncated deterministic policy gradient for the actor.
//! * [`explore`]: Ornstein-Uhlenbeck action noise and parameter-space noise.
//! * [`env`]: a 2-D corridor with slopes, stairs, gaps and hurdles sensed
//!   through a short-range rangefinder fan.
//! * [`harness`]: configuration, the training loop, evaluation, teacher
//!   recording and metrics.

pub mod diffcore;
pub mod env;
pub mod explore;
pub mod harness;
pub mod networks;
pub mod replay;
pub mod tdlearn;

mod codec;
mod error;

pub use diffcore::{Array, ParamSet};
pub use error::{Error, Result};
