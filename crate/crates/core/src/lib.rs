//! Diffusion samplers trained by reweighted score matching, plus the two
//! online-RL algorithms built on top of them.
//!
//! The crate is organised around the training pipeline:
//!
//! - [`diffusion`] — noise schedules, the forward perturbation kernel, the
//!   reverse (denoising) sampler and the reverse-sampling distribution.
//! - [`net`] — small MLP score/value networks with hand-written backprop and
//!   an Adam optimizer, generic over `f32`/`f64`.
//! - [`losses`] — denoising score matching and its reweighted variants
//!   (mirror-descent weights, softmax weights, energy weights).
//! - [`boltzmann`] — toy Boltzmann-sampling suite: analytic energy targets,
//!   training drivers, a Langevin baseline and evaluation metrics.
//! - [`env`] — small analytic control environments (bandit, point mass,
//!   pendulum swing-up).
//! - [`rl`] — replay buffer, twin critics, the diffusion behaviour policy and
//!   Bellman losses.
//! - [`algo`] — the DPMD and SDAC training loops with checkpointing.
//! - [`report`] — run manifests, metrics emission and logging.

pub mod algo;
pub mod boltzmann;
pub mod diffusion;
pub mod env;
pub mod error;
pub mod losses;
pub mod net;
pub mod real;
pub mod report;
pub mod rl;

pub use error::Error;
pub use real::Real;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
