//! Shared autonomy learned from repeated human-robot interaction.
//!
//! The robot watches (state, human command) pairs, embeds them into a latent
//! task, imitates what it has seen for that task, and hands control back when
//! the behavior looks unfamiliar. Alongside the learner this crate carries the
//! closed-form stability bounds for Gaussian operators, a kinematic
//! simulator, and comparison assistants.

pub mod baselines;
pub mod error;
pub mod neural;
pub mod sari;
pub mod sim;
pub mod theory;
pub mod types;

pub use error::{Error, Result};
