//! Continual reinforcement learning with group-symmetric policies.
//!
//! Policies are actor-critics built from D2-equivariant layers. A controller
//! groups incoming episodes by the 1-Wasserstein distance between invariant
//! features of their first frames and keeps one policy per detected group.

pub mod assignment;
pub mod diff;
pub mod env;
pub mod equivariant;
pub mod error;
pub mod group;
pub mod harness;
pub mod policy;
pub mod ppo;
pub mod rollout;
pub mod transport;

pub use error::{Error, Result};
