//! Physics-conditioned waypoint policy for multi-vehicle closed-loop driving.
//!
//! The crate is organised bottom-up:
//!
//! - [`vehicle`]: vehicle physical properties, normalization, sampling and
//!   the powertrain + kinematic bicycle model.
//! - [`sim`]: deterministic 2D world with routes, signals, stop signs and
//!   scripted actors, the frozen privileged scene tokenizer, the rule-based
//!   expert and the fixed PID tracker.
//! - [`data`]: episode recording and the versioned dataset format.
//! - [`policy`]: the physics encoder, cross-attention fusion stack and GRU
//!   waypoint decoder with hand-written gradients, plus training.
//! - [`eval`]: route completion / infraction / driving score and
//!   closed-loop benchmarks.

pub mod data;
pub mod error;
pub mod eval;
pub mod geom;
pub mod policy;
pub mod sim;
pub mod vehicle;

pub use error::{Error, Result};
