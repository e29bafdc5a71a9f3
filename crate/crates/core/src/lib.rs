//! Simulator and verifier for a deterministic polarization-entanglement
//! purification protocol: polarization Bell pairs are encoded into time-bin
//! degrees of freedom, sent through noisy channels, and recovered with unit
//! probability by a passive linear-optical purifier plus a heralded phase
//! correction.

pub mod channels;
pub mod cli;
pub mod error;
pub mod optics;
pub mod oracle;
pub mod protocol;
pub mod state;

pub use error::{Error, Result};
