//! Fusion-based semantic image transmission over a two-user degraded
//! broadcast channel.
//!
//! The toolkit trains a CSI-aware joint source-channel codec that encodes two
//! images, fuses the semantic features into one power-normalized complex
//! latent, broadcasts it over an AWGN degraded broadcast channel, and lets
//! each user de-fuse and decode its own image with its own channel state
//! information. Time-division, power-allocation, and superposition/SIC
//! baselines are included for comparison sweeps.

pub mod baselines;
pub mod channel;
pub mod datahub;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod jscc;
pub mod nn;
pub mod objective;
pub mod pipeline;
pub mod rng;
pub mod similarity;

pub use error::{Error, Result};
