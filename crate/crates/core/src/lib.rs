//! Simulation laboratory for signal-exploitation attacks on OFDM and
//! NC-OFDM links.
//!
//! An exploiter overhears a multicarrier transmission, infers its subcarrier
//! width and band allocation, and injects its own data using the
//! reconstructed waveform. This crate provides the waveform model, the
//! allocation families, cyclostationary analysis, a dense neural-network
//! engine, the exploiter heads, datasets and the BER evaluation that closes
//! the loop.

pub mod alloc;
pub mod attack;
pub mod caf;
pub mod channel;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod exploiter;
pub mod nn;
pub mod rng;
pub mod signal;

pub use error::{Error, Result};
