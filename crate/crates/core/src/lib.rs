//! Simulation of quantum key distribution with two-mode coherently
//! correlated (TMCC) laser beams: photon-number statistics, the source,
//! beam-splitting and cloning attacks, key extraction and reconciliation,
//! the public-channel wire protocol, and Bob's eavesdropping detector.

pub mod attacks;
pub mod cli;
pub mod density_ops;
pub mod detection;
pub mod numfmt;
pub mod photon_stats;
pub mod public_channel;
pub mod qkd_protocol;
pub mod tmcc_source;
