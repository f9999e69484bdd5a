//! Entanglement-based (BBM92) quantum key distribution: a photon-detection
//! simulator and the full classical post-processing chain, run as a
//! two-party protocol over a framed byte stream.

pub mod analysis;
pub mod coincidence;
pub mod config;
pub mod model;
pub mod netlink;
pub mod privacy;
pub mod reconcile;
pub mod seed;
pub mod sim;
pub mod timetag;

pub use config::{Role, SessionConfig};
