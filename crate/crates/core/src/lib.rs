//! AES-128 side-channel workbench.
//!
//! Synthesizes power traces from AES encryptions under a Hamming-weight or
//! Hamming-distance leakage model, optionally protected by randomized
//! swapping among functionally identical implementation variants, stores
//! them in a compact binary container, and recovers the key with streaming
//! correlation power analysis.

pub mod aes;
pub mod bank;
pub mod campaign;
pub mod cpa;
pub mod error;
pub mod eval;
pub mod leakage;
pub mod metrics;
pub mod seed;
pub mod store;

pub use aes::{Block128, Key128, OpKind};
pub use error::{Error, Result};
