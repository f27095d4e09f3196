//! Threshold-based SRAM PUF authentication.
//!
//! The crate is organised bottom-up:
//!
//! * [`response`]: the fixed-length bit vector exchanged between entity and verifier.
//! * [`puf_model`]: simulated SRAM PUF devices and response-quality metrics.
//! * [`hamming`]: Hamming SEC / SECDED helper data (parity-only persistence).
//! * [`stabilizer`]: temporal majority voting over repeated power-up reads.
//! * [`calibration`]: binomial impostor FAR, empirical FRR, `tau_min` / `tau_max`
//!   and the error-constrained security margin.
//! * [`protocol`]: the enrollment / authentication wire protocol, CRP store,
//!   verifier service and entity client.
//! * [`harness`]: seeded experiment sweeps that emit CSV tables.

pub mod calibration;
pub mod error;
pub mod hamming;
pub mod harness;
pub mod protocol;
pub mod puf_model;
pub mod response;
pub mod stabilizer;

mod seed;

pub use error::{Error, Result};
pub use response::Response;
