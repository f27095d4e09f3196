//! Enrollment and authentication between a verifier and a PUF entity.
//!
//! The entity dials the verifier and announces itself with HELLO. For
//! enrollment the verifier issues a challenge window and vote count, the
//! entity majority-votes its PUF over that window, derives helper data
//! locally and returns the stabilized response, which the verifier stores as
//! a CRP record. For authentication the verifier re-issues the stored window
//! with a fresh nonce, the entity majority-votes and corrects with its local
//! helper data, and the verifier accepts iff the Hamming distance to the
//! enrolled response is within the threshold.

pub mod entity;
pub mod store;
pub mod verifier;
pub mod wire;

use serde::{Deserialize, Serialize};

use crate::calibration::threshold_bits;
use crate::error::{Error, Result};
use crate::hamming::{HammingVariant, OutcomeCounts};
use crate::response::Response;

pub use entity::{Entity, HelperStore, PufSource, ReplayPuf, SimulatedPuf};
pub use store::CrpStore;
pub use verifier::{ServerHandle, Verifier, VerifierConfig, VerifierServer};
pub use wire::{Challenge, ErrorCode, Intent, Message, Nonce};

/// Where helper data lives and error correction runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EcSite {
    #[default]
    Entity,
    /// The verifier derives parity from the enrolled response and corrects
    /// the raw stabilized response it receives.
    Verifier,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrpRecord {
    pub device_id: String,
    pub challenge: Challenge,
    pub enrolled_response: Response,
    pub variant: Option<HammingVariant>,
    #[serde(default)]
    pub ec_site: EcSite,
    pub mv_count: u8,
    /// Unix time in seconds.
    pub enrolled_at: u64,
}

impl CrpRecord {
    pub fn validate(&self) -> Result<()> {
        if self.enrolled_response.len() != self.challenge.length as usize {
            return Err(Error::LengthMismatch {
                expected: self.challenge.length as usize,
                actual: self.enrolled_response.len(),
            });
        }
        if self.mv_count == 0 {
            return Err(Error::invalid("record with zero votes"));
        }
        Ok(())
    }

    /// Store key: one active record per device and challenge window.
    pub fn key(&self) -> (String, u32, u32) {
        (self.device_id.clone(), self.challenge.offset, self.challenge.length)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdSource {
    Manual,
    Calibrated { tau_min: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub tau_ber: f64,
    pub source: ThresholdSource,
}

impl ThresholdPolicy {
    pub fn manual(tau_ber: f64) -> Result<Self> {
        Self::check(tau_ber)?;
        Ok(ThresholdPolicy {
            tau_ber,
            source: ThresholdSource::Manual,
        })
    }

    /// Threshold placed at the reliability boundary.
    pub fn calibrated(tau_min: f64) -> Result<Self> {
        Self::check(tau_min)?;
        Ok(ThresholdPolicy {
            tau_ber: tau_min,
            source: ThresholdSource::Calibrated { tau_min },
        })
    }

    fn check(tau: f64) -> Result<()> {
        if (0.0..=1.0).contains(&tau) {
            Ok(())
        } else {
            Err(Error::invalid(format!("tau_ber must be in [0,1], got {tau}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthDecision {
    pub accepted: bool,
    pub measured_ber: f64,
    pub tau_used: f64,
    pub hd_bits: usize,
    pub n_bits: usize,
    pub threshold_bits: usize,
    /// Present when the verifier ran error correction itself.
    pub decode: Option<OutcomeCounts>,
}

/// Accepts iff `hd <= floor(tau * n + 1e-9)`; the comparison is done on
/// integer bit counts.
pub fn decide(enrolled: &Response, received: &Response, policy: &ThresholdPolicy) -> Result<AuthDecision> {
    let hd = enrolled.hamming_distance(received)?;
    let n = enrolled.len();
    if n == 0 {
        return Err(Error::Empty("enrolled response"));
    }
    let k = threshold_bits(policy.tau_ber, n);
    Ok(AuthDecision {
        accepted: hd <= k,
        measured_ber: hd as f64 / n as f64,
        tau_used: policy.tau_ber,
        hd_bits: hd,
        n_bits: n,
        threshold_bits: k,
        decode: None,
    })
}

pub(crate) fn unix_now() -> std::time::Duration {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_response_is_accepted_at_zero() {
        let x: Response = "1011001".parse().unwrap();
        let d = decide(&x, &x, &ThresholdPolicy::manual(0.0).unwrap()).unwrap();
        assert!(d.accepted);
        assert_eq!(d.measured_ber, 0.0);
    }

    #[test]
    fn boundary_is_inclusive_on_the_grid() {
        let a = Response::zeros(100);
        let mut b = a.clone();
        for i in 0..29 {
            b.flip(i);
        }
        // 0.29 * 100 is 28.999999999999996 in binary floating point
        assert!(decide(&a, &b, &ThresholdPolicy::manual(0.29).unwrap()).unwrap().accepted);
        b.flip(50);
        assert!(!decide(&a, &b, &ThresholdPolicy::manual(0.29).unwrap()).unwrap().accepted);
    }

    #[test]
    fn policy_range() {
        assert!(ThresholdPolicy::manual(1.2).is_err());
        assert!(ThresholdPolicy::calibrated(-0.1).is_err());
        let p = ThresholdPolicy::calibrated(0.02).unwrap();
        assert_eq!(p.tau_ber, 0.02);
    }

    proptest! {
        #[test]
        fn accepted_iff_ber_within_tau(hd in 0usize..=256, k in 0usize..=256) {
            let n = 256;
            let a = Response::zeros(n);
            let mut b = a.clone();
            (0..hd).for_each(|i| b.flip(i));
            let tau = k as f64 / n as f64;
            let d = decide(&a, &b, &ThresholdPolicy::manual(tau).unwrap()).unwrap();
            prop_assert_eq!(d.accepted, hd <= k);
            prop_assert_eq!(d.accepted, d.measured_ber <= d.tau_used);
        }
    }
}
