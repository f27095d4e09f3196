//! Temporal majority voting.
//!
//! Each read is folded into a per-bit counter. After `N` reads, bit `i` is 1
//! iff `2 * counter[i] > N`; an exact tie at even `N` resolves to 0.

use rand::Rng;

use crate::error::{Error, Result};
use crate::puf_model::PufDevice;
use crate::response::Response;

pub const SNAPSHOT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MajorityAccumulator {
    counters: Vec<u8>,
    target_votes: u8,
    votes_seen: u8,
}

impl MajorityAccumulator {
    pub fn new(n: usize, votes: usize) -> Result<Self> {
        let target_votes = u8::try_from(votes)
            .ok()
            .filter(|&v| v >= 1)
            .ok_or_else(|| Error::invalid(format!("vote count must be in 1..=255, got {votes}")))?;
        Ok(MajorityAccumulator {
            counters: vec![0; n],
            target_votes,
            votes_seen: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.counters.len()
    }

    pub fn target_votes(&self) -> usize {
        self.target_votes as usize
    }

    pub fn votes_seen(&self) -> usize {
        self.votes_seen as usize
    }

    pub fn counters(&self) -> &[u8] {
        &self.counters
    }

    pub fn is_complete(&self) -> bool {
        self.votes_seen == self.target_votes
    }

    pub fn accumulate(&mut self, reading: &Response) -> Result<()> {
        if self.is_complete() {
            return Err(Error::invalid(format!(
                "accumulator already holds all {} votes",
                self.target_votes
            )));
        }
        if reading.len() != self.n() {
            return Err(Error::LengthMismatch {
                expected: self.n(),
                actual: reading.len(),
            });
        }
        for (c, bit) in self.counters.iter_mut().zip(reading.iter()) {
            *c += u8::from(bit);
        }
        self.votes_seen += 1;
        Ok(())
    }

    pub fn finalize(&self) -> Result<Response> {
        if !self.is_complete() {
            return Err(Error::invalid(format!(
                "finalize after {} of {} votes",
                self.votes_seen, self.target_votes
            )));
        }
        let n = u16::from(self.target_votes);
        Ok(Response::from_bits(
            self.counters.iter().map(|&c| 2 * u16::from(c) > n),
        ))
    }

    /// Snapshot layout: version, `u32` big-endian n, N, votes_seen, n counter bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + self.counters.len());
        out.push(SNAPSHOT_VERSION);
        out.extend_from_slice(&(self.counters.len() as u32).to_be_bytes());
        out.push(self.target_votes);
        out.push(self.votes_seen);
        out.extend_from_slice(&self.counters);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 7 {
            return Err(Error::format("accumulator snapshot shorter than header"));
        }
        if bytes[0] != SNAPSHOT_VERSION {
            return Err(Error::format(format!("unsupported snapshot version {}", bytes[0])));
        }
        let n = u32::from_be_bytes(bytes[1..5].try_into().unwrap()) as usize;
        let (target_votes, votes_seen) = (bytes[5], bytes[6]);
        let counters = &bytes[7..];
        if counters.len() != n {
            return Err(Error::format(format!(
                "snapshot declares {n} counters but carries {}",
                counters.len()
            )));
        }
        if target_votes == 0 || votes_seen > target_votes || counters.iter().any(|&c| c > votes_seen) {
            return Err(Error::format("inconsistent accumulator snapshot"));
        }
        Ok(MajorityAccumulator {
            counters: counters.to_vec(),
            target_votes,
            votes_seen,
        })
    }
}

/// Majority vote over `votes` fresh reads produced by `read`.
pub fn majority_of<F>(n: usize, votes: usize, mut read: F) -> Result<Response>
where
    F: FnMut() -> Result<Response>,
{
    let mut acc = MajorityAccumulator::new(n, votes)?;
    for _ in 0..votes {
        acc.accumulate(&read()?)?;
    }
    acc.finalize()
}

pub fn stabilized_read<R: Rng + ?Sized>(device: &PufDevice, votes: usize, rng: &mut R) -> Result<Response> {
    if votes == 0 {
        return Err(Error::invalid("vote count must be at least 1"));
    }
    majority_of(device.n_cells(), votes, || Ok(device.sample_response(rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puf_model::{generate_device, DeviceParams, NoiseProfile};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn r(s: &str) -> Response {
        s.parse().unwrap()
    }

    #[test]
    fn counting_and_strict_majority() {
        let mut acc = MajorityAccumulator::new(3, 3).unwrap();
        for s in ["111", "110", "100"] {
            acc.accumulate(&r(s)).unwrap();
        }
        assert_eq!(acc.counters(), &[3, 2, 1]);
        assert_eq!(acc.finalize().unwrap(), r("110"));

        let mut acc = MajorityAccumulator::new(4, 3).unwrap();
        for s in ["1110", "1100", "1000"] {
            acc.accumulate(&r(s)).unwrap();
        }
        assert_eq!(acc.counters(), &[3, 2, 1, 0]);
        assert_eq!(acc.finalize().unwrap(), r("1100"));
    }

    #[test]
    fn even_tie_resolves_to_zero() {
        let mut acc = MajorityAccumulator::new(1, 4).unwrap();
        for s in ["1", "1", "0", "0"] {
            acc.accumulate(&r(s)).unwrap();
        }
        assert_eq!(acc.finalize().unwrap(), r("0"));
    }

    #[test]
    fn single_vote_is_identity() {
        let x = r("1001101");
        let mut acc = MajorityAccumulator::new(7, 1).unwrap();
        acc.accumulate(&x).unwrap();
        assert_eq!(acc.counters(), &[1, 0, 0, 1, 1, 0, 1]);
        assert_eq!(acc.finalize().unwrap(), x);
    }

    #[test]
    fn error_paths() {
        assert!(MajorityAccumulator::new(4, 0).is_err());
        assert!(MajorityAccumulator::new(4, 256).is_err());
        let mut acc = MajorityAccumulator::new(3, 1).unwrap();
        assert!(acc.finalize().is_err());
        assert!(matches!(acc.accumulate(&r("10")), Err(Error::LengthMismatch { .. })));
        acc.accumulate(&r("101")).unwrap();
        assert!(acc.accumulate(&r("101")).is_err());
    }

    #[test]
    fn snapshot_layout() {
        let mut acc = MajorityAccumulator::new(3, 5).unwrap();
        acc.accumulate(&r("101")).unwrap();
        acc.accumulate(&r("100")).unwrap();
        assert_eq!(acc.to_bytes(), vec![1, 0, 0, 0, 3, 5, 2, 2, 0, 1]);
        let mut bad = acc.to_bytes();
        bad[9] = 3; // counter exceeds votes_seen
        assert!(MajorityAccumulator::from_bytes(&bad).is_err());
        assert!(MajorityAccumulator::from_bytes(&acc.to_bytes()[..8]).is_err());
    }

    #[test]
    fn noiseless_device_is_stable_for_any_votes() {
        let d = generate_device(1, "q", &DeviceParams::unbiased(256, NoiseProfile::NOISELESS)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [1, 2, 5, 20] {
            assert_eq!(stabilized_read(&d, n, &mut rng).unwrap(), d.stable_value);
        }
        assert!(stabilized_read(&d, 0, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn finalize_is_order_independent(
            reads in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 24), 1..12),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let reads: Vec<Response> = reads.into_iter().map(Response::from_bits).collect();
            let mut shuffled = reads.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let fold = |rs: &[Response]| {
                let mut acc = MajorityAccumulator::new(24, rs.len()).unwrap();
                rs.iter().for_each(|x| acc.accumulate(x).unwrap());
                acc.finalize().unwrap()
            };
            prop_assert_eq!(fold(&reads), fold(&shuffled));
        }

        #[test]
        fn snapshot_round_trip_at_any_stage(
            reads in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 16), 1..10),
            extra in 0usize..5,
            cut in 0usize..10,
        ) {
            let total = reads.len() + extra;
            let mut acc = MajorityAccumulator::new(16, total).unwrap();
            for x in reads.iter().take(cut.min(reads.len())) {
                acc.accumulate(&Response::from_bits(x.iter().copied())).unwrap();
            }
            let restored = MajorityAccumulator::from_bytes(&acc.to_bytes()).unwrap();
            prop_assert_eq!(restored, acc);
        }
    }
}
