//! Simulated SRAM PUF devices and response-quality metrics.
//!
//! A device is a fixed array of cells. Each cell has a noise-free power-up
//! value and a per-read flip probability. Cells are a two-population mix:
//! most are stable (`stable_eps`), a small fraction are unstable with a flip
//! probability drawn uniformly from `(stable_eps, unstable_max]`.
//!
//! Inter-chip correlation is realised per cell: with probability `rho_chip`
//! the power-up value copies a shared wafer pattern, otherwise it is drawn
//! Bernoulli(`bias_q`). The copy decision belongs to the wafer, not the
//! device (a cell copies iff its wafer-level uniform is below `rho_chip`),
//! so two devices of one wafer disagree on a cell with probability exactly
//! `(1 - rho) * 2q(1 - q)`.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::response::Response;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub fraction_unstable: f64,
    pub stable_eps: f64,
    pub unstable_max: f64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        NoiseProfile {
            fraction_unstable: 0.05,
            stable_eps: 0.001,
            unstable_max: 0.5,
        }
    }
}

impl NoiseProfile {
    pub const NOISELESS: NoiseProfile = NoiseProfile {
        fraction_unstable: 0.0,
        stable_eps: 0.0,
        unstable_max: 0.5,
    };

    /// Every cell flips with probability `p`.
    pub fn uniform(p: f64) -> NoiseProfile {
        NoiseProfile {
            fraction_unstable: 0.0,
            stable_eps: p,
            unstable_max: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.fraction_unstable)
            && self.stable_eps >= 0.0
            && self.stable_eps <= 0.5
            && self.unstable_max <= 0.5
            && (self.stable_eps < self.unstable_max
                || (self.fraction_unstable == 0.0 && self.stable_eps <= self.unstable_max));
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "noise profile requires 0 <= stable_eps < unstable_max <= 0.5 and fraction in [0,1]: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PufDevice {
    pub device_id: String,
    pub stable_value: Response,
    pub flip_prob: Vec<f64>,
    pub bias_q: f64,
    pub rho_chip: f64,
    pub seed: u64,
}

impl PufDevice {
    pub fn n_cells(&self) -> usize {
        self.stable_value.len()
    }

    /// One power-up read: every cell independently deviates from its stable
    /// value with its own flip probability.
    pub fn sample_response<R: Rng + ?Sized>(&self, rng: &mut R) -> Response {
        let mut out = self.stable_value.clone();
        for (i, &p) in self.flip_prob.iter().enumerate() {
            if p > 0.0 && rng.random::<f64>() < p {
                out.flip(i);
            }
        }
        out
    }

    /// Mean per-cell flip probability, i.e. the expected raw single-read BER.
    pub fn expected_raw_ber(&self) -> f64 {
        if self.flip_prob.is_empty() {
            return 0.0;
        }
        self.flip_prob.iter().sum::<f64>() / self.flip_prob.len() as f64
    }
}

/// Parameters for [`generate_device`].
#[derive(Debug, Clone)]
pub struct DeviceParams<'a> {
    pub n: usize,
    pub noise: NoiseProfile,
    pub bias_q: f64,
    pub rho_chip: f64,
    pub wafer_pattern: Option<&'a Response>,
}

impl<'a> DeviceParams<'a> {
    pub fn unbiased(n: usize, noise: NoiseProfile) -> Self {
        DeviceParams {
            n,
            noise,
            bias_q: 0.5,
            rho_chip: 0.0,
            wafer_pattern: None,
        }
    }
}

pub fn device_seed(master_seed: u64, device_id: &str) -> u64 {
    seed::derive_seed(master_seed, "device", &[device_id.as_bytes()])
}

pub fn generate_device(master_seed: u64, device_id: &str, params: &DeviceParams<'_>) -> Result<PufDevice> {
    let DeviceParams {
        n,
        noise,
        bias_q,
        rho_chip,
        wafer_pattern,
    } = *params;
    noise.validate()?;
    if !(bias_q > 0.0 && bias_q < 1.0) {
        return Err(Error::invalid(format!("bias_q must be in (0,1), got {bias_q}")));
    }
    if !(0.0..1.0).contains(&rho_chip) {
        return Err(Error::invalid(format!("rho_chip must be in [0,1), got {rho_chip}")));
    }
    match wafer_pattern {
        Some(w) if w.len() != n => {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: w.len(),
            })
        }
        None if rho_chip > 0.0 => {
            return Err(Error::invalid("rho_chip > 0 requires a wafer pattern"));
        }
        _ => {}
    }

    let seed = device_seed(master_seed, device_id);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);

    let mut mask = wafer_pattern.filter(|_| rho_chip > 0.0).map(wafer_mask_stream);
    let mut stable_value = Response::zeros(n);
    for i in 0..n {
        let copy = mask.as_mut().is_some_and(|m| m.random::<f64>() < rho_chip);
        let bit = match (copy, wafer_pattern) {
            (true, Some(w)) => w.get(i),
            _ => rng.random::<f64>() < bias_q,
        };
        stable_value.set(i, bit);
    }

    let flip_prob = (0..n)
        .map(|_| {
            if noise.fraction_unstable > 0.0 && rng.random::<f64>() < noise.fraction_unstable {
                // uniform on (stable_eps, unstable_max]
                let u: f64 = rng.random();
                noise.unstable_max - u * (noise.unstable_max - noise.stable_eps)
            } else {
                noise.stable_eps
            }
        })
        .collect();

    Ok(PufDevice {
        device_id: device_id.to_owned(),
        stable_value,
        flip_prob,
        bias_q,
        rho_chip,
        seed,
    })
}

/// Per-cell copy uniforms of a wafer, keyed by the pattern itself so every
/// device sharing the pattern sees the same sequence.
fn wafer_mask_stream(pattern: &Response) -> rand_chacha::ChaCha8Rng {
    let bytes = pattern.to_packed();
    let len = (pattern.len() as u64).to_be_bytes();
    seed::stream(0, "wafer-mask", &[&len, &bytes])
}

/// Shared wafer pattern for a fleet; unbiased Bernoulli bits from the master seed.
pub fn wafer_pattern(master_seed: u64, n: usize) -> Response {
    let mut rng = seed::stream(master_seed, "wafer", &[]);
    Response::from_bits((0..n).map(|_| rng.random::<bool>()))
}

/// Fractional Hamming distance `popcount(a ^ b) / n`.
pub fn normalized_hd(a: &Response, b: &Response) -> Result<f64> {
    let hd = a.hamming_distance(b)?;
    if a.is_empty() {
        return Err(Error::Empty("response"));
    }
    Ok(hd as f64 / a.len() as f64)
}

/// Fractional Hamming weight.
pub fn uniformity(r: &Response) -> Result<f64> {
    if r.is_empty() {
        return Err(Error::Empty("response"));
    }
    Ok(r.count_ones() as f64 / r.len() as f64)
}

/// Splits `r` into contiguous, order-preserving blocks of `block` bits.
pub fn partition_response(r: &Response, block: usize) -> Result<Vec<Response>> {
    if block == 0 || r.len() % block != 0 {
        return Err(Error::NotDivisible {
            len: r.len(),
            block,
        });
    }
    (0..r.len() / block)
        .map(|i| r.slice(i * block, block))
        .collect()
}

/// One device entry of a fleet document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub id: String,
    pub n: usize,
    pub bias_q: f64,
    pub rho_chip: f64,
}

/// Reproducible fleet description; devices are regenerated from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fleet {
    pub master_seed: u64,
    pub noise: NoiseProfile,
    pub devices: Vec<DeviceSpec>,
}

impl Fleet {
    pub fn uniform(master_seed: u64, count: usize, n: usize, noise: NoiseProfile, bias_q: f64, rho_chip: f64) -> Fleet {
        Fleet {
            master_seed,
            noise,
            devices: (0..count)
                .map(|i| DeviceSpec {
                    id: format!("dev-{i}"),
                    n,
                    bias_q,
                    rho_chip,
                })
                .collect(),
        }
    }

    pub fn materialize(&self) -> Result<Vec<PufDevice>> {
        self.devices
            .iter()
            .map(|d| {
                let wafer = (d.rho_chip > 0.0).then(|| wafer_pattern(self.master_seed, d.n));
                generate_device(
                    self.master_seed,
                    &d.id,
                    &DeviceParams {
                        n: d.n,
                        noise: self.noise,
                        bias_q: d.bias_q,
                        rho_chip: d.rho_chip,
                        wafer_pattern: wafer.as_ref(),
                    },
                )
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Fleet> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Writes raw reads as records of `u32` little-endian bit count followed by
/// the LSB-first packed bytes.
pub fn write_dump<W: Write>(mut w: W, reads: &[Response]) -> Result<()> {
    for r in reads {
        let n = u32::try_from(r.len()).map_err(|_| Error::invalid("response too long for dump"))?;
        w.write_all(&n.to_le_bytes())?;
        w.write_all(&r.to_packed())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dump<R: Read>(mut r: R) -> Result<Vec<Response>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < buf.len() {
        let head = buf
            .get(pos..pos + 4)
            .ok_or_else(|| Error::format("truncated dump record header"))?;
        let n = u32::from_le_bytes(head.try_into().unwrap()) as usize;
        pos += 4;
        let body = buf
            .get(pos..pos + n.div_ceil(8))
            .ok_or_else(|| Error::format("truncated dump record body"))?;
        out.push(Response::from_packed(body, n)?);
        pos += n.div_ceil(8);
    }
    Ok(out)
}
