//! Entity side: reads its PUF, majority-votes, corrects with local helper
//! data, answers the verifier.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hamming::{decode, enroll_helper, HammingVariant, HelperData};
use crate::puf_model::PufDevice;
use crate::response::Response;
use crate::stabilizer::majority_of;

use super::wire::{read_message, write_message, ResultKind};
use super::{Challenge, ErrorCode, Intent, Message};

/// A source of raw power-up reads.
pub trait PufSource: Send {
    fn n_bits(&self) -> usize;
    fn read(&mut self) -> Result<Response>;
}

pub struct SimulatedPuf {
    device: PufDevice,
    rng: ChaCha8Rng,
}

impl SimulatedPuf {
    pub fn new(device: PufDevice, read_seed: u64) -> Self {
        SimulatedPuf {
            device,
            rng: ChaCha8Rng::seed_from_u64(read_seed),
        }
    }

    pub fn device(&self) -> &PufDevice {
        &self.device
    }
}

impl PufSource for SimulatedPuf {
    fn n_bits(&self) -> usize {
        self.device.n_cells()
    }

    fn read(&mut self) -> Result<Response> {
        Ok(self.device.sample_response(&mut self.rng))
    }
}

/// Replays recorded reads in order, wrapping around at the end.
pub struct ReplayPuf {
    reads: Vec<Response>,
    pos: usize,
}

impl ReplayPuf {
    pub fn new(reads: Vec<Response>) -> Result<Self> {
        let n = reads.first().ok_or(Error::Empty("dump"))?.len();
        if let Some(r) = reads.iter().find(|r| r.len() != n) {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: r.len(),
            });
        }
        Ok(ReplayPuf { reads, pos: 0 })
    }

    pub fn from_dump_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(crate::puf_model::read_dump(fs::File::open(path)?)?)
    }
}

impl PufSource for ReplayPuf {
    fn n_bits(&self) -> usize {
        self.reads[0].len()
    }

    fn read(&mut self) -> Result<Response> {
        let r = self.reads[self.pos].clone();
        self.pos = (self.pos + 1) % self.reads.len();
        Ok(r)
    }
}

/// The entity's non-volatile helper storage, keyed by device and challenge
/// window. Backed by `PUFH` files when a directory is given.
#[derive(Debug, Default)]
pub struct HelperStore {
    dir: Option<PathBuf>,
    mem: HashMap<(String, u32, u32), HelperData>,
}

impl HelperStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn at(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(HelperStore {
            dir: Some(dir),
            mem: HashMap::new(),
        })
    }

    pub fn file_name(device_id: &str, offset: u32, length: u32) -> String {
        let safe: String = device_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        format!("{safe}_{offset}_{length}.pufh")
    }

    pub fn put(&mut self, device_id: &str, ch: &Challenge, helper: HelperData) -> Result<()> {
        if let Some(dir) = &self.dir {
            fs::write(dir.join(Self::file_name(device_id, ch.offset, ch.length)), helper.to_bytes())?;
        }
        self.mem.insert((device_id.to_owned(), ch.offset, ch.length), helper);
        Ok(())
    }

    pub fn get(&self, device_id: &str, ch: &Challenge) -> Result<Option<HelperData>> {
        let key = (device_id.to_owned(), ch.offset, ch.length);
        if let Some(h) = self.mem.get(&key) {
            return Ok(Some(h.clone()));
        }
        let Some(dir) = &self.dir else { return Ok(None) };
        let path = dir.join(Self::file_name(device_id, ch.offset, ch.length));
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(HelperData::from_bytes(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

/// Result frame as seen by the entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuthOutcome {
    pub accepted: bool,
    pub hd_bits: u32,
    pub n_bits: u32,
    pub threshold_bits: u32,
}

impl AuthOutcome {
    pub fn measured_ber(&self) -> f64 {
        self.hd_bits as f64 / self.n_bits.max(1) as f64
    }
}

pub struct Entity {
    device_id: String,
    source: Box<dyn PufSource>,
    helpers: HelperStore,
}

impl Entity {
    pub fn new(device_id: impl Into<String>, source: Box<dyn PufSource>, helpers: HelperStore) -> Self {
        Entity {
            device_id: device_id.into(),
            source,
            helpers,
        }
    }

    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    pub fn helpers(&self) -> &HelperStore {
        &self.helpers
    }

    /// Majority-voted read of the challenged window.
    pub fn stabilized_window(&mut self, ch: &Challenge, votes: u8) -> Result<Response> {
        let (offset, length) = (ch.offset as usize, ch.length as usize);
        if offset + length > self.source.n_bits() {
            return Err(Error::invalid(format!(
                "challenge window {offset}+{length} exceeds PUF size {}",
                self.source.n_bits()
            )));
        }
        let source = &mut self.source;
        majority_of(length, votes as usize, || source.read()?.slice(offset, length))
    }

    fn enroll_response(&mut self, ch: &Challenge, variant: Option<HammingVariant>, votes: u8) -> Result<Response> {
        let response = self.stabilized_window(ch, votes)?;
        if let Some(v) = variant {
            let helper = enroll_helper(&response, v)?;
            self.helpers.put(&self.device_id.clone(), ch, helper)?;
        }
        Ok(response)
    }

    /// Stabilized read, corrected with local helper data when the challenge
    /// asks for error correction and a helper exists.
    fn auth_response(&mut self, ch: &Challenge, variant: Option<HammingVariant>, votes: u8) -> Result<Response> {
        let raw = self.stabilized_window(ch, votes)?;
        let Some(v) = variant else { return Ok(raw) };
        match self.helpers.get(&self.device_id, ch)? {
            Some(helper) if helper.variant() == v => Ok(decode(&raw, &helper)?.corrected),
            Some(helper) => Err(Error::format(format!(
                "stored helper is {} but challenge asks for {v}",
                helper.variant()
            ))),
            None => Ok(raw),
        }
    }

    pub fn enroll<S: Read + Write>(&mut self, link: &mut S, overwrite: bool) -> Result<()> {
        write_message(
            link,
            &Message::Hello {
                device_id: self.device_id.clone(),
                intent: Intent::Enroll { overwrite },
            },
        )?;
        let (challenge, variant, votes) = match read_message(link)? {
            Message::EnrollRequest { challenge, variant, votes } => (challenge, variant, votes),
            other => return Err(unexpected(other)),
        };
        let response = match self.enroll_response(&challenge, variant, votes) {
            Ok(r) => r,
            Err(e) => return Err(self.report(link, e)),
        };
        write_message(
            link,
            &Message::EnrollResponse {
                nonce: challenge.nonce,
                response,
            },
        )?;
        match read_message(link)? {
            Message::AuthResult {
                kind: ResultKind::Enrolled,
                ..
            } => Ok(()),
            other => Err(unexpected(other)),
        }
    }

    pub fn authenticate<S: Read + Write>(&mut self, link: &mut S) -> Result<AuthOutcome> {
        self.authenticate_with(link, |n| n)
    }

    /// Like [`Entity::authenticate`], with `nonce_for` choosing the nonce to
    /// echo. Only useful for exercising replay handling.
    pub fn authenticate_with<S, F>(&mut self, link: &mut S, nonce_for: F) -> Result<AuthOutcome>
    where
        S: Read + Write,
        F: FnOnce([u8; 8]) -> [u8; 8],
    {
        write_message(
            link,
            &Message::Hello {
                device_id: self.device_id.clone(),
                intent: Intent::Authenticate,
            },
        )?;
        let (challenge, variant, votes) = match read_message(link)? {
            Message::AuthChallenge { challenge, variant, votes } => (challenge, variant, votes),
            other => return Err(unexpected(other)),
        };
        let response = match self.auth_response(&challenge, variant, votes) {
            Ok(r) => r,
            Err(e) => return Err(self.report(link, e)),
        };
        write_message(
            link,
            &Message::AuthResponse {
                nonce: nonce_for(challenge.nonce),
                response,
            },
        )?;
        match read_message(link)? {
            Message::AuthResult {
                kind: ResultKind::Decision,
                accepted,
                hd_bits,
                n_bits,
                threshold_bits,
            } => Ok(AuthOutcome {
                accepted,
                hd_bits,
                n_bits,
                threshold_bits,
            }),
            other => Err(unexpected(other)),
        }
    }

    fn report<S: Write>(&self, link: &mut S, e: Error) -> Error {
        let _ = write_message(link, &Message::error(ErrorCode::Internal, e.to_string()));
        e
    }
}

fn unexpected(m: Message) -> Error {
    match m {
        Message::Error { code, message } => Error::Remote { code, message },
        other => Error::Protocol {
            code: ErrorCode::UnexpectedFrame,
            message: format!("unexpected frame type {:#04x}", other.frame_type()),
        },
    }
}

/// Opens a client connection with read/write timeouts.
pub fn connect<A: ToSocketAddrs>(addr: A, timeout: Duration) -> Result<TcpStream> {
    let mut last = None;
    for a in addr.to_socket_addrs()? {
        match TcpStream::connect_timeout(&a, timeout) {
            Ok(s) => {
                s.set_read_timeout(Some(timeout))?;
                s.set_write_timeout(Some(timeout))?;
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last
        .unwrap_or_else(|| std::io::Error::new(std::io::ErrorKind::NotFound, "address resolved to nothing"))
        .into())
}
