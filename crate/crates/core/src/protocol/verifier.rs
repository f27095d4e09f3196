//! Verifier service.
//!
//! One thread per connection. The CRP store sits behind a read/write lock
//! (concurrent lookups, serialized enrollment writes); the audit log behind a
//! mutex.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::hamming::{decode, enroll_helper, HammingVariant};
use crate::response::Response;

use super::wire::{read_message, write_message, ReadError, ResultKind};
use super::{
    decide, unix_now, AuthDecision, Challenge, CrpRecord, CrpStore, EcSite, ErrorCode, Intent, Message,
    ThresholdPolicy,
};

pub const AUDIT_HEADER: &str = "timestamp_ms,device_id,measured_ber,tau,accepted,error_code";

#[derive(Debug, Clone)]
pub struct VerifierConfig {
    pub store_path: PathBuf,
    pub audit_path: Option<PathBuf>,
    pub policy: ThresholdPolicy,
    pub variant: Option<HammingVariant>,
    pub votes: u8,
    pub challenge_offset: u32,
    pub challenge_bits: u32,
    pub ec_site: EcSite,
    pub io_timeout: Duration,
}

impl VerifierConfig {
    pub fn new(store_path: impl Into<PathBuf>, policy: ThresholdPolicy) -> Self {
        VerifierConfig {
            store_path: store_path.into(),
            audit_path: None,
            policy,
            variant: None,
            votes: 1,
            challenge_offset: 0,
            challenge_bits: 2048,
            ec_site: EcSite::Entity,
            io_timeout: Duration::from_secs(30),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.votes == 0 {
            return Err(Error::invalid("votes must be at least 1"));
        }
        if self.challenge_bits == 0 {
            return Err(Error::invalid("challenge window must be non-empty"));
        }
        if let Some(v) = self.variant {
            if self.challenge_bits as usize % v.data_bits() != 0 {
                return Err(Error::NotDivisible {
                    len: self.challenge_bits as usize,
                    block: v.data_bits(),
                });
            }
        }
        Ok(())
    }
}

/// Outcome of one handled session, mainly for logging and tests.
#[derive(Debug, Clone, PartialEq)]
pub enum SessionOutcome {
    Enrolled(String),
    Decided(String, AuthDecision),
    Failed(ErrorCode, String),
}

pub struct Verifier {
    config: VerifierConfig,
    store: RwLock<CrpStore>,
    audit: Mutex<Option<BufWriter<File>>>,
}

impl Verifier {
    pub fn open(config: VerifierConfig) -> Result<Self> {
        config.validate()?;
        let store = CrpStore::open(&config.store_path)?;
        let audit = match &config.audit_path {
            Some(p) => {
                let fresh = !p.exists() || std::fs::metadata(p)?.len() == 0;
                let f = OpenOptions::new().create(true).append(true).open(p)?;
                let mut w = BufWriter::new(f);
                if fresh {
                    writeln!(w, "{AUDIT_HEADER}")?;
                    w.flush()?;
                }
                Some(w)
            }
            None => None,
        };
        Ok(Verifier {
            config,
            store: RwLock::new(store),
            audit: Mutex::new(audit),
        })
    }

    pub fn config(&self) -> &VerifierConfig {
        &self.config
    }

    pub fn record_for(&self, device_id: &str) -> Option<CrpRecord> {
        self.store.read().unwrap().latest_for(device_id).cloned()
    }

    fn audit(&self, device_id: &str, decision: Option<&AuthDecision>, error: Option<ErrorCode>) {
        let mut guard = self.audit.lock().unwrap();
        let Some(w) = guard.as_mut() else { return };
        let ts = unix_now().as_millis();
        let id = device_id.replace([',', '\n', '\r'], "_");
        let line = match decision {
            Some(d) => format!("{ts},{id},{:.6},{},{},", d.measured_ber, d.tau_used, d.accepted),
            None => format!(
                "{ts},{id},,{},false,{}",
                self.config.policy.tau_ber,
                error.map_or(0, |c| c as u8)
            ),
        };
        // audit failures never abort a session
        let _ = writeln!(w, "{line}").and_then(|_| w.flush());
    }

    /// Runs one session over `link`. Errors detected on the peer's side of
    /// the protocol are answered with an ERROR frame before returning.
    pub fn handle<S: Read + Write>(&self, link: &mut S) -> Result<SessionOutcome> {
        let hello = match read_message(link) {
            Ok(m) => m,
            Err(ReadError::Malformed(msg)) => return self.fail(link, "", ErrorCode::Malformed, msg, false),
            Err(ReadError::Io(e)) => return Err(Error::Io(e)),
        };
        match hello {
            Message::Hello {
                device_id,
                intent: Intent::Enroll { overwrite },
            } => self.enroll_session(link, device_id, overwrite),
            Message::Hello {
                device_id,
                intent: Intent::Authenticate,
            } => self.auth_session(link, device_id),
            other => self.fail(
                link,
                "",
                ErrorCode::UnexpectedFrame,
                format!("expected HELLO, got frame type {:#04x}", other.frame_type()),
                false,
            ),
        }
    }

    fn fail<S: Write>(
        &self,
        link: &mut S,
        device_id: &str,
        code: ErrorCode,
        message: String,
        audit: bool,
    ) -> Result<SessionOutcome> {
        if audit {
            self.audit(device_id, None, Some(code));
        }
        // best effort: the peer may already be gone
        let _ = write_message(link, &Message::error(code, message.clone()));
        Ok(SessionOutcome::Failed(code, message))
    }

    fn entity_variant(&self) -> Option<HammingVariant> {
        match self.config.ec_site {
            EcSite::Entity => self.config.variant,
            EcSite::Verifier => None,
        }
    }

    fn expect_response<S: Read + Write>(
        &self,
        link: &mut S,
        device_id: &str,
        nonce: [u8; 8],
        length: u32,
        enrolling: bool,
    ) -> Result<std::result::Result<Response, SessionOutcome>> {
        let audit = !enrolling;
        let msg = match read_message(link) {
            Ok(m) => m,
            Err(ReadError::Malformed(m)) => {
                return self.fail(link, device_id, ErrorCode::Malformed, m, audit).map(Err)
            }
            Err(ReadError::Io(e)) => return Err(Error::Io(e)),
        };
        let (got_nonce, response) = match (msg, enrolling) {
            (Message::EnrollResponse { nonce, response }, true) | (Message::AuthResponse { nonce, response }, false) => {
                (nonce, response)
            }
            (Message::Error { code, message }, _) => {
                return Ok(Err(SessionOutcome::Failed(code, format!("entity error: {message}"))));
            }
            (other, _) => {
                let m = format!("unexpected frame type {:#04x}", other.frame_type());
                return self.fail(link, device_id, ErrorCode::UnexpectedFrame, m, audit).map(Err);
            }
        };
        if got_nonce != nonce {
            return self
                .fail(link, device_id, ErrorCode::StaleNonce, "nonce does not match the issued challenge".into(), audit)
                .map(Err);
        }
        if response.len() != length as usize {
            let m = format!("response has {} bits, challenge asked for {length}", response.len());
            return self.fail(link, device_id, ErrorCode::LengthMismatch, m, audit).map(Err);
        }
        Ok(Ok(response))
    }

    fn enroll_session<S: Read + Write>(&self, link: &mut S, device_id: String, overwrite: bool) -> Result<SessionOutcome> {
        let (offset, length) = (self.config.challenge_offset, self.config.challenge_bits);
        if !overwrite && self.store.read().unwrap().contains(&device_id, offset, length) {
            let m = format!("device {device_id} already enrolled for this challenge");
            return self.fail(link, &device_id, ErrorCode::DuplicateEnrollment, m, false);
        }
        let challenge = Challenge {
            offset,
            length,
            nonce: rand::random(),
        };
        write_message(
            link,
            &Message::EnrollRequest {
                challenge,
                variant: self.entity_variant(),
                votes: self.config.votes,
            },
        )?;
        let response = match self.expect_response(link, &device_id, challenge.nonce, length, true)? {
            Ok(r) => r,
            Err(outcome) => return Ok(outcome),
        };
        let record = CrpRecord {
            device_id: device_id.clone(),
            challenge,
            enrolled_response: response,
            variant: self.config.variant,
            ec_site: self.config.ec_site,
            mv_count: self.config.votes,
            enrolled_at: unix_now().as_secs(),
        };
        let inserted = self.store.write().unwrap().insert(record, overwrite);
        match inserted {
            Ok(()) => {}
            Err(Error::DuplicateEnrollment(_)) => {
                let m = format!("device {device_id} already enrolled for this challenge");
                return self.fail(link, &device_id, ErrorCode::DuplicateEnrollment, m, false);
            }
            Err(e) => {
                self.fail(link, &device_id, ErrorCode::Internal, e.to_string(), false)?;
                return Err(e);
            }
        }
        write_message(
            link,
            &Message::AuthResult {
                kind: ResultKind::Enrolled,
                accepted: true,
                hd_bits: 0,
                n_bits: length,
                threshold_bits: 0,
            },
        )?;
        Ok(SessionOutcome::Enrolled(device_id))
    }

    fn auth_session<S: Read + Write>(&self, link: &mut S, device_id: String) -> Result<SessionOutcome> {
        let Some(record) = self.record_for(&device_id) else {
            let m = format!("no enrollment for device {device_id}");
            return self.fail(link, &device_id, ErrorCode::UnknownDevice, m, true);
        };
        let challenge = Challenge {
            nonce: rand::random(),
            ..record.challenge
        };
        let entity_variant = match record.ec_site {
            EcSite::Entity => record.variant,
            EcSite::Verifier => None,
        };
        write_message(
            link,
            &Message::AuthChallenge {
                challenge,
                variant: entity_variant,
                votes: record.mv_count,
            },
        )?;
        let received = match self.expect_response(link, &device_id, challenge.nonce, challenge.length, false)? {
            Ok(r) => r,
            Err(outcome) => return Ok(outcome),
        };
        let (candidate, report) = match (record.ec_site, record.variant) {
            (EcSite::Verifier, Some(v)) => {
                let helper = enroll_helper(&record.enrolled_response, v)?;
                let rep = decode(&received, &helper)?;
                (rep.corrected, Some(rep.outcomes))
            }
            _ => (received, None),
        };
        let mut decision = decide(&record.enrolled_response, &candidate, &self.config.policy)?;
        decision.decode = report;
        self.audit(&device_id, Some(&decision), None);
        write_message(
            link,
            &Message::AuthResult {
                kind: ResultKind::Decision,
                accepted: decision.accepted,
                hd_bits: decision.hd_bits as u32,
                n_bits: decision.n_bits as u32,
                threshold_bits: decision.threshold_bits as u32,
            },
        )?;
        Ok(SessionOutcome::Decided(device_id, decision))
    }
}

/// TCP front end for a [`Verifier`].
pub struct VerifierServer {
    listener: TcpListener,
    verifier: Arc<Verifier>,
}

impl VerifierServer {
    pub fn bind<A: ToSocketAddrs>(addr: A, config: VerifierConfig) -> Result<Self> {
        let verifier = Arc::new(Verifier::open(config)?);
        let listener = TcpListener::bind(addr)?;
        Ok(VerifierServer { listener, verifier })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn verifier(&self) -> Arc<Verifier> {
        Arc::clone(&self.verifier)
    }

    /// Blocks, serving connections until `stop` is set.
    pub fn serve(&self, stop: &AtomicBool) -> Result<()> {
        self.serve_until(stop, None)
    }

    /// Like [`VerifierServer::serve`], but returns once `limit` connections
    /// have been accepted and their sessions have finished.
    pub fn serve_until(&self, stop: &AtomicBool, limit: Option<usize>) -> Result<()> {
        let mut workers: Vec<JoinHandle<()>> = Vec::new();
        let mut accepted = 0usize;
        for conn in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(_) => continue,
            };
            let verifier = Arc::clone(&self.verifier);
            workers.retain(|w| !w.is_finished());
            workers.push(thread::spawn(move || {
                let _ = serve_connection(&verifier, stream);
            }));
            accepted += 1;
            if limit.is_some_and(|l| accepted >= l) {
                break;
            }
        }
        for w in workers {
            let _ = w.join();
        }
        Ok(())
    }

    pub fn spawn(self) -> Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let join = thread::spawn(move || {
            let _ = self.serve(&flag);
        });
        Ok(ServerHandle {
            addr,
            stop,
            join: Some(join),
        })
    }
}

fn serve_connection(verifier: &Verifier, mut stream: TcpStream) -> Result<SessionOutcome> {
    let timeout = Some(verifier.config.io_timeout);
    stream.set_read_timeout(timeout)?;
    stream.set_write_timeout(timeout)?;
    stream.set_nodelay(true)?;
    verifier.handle(&mut stream)
}

/// Running server; dropping it stops the accept loop.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        if let Some(join) = self.join.take() {
            self.stop.store(true, Ordering::SeqCst);
            // unblock accept()
            let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
            let _ = join.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_inner();
    }
}
