//! Length-prefixed binary framing.
//!
//! ```text
//! [u32 BE length][u8 type][payload]       length = 1 + payload length
//! ```
//!
//! | type | frame          | payload                                                    |
//! |------|----------------|------------------------------------------------------------|
//! | 0x01 | HELLO          | "PUFA", version, intent (0 enroll, 1 auth), flags, u16 id len, id |
//! | 0x02 | ENROLL_REQ     | challenge (u32 offset, u32 length, 8-byte nonce), variant tag, votes |
//! | 0x03 | ENROLL_RESP    | nonce, u32 bit count, packed response                      |
//! | 0x04 | AUTH_CHALLENGE | same layout as ENROLL_REQ                                  |
//! | 0x05 | AUTH_RESPONSE  | same layout as ENROLL_RESP                                 |
//! | 0x06 | AUTH_RESULT    | kind (0 enrolled, 1 decision), accepted, u32 hd, u32 n, u32 threshold bits |
//! | 0x7F | ERROR          | code, u16 message len, UTF-8 message                       |
//!
//! All integers are big-endian. Responses are packed LSB-first. A variant tag
//! of `0xFF` means no error correction at the entity.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamming::HammingVariant;
use crate::response::Response;

pub const MAGIC: &[u8; 4] = b"PUFA";
pub const VERSION: u8 = 1;
/// Upper bound on `1 + payload` accepted from a peer.
pub const MAX_FRAME_LEN: u32 = 1 << 20;
pub const NO_VARIANT: u8 = 0xFF;

pub mod frame_type {
    pub const HELLO: u8 = 0x01;
    pub const ENROLL_REQ: u8 = 0x02;
    pub const ENROLL_RESP: u8 = 0x03;
    pub const AUTH_CHALLENGE: u8 = 0x04;
    pub const AUTH_RESPONSE: u8 = 0x05;
    pub const AUTH_RESULT: u8 = 0x06;
    pub const ERROR: u8 = 0x7F;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ErrorCode {
    /// Bad magic, unknown frame type, truncated or oversized frame.
    Malformed = 1,
    UnknownDevice = 2,
    StaleNonce = 3,
    /// Response length differs from the challenged window.
    LengthMismatch = 4,
    DuplicateEnrollment = 5,
    /// Frame valid but not expected at this point of the session.
    UnexpectedFrame = 6,
    Internal = 7,
}

impl ErrorCode {
    pub fn from_u8(v: u8) -> Option<Self> {
        use ErrorCode::*;
        Some(match v {
            1 => Malformed,
            2 => UnknownDevice,
            3 => StaleNonce,
            4 => LengthMismatch,
            5 => DuplicateEnrollment,
            6 => UnexpectedFrame,
            7 => Internal,
            _ => return None,
        })
    }
}

pub type Nonce = [u8; 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Challenge {
    pub offset: u32,
    pub length: u32,
    #[serde(with = "hex_nonce")]
    pub nonce: Nonce,
}

mod hex_nonce {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(n: &[u8; 8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&n.iter().map(|b| format!("{b:02x}")).collect::<String>())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 8], D::Error> {
        let s = String::deserialize(d)?;
        let bad = || serde::de::Error::custom(format!("invalid nonce {s:?}"));
        if s.len() != 16 {
            return Err(bad());
        }
        let mut out = [0u8; 8];
        for (i, b) in out.iter_mut().enumerate() {
            *b = u8::from_str_radix(s.get(2 * i..2 * i + 2).ok_or_else(bad)?, 16).map_err(|_| bad())?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intent {
    Enroll { overwrite: bool },
    Authenticate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResultKind {
    Enrolled,
    Decision,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Hello {
        device_id: String,
        intent: Intent,
    },
    EnrollRequest {
        challenge: Challenge,
        variant: Option<HammingVariant>,
        votes: u8,
    },
    EnrollResponse {
        nonce: Nonce,
        response: Response,
    },
    AuthChallenge {
        challenge: Challenge,
        variant: Option<HammingVariant>,
        votes: u8,
    },
    AuthResponse {
        nonce: Nonce,
        response: Response,
    },
    AuthResult {
        kind: ResultKind,
        accepted: bool,
        hd_bits: u32,
        n_bits: u32,
        threshold_bits: u32,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl Message {
    pub fn frame_type(&self) -> u8 {
        use frame_type::*;
        match self {
            Message::Hello { .. } => HELLO,
            Message::EnrollRequest { .. } => ENROLL_REQ,
            Message::EnrollResponse { .. } => ENROLL_RESP,
            Message::AuthChallenge { .. } => AUTH_CHALLENGE,
            Message::AuthResponse { .. } => AUTH_RESPONSE,
            Message::AuthResult { .. } => AUTH_RESULT,
            Message::Error { .. } => ERROR,
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Message {
        Message::Error {
            code,
            message: message.into(),
        }
    }

    fn payload(&self) -> Vec<u8> {
        let mut p = Vec::new();
        match self {
            Message::Hello { device_id, intent } => {
                p.extend_from_slice(MAGIC);
                p.push(VERSION);
                let (code, flags) = match intent {
                    Intent::Enroll { overwrite } => (0u8, u8::from(*overwrite)),
                    Intent::Authenticate => (1, 0),
                };
                p.push(code);
                p.push(flags);
                put_str(&mut p, device_id);
            }
            Message::EnrollRequest { challenge, variant, votes }
            | Message::AuthChallenge { challenge, variant, votes } => {
                p.extend_from_slice(&challenge.offset.to_be_bytes());
                p.extend_from_slice(&challenge.length.to_be_bytes());
                p.extend_from_slice(&challenge.nonce);
                p.push(variant.map_or(NO_VARIANT, HammingVariant::tag));
                p.push(*votes);
            }
            Message::EnrollResponse { nonce, response } | Message::AuthResponse { nonce, response } => {
                p.extend_from_slice(nonce);
                p.extend_from_slice(&(response.len() as u32).to_be_bytes());
                p.extend_from_slice(&response.to_packed());
            }
            Message::AuthResult {
                kind,
                accepted,
                hd_bits,
                n_bits,
                threshold_bits,
            } => {
                p.push(match kind {
                    ResultKind::Enrolled => 0,
                    ResultKind::Decision => 1,
                });
                p.push(u8::from(*accepted));
                p.extend_from_slice(&hd_bits.to_be_bytes());
                p.extend_from_slice(&n_bits.to_be_bytes());
                p.extend_from_slice(&threshold_bits.to_be_bytes());
            }
            Message::Error { code, message } => {
                p.push(*code as u8);
                put_str(&mut p, message);
            }
        }
        p
    }

    pub fn encode(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut out = Vec::with_capacity(5 + payload.len());
        out.extend_from_slice(&(1 + payload.len() as u32).to_be_bytes());
        out.push(self.frame_type());
        out.extend_from_slice(&payload);
        out
    }

    /// Parses one frame body (type byte plus payload).
    pub fn decode(body: &[u8]) -> Result<Message> {
        let (&ty, payload) = body.split_first().ok_or_else(|| Error::format("empty frame"))?;
        let mut c = Cursor { buf: payload };
        let msg = match ty {
            frame_type::HELLO => {
                if c.take(4)? != MAGIC {
                    return Err(Error::format("bad magic"));
                }
                let version = c.u8()?;
                if version != VERSION {
                    return Err(Error::format(format!("unsupported protocol version {version}")));
                }
                let intent = match (c.u8()?, c.u8()?) {
                    (0, flags) => Intent::Enroll {
                        overwrite: flags & 1 == 1,
                    },
                    (1, _) => Intent::Authenticate,
                    (other, _) => return Err(Error::format(format!("unknown intent {other}"))),
                };
                Message::Hello {
                    device_id: c.string()?,
                    intent,
                }
            }
            frame_type::ENROLL_REQ | frame_type::AUTH_CHALLENGE => {
                let challenge = Challenge {
                    offset: c.u32()?,
                    length: c.u32()?,
                    nonce: c.nonce()?,
                };
                let variant = match c.u8()? {
                    NO_VARIANT => None,
                    tag => Some(HammingVariant::from_tag(tag)?),
                };
                let votes = c.u8()?;
                if ty == frame_type::ENROLL_REQ {
                    Message::EnrollRequest { challenge, variant, votes }
                } else {
                    Message::AuthChallenge { challenge, variant, votes }
                }
            }
            frame_type::ENROLL_RESP | frame_type::AUTH_RESPONSE => {
                let nonce = c.nonce()?;
                let bits = c.u32()? as usize;
                let response = Response::from_packed(c.take(bits.div_ceil(8))?, bits)?;
                if ty == frame_type::ENROLL_RESP {
                    Message::EnrollResponse { nonce, response }
                } else {
                    Message::AuthResponse { nonce, response }
                }
            }
            frame_type::AUTH_RESULT => {
                let kind = match c.u8()? {
                    0 => ResultKind::Enrolled,
                    1 => ResultKind::Decision,
                    other => return Err(Error::format(format!("unknown result kind {other}"))),
                };
                Message::AuthResult {
                    kind,
                    accepted: c.u8()? != 0,
                    hd_bits: c.u32()?,
                    n_bits: c.u32()?,
                    threshold_bits: c.u32()?,
                }
            }
            frame_type::ERROR => {
                let raw = c.u8()?;
                let code = ErrorCode::from_u8(raw).ok_or_else(|| Error::format(format!("unknown error code {raw}")))?;
                Message::Error {
                    code,
                    message: c.string()?,
                }
            }
            other => return Err(Error::format(format!("unknown frame type {other:#04x}"))),
        };
        if !c.buf.is_empty() {
            return Err(Error::format(format!("{} trailing bytes in frame", c.buf.len())));
        }
        Ok(msg)
    }
}

fn put_str(p: &mut Vec<u8>, s: &str) {
    let bytes = &s.as_bytes()[..s.len().min(u16::MAX as usize)];
    p.extend_from_slice(&(bytes.len() as u16).to_be_bytes());
    p.extend_from_slice(bytes);
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::format("truncated frame"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn nonce(&mut self) -> Result<Nonce> {
        Ok(self.take(8)?.try_into().unwrap())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format("invalid UTF-8 string"))
    }
}

/// Frame-level failure while reading from a peer.
#[derive(Debug)]
pub enum ReadError {
    /// Connection closed or I/O failed.
    Io(io::Error),
    /// Bytes arrived but do not form a valid frame.
    Malformed(String),
}

impl From<ReadError> for Error {
    fn from(e: ReadError) -> Error {
        match e {
            ReadError::Io(e) => Error::Io(e),
            ReadError::Malformed(m) => Error::Protocol {
                code: ErrorCode::Malformed,
                message: m,
            },
        }
    }
}

pub fn read_message<R: Read>(r: &mut R) -> std::result::Result<Message, ReadError> {
    let mut head = [0u8; 4];
    r.read_exact(&mut head).map_err(ReadError::Io)?;
    let len = u32::from_be_bytes(head);
    if len == 0 || len > MAX_FRAME_LEN {
        return Err(ReadError::Malformed(format!("frame length {len} out of range")));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body).map_err(ReadError::Io)?;
    Message::decode(&body).map_err(|e| ReadError::Malformed(e.to_string()))
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&msg.encode())?;
    w.flush()
}
