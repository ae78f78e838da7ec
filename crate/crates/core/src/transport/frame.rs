//! Length-prefixed binary frames.
//!
//! ```text
//! frame   = length:u32 tag:u8 payload
//! length  = 1 + payload length (the tag byte is counted)
//! vector  = dim:u32 dim × f64
//! ```
//!
//! All integers are 32-bit big-endian and all reals are IEEE-754 binary64,
//! big-endian. See `FRAMING.md` at the repository root for worked examples.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::fed::ClientReport;
use crate::numerics::ParamVector;

pub const TAG_ROUND_START: u8 = 0x01;
pub const TAG_PREV_GLOBAL_GRAD: u8 = 0x02;
pub const TAG_CLIENT_REPORT: u8 = 0x03;
pub const TAG_STOP: u8 = 0x04;

/// Largest permitted `length` field.
pub const MAX_FRAME_LEN: usize = 1 << 31;

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Step count and starting model for round `round`.
    RoundStart { round: u32, tau: u32, w: ParamVector },
    /// `∇F(w_{round})`, sent at the start of round `round + 1`.
    PrevGlobalGrad { round: u32, grad: ParamVector },
    Report(ClientReport),
    Stop,
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::RoundStart { .. } => TAG_ROUND_START,
            Message::PrevGlobalGrad { .. } => TAG_PREV_GLOBAL_GRAD,
            Message::Report(_) => TAG_CLIENT_REPORT,
            Message::Stop => TAG_STOP,
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_usize(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| Error::FrameMalformed(format!("{what} {v} does not fit in 32 bits")))?;
    put_u32(out, v);
    Ok(())
}

fn put_vector(out: &mut Vec<u8>, v: &ParamVector) -> Result<()> {
    put_usize(out, v.dim(), "vector dimension")?;
    for &x in v.as_slice() {
        put_f64(out, x);
    }
    Ok(())
}

pub fn encode_frame(m: &Message) -> Result<Vec<u8>> {
    let mut out = vec![0, 0, 0, 0, m.tag()];
    match m {
        Message::RoundStart { round, tau, w } => {
            put_u32(&mut out, *round);
            put_u32(&mut out, *tau);
            put_vector(&mut out, w)?;
        }
        Message::PrevGlobalGrad { round, grad } => {
            put_u32(&mut out, *round);
            put_vector(&mut out, grad)?;
        }
        Message::Report(r) => {
            put_usize(&mut out, r.client_id, "client id")?;
            put_u32(&mut out, r.tau_used);
            put_f64(&mut out, r.loss_at_start);
            match (r.beta, r.delta) {
                (None, None) => put_u32(&mut out, 0),
                (Some(b), Some(d)) => {
                    put_u32(&mut out, 1);
                    put_f64(&mut out, b);
                    put_f64(&mut out, d);
                }
                _ => {
                    return Err(Error::FrameMalformed(
                        "beta and delta must be both present or both absent".into(),
                    ))
                }
            }
            put_vector(&mut out, &r.direction)?;
            put_vector(&mut out, &r.grad_at_start)?;
        }
        Message::Stop => {}
    }
    let len = out.len() - 4;
    if len > MAX_FRAME_LEN {
        return Err(Error::FrameTooLarge(len));
    }
    out[..4].copy_from_slice(&(len as u32).to_be_bytes());
    Ok(out)
}

struct Payload<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Payload<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::FrameTruncated {
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(f64::from_be_bytes(a))
    }

    fn vector(&mut self) -> Result<ParamVector> {
        let dim = self.u32()? as usize;
        let body = self.take(dim.checked_mul(8).ok_or_else(|| {
            Error::FrameMalformed(format!("vector dimension {dim} overflows"))
        })?)?;
        Ok(ParamVector::new(
            body.chunks_exact(8)
                .map(|c| {
                    let mut a = [0u8; 8];
                    a.copy_from_slice(c);
                    f64::from_be_bytes(a)
                })
                .collect(),
        ))
    }
}

/// Decodes the body (tag byte plus payload) of one frame.
pub fn decode_body(body: &[u8]) -> Result<Message> {
    let (&tag, rest) = body.split_first().ok_or(Error::FrameTruncated {
        needed: 1,
        available: 0,
    })?;
    let mut p = Payload {
        bytes: rest,
        pos: 0,
    };
    let msg = match tag {
        TAG_ROUND_START => Message::RoundStart {
            round: p.u32()?,
            tau: p.u32()?,
            w: p.vector()?,
        },
        TAG_PREV_GLOBAL_GRAD => Message::PrevGlobalGrad {
            round: p.u32()?,
            grad: p.vector()?,
        },
        TAG_CLIENT_REPORT => {
            let client_id = p.u32()? as usize;
            let tau_used = p.u32()?;
            let loss_at_start = p.f64()?;
            let (beta, delta) = match p.u32()? {
                0 => (None, None),
                1 => (Some(p.f64()?), Some(p.f64()?)),
                other => {
                    return Err(Error::FrameMalformed(format!(
                        "estimate flag must be 0 or 1, got {other}"
                    )))
                }
            };
            Message::Report(ClientReport {
                client_id,
                tau_used,
                loss_at_start,
                beta,
                delta,
                direction: p.vector()?,
                grad_at_start: p.vector()?,
            })
        }
        TAG_STOP => Message::Stop,
        other => return Err(Error::FrameTag(other)),
    };
    if p.pos != rest.len() {
        return Err(Error::FrameLength {
            declared: body.len(),
            consumed: p.pos + 1,
        });
    }
    Ok(msg)
}

/// Decodes the first frame in `bytes`, returning the message and the number
/// of bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(Message, usize)> {
    if bytes.len() < 4 {
        return Err(Error::FrameTruncated {
            needed: 4,
            available: bytes.len(),
        });
    }
    let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if len > MAX_FRAME_LEN {
        return Err(Error::FrameTooLarge(len));
    }
    let available = bytes.len() - 4;
    if available < len {
        return Err(Error::FrameTruncated {
            needed: len,
            available,
        });
    }
    Ok((decode_body(&bytes[4..4 + len])?, 4 + len))
}

/// Decodes a concatenation of frames.
pub fn decode_stream(mut bytes: &[u8]) -> Result<Vec<Message>> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (m, used) = decode_frame(bytes)?;
        out.push(m);
        bytes = &bytes[used..];
    }
    Ok(out)
}

pub fn write_frame<W: Write>(w: &mut W, m: &Message) -> Result<()> {
    w.write_all(&encode_frame(m)?)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Message> {
    let mut head = [0u8; 4];
    r.read_exact(&mut head)?;
    let len = u32::from_be_bytes(head) as usize;
    if len > MAX_FRAME_LEN {
        return Err(Error::FrameTooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    decode_body(&body)
}
