//! Binary wire format for server-to-client messages.
//!
//! Every frame is `[type: u8][payload length: u32 LE][payload]`. Integers
//! are little-endian, reals are IEEE-754 binary64 little-endian, fields
//! appear in declaration order, and a trailing `f64` array runs to the end
//! of the payload. See `docs/protocol.md` for the byte-level tables.

use crate::error::{Error, Result};
use crate::quality::Norm;

pub const HEADER_LEN: usize = 5;

/// Upper bound on a payload accepted by [`decode`].
pub const MAX_PAYLOAD: usize = 256 << 20;

const INIT_FIXED_LEN: usize = 1 + 1 + 4 + 4 * 8 + 1 + 2 + 8 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Init = 1,
    Certify = 2,
    FullUpdate = 3,
    PartialUpdate = 4,
    StreamState = 5,
}

impl MessageKind {
    pub const ALL: [MessageKind; 5] = [
        MessageKind::Init,
        MessageKind::Certify,
        MessageKind::FullUpdate,
        MessageKind::PartialUpdate,
        MessageKind::StreamState,
    ];

    pub fn from_u8(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| *k as u8 == tag)
    }

    pub fn name(&self) -> &'static str {
        match self {
            MessageKind::Init => "init",
            MessageKind::Certify => "certify",
            MessageKind::FullUpdate => "full_update",
            MessageKind::PartialUpdate => "partial_update",
            MessageKind::StreamState => "stream_state",
        }
    }
}

/// Strategy tag carried in the handshake.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum StrategyTag {
    SimpleStream = 0,
    AdvancedStream = 1,
    FullUpdate = 2,
    PartialUpdate = 3,
    Combined = 4,
}

impl StrategyTag {
    pub fn from_u8(tag: u8) -> Option<Self> {
        use StrategyTag::*;
        [SimpleStream, AdvancedStream, FullUpdate, PartialUpdate, Combined]
            .into_iter()
            .find(|s| *s as u8 == tag)
    }

    /// Strategies whose client keeps an ensemble.
    pub fn uses_filter(&self) -> bool {
        matches!(self, StrategyTag::PartialUpdate | StrategyTag::Combined)
    }
}

fn norm_code(norm: Norm) -> u8 {
    match norm {
        Norm::Max => 0,
        Norm::Euclidean => 1,
    }
}

fn norm_from_code(code: u8) -> Option<Norm> {
    match code {
        0 => Some(Norm::Max),
        1 => Some(Norm::Euclidean),
        _ => None,
    }
}

/// Session parameters and the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Init {
    pub surrogate_level: u8,
    pub reference_level: u8,
    pub n_t: u32,
    pub dt: f64,
    pub alpha: f64,
    pub q_max: f64,
    pub sigma: f64,
    pub norm: Norm,
    pub n_e: u16,
    pub basic_seed: u64,
    pub strategy: StrategyTag,
    pub initial_state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Init(Box<Init>),
    Certify { step: u32 },
    FullUpdate { step: u32, state: Vec<f64> },
    PartialUpdate { step: u32, pairs: Vec<(u32, f64)> },
    StreamState { step: u32, state: Vec<f64> },
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Init(_) => MessageKind::Init,
            Message::Certify { .. } => MessageKind::Certify,
            Message::FullUpdate { .. } => MessageKind::FullUpdate,
            Message::PartialUpdate { .. } => MessageKind::PartialUpdate,
            Message::StreamState { .. } => MessageKind::StreamState,
        }
    }

    /// Step index; the handshake counts as step 0.
    pub fn step(&self) -> u32 {
        match self {
            Message::Init(_) => 0,
            Message::Certify { step }
            | Message::FullUpdate { step, .. }
            | Message::PartialUpdate { step, .. }
            | Message::StreamState { step, .. } => *step,
        }
    }

    fn payload_len(&self) -> usize {
        match self {
            Message::Init(init) => INIT_FIXED_LEN + 8 * init.initial_state.len(),
            Message::Certify { .. } => 4,
            Message::FullUpdate { state, .. } | Message::StreamState { state, .. } => 4 + 8 * state.len(),
            Message::PartialUpdate { pairs, .. } => 8 + 12 * pairs.len(),
        }
    }
}

/// Encoded frame length in bytes, computed without encoding.
pub fn message_size(msg: &Message) -> usize {
    HEADER_LEN + msg.payload_len()
}

/// Frame length of a `PartialUpdate` with `k` pairs.
pub fn partial_update_size(k: usize) -> usize {
    HEADER_LEN + 8 + 12 * k
}

/// Frame length of a `FullUpdate` or `StreamState` with `n` values.
pub fn state_message_size(n: usize) -> usize {
    HEADER_LEN + 4 + 8 * n
}

fn check_pairs(pairs: &[(u32, f64)]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::protocol("partial update must carry at least one pair"));
    }
    if pairs.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::protocol("partial update indices must be strictly increasing"));
    }
    Ok(())
}

pub fn encode(msg: &Message) -> Result<Vec<u8>> {
    let payload_len = msg.payload_len();
    if payload_len > MAX_PAYLOAD {
        return Err(Error::protocol(format!("payload of {payload_len} bytes exceeds limit")));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload_len);
    out.push(msg.kind() as u8);
    out.extend_from_slice(&(payload_len as u32).to_le_bytes());
    let put_f64s = |out: &mut Vec<u8>, xs: &[f64]| {
        for x in xs {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    match msg {
        Message::Init(init) => {
            out.push(init.surrogate_level);
            out.push(init.reference_level);
            out.extend_from_slice(&init.n_t.to_le_bytes());
            for x in [init.dt, init.alpha, init.q_max, init.sigma] {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out.push(norm_code(init.norm));
            out.extend_from_slice(&init.n_e.to_le_bytes());
            out.extend_from_slice(&init.basic_seed.to_le_bytes());
            out.push(init.strategy as u8);
            put_f64s(&mut out, &init.initial_state);
        }
        Message::Certify { step } => out.extend_from_slice(&step.to_le_bytes()),
        Message::FullUpdate { step, state } | Message::StreamState { step, state } => {
            out.extend_from_slice(&step.to_le_bytes());
            put_f64s(&mut out, state);
        }
        Message::PartialUpdate { step, pairs } => {
            check_pairs(pairs)?;
            out.extend_from_slice(&step.to_le_bytes());
            out.extend_from_slice(&(pairs.len() as u32).to_le_bytes());
            for (index, value) in pairs {
                out.extend_from_slice(&index.to_le_bytes());
                out.extend_from_slice(&value.to_le_bytes());
            }
        }
    }
    debug_assert_eq!(out.len(), HEADER_LEN + payload_len);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[self.pos..self.pos + N]);
        self.pos += N;
        b
    }

    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }

    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take())
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }

    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }

    fn rest_f64s(&mut self) -> Result<Vec<f64>> {
        let rest = self.buf.len() - self.pos;
        if !rest.is_multiple_of(8) {
            return Err(Error::protocol(format!("trailing array of {rest} bytes is not a multiple of 8")));
        }
        Ok((0..rest / 8).map(|_| self.f64()).collect())
    }
}

/// Reads the frame header: `(kind tag, payload length)`.
pub fn parse_header(header: &[u8; HEADER_LEN]) -> Result<(MessageKind, usize)> {
    let kind = MessageKind::from_u8(header[0])
        .ok_or_else(|| Error::protocol(format!("unknown message type {}", header[0])))?;
    let len = u32::from_le_bytes([header[1], header[2], header[3], header[4]]) as usize;
    if len > MAX_PAYLOAD {
        return Err(Error::protocol(format!("payload of {len} bytes exceeds limit")));
    }
    Ok((kind, len))
}

/// Decodes one frame from the front of `bytes`, returning the message and
/// the number of bytes consumed.
pub fn decode(bytes: &[u8]) -> Result<(Message, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::NeedMoreBytes {
            needed: HEADER_LEN - bytes.len(),
        });
    }
    let header: &[u8; HEADER_LEN] = bytes[..HEADER_LEN].try_into().expect("header slice");
    let (kind, len) = parse_header(header)?;
    let total = HEADER_LEN + len;
    if bytes.len() < total {
        return Err(Error::NeedMoreBytes {
            needed: total - bytes.len(),
        });
    }
    let msg = decode_payload(kind, &bytes[HEADER_LEN..total])?;
    Ok((msg, total))
}

pub fn decode_payload(kind: MessageKind, payload: &[u8]) -> Result<Message> {
    let len = payload.len();
    let mut c = Cursor { buf: payload, pos: 0 };
    let short = |min: usize| -> Result<()> {
        if len < min {
            Err(Error::protocol(format!("{} payload of {len} bytes is too short", kind.name())))
        } else {
            Ok(())
        }
    };
    let msg = match kind {
        MessageKind::Init => {
            short(INIT_FIXED_LEN)?;
            let surrogate_level = c.u8();
            let reference_level = c.u8();
            let n_t = c.u32();
            let dt = c.f64();
            let alpha = c.f64();
            let q_max = c.f64();
            let sigma = c.f64();
            let norm_tag = c.u8();
            let norm = norm_from_code(norm_tag)
                .ok_or_else(|| Error::protocol(format!("unknown norm code {norm_tag}")))?;
            let n_e = c.u16();
            let basic_seed = c.u64();
            let strategy_tag = c.u8();
            let strategy = StrategyTag::from_u8(strategy_tag)
                .ok_or_else(|| Error::protocol(format!("unknown strategy code {strategy_tag}")))?;
            let initial_state = c.rest_f64s()?;
            Message::Init(Box::new(Init {
                surrogate_level,
                reference_level,
                n_t,
                dt,
                alpha,
                q_max,
                sigma,
                norm,
                n_e,
                basic_seed,
                strategy,
                initial_state,
            }))
        }
        MessageKind::Certify => {
            if len != 4 {
                return Err(Error::protocol(format!("certify payload must be 4 bytes, got {len}")));
            }
            Message::Certify { step: c.u32() }
        }
        MessageKind::FullUpdate | MessageKind::StreamState => {
            short(4)?;
            let step = c.u32();
            let state = c.rest_f64s()?;
            if kind == MessageKind::FullUpdate {
                Message::FullUpdate { step, state }
            } else {
                Message::StreamState { step, state }
            }
        }
        MessageKind::PartialUpdate => {
            short(8)?;
            let step = c.u32();
            let count = c.u32() as usize;
            if len != 8 + 12 * count {
                return Err(Error::protocol(format!(
                    "partial update declares {count} pairs but carries {len} bytes"
                )));
            }
            let pairs: Vec<(u32, f64)> = (0..count).map(|_| (c.u32(), c.f64())).collect();
            check_pairs(&pairs)?;
            Message::PartialUpdate { step, pairs }
        }
    };
    Ok(msg)
}
