//! Public-channel exchange of the reconciliation XOR code.
//!
//! # Wire format
//!
//! Every message is one frame:
//!
//! ```text
//! +---------+---------+----------+----------------+-----------+
//! | "TMCC"  | version | msg_type | length (u32 BE)| payload   |
//! | 4 bytes | 1 byte  | 1 byte   | 4 bytes        | length    |
//! +---------+---------+----------+----------------+-----------+
//! ```
//!
//! The initiator sends `HELLO` (empty payload) and then `XOR_CODE`, whose
//! payload is the bit count as a big-endian `u32` followed by the packed bits,
//! most significant bit first. The responder answers with `VERDICT`: `[1]` on
//! match, `[0]` on mismatch, `[0, 1]` when the code lengths differ. Either side
//! sends `ABORT` on a malformed or unexpected frame. Nothing but the XOR code
//! derived from the key ever leaves a party.

use std::fmt::Write as _;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::qkd_protocol::{pack_bits, reconcile, unpack_bits, KeyMaterial, Mismatch, Verdict};

pub const MAGIC: [u8; 4] = *b"TMCC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
pub const MAX_PAYLOAD: usize = 1 << 20;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);
const CONNECT_RETRY: Duration = Duration::from_millis(50);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Hello = 1,
    XorCode = 2,
    Verdict = 3,
    Abort = 4,
}

impl TryFrom<u8> for MsgType {
    type Error = FrameError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            1 => Ok(MsgType::Hello),
            2 => Ok(MsgType::XorCode),
            3 => Ok(MsgType::Verdict),
            4 => Ok(MsgType::Abort),
            other => Err(FrameError::UnknownMsgType(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, payload: Vec<u8>) -> Self {
        Frame { msg_type, payload }
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
    PayloadTooLarge(usize),
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message type {0}")]
    UnknownMsgType(u8),
    #[error("frame truncated: needed {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, FrameError> {
    if frame.payload.len() > MAX_PAYLOAD {
        return Err(FrameError::PayloadTooLarge(frame.payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + frame.payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(frame.msg_type as u8);
    out.extend_from_slice(&(frame.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&frame.payload);
    Ok(out)
}

fn parse_header(header: &[u8; HEADER_LEN]) -> Result<(MsgType, usize), FrameError> {
    let magic: [u8; 4] = header[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    if header[4] != VERSION {
        return Err(FrameError::UnsupportedVersion(header[4]));
    }
    let msg_type = MsgType::try_from(header[5])?;
    let len = u32::from_be_bytes(header[6..10].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::PayloadTooLarge(len));
    }
    Ok((msg_type, len))
}

/// Decodes one frame from the front of `bytes`, returning it with the number
/// of bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(Frame, usize), FrameError> {
    let header: &[u8; HEADER_LEN] = bytes
        .get(..HEADER_LEN)
        .and_then(|h| h.try_into().ok())
        .ok_or(FrameError::Truncated { needed: HEADER_LEN, got: bytes.len() })?;
    let (msg_type, len) = parse_header(header)?;
    let end = HEADER_LEN + len;
    let payload = bytes.get(HEADER_LEN..end).ok_or(FrameError::Truncated { needed: end, got: bytes.len() })?;
    Ok((Frame::new(msg_type, payload.to_vec()), end))
}

pub fn read_frame<R: Read>(reader: &mut R) -> Result<Frame, FrameError> {
    let mut header = [0u8; HEADER_LEN];
    reader.read_exact(&mut header)?;
    let (msg_type, len) = parse_header(&header)?;
    let mut payload = vec![0u8; len];
    reader.read_exact(&mut payload)?;
    Ok(Frame::new(msg_type, payload))
}

pub fn write_frame<W: Write>(writer: &mut W, frame: &Frame) -> Result<(), FrameError> {
    writer.write_all(&encode_frame(frame)?)?;
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Initiator,
    Responder,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AbortReason {
    Timeout,
    /// Stream closed before a full frame arrived.
    Disconnected,
    Malformed(String),
    Unexpected(String),
    PeerAborted,
    Io(String),
}

/// What an exchange ends with on one side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChannelVerdict {
    Match,
    Mismatch { length_mismatch: bool },
    Abort(AbortReason),
}

impl ChannelVerdict {
    fn from_verdict(v: Verdict) -> Self {
        match v {
            Verdict::Match => ChannelVerdict::Match,
            Verdict::Mismatch(Mismatch::Bits { .. }) => ChannelVerdict::Mismatch { length_mismatch: false },
            Verdict::Mismatch(Mismatch::Length { .. }) => ChannelVerdict::Mismatch { length_mismatch: true },
        }
    }

    fn verdict_payload(&self) -> Vec<u8> {
        match self {
            ChannelVerdict::Match => vec![1],
            ChannelVerdict::Mismatch { length_mismatch: false } => vec![0],
            ChannelVerdict::Mismatch { length_mismatch: true } => vec![0, 1],
            ChannelVerdict::Abort(_) => unreachable!("aborts are sent as ABORT frames"),
        }
    }

    fn from_verdict_payload(payload: &[u8]) -> Option<Self> {
        match payload {
            [1] => Some(ChannelVerdict::Match),
            [0] => Some(ChannelVerdict::Mismatch { length_mismatch: false }),
            [0, 1] => Some(ChannelVerdict::Mismatch { length_mismatch: true }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

/// Every frame that crossed the transport during one exchange, raw.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub frames: Vec<(Direction, Vec<u8>)>,
}

impl Transcript {
    /// One line per frame: `>` sent or `<` received, then the hex bytes.
    pub fn to_hex_log(&self) -> String {
        let mut out = String::new();
        for (dir, bytes) in &self.frames {
            let mark = match dir {
                Direction::Sent => '>',
                Direction::Received => '<',
            };
            let _ = writeln!(out, "{mark} {}", hex::encode(bytes));
        }
        out
    }

    pub fn sent(&self) -> impl Iterator<Item = &[u8]> {
        self.frames.iter().filter(|(d, _)| *d == Direction::Sent).map(|(_, b)| b.as_slice())
    }
}

fn abort_reason(err: &FrameError) -> AbortReason {
    match err {
        FrameError::Io(e) => match e.kind() {
            io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => AbortReason::Timeout,
            io::ErrorKind::UnexpectedEof
            | io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted
            | io::ErrorKind::BrokenPipe => AbortReason::Disconnected,
            _ => AbortReason::Io(e.to_string()),
        },
        other => AbortReason::Malformed(other.to_string()),
    }
}

struct Session<'a, T> {
    transport: &'a mut T,
    transcript: &'a mut Transcript,
}

impl<T: Read + Write> Session<'_, T> {
    fn send(&mut self, frame: &Frame) -> Result<(), AbortReason> {
        let bytes = encode_frame(frame).map_err(|e| AbortReason::Malformed(e.to_string()))?;
        self.transcript.frames.push((Direction::Sent, bytes.clone()));
        self.transport
            .write_all(&bytes)
            .and_then(|_| self.transport.flush())
            .map_err(|e| abort_reason(&FrameError::Io(e)))
    }

    fn recv(&mut self) -> Result<Frame, AbortReason> {
        match read_frame(self.transport) {
            Ok(frame) => {
                let bytes = encode_frame(&frame).expect("decoded frames re-encode");
                self.transcript.frames.push((Direction::Received, bytes));
                if frame.msg_type == MsgType::Abort {
                    return Err(AbortReason::PeerAborted);
                }
                Ok(frame)
            }
            Err(e) => {
                let reason = abort_reason(&e);
                if matches!(reason, AbortReason::Malformed(_)) {
                    self.send_abort();
                }
                Err(reason)
            }
        }
    }

    fn expect(&mut self, msg_type: MsgType) -> Result<Frame, AbortReason> {
        let frame = self.recv()?;
        if frame.msg_type != msg_type {
            self.send_abort();
            return Err(AbortReason::Unexpected(format!("expected {msg_type:?}, got {:?}", frame.msg_type)));
        }
        Ok(frame)
    }

    // Best effort; the peer may already be gone.
    fn send_abort(&mut self) {
        let _ = self.send(&Frame::new(MsgType::Abort, Vec::new()));
    }
}

fn xor_code_payload(key: &KeyMaterial) -> Vec<u8> {
    let code = key.xor_code();
    let mut payload = (code.len() as u32).to_be_bytes().to_vec();
    payload.extend(pack_bits(code));
    payload
}

fn parse_xor_code_payload(payload: &[u8]) -> Option<Vec<bool>> {
    let (count, packed) = payload.split_first_chunk::<4>()?;
    unpack_bits(packed, u32::from_be_bytes(*count) as usize).ok()
}

/// Runs one reconciliation exchange over `transport`, recording every frame.
pub fn run_exchange_recorded<T: Read + Write>(
    role: Role,
    key: &KeyMaterial,
    transport: &mut T,
    transcript: &mut Transcript,
) -> ChannelVerdict {
    let mut session = Session { transport, transcript };
    let outcome = match role {
        Role::Initiator => initiate(&mut session, key),
        Role::Responder => respond(&mut session, key),
    };
    outcome.unwrap_or_else(ChannelVerdict::Abort)
}

pub fn run_reconciliation_exchange<T: Read + Write>(
    role: Role,
    key: &KeyMaterial,
    transport: &mut T,
) -> ChannelVerdict {
    run_exchange_recorded(role, key, transport, &mut Transcript::default())
}

fn initiate<T: Read + Write>(s: &mut Session<'_, T>, key: &KeyMaterial) -> Result<ChannelVerdict, AbortReason> {
    s.send(&Frame::new(MsgType::Hello, Vec::new()))?;
    s.send(&Frame::new(MsgType::XorCode, xor_code_payload(key)))?;
    let reply = s.expect(MsgType::Verdict)?;
    ChannelVerdict::from_verdict_payload(&reply.payload)
        .ok_or_else(|| AbortReason::Malformed(format!("verdict payload {:02x?}", reply.payload)))
}

fn respond<T: Read + Write>(s: &mut Session<'_, T>, key: &KeyMaterial) -> Result<ChannelVerdict, AbortReason> {
    s.expect(MsgType::Hello)?;
    let code_frame = s.expect(MsgType::XorCode)?;
    let Some(remote) = parse_xor_code_payload(&code_frame.payload) else {
        s.send_abort();
        return Err(AbortReason::Malformed("XOR_CODE payload".into()));
    };
    let verdict = ChannelVerdict::from_verdict(reconcile(key, &remote));
    s.send(&Frame::new(MsgType::Verdict, verdict.verdict_payload()))?;
    Ok(verdict)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExchangeOptions {
    pub timeout: Duration,
}

impl Default for ExchangeOptions {
    fn default() -> Self {
        ExchangeOptions { timeout: DEFAULT_TIMEOUT }
    }
}

fn configure(stream: &TcpStream, timeout: Duration) -> io::Result<()> {
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    stream.set_nodelay(true)
}

fn io_abort(e: io::Error) -> ChannelVerdict {
    ChannelVerdict::Abort(abort_reason(&FrameError::Io(e)))
}

/// Connects to `peer`, retrying until the timeout, and runs the initiator side.
pub fn connect_and_reconcile(
    peer: &str,
    key: &KeyMaterial,
    opts: ExchangeOptions,
    transcript: &mut Transcript,
) -> ChannelVerdict {
    let addrs: Vec<SocketAddr> = match peer.to_socket_addrs() {
        Ok(a) => a.collect(),
        Err(e) => return ChannelVerdict::Abort(AbortReason::Io(format!("resolve {peer}: {e}"))),
    };
    if addrs.is_empty() {
        return ChannelVerdict::Abort(AbortReason::Io(format!("no address for {peer}")));
    }
    // The responder may not be listening yet; keep trying until the deadline.
    let deadline = Instant::now() + opts.timeout;
    loop {
        for addr in &addrs {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return ChannelVerdict::Abort(AbortReason::Timeout);
            }
            if let Ok(mut stream) = TcpStream::connect_timeout(addr, remaining) {
                if let Err(e) = configure(&stream, opts.timeout) {
                    return io_abort(e);
                }
                return run_exchange_recorded(Role::Initiator, key, &mut stream, transcript);
            }
        }
        std::thread::sleep(CONNECT_RETRY.min(deadline.saturating_duration_since(Instant::now())));
    }
}

/// Waits up to the timeout for one connection on `listener` and runs the
/// responder side on it.
pub fn accept_and_reconcile(
    listener: &TcpListener,
    key: &KeyMaterial,
    opts: ExchangeOptions,
    transcript: &mut Transcript,
) -> ChannelVerdict {
    let deadline = Instant::now() + opts.timeout;
    if let Err(e) = listener.set_nonblocking(true) {
        return io_abort(e);
    }
    let mut stream = loop {
        match listener.accept() {
            Ok((stream, _)) => break stream,
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return ChannelVerdict::Abort(AbortReason::Timeout);
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return io_abort(e),
        }
    };
    if let Err(e) = stream.set_nonblocking(false).and_then(|_| configure(&stream, opts.timeout)) {
        return io_abort(e);
    }
    run_exchange_recorded(Role::Responder, key, &mut stream, transcript)
}
