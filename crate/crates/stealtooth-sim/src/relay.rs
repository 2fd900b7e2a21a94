//! Audio relay pipeline: PCM capture framing, a bounded drop-oldest queue,
//! exponential reconnect backoff, heartbeat liveness, and the sender/receiver
//! state machines that bridge the two attacker endpoints.
//!
//! The transport between the endpoints is any ordered reliable byte stream;
//! the simulation uses an in-memory buffer. Everything here is synchronous
//! and single-threaded — concurrency, if any, stays outside these functions.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Wire format constants. 14-byte header: magic, version, kind, seq, length.
pub const FRAME_MAGIC: [u8; 4] = *b"STLT";
pub const WIRE_VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 14;
pub const MAX_PAYLOAD_LEN: usize = 65_535;

pub const QUEUE_CAPACITY: usize = 256;
pub const BACKOFF_BASE_MS: u64 = 100;
pub const BACKOFF_CAP_MS: u64 = 5_000;
pub const HEARTBEAT_INTERVAL_MS: u64 = 1_000;
/// Missing this many consecutive heartbeats means the transport is down.
pub const HEARTBEAT_LOSS_LIMIT: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RelayError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD_LEN}-byte frame limit")]
    PayloadTooLarge(usize),
    #[error("audio frames carry at least one byte of PCM")]
    EmptyPayload,
    #[error("codec could not encode the relayed stream for the sink device")]
    CodecEncodeFailed,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum DecodeError {
    #[error("frame magic mismatch")]
    BadMagic,
    #[error("unsupported wire version")]
    BadVersion,
    #[error("unknown frame kind byte")]
    BadKind,
    #[error("length field exceeds the frame limit")]
    BadLength,
    #[error("incomplete frame: more bytes required")]
    NeedMoreBytes,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecKind {
    PcmPassthrough,
    SbcStub,
}

/// A captured slice of the victim's audio stream.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct AudioFrame {
    pub seq: u32,
    pub pcm: Vec<u8>,
    pub codec: CodecKind,
}

impl AudioFrame {
    pub fn new(seq: u32, pcm: Vec<u8>, codec: CodecKind) -> Result<Self, RelayError> {
        if pcm.is_empty() {
            return Err(RelayError::EmptyPayload);
        }
        if pcm.len() > MAX_PAYLOAD_LEN {
            return Err(RelayError::PayloadTooLarge(pcm.len()));
        }
        Ok(AudioFrame { seq, pcm, codec })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FrameKind {
    Audio,
    Control,
    Heartbeat,
}

impl FrameKind {
    fn to_byte(self) -> u8 {
        match self {
            FrameKind::Audio => 0x01,
            FrameKind::Control => 0x02,
            FrameKind::Heartbeat => 0x03,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(FrameKind::Audio),
            0x02 => Some(FrameKind::Control),
            0x03 => Some(FrameKind::Heartbeat),
            _ => None,
        }
    }
}

/// One transport frame. Total wire size is `HEADER_LEN + payload.len()`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct WireFrame {
    pub kind: FrameKind,
    pub seq: u32,
    pub payload: Vec<u8>,
}

impl WireFrame {
    pub fn heartbeat(seq: u32) -> Self {
        WireFrame {
            kind: FrameKind::Heartbeat,
            seq,
            payload: Vec::new(),
        }
    }
}

/// Serialize a frame: magic, version, kind, seq (BE), length (BE), payload.
pub fn encode_frame(frame: &WireFrame) -> Result<Vec<u8>, RelayError> {
    if frame.payload.len() > MAX_PAYLOAD_LEN {
        return Err(RelayError::PayloadTooLarge(frame.payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + frame.payload.len());
    out.extend_from_slice(&FRAME_MAGIC);
    out.push(WIRE_VERSION);
    out.push(frame.kind.to_byte());
    out.extend_from_slice(&frame.seq.to_be_bytes());
    out.extend_from_slice(&(frame.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&frame.payload);
    Ok(out)
}

/// Parse one frame from the front of `bytes`, returning it and the unread
/// remainder. On `NeedMoreBytes` nothing has been consumed: callers keep
/// their buffer and retry once more bytes arrive.
pub fn decode_frame(bytes: &[u8]) -> Result<(WireFrame, &[u8]), DecodeError> {
    if bytes.len() < HEADER_LEN {
        // Reject garbage early even on short input when the prefix can't
        // possibly become a valid frame.
        let prefix = bytes.len().min(4);
        if bytes[..prefix] != FRAME_MAGIC[..prefix] {
            return Err(DecodeError::BadMagic);
        }
        return Err(DecodeError::NeedMoreBytes);
    }
    if bytes[..4] != FRAME_MAGIC {
        return Err(DecodeError::BadMagic);
    }
    if bytes[4] != WIRE_VERSION {
        return Err(DecodeError::BadVersion);
    }
    let kind = FrameKind::from_byte(bytes[5]).ok_or(DecodeError::BadKind)?;
    let seq = u32::from_be_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]);
    let len = u32::from_be_bytes([bytes[10], bytes[11], bytes[12], bytes[13]]) as usize;
    if len > MAX_PAYLOAD_LEN {
        return Err(DecodeError::BadLength);
    }
    if bytes.len() < HEADER_LEN + len {
        return Err(DecodeError::NeedMoreBytes);
    }
    let payload = bytes[HEADER_LEN..HEADER_LEN + len].to_vec();
    Ok((WireFrame { kind, seq, payload }, &bytes[HEADER_LEN + len..]))
}

/// Incremental decoder for a re-chunked byte stream.
#[derive(Default, Debug)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feed arbitrary chunk boundaries; returns every frame completed so far.
    pub fn push(&mut self, chunk: &[u8]) -> Result<Vec<WireFrame>, DecodeError> {
        self.buf.extend_from_slice(chunk);
        let mut frames = Vec::new();
        loop {
            match decode_frame(&self.buf) {
                Ok((frame, rest)) => {
                    let consumed = self.buf.len() - rest.len();
                    self.buf.drain(..consumed);
                    frames.push(frame);
                }
                Err(DecodeError::NeedMoreBytes) => return Ok(frames),
                Err(e) => return Err(e),
            }
        }
    }

    pub fn pending_bytes(&self) -> usize {
        self.buf.len()
    }
}

/// Exponential backoff: delay(n) = min(base * 2^n, cap) for the n-th
/// consecutive failure, starting at n = 0.
#[derive(Clone, Debug, Default)]
pub struct BackoffSchedule {
    attempt: u32,
}

impl BackoffSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn delay_for(attempt: u32) -> u64 {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        BACKOFF_BASE_MS.saturating_mul(factor).min(BACKOFF_CAP_MS)
    }

    /// Delay for the next attempt; advances the counter.
    pub fn next_delay_ms(&mut self) -> u64 {
        let d = Self::delay_for(self.attempt);
        self.attempt = self.attempt.saturating_add(1);
        d
    }

    /// A successful connection clears the failure history.
    pub fn reset(&mut self) {
        self.attempt = 0;
    }

    pub fn attempts(&self) -> u32 {
        self.attempt
    }
}

/// FIFO with a hard capacity; at capacity the oldest element is dropped to
/// admit the newest (live audio prefers fresh data over stale data).
#[derive(Clone, Debug)]
pub struct BoundedQueue<T> {
    items: VecDeque<T>,
    capacity: usize,
    dropped: u64,
}

impl<T> BoundedQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        BoundedQueue {
            items: VecDeque::with_capacity(capacity),
            capacity,
            dropped: 0,
        }
    }

    /// Returns the dropped-oldest element when the push evicted one.
    pub fn push(&mut self, item: T) -> Option<T> {
        let evicted = if self.items.len() == self.capacity {
            self.dropped += 1;
            self.items.pop_front()
        } else {
            None
        };
        self.items.push_back(item);
        debug_assert!(self.items.len() <= self.capacity);
        evicted
    }

    pub fn pop(&mut self) -> Option<T> {
        self.items.pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

#[derive(Clone, Debug)]
pub enum SenderEvent {
    PcmCaptured(AudioFrame),
    TransportUp,
    TransportDown,
    Tick { now_ms: u64 },
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum SenderAction {
    /// Encoded wire bytes ready for the transport.
    Transmit(Vec<u8>),
    /// Ask the driver to tick us again after this many milliseconds.
    ScheduleReconnect { delay_ms: u64 },
    /// Due now: try to bring the transport back up.
    AttemptReconnect,
}

/// Capture-side endpoint: queues PCM while the transport is down, drains in
/// FIFO order while it is up, and emits heartbeats on the fixed interval.
#[derive(Debug)]
pub struct SenderState {
    queue: BoundedQueue<AudioFrame>,
    transport_up: bool,
    backoff: BackoffSchedule,
    now_ms: u64,
    next_reconnect_at: Option<u64>,
    last_heartbeat_at: Option<u64>,
    heartbeat_seq: u32,
}

impl Default for SenderState {
    fn default() -> Self {
        Self::new()
    }
}

impl SenderState {
    pub fn new() -> Self {
        SenderState {
            queue: BoundedQueue::new(QUEUE_CAPACITY),
            transport_up: false,
            backoff: BackoffSchedule::new(),
            now_ms: 0,
            next_reconnect_at: None,
            last_heartbeat_at: None,
            heartbeat_seq: 0,
        }
    }

    pub fn transport_up(&self) -> bool {
        self.transport_up
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn dropped(&self) -> u64 {
        self.queue.dropped()
    }

    fn drain(&mut self, actions: &mut Vec<SenderAction>) {
        while let Some(frame) = self.queue.pop() {
            let wire = WireFrame {
                kind: FrameKind::Audio,
                seq: frame.seq,
                payload: frame.pcm,
            };
            let bytes = encode_frame(&wire).expect("AudioFrame length is pre-validated");
            actions.push(SenderAction::Transmit(bytes));
        }
    }
}

pub fn sender_step(state: &mut SenderState, event: SenderEvent) -> Vec<SenderAction> {
    let mut actions = Vec::new();
    match event {
        SenderEvent::PcmCaptured(frame) => {
            state.queue.push(frame);
            if state.transport_up {
                state.drain(&mut actions);
            }
        }
        SenderEvent::TransportUp => {
            state.transport_up = true;
            state.backoff.reset();
            state.next_reconnect_at = None;
            state.last_heartbeat_at = Some(state.now_ms);
            state.drain(&mut actions);
        }
        SenderEvent::TransportDown => {
            state.transport_up = false;
            let delay_ms = state.backoff.next_delay_ms();
            state.next_reconnect_at = Some(state.now_ms + delay_ms);
            actions.push(SenderAction::ScheduleReconnect { delay_ms });
        }
        SenderEvent::Tick { now_ms } => {
            state.now_ms = now_ms;
            if state.transport_up {
                let due = state
                    .last_heartbeat_at
                    .is_none_or(|t| now_ms.saturating_sub(t) >= HEARTBEAT_INTERVAL_MS);
                if due {
                    state.last_heartbeat_at = Some(now_ms);
                    let hb = WireFrame::heartbeat(state.heartbeat_seq);
                    state.heartbeat_seq = state.heartbeat_seq.wrapping_add(1);
                    actions.push(SenderAction::Transmit(
                        encode_frame(&hb).expect("heartbeat has no payload"),
                    ));
                }
            } else if let Some(at) = state.next_reconnect_at {
                if now_ms >= at {
                    state.next_reconnect_at = None;
                    actions.push(SenderAction::AttemptReconnect);
                }
            }
        }
    }
    actions
}

#[derive(Clone, Debug)]
pub enum ReceiverEvent {
    Frame(WireFrame),
    TransportUp,
    TransportDown,
    Tick { now_ms: u64 },
}

/// Playback-side endpoint: re-orders nothing (late frames are dropped), runs
/// the codec stage, and watches heartbeat liveness.
#[derive(Debug)]
pub struct ReceiverState {
    codec: CodecKind,
    paper_codec_mode: bool,
    last_audio_seq: Option<u32>,
    out_of_order_discards: u64,
    codec_failures: u64,
    frames_received: u64,
    last_heartbeat_at: Option<u64>,
    now_ms: u64,
    transport_up: bool,
}

impl ReceiverState {
    pub fn new(codec: CodecKind, paper_codec_mode: bool) -> Self {
        ReceiverState {
            codec,
            paper_codec_mode,
            last_audio_seq: None,
            out_of_order_discards: 0,
            codec_failures: 0,
            frames_received: 0,
            last_heartbeat_at: None,
            now_ms: 0,
            transport_up: false,
        }
    }

    pub fn out_of_order_discards(&self) -> u64 {
        self.out_of_order_discards
    }

    pub fn codec_failures(&self) -> u64 {
        self.codec_failures
    }

    pub fn frames_received(&self) -> u64 {
        self.frames_received
    }

    /// Three missed heartbeat intervals with the transport nominally up.
    pub fn heartbeat_timed_out(&self) -> bool {
        self.transport_up
            && self.last_heartbeat_at.is_some_and(|t| {
                self.now_ms.saturating_sub(t)
                    >= HEARTBEAT_INTERVAL_MS * u64::from(HEARTBEAT_LOSS_LIMIT)
            })
    }

    fn transcode(&mut self, payload: Vec<u8>) -> Result<Vec<u8>, RelayError> {
        match self.codec {
            CodecKind::PcmPassthrough => Ok(payload),
            CodecKind::SbcStub => {
                if self.paper_codec_mode {
                    self.codec_failures += 1;
                    Err(RelayError::CodecEncodeFailed)
                } else {
                    // Stand-in transcode: length-preserving marker transform.
                    Ok(payload.into_iter().map(|b| b ^ 0xA5).collect())
                }
            }
        }
    }
}

/// Returns the PCM buffers to hand to the sink device (empty for control
/// traffic). `CodecEncodeFailed` means the frame crossed the wire but could
/// not be re-encoded for the sink.
pub fn receiver_step(
    state: &mut ReceiverState,
    event: ReceiverEvent,
) -> Result<Vec<Vec<u8>>, RelayError> {
    match event {
        ReceiverEvent::Frame(frame) => match frame.kind {
            FrameKind::Audio => {
                if state.last_audio_seq.is_some_and(|last| frame.seq <= last) {
                    state.out_of_order_discards += 1;
                    return Ok(Vec::new());
                }
                state.last_audio_seq = Some(frame.seq);
                state.frames_received += 1;
                let out = state.transcode(frame.payload)?;
                Ok(vec![out])
            }
            FrameKind::Heartbeat => {
                state.last_heartbeat_at = Some(state.now_ms);
                Ok(Vec::new())
            }
            FrameKind::Control => Ok(Vec::new()),
        },
        ReceiverEvent::TransportUp => {
            state.transport_up = true;
            state.last_heartbeat_at = Some(state.now_ms);
            Ok(Vec::new())
        }
        ReceiverEvent::TransportDown => {
            state.transport_up = false;
            Ok(Vec::new())
        }
        ReceiverEvent::Tick { now_ms } => {
            state.now_ms = now_ms;
            Ok(Vec::new())
        }
    }
}
