//! Byte transports: an emulated rate-limited link and plain TCP.
//!
//! The emulated link is a FIFO token bucket filling at `rate_bits_per_s`
//! with capacity `bucket_bytes`, followed by a fixed one-way delay. Bytes
//! are modelled as a fluid: a frame of `s` bytes entering an idle link with
//! `b` banked tokens leaves after `max(0, s - b) / rate` seconds. The bucket
//! starts empty.
//!
//! Two clock modes exist. In virtual mode delivery times are computed
//! analytically against a [`VirtualClock`], which makes latency results
//! independent of the host. In real-time mode ([`ShapedSink`]) the same
//! schedule is enforced with sleeps against the wall clock.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{self, Receiver, SyncSender};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::protocol::{self, MessageKind, HEADER_LEN};

pub const DEFAULT_BUCKET_BYTES: f64 = 32768.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub rate_bits_per_s: f64,
    /// One-way delay in seconds.
    pub latency_s: f64,
    pub bucket_bytes: f64,
}

impl ChannelConfig {
    pub fn new(rate_bits_per_s: f64, latency_s: f64) -> Result<Self> {
        let cfg = Self {
            rate_bits_per_s,
            latency_s,
            bucket_bytes: DEFAULT_BUCKET_BYTES,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_bucket(mut self, bucket_bytes: f64) -> Result<Self> {
        self.bucket_bytes = bucket_bytes;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_bits_per_s > 0.0 && self.rate_bits_per_s.is_finite()) {
            return Err(Error::config(format!("rate must be positive, got {}", self.rate_bits_per_s)));
        }
        if !(self.latency_s >= 0.0 && self.latency_s.is_finite()) {
            return Err(Error::config(format!("latency must be non-negative, got {}", self.latency_s)));
        }
        if !(self.bucket_bytes >= 0.0 && self.bucket_bytes.is_finite()) {
            return Err(Error::config(format!("bucket must be non-negative, got {}", self.bucket_bytes)));
        }
        Ok(())
    }

    pub fn rate_bytes_per_s(&self) -> f64 {
        self.rate_bits_per_s / 8.0
    }
}

impl Default for ChannelConfig {
    /// 1 Mbit/s with 50 ms one-way delay.
    fn default() -> Self {
        Self {
            rate_bits_per_s: 1e6,
            latency_s: 0.05,
            bucket_bytes: DEFAULT_BUCKET_BYTES,
        }
    }
}

/// Timing of one frame through the link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delivery {
    pub enqueued: f64,
    /// First byte leaves the bucket.
    pub started: f64,
    /// Last byte leaves the bucket.
    pub departed: f64,
    /// Last byte reaches the receiver.
    pub delivered: f64,
}

/// Analytic FIFO token bucket.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    cfg: ChannelConfig,
    tokens: f64,
    /// Time at which `tokens` was last valid and the backlog is empty.
    idle_since: f64,
}

impl TokenBucket {
    pub fn new(cfg: ChannelConfig) -> Self {
        Self {
            cfg,
            tokens: 0.0,
            idle_since: 0.0,
        }
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    /// Time the last queued byte leaves the bucket.
    pub fn busy_until(&self) -> f64 {
        self.idle_since
    }

    /// Enqueues `bytes` at time `at` (non-decreasing across calls).
    pub fn schedule(&mut self, at: f64, bytes: usize) -> Delivery {
        let rate = self.cfg.rate_bytes_per_s();
        let started = at.max(self.idle_since);
        let available = (self.tokens + (started - self.idle_since) * rate).min(self.cfg.bucket_bytes);
        let size = bytes as f64;
        let departed = if size <= available {
            self.tokens = available - size;
            started
        } else {
            self.tokens = 0.0;
            started + (size - available) / rate
        };
        self.idle_since = departed;
        Delivery {
            enqueued: at,
            started,
            departed,
            delivered: departed + self.cfg.latency_s,
        }
    }
}

/// Monotone simulated time.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VirtualClock {
    now: f64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn advance(&mut self, dt: f64) -> Result<f64> {
        if dt.is_nan() || dt < 0.0 {
            return Err(Error::config(format!("cannot advance the clock by {dt}")));
        }
        self.now += dt;
        Ok(self.now)
    }

    /// Moves to `t` if it lies in the future; never goes back.
    pub fn advance_to(&mut self, t: f64) -> f64 {
        self.now = self.now.max(t);
        self.now
    }
}

/// Per-session traffic counters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransportStats {
    pub bytes_sent: u64,
    /// Indexed by message type code (`0` unused).
    pub messages_sent: [u64; 6],
    /// `(step, first byte time, last byte time)` per sent frame.
    pub timings: Vec<(u32, f64, f64)>,
}

impl TransportStats {
    pub fn record(&mut self, kind: MessageKind, step: u32, bytes: usize, first: f64, last: f64) {
        self.bytes_sent += bytes as u64;
        self.messages_sent[kind as usize] += 1;
        self.timings.push((step, first, last));
    }

    pub fn count(&self, kind: MessageKind) -> u64 {
        self.messages_sent[kind as usize]
    }

    pub fn total_messages(&self) -> u64 {
        self.messages_sent.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    Virtual,
    RealTime,
}

/// Emulated link in virtual time: frames are enqueued at the clock's
/// current time and become receivable once the clock reaches their
/// delivery time.
#[derive(Debug)]
pub struct VirtualLink {
    bucket: TokenBucket,
    clock: VirtualClock,
    in_flight: VecDeque<(Delivery, Vec<u8>)>,
    stats: TransportStats,
}

impl VirtualLink {
    pub fn new(cfg: ChannelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            bucket: TokenBucket::new(cfg),
            clock: VirtualClock::new(),
            in_flight: VecDeque::new(),
            stats: TransportStats::default(),
        })
    }

    pub fn mode(&self) -> ClockMode {
        ClockMode::Virtual
    }

    pub fn now(&self) -> f64 {
        self.clock.now()
    }

    pub fn advance(&mut self, dt: f64) -> Result<Vec<(f64, Vec<u8>)>> {
        self.clock.advance(dt)?;
        Ok(self.poll())
    }

    pub fn advance_to(&mut self, t: f64) -> Vec<(f64, Vec<u8>)> {
        self.clock.advance_to(t);
        self.poll()
    }

    /// Enqueues a frame at the current virtual time.
    pub fn send(&mut self, frame: Vec<u8>) -> Delivery {
        let d = self.bucket.schedule(self.clock.now(), frame.len());
        match protocol::decode(&frame) {
            Ok((msg, _)) => self.stats.record(msg.kind(), msg.step(), frame.len(), d.started, d.delivered),
            Err(_) => self.stats.bytes_sent += frame.len() as u64,
        }
        self.in_flight.push_back((d, frame));
        d
    }

    /// Removes every frame delivered by now, in send order.
    pub fn poll(&mut self) -> Vec<(f64, Vec<u8>)> {
        let mut out = Vec::new();
        while let Some((d, _)) = self.in_flight.front() {
            if d.delivered > self.clock.now() {
                break;
            }
            let (d, frame) = self.in_flight.pop_front().expect("front exists");
            out.push((d.delivered, frame));
        }
        out
    }

    pub fn next_delivery(&self) -> Option<f64> {
        self.in_flight.front().map(|(d, _)| d.delivered)
    }

    pub fn stats(&self) -> &TransportStats {
        &self.stats
    }

    /// Real-time calls are refused on a virtual link.
    pub fn send_now(&mut self, _frame: Vec<u8>) -> Result<Delivery> {
        Err(Error::config("virtual link cannot be driven by the wall clock"))
    }
}

/// Outgoing half of a framed transport.
pub trait FrameSink: Send {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<()>;

    /// Blocks until every accepted frame has been handed to the peer.
    fn flush(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Incoming half of a framed transport. `Ok(None)` means the peer closed
/// the session cleanly between frames.
pub trait FrameSource: Send {
    fn recv_frame(&mut self) -> Result<Option<Vec<u8>>>;
}

/// Reads one complete frame from a byte stream.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<Option<Vec<u8>>> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match reader.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(Error::SessionClosed),
            Ok(k) => filled += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let (_, len) = protocol::parse_header(&header)?;
    let mut frame = vec![0u8; HEADER_LEN + len];
    frame[..HEADER_LEN].copy_from_slice(&header);
    reader.read_exact(&mut frame[HEADER_LEN..]).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::SessionClosed,
        _ => e.into(),
    })?;
    Ok(Some(frame))
}

pub struct TcpSink {
    stream: TcpStream,
}

impl TcpSink {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }
}

impl FrameSink for TcpSink {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<()> {
        self.stream.write_all(&frame).map_err(|e| match e.kind() {
            io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset => Error::SessionClosed,
            _ => e.into(),
        })
    }

    fn flush(&mut self) -> Result<()> {
        self.stream.flush()?;
        Ok(())
    }
}

pub struct TcpSource {
    stream: io::BufReader<TcpStream>,
}

impl TcpSource {
    pub fn new(stream: TcpStream) -> Self {
        Self {
            stream: io::BufReader::new(stream),
        }
    }
}

impl FrameSource for TcpSource {
    fn recv_frame(&mut self) -> Result<Option<Vec<u8>>> {
        read_frame(&mut self.stream)
    }
}

/// In-process frame pipe.
pub fn memory_pipe() -> (MemorySink, MemorySource) {
    let (tx, rx) = mpsc::channel();
    (MemorySink { tx }, MemorySource { rx })
}

pub struct MemorySink {
    tx: mpsc::Sender<Vec<u8>>,
}

impl FrameSink for MemorySink {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<()> {
        self.tx.send(frame).map_err(|_| Error::SessionClosed)
    }
}

pub struct MemorySource {
    rx: mpsc::Receiver<Vec<u8>>,
}

impl FrameSource for MemorySource {
    fn recv_frame(&mut self) -> Result<Option<Vec<u8>>> {
        Ok(self.rx.recv().ok())
    }
}

/// Hands frames to a background writer through a bounded queue, so the
/// producer only blocks when `depth` frames are already waiting.
pub struct QueuedSink {
    tx: Option<SyncSender<Vec<u8>>>,
    worker: Option<JoinHandle<Result<()>>>,
}

impl QueuedSink {
    pub fn new<S: FrameSink + 'static>(mut inner: S, depth: usize) -> Self {
        let (tx, rx): (SyncSender<Vec<u8>>, Receiver<Vec<u8>>) = mpsc::sync_channel(depth.max(1));
        let worker = thread::spawn(move || {
            for frame in rx {
                inner.send_frame(frame)?;
            }
            inner.flush()
        });
        Self {
            tx: Some(tx),
            worker: Some(worker),
        }
    }

    fn join(&mut self) -> Result<()> {
        self.tx.take();
        match self.worker.take() {
            Some(w) => w
                .join()
                .map_err(|_| Error::Io(io::Error::other("sender thread panicked")))?,
            None => Ok(()),
        }
    }
}

impl FrameSink for QueuedSink {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<()> {
        let tx = self.tx.as_ref().ok_or(Error::SessionClosed)?;
        if tx.send(frame).is_err() {
            // The worker stopped; surface its error.
            self.join()?;
            return Err(Error::SessionClosed);
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.join()
    }
}

impl Drop for QueuedSink {
    fn drop(&mut self) {
        let _ = self.join();
    }
}

/// Real-time emulated link in front of another sink. Each frame is
/// scheduled through a [`TokenBucket`] against the wall clock and written
/// to `inner` once its delivery time has passed.
pub struct ShapedSink {
    bucket: TokenBucket,
    epoch: Instant,
    queue: QueuedSink,
    stats: TransportStats,
}

struct DelayLine<S> {
    inner: S,
    epoch: Instant,
}

impl<S: FrameSink> FrameSink for DelayLine<S> {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<()> {
        let mut at = [0u8; 8];
        at.copy_from_slice(&frame[..8]);
        let due = Duration::from_secs_f64(f64::from_le_bytes(at));
        let elapsed = self.epoch.elapsed();
        if due > elapsed {
            thread::sleep(due - elapsed);
        }
        self.inner.send_frame(frame[8..].to_vec())
    }

    fn flush(&mut self) -> Result<()> {
        self.inner.flush()
    }
}

impl ShapedSink {
    pub fn new<S: FrameSink + 'static>(inner: S, cfg: ChannelConfig) -> Result<Self> {
        cfg.validate()?;
        let epoch = Instant::now();
        Ok(Self {
            bucket: TokenBucket::new(cfg),
            epoch,
            queue: QueuedSink::new(DelayLine { inner, epoch }, 1024),
            stats: TransportStats::default(),
        })
    }

    pub fn mode(&self) -> ClockMode {
        ClockMode::RealTime
    }

    pub fn stats(&self) -> &TransportStats {
        &self.stats
    }

    /// Virtual-time calls are refused on a real-time link.
    pub fn send_at(&mut self, _at: f64, _frame: Vec<u8>) -> Result<Delivery> {
        Err(Error::config("real-time link cannot be driven by a virtual clock"))
    }
}

impl FrameSink for ShapedSink {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<()> {
        let now = self.epoch.elapsed().as_secs_f64();
        let d = self.bucket.schedule(now, frame.len());
        if let Ok((msg, _)) = protocol::decode(&frame) {
            self.stats.record(msg.kind(), msg.step(), frame.len(), d.started, d.delivered);
        }
        let mut tagged = Vec::with_capacity(8 + frame.len());
        tagged.extend_from_slice(&d.delivered.to_le_bytes());
        tagged.extend_from_slice(&frame);
        self.queue.send_frame(tagged)
    }

    fn flush(&mut self) -> Result<()> {
        self.queue.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{encode, Message};

    fn cfg(rate: f64, latency: f64) -> ChannelConfig {
        ChannelConfig::new(rate, latency).unwrap()
    }

    #[test]
    fn one_second_for_125_kilobytes() {
        let mut b = TokenBucket::new(cfg(1e6, 0.0));
        let d = b.schedule(0.0, 125_000);
        assert_eq!(d.delivered, 1.0);
    }

    #[test]
    fn empty_frame_arrives_after_latency() {
        let mut b = TokenBucket::new(cfg(1e6, 1.0));
        assert_eq!(b.schedule(0.0, 0).delivered, 1.0);
    }

    #[test]
    fn back_to_back_frames_queue() {
        let mut b = TokenBucket::new(cfg(8000.0, 0.0));
        let first = b.schedule(0.0, 1000);
        let second = b.schedule(0.0, 1000);
        assert_eq!(first.departed, 1.0);
        assert_eq!(second.started, 1.0);
        assert_eq!(second.departed, 2.0);
    }

    #[test]
    fn idle_link_banks_tokens_up_to_bucket() {
        let mut b = TokenBucket::new(cfg(8000.0, 0.0).with_bucket(500.0).unwrap());
        b.schedule(0.0, 0);
        // 10 s idle would bank 10000 bytes, capped at 500.
        let d = b.schedule(10.0, 1500);
        assert_eq!(d.departed, 11.0);
    }

    #[test]
    fn advance_zero_delivers_nothing() {
        let mut link = VirtualLink::new(cfg(1e6, 0.01)).unwrap();
        link.send(encode(&Message::Certify { step: 1 }).unwrap());
        assert!(link.advance(0.0).unwrap().is_empty());
        let got = link.advance(1.0).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(link.stats().bytes_sent, 9);
        assert_eq!(link.stats().count(MessageKind::Certify), 1);
    }

    #[test]
    fn modes_do_not_mix() {
        let mut link = VirtualLink::new(cfg(1e6, 0.0)).unwrap();
        assert!(matches!(link.send_now(vec![]), Err(Error::Config(_))));
        let (sink, _src) = memory_pipe();
        let mut shaped = ShapedSink::new(sink, cfg(1e6, 0.0)).unwrap();
        assert!(matches!(shaped.send_at(0.0, vec![]), Err(Error::Config(_))));
        assert!(link.advance(-1.0).is_err());
    }

    #[test]
    fn invalid_channel_rejected() {
        assert!(ChannelConfig::new(0.0, 0.0).is_err());
        assert!(ChannelConfig::new(1.0, -1.0).is_err());
        assert!(ChannelConfig::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn shaped_sink_delivers_in_order_after_delay() {
        let (sink, mut src) = memory_pipe();
        let mut shaped = ShapedSink::new(sink, cfg(8e6, 0.02)).unwrap();
        let start = Instant::now();
        for step in 1..=3 {
            shaped.send_frame(encode(&Message::Certify { step }).unwrap()).unwrap();
        }
        shaped.flush().unwrap();
        assert!(start.elapsed() >= Duration::from_millis(20));
        for step in 1..=3 {
            let frame = src.recv_frame().unwrap().unwrap();
            assert_eq!(protocol::decode(&frame).unwrap().0.step(), step);
        }
        assert_eq!(shaped.stats().bytes_sent, 27);
    }

    #[test]
    fn read_frame_handles_split_reads() {
        let bytes = encode(&Message::FullUpdate {
            step: 2,
            state: vec![1.0, 2.0],
        })
        .unwrap();
        struct Trickle(Vec<u8>, usize);
        impl Read for Trickle {
            fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
                if self.1 >= self.0.len() || buf.is_empty() {
                    return Ok(0);
                }
                buf[0] = self.0[self.1];
                self.1 += 1;
                Ok(1)
            }
        }
        let mut r = Trickle(bytes.clone(), 0);
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), bytes);
        assert!(read_frame(&mut r).unwrap().is_none());
        let mut cut = Trickle(bytes[..7].to_vec(), 0);
        assert!(matches!(read_frame(&mut cut), Err(Error::SessionClosed)));
    }
}
