use std::collections::VecDeque;
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::grid::StateVector;
use crate::protocol::{self, Message, MessageKind};
use crate::transport::{ChannelConfig, FrameSink, FrameSource, QueuedSink, TransportStats, VirtualLink};

use super::client::{Client, ClientMode};
use super::cost::CostModel;
use super::server::{DecisionHook, Server, ServerStep};
use super::SessionConfig;

/// Server-side log entry for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u32,
    pub kind: MessageKind,
    pub bytes: usize,
    pub candidate_quality: f64,
    /// Points carried by a partial update, or selected before falling back.
    pub points: usize,
    pub raw_violations: usize,
    pub resolved: Option<bool>,
    pub forced: bool,
    pub enqueued_at: f64,
    pub delivered_at: f64,
}

#[derive(Debug, Clone)]
pub struct ServerRun {
    /// Tracked client state per step, starting with the initial state.
    pub tracked_chain: Vec<StateVector>,
    /// Restricted reference state per step.
    pub target_chain: Vec<StateVector>,
    pub steps: Vec<StepRecord>,
    pub stats: TransportStats,
    pub finished_at: f64,
}

#[derive(Debug, Clone)]
pub struct ClientRun {
    /// Published states, starting with the initial state.
    pub approx_chain: Vec<StateVector>,
    pub kinds: Vec<MessageKind>,
    /// Publish time per entry of `approx_chain`.
    pub publish_times: Vec<f64>,
    pub total_latency: f64,
}

impl ServerRun {
    fn new(initial: StateVector) -> Self {
        Self {
            tracked_chain: vec![initial.clone()],
            target_chain: vec![initial],
            steps: Vec::new(),
            stats: TransportStats::default(),
            finished_at: 0.0,
        }
    }

    fn push(&mut self, out: ServerStep, bytes: usize, enqueued_at: f64, delivered_at: f64) {
        let (points, resolved) = match (&out.report, &out.message) {
            (_, Message::PartialUpdate { pairs, .. }) => (pairs.len(), out.report.as_ref().map(|r| r.resolved)),
            (Some(r), _) => (r.points.len(), Some(r.resolved)),
            (None, _) => (0, None),
        };
        let raw_violations = out.raw_violations;
        self.steps.push(StepRecord {
            step: out.message.step(),
            kind: out.message.kind(),
            bytes,
            candidate_quality: out.candidate_quality,
            points,
            raw_violations,
            resolved,
            forced: out.forced,
            enqueued_at,
            delivered_at,
        });
        self.tracked_chain.push(out.tracked);
        self.target_chain.push(out.target);
    }
}

/// Runs server and client in one process over a virtual-time emulated link.
///
/// The server is a two-stage pipeline (reference model, then decision and
/// encoding) feeding a send queue of `cost.send_queue_depth` frames. The
/// client publishes step `i` once the step-`i` frame has arrived and the
/// required local work is done; see [`ClientMode`] for when the surrogate
/// step runs. Every frame is decoded from its encoded bytes.
pub fn run_pair(
    cfg: &SessionConfig,
    reference_initial: StateVector,
    channel: ChannelConfig,
    mode: ClientMode,
    cost: &CostModel,
    hook: Option<Box<dyn DecisionHook>>,
) -> Result<(ClientRun, ServerRun)> {
    cost.validate()?;
    let mut server = Server::new(cfg.clone(), reference_initial)?;
    if let Some(h) = hook {
        server = server.with_hook(h);
    }
    let mut link = VirtualLink::new(channel)?;
    let mut run = ServerRun::new(server.tracker().state.clone());

    let init_frame = protocol::encode(&Message::Init(Box::new(server.init()?)))?;
    let mut decision_done = cost.server_codec(init_frame.len());
    let mut reference_done = 0.0f64;
    let mut frames = link.advance_to(decision_done);
    link.send(init_frame);

    let depth = cost.send_queue_depth;
    let mut departures: VecDeque<f64> = VecDeque::new();
    while !server.is_done() {
        let out = server.step()?;
        reference_done += cost.server_compute(out.reference_flops);
        let frame = protocol::encode(&out.message)?;
        decision_done = decision_done.max(reference_done)
            + cost.server_compute(out.decision_flops)
            + cost.server_codec(frame.len());
        if departures.len() >= depth {
            let oldest = departures.pop_front().expect("non-empty");
            decision_done = decision_done.max(oldest);
        }
        frames.extend(link.advance_to(decision_done));
        let bytes = frame.len();
        let d = link.send(frame);
        departures.push_back(d.departed);
        run.push(out, bytes, d.enqueued, d.delivered);
    }
    run.finished_at = decision_done;
    frames.extend(link.advance_to(f64::INFINITY));
    run.stats = link.stats().clone();

    let client = simulate_client(frames, mode, cost)?;
    Ok((client, run))
}

fn simulate_client(frames: Vec<(f64, Vec<u8>)>, mode: ClientMode, cost: &CostModel) -> Result<ClientRun> {
    let mut frames = frames.into_iter();
    let (t0, init_frame) = frames.next().ok_or(Error::SessionClosed)?;
    let Message::Init(init) = protocol::decode(&init_frame)?.0 else {
        return Err(Error::protocol("session must start with init"));
    };
    let mut client = Client::from_init(&init)?;
    let published0 = t0 + cost.client_codec(init_frame.len());
    let mut ready = published0
        + if init.strategy.uses_filter() {
            cost.client_compute(crate::enkf::generation_flops(
                client.state().len(),
                init.n_e as usize,
            ))
        } else {
            0.0
        };
    let mut result = ClientRun {
        approx_chain: vec![client.state().clone()],
        kinds: Vec::new(),
        publish_times: vec![published0],
        total_latency: published0,
    };
    for (arrived, frame) in frames {
        let (msg, _) = protocol::decode(&frame)?;
        let decode = cost.client_codec(frame.len());
        let forecast = cost.client_compute(client.forecast_flops());
        let needs_forecast = matches!(msg.kind(), MessageKind::Certify | MessageKind::PartialUpdate);
        let prepared = if needs_forecast { Some(client.prepare()?) } else { None };
        let outcome = client.apply(msg, prepared)?;
        let integrate = cost.client_compute(outcome.integrate_flops);
        let publish = match (mode, needs_forecast) {
            (ClientMode::Optimistic, true) => arrived.max(ready + forecast) + decode + integrate,
            (ClientMode::Pessimistic, true) => arrived.max(ready) + decode + forecast + integrate,
            (_, false) => arrived.max(ready) + decode,
        };
        ready = publish + cost.client_compute(outcome.followup_flops);
        result.kinds.push(outcome.kind);
        result.approx_chain.push(outcome.published);
        result.publish_times.push(publish);
        result.total_latency = publish;
    }
    if !client.is_done() {
        return Err(Error::SessionClosed);
    }
    Ok(result)
}

/// Runs the server over a real transport. The reference model runs on its
/// own thread and frames go out through a bounded send queue; times are
/// wall-clock seconds since the call.
pub fn server_run<S: FrameSink + 'static>(
    cfg: &SessionConfig,
    reference_initial: StateVector,
    sink: S,
    hook: Option<Box<dyn DecisionHook>>,
) -> Result<ServerRun> {
    let start = Instant::now();
    let mut server = Server::new(cfg.clone(), reference_initial)?;
    if let Some(h) = hook {
        server = server.with_hook(h);
    }
    let mut sink = QueuedSink::new(sink, 16);
    let mut run = ServerRun::new(server.tracker().state.clone());
    let init_frame = protocol::encode(&Message::Init(Box::new(server.init()?)))?;
    let init_len = init_frame.len();
    sink.send_frame(init_frame)?;
    run.stats.record(MessageKind::Init, 0, init_len, 0.0, start.elapsed().as_secs_f64());

    let mut runner = server.reference_runner();
    let per_state = runner.flops_per_state();
    let n_t = cfg.problem.n_t;
    let (tx, rx) = mpsc::sync_channel::<Result<StateVector>>(4);
    let producer = thread::spawn(move || {
        for _ in 0..n_t {
            let next = runner.advance();
            let failed = next.is_err();
            if tx.send(next).is_err() || failed {
                break;
            }
        }
    });
    let outcome = (|| -> Result<()> {
        for reference in rx.iter() {
            let mut out = server.step_with(&reference?)?;
            out.reference_flops = per_state;
            let frame = protocol::encode(&out.message)?;
            let bytes = frame.len();
            let enqueued = start.elapsed().as_secs_f64();
            sink.send_frame(frame)?;
            run.stats.record(out.message.kind(), out.message.step(), bytes, enqueued, enqueued);
            run.push(out, bytes, enqueued, f64::NAN);
            if server.is_done() {
                break;
            }
        }
        sink.flush()
    })();
    drop(rx);
    producer
        .join()
        .map_err(|_| Error::Numerical("reference thread panicked".into()))?;
    outcome?;
    if !server.is_done() {
        return Err(Error::SessionClosed);
    }
    run.finished_at = start.elapsed().as_secs_f64();
    Ok(run)
}

/// Runs the client over a real transport until the last step is published.
pub fn client_run<S: FrameSource>(source: &mut S, mode: ClientMode) -> Result<ClientRun> {
    let start = Instant::now();
    let first = source.recv_frame()?.ok_or(Error::SessionClosed)?;
    let Message::Init(init) = protocol::decode(&first)?.0 else {
        return Err(Error::protocol("session must start with init"));
    };
    let mut client = Client::from_init(&init)?;
    let mut result = ClientRun {
        approx_chain: vec![client.state().clone()],
        kinds: Vec::new(),
        publish_times: vec![start.elapsed().as_secs_f64()],
        total_latency: 0.0,
    };
    while !client.is_done() {
        let speculate = mode == ClientMode::Optimistic && client.computes_locally();
        let (frame, speculative) = if speculate {
            thread::scope(|s| {
                let worker = s.spawn(|| client.prepare());
                let frame = source.recv_frame();
                let prepared = worker
                    .join()
                    .map_err(|_| Error::Numerical("surrogate thread panicked".into()))
                    .and_then(|r| r);
                (frame, Some(prepared))
            })
        } else {
            (source.recv_frame(), None)
        };
        let frame = frame?.ok_or(Error::SessionClosed)?;
        let (msg, _) = protocol::decode(&frame)?;
        let prepared = match (msg.kind(), speculative) {
            (MessageKind::Certify | MessageKind::PartialUpdate, Some(p)) => Some(p?),
            _ => None,
        };
        let outcome = client.apply(msg, prepared)?;
        let t = start.elapsed().as_secs_f64();
        result.kinds.push(outcome.kind);
        result.approx_chain.push(outcome.published);
        result.publish_times.push(t);
        result.total_latency = t;
    }
    Ok(result)
}
