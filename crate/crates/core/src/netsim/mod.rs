//! Virtual-clock network simulation and a localhost socket transport.

mod socket;

pub use socket::{run_socket, serve, SocketLink, SocketServerTransport};

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{LatencyProfile, RunStats};
use crate::distill::AlgoParams;
use crate::metrics::{mean_iou, ProbMap};
use crate::model::{ModelError, StudentModel, Teacher};
use crate::protocol::{
    client_loop, naive_client_loop, receive_init, ClientConfig, ClientLink, ClientOutcome, Message, ProtocolError,
    Server, ServerEvent, Strategy, HEADER_LEN,
};
use crate::videogen::{Frame, LabeledStream};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid channel: {0}")]
pub struct ChannelError(pub String);

/// Whether device compute overlaps network transfer and server work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Concurrency {
    /// Sending a key frame stalls the device until the reply is back.
    Serial,
    /// The device keeps computing while the key frame is in flight.
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Bits per second.
    pub uplink_bps: f64,
    /// Bits per second.
    pub downlink_bps: f64,
    /// One-way propagation delay in seconds.
    pub delay: f64,
    pub concurrency: Concurrency,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self::symmetric_mbps(80.0, 0.0, Concurrency::Parallel)
    }
}

impl ChannelConfig {
    pub fn symmetric_mbps(mbps: f64, delay: f64, concurrency: Concurrency) -> Self {
        Self { uplink_bps: mbps * 1e6, downlink_bps: mbps * 1e6, delay, concurrency }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.uplink_bps > 0.0 && self.downlink_bps > 0.0) {
            return Err(ChannelError("bandwidths must be positive".into()));
        }
        if !(self.delay >= 0.0) {
            return Err(ChannelError("delay must be non-negative".into()));
        }
        Ok(())
    }
}

pub fn transfer_time(bytes: usize, direction: Direction, cfg: &ChannelConfig) -> f64 {
    let bps = match direction {
        Direction::Up => cfg.uplink_bps,
        Direction::Down => cfg.downlink_bps,
    };
    cfg.delay + 8.0 * bytes as f64 / bps
}

/// Device and server compute times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeLatency {
    pub t_si: f64,
    pub t_sd: f64,
    pub t_ti: f64,
}

impl ComputeLatency {
    pub fn reference() -> Self {
        let p = LatencyProfile::reference();
        Self { t_si: p.t_si, t_sd: p.t_sd, t_ti: p.t_ti }
    }
}

/// Bytes of one key-frame message and one update message for a model and
/// frame size.
pub fn message_sizes(student: &StudentModel, height: usize, width: usize, channels: usize) -> (usize, usize) {
    let key = HEADER_LEN + 8 + 5 + height * width * channels;
    let update = HEADER_LEN + 4 + student.extract_diff().encoded_len();
    (key, update)
}

/// Latency profile the closed-form model sees for a simulated deployment:
/// the round trip of one key frame and its update, and their combined size.
pub fn sim_profile(latency: &ComputeLatency, channel: &ChannelConfig, key_bytes: usize, update_bytes: usize) -> LatencyProfile {
    LatencyProfile {
        t_si: latency.t_si,
        t_sd: latency.t_sd,
        t_ti: latency.t_ti,
        t_net: transfer_time(key_bytes, Direction::Up, channel) + transfer_time(update_bytes, Direction::Down, channel),
        s_net: (key_bytes + update_bytes) as f64,
    }
}

#[derive(Debug)]
struct Event {
    at: f64,
    seq: u64,
    msg: Message,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.at.total_cmp(&other.at).then(self.seq.cmp(&other.seq))
    }
}

/// Simulated time plus pending deliveries, in timestamp order.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: f64,
    seq: u64,
    queue: BinaryHeap<Reverse<Event>>,
}

impl VirtualClock {
    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn advance(&mut self, dt: f64) {
        debug_assert!(dt >= 0.0);
        self.now += dt;
    }

    pub fn schedule(&mut self, at: f64, msg: Message) {
        self.queue.push(Reverse(Event { at, seq: self.seq, msg }));
        self.seq += 1;
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Earliest delivery if it is due now.
    pub fn pop_due(&mut self) -> Option<Message> {
        if self.queue.peek().is_some_and(|Reverse(e)| e.at <= self.now) {
            self.queue.pop().map(|Reverse(e)| e.msg)
        } else {
            None
        }
    }

    /// Jumps to the earliest delivery and returns it.
    pub fn wait_next(&mut self) -> Option<Message> {
        let Reverse(e) = self.queue.pop()?;
        self.now = self.now.max(e.at);
        Some(e.msg)
    }
}

/// Encoded messages in the order each side saw them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub up: Vec<Vec<u8>>,
    pub down: Vec<Vec<u8>>,
}

/// Client link whose far end is an in-process server on a virtual clock.
pub struct VirtualLink {
    clock: VirtualClock,
    channel: ChannelConfig,
    latency: ComputeLatency,
    server: Server,
    transcript: Transcript,
}

impl VirtualLink {
    /// The initial student is delivered at time zero.
    pub fn new(server: Server, channel: ChannelConfig, latency: ComputeLatency) -> Self {
        let mut clock = VirtualClock::default();
        clock.schedule(0.0, server.init_message());
        Self { clock, channel, latency, server, transcript: Transcript::default() }
    }

    pub fn server(&self) -> &Server {
        &self.server
    }

    pub fn into_parts(self) -> (Server, Transcript) {
        (self.server, self.transcript)
    }

    fn deliver(&mut self, msg: Option<Message>) -> Option<Message> {
        if let Some(m) = &msg {
            self.transcript.down.push(m.encode());
        }
        msg
    }
}

impl ClientLink for VirtualLink {
    fn send(&mut self, msg: Message) -> Result<(), ProtocolError> {
        let bytes = msg.encode();
        let up = transfer_time(bytes.len(), Direction::Up, &self.channel);
        self.transcript.up.push(bytes);
        let naive = matches!(msg, Message::NaiveFrame { .. });
        let reply = self.server.handle(msg)?;
        let steps = if naive { 0 } else { self.server.log().last().map_or(0, |e| e.steps) };
        let down = transfer_time(reply.encoded_len(), Direction::Down, &self.channel);
        let round_trip = up + self.latency.t_ti + steps as f64 * self.latency.t_sd + down;
        match self.channel.concurrency {
            Concurrency::Parallel => self.clock.schedule(self.clock.now() + round_trip, reply),
            Concurrency::Serial => {
                self.clock.advance(round_trip);
                self.clock.schedule(self.clock.now(), reply);
            }
        }
        Ok(())
    }

    fn try_recv(&mut self) -> Result<Option<Message>, ProtocolError> {
        let m = self.clock.pop_due();
        Ok(self.deliver(m))
    }

    fn recv(&mut self) -> Result<Message, ProtocolError> {
        let m = self.clock.wait_next();
        self.deliver(m).ok_or(ProtocolError::Closed)
    }

    fn infer(&mut self, student: &StudentModel, frame: &Frame) -> Result<ProbMap, ProtocolError> {
        self.clock.advance(self.latency.t_si);
        Ok(student.forward(frame)?)
    }

    fn now(&self) -> f64 {
        self.clock.now()
    }
}

/// Everything needed for one run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub stream: Arc<LabeledStream>,
    /// Starting student, with the freeze boundary the run should use.
    pub student: StudentModel,
    pub teacher: Teacher,
    pub params: AlgoParams,
    pub strategy: Strategy,
    pub channel: ChannelConfig,
    pub latency: ComputeLatency,
}

impl Scenario {
    /// Closed-form inputs matching this scenario's message sizes.
    pub fn profile(&self) -> LatencyProfile {
        let (h, w) = self.stream.dims();
        let c = self.stream.frames.first().map_or(3, Frame::channels);
        let (key, update) = message_sizes(&self.student, h, w, c);
        sim_profile(&self.latency, &self.channel, key, update)
    }

    fn client_config(&self) -> ClientConfig {
        ClientConfig {
            params: self.params,
            fixed_stride: match self.strategy {
                Strategy::FixedStride(s) => Some(s),
                _ => None,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub stats: RunStats,
    pub transcript: Transcript,
    pub server_log: Vec<ServerEvent>,
    /// Client student after the run.
    pub student: Option<StudentModel>,
}

/// Runs the device loop for `scenario` over `link`, which must deliver the
/// initial student first.
pub(crate) fn drive<L: ClientLink>(scenario: &Scenario, link: &mut L) -> Result<(ClientOutcome, usize), ProtocolError> {
    let (student, init_bytes) = receive_init(link)?;
    let out = match scenario.strategy {
        Strategy::Naive => naive_client_loop(link, &scenario.stream.frames)?,
        _ => client_loop(link, student, &scenario.stream.frames, scenario.client_config())?,
    };
    Ok((out, init_bytes))
}

pub(crate) fn finish_stats(
    scenario: &Scenario,
    mut out: ClientOutcome,
    server_log: &[ServerEvent],
    init_bytes: usize,
) -> Result<(RunStats, Option<StudentModel>), ProtocolError> {
    let mut frame_miou = Vec::with_capacity(out.predictions.len());
    for (p, l) in out.predictions.iter().zip(&scenario.stream.labels) {
        frame_miou.push(mean_iou(p, l).map_err(ModelError::from)?);
    }
    let key_events: Vec<&ServerEvent> = server_log.iter().filter(|e| !e.naive).collect();
    for (c, e) in out.cycles.iter_mut().zip(&key_events) {
        debug_assert_eq!(c.key_index, e.index);
        c.steps = e.steps;
    }
    let naive = scenario.strategy == Strategy::Naive;
    let stats = RunStats {
        scenario: scenario.name.clone(),
        strategy: scenario.strategy.to_string(),
        n: out.predictions.len(),
        k: if naive { out.predictions.len() } else { out.cycles.len() },
        d: key_events.iter().map(|e| e.steps).sum(),
        bytes_up: out.bytes_up,
        bytes_down: out.bytes_down,
        init_bytes,
        time: out.time,
        blocked_time: out.blocked,
        frame_miou,
        cycles: out.cycles,
    };
    Ok((stats, out.student))
}

/// Deterministic run on the virtual clock.
pub fn run_sim(scenario: &Scenario) -> Result<RunOutcome, ProtocolError> {
    scenario.channel.validate().map_err(|e| ProtocolError::Config(e.to_string()))?;
    let server = Server::new(scenario.teacher.clone(), scenario.student.clone(), scenario.params);
    let mut link = VirtualLink::new(server, scenario.channel, scenario.latency);
    let (out, init_bytes) = drive(scenario, &mut link)?;
    let (server, transcript) = link.into_parts();
    let server_log = server.into_log();
    let (stats, student) = finish_stats(scenario, out, &server_log, init_bytes)?;
    Ok(RunOutcome { stats, transcript, server_log, student })
}
