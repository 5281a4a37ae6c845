use super::{Message, ProtocolError};
use crate::analytics::CycleRecord;
use crate::distill::AlgoParams;
use crate::metrics::{ProbMap, SegMap};
use crate::model::{load_checkpoint, ModelError, StudentModel};
use crate::scheduler::{next_stride, Stride};
use crate::videogen::Frame;

/// Device end of the channel, plus the device's clock and compute.
///
/// `send` must not wait for a reply; `try_recv` reports a reply only if it
/// has fully arrived; `recv` waits for one.
pub trait ClientLink {
    fn send(&mut self, msg: Message) -> Result<(), ProtocolError>;
    fn try_recv(&mut self) -> Result<Option<Message>, ProtocolError>;
    fn recv(&mut self) -> Result<Message, ProtocolError>;
    /// Runs the student on one frame and charges the time to the device.
    fn infer(&mut self, student: &StudentModel, frame: &Frame) -> Result<ProbMap, ProtocolError>;
    /// Seconds since the link was opened.
    fn now(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientConfig {
    pub params: AlgoParams,
    /// Ignore update metrics and keep this stride.
    pub fixed_stride: Option<usize>,
}

impl ClientConfig {
    pub fn adaptive(params: AlgoParams) -> Self {
        Self { params, fixed_stride: None }
    }
}

#[derive(Debug, Clone)]
pub struct ClientOutcome {
    /// One per input frame, in order.
    pub predictions: Vec<SegMap>,
    pub cycles: Vec<CycleRecord>,
    pub bytes_up: usize,
    pub bytes_down: usize,
    pub time: f64,
    pub blocked: f64,
    /// Student as it stood after the last update.
    pub student: Option<StudentModel>,
}

impl ClientOutcome {
    fn new(frames: usize) -> Self {
        Self {
            predictions: Vec::with_capacity(frames),
            cycles: Vec::new(),
            bytes_up: 0,
            bytes_down: 0,
            time: 0.0,
            blocked: 0.0,
            student: None,
        }
    }
}

/// Waits for the initial student; returns it with the message size.
pub fn receive_init<L: ClientLink>(link: &mut L) -> Result<(StudentModel, usize), ProtocolError> {
    let msg = link.recv()?;
    let size = msg.encoded_len();
    match msg {
        Message::InitStudent { checkpoint } => Ok((load_checkpoint(&checkpoint).map_err(ModelError::from)?, size)),
        other => Err(ProtocolError::Unexpected(other.name())),
    }
}

struct Client<'a, L> {
    link: &'a mut L,
    cfg: ClientConfig,
    student: StudentModel,
    stride: Stride,
    out: ClientOutcome,
}

impl<L: ClientLink> Client<'_, L> {
    fn stride(&self) -> usize {
        self.cfg.fixed_stride.unwrap_or(self.stride.effective())
    }

    fn wait(&mut self) -> Result<Message, ProtocolError> {
        let t0 = self.link.now();
        let m = self.link.recv()?;
        let waited = self.link.now() - t0;
        self.out.blocked += waited;
        if let Some(c) = self.out.cycles.last_mut() {
            c.blocked += waited;
        }
        Ok(m)
    }

    fn apply(&mut self, msg: Message) -> Result<(), ProtocolError> {
        let size = msg.encoded_len();
        let Message::StudentUpdate { metric, delta } = msg else {
            return Err(ProtocolError::Unexpected(msg.name()));
        };
        self.student.apply_update(&delta)?;
        if self.cfg.fixed_stride.is_none() {
            self.stride = next_stride(self.stride, metric as f64, &self.cfg.params)?;
        }
        self.out.bytes_down += size;
        let stride = self.stride();
        let c = self.out.cycles.last_mut().expect("update implies a key frame");
        c.bytes_down += size;
        c.metric = Some(metric as f64);
        c.next_stride = Some(stride);
        Ok(())
    }

    fn send_key_frame(&mut self, index: usize, frame: &Frame) -> Result<(), ProtocolError> {
        let t0 = self.link.now();
        if let Some(prev) = self.out.cycles.last_mut() {
            prev.cycle_time = Some(t0 - prev.start_time);
        }
        let msg = Message::KeyFrame { index: index as u64, frame: frame.clone() };
        let size = msg.encoded_len();
        self.out.cycles.push(CycleRecord {
            key_index: index as u64,
            stride: self.stride(),
            start_time: t0,
            frames: 0,
            bytes_up: size,
            bytes_down: 0,
            metric: None,
            next_stride: None,
            window_time: None,
            blocked: 0.0,
            steps: 0,
            cycle_time: None,
        });
        self.out.bytes_up += size;
        self.link.send(msg)?;
        // a link that cannot overlap transfer with compute returns late
        let waited = self.link.now() - t0;
        self.out.blocked += waited;
        self.out.cycles.last_mut().expect("just pushed").blocked += waited;
        Ok(())
    }
}

/// Adaptive key-frame loop: every frame is predicted on the device, key
/// frames go to the server, and updates are awaited for at most
/// `min_stride` frames.
pub fn client_loop<L: ClientLink>(
    link: &mut L,
    student: StudentModel,
    frames: &[Frame],
    cfg: ClientConfig,
) -> Result<ClientOutcome, ProtocolError> {
    let start = link.now();
    let stride = Stride::initial(&cfg.params);
    let mut c = Client { link, cfg, student, stride, out: ClientOutcome::new(frames.len()) };
    let mut step = c.stride();
    let mut updated = true;
    for (i, frame) in frames.iter().enumerate() {
        if step == c.stride() {
            c.send_key_frame(i, frame)?;
            step = 0;
            updated = false;
        }
        let probs = c.link.infer(&c.student, frame)?;
        c.out.predictions.push(probs.argmax());
        c.out.cycles.last_mut().expect("first frame is a key frame").frames += 1;
        step += 1;
        let block_at = c.cfg.params.min_stride.min(c.stride());
        if !updated {
            let reply = if step == block_at { Some(c.wait()?) } else { c.link.try_recv()? };
            if let Some(m) = reply {
                c.apply(m)?;
                updated = true;
            }
        }
        if step == block_at {
            let now = c.link.now();
            let cycle = c.out.cycles.last_mut().expect("in a cycle");
            cycle.window_time.get_or_insert(now - cycle.start_time);
        }
    }
    if !updated {
        let m = c.wait()?;
        c.apply(m)?;
    }
    c.out.time = c.link.now() - start;
    c.out.student = Some(c.student);
    Ok(c.out)
}

/// Baseline: every frame goes to the server and the device waits for the
/// teacher's labels.
pub fn naive_client_loop<L: ClientLink>(link: &mut L, frames: &[Frame]) -> Result<ClientOutcome, ProtocolError> {
    let start = link.now();
    let mut out = ClientOutcome::new(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let t0 = link.now();
        let msg = Message::NaiveFrame { index: i as u64, frame: frame.clone() };
        out.bytes_up += msg.encoded_len();
        link.send(msg)?;
        let reply = link.recv()?;
        out.blocked += link.now() - t0;
        out.bytes_down += reply.encoded_len();
        match reply {
            Message::NaivePrediction { index, labels } if index == i as u64 => {
                let map = SegMap::new(frame.height(), frame.width(), labels)
                    .map_err(|e| ProtocolError::Model(e.into()))?;
                out.predictions.push(map);
            }
            Message::NaivePrediction { .. } => return Err(ProtocolError::Unexpected("out-of-order NaivePrediction")),
            other => return Err(ProtocolError::Unexpected(other.name())),
        }
    }
    out.time = link.now() - start;
    Ok(out)
}
