use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::thread;
use std::time::Instant;

use super::{drive, finish_stats, RunOutcome, Scenario, Transcript};
use crate::metrics::ProbMap;
use crate::model::StudentModel;
use crate::protocol::{read_message, server_loop, write_message, ClientLink, Message, ProtocolError, Server, ServerTransport};
use crate::videogen::Frame;

pub struct SocketServerTransport {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl SocketServerTransport {
    pub fn new(stream: TcpStream) -> std::io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self { reader: BufReader::new(stream.try_clone()?), writer: BufWriter::new(stream) })
    }
}

impl ServerTransport for SocketServerTransport {
    fn send(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        write_message(&mut self.writer, msg)?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Option<Message>, ProtocolError> {
        Ok(read_message(&mut self.reader)?.map(|(m, _)| m))
    }
}

/// Accepts one connection and serves it until the client closes.
pub fn serve(listener: &TcpListener, server: &mut Server) -> Result<(), ProtocolError> {
    let (stream, peer) = listener.accept()?;
    log::info!("serving {peer}");
    server_loop(server, &mut SocketServerTransport::new(stream)?)
}

type Incoming = Result<(Message, Vec<u8>), ProtocolError>;

/// Client link over TCP. A reader thread receives replies so `try_recv`
/// never blocks; time is wall-clock time since connecting.
pub struct SocketLink {
    stream: TcpStream,
    rx: Receiver<Incoming>,
    reader: Option<thread::JoinHandle<()>>,
    start: Instant,
    transcript: Transcript,
}

impl SocketLink {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, ProtocolError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut read_half = BufReader::new(stream.try_clone()?);
        let (tx, rx) = mpsc::channel();
        let reader = thread::spawn(move || loop {
            match read_message(&mut read_half) {
                Ok(Some(m)) => {
                    if tx.send(Ok(m)).is_err() {
                        return;
                    }
                }
                Ok(None) => return,
                Err(e) => {
                    let _ = tx.send(Err(e));
                    return;
                }
            }
        });
        Ok(Self { stream, rx, reader: Some(reader), start: Instant::now(), transcript: Transcript::default() })
    }

    /// Closes the write side and waits for the server's end of stream.
    pub fn close(mut self) -> Transcript {
        let _ = self.stream.shutdown(Shutdown::Write);
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
        std::mem::take(&mut self.transcript)
    }

    fn take(&mut self, item: Incoming) -> Result<Message, ProtocolError> {
        let (m, raw) = item?;
        self.transcript.down.push(raw);
        Ok(m)
    }
}

impl ClientLink for SocketLink {
    fn send(&mut self, msg: Message) -> Result<(), ProtocolError> {
        let raw = write_message(&mut self.stream, &msg)?;
        self.transcript.up.push(raw);
        Ok(())
    }

    fn try_recv(&mut self) -> Result<Option<Message>, ProtocolError> {
        match self.rx.try_recv() {
            Ok(item) => self.take(item).map(Some),
            Err(TryRecvError::Empty) => Ok(None),
            Err(TryRecvError::Disconnected) => Err(ProtocolError::Closed),
        }
    }

    fn recv(&mut self) -> Result<Message, ProtocolError> {
        let item = self.rx.recv().map_err(|_| ProtocolError::Closed)?;
        self.take(item)
    }

    fn infer(&mut self, student: &StudentModel, frame: &Frame) -> Result<ProbMap, ProtocolError> {
        Ok(student.forward(frame)?)
    }

    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

/// Runs `scenario` against a server on `addr`, or against a server thread
/// on an ephemeral localhost port when `addr` is `None`. Channel and
/// latency settings are ignored; timings are wall-clock.
pub fn run_socket(scenario: &Scenario, addr: Option<SocketAddr>) -> Result<RunOutcome, ProtocolError> {
    let (addr, handle) = match addr {
        Some(a) => (a, None),
        None => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            let mut server = Server::new(scenario.teacher.clone(), scenario.student.clone(), scenario.params);
            let h = thread::spawn(move || serve(&listener, &mut server).map(|()| server.into_log()));
            (addr, Some(h))
        }
    };
    let mut link = SocketLink::connect(addr)?;
    let driven = drive(scenario, &mut link);
    let transcript = link.close();
    let server_log = match handle {
        Some(h) => h.join().map_err(|_| ProtocolError::Config("server thread panicked".into()))??,
        None => Vec::new(),
    };
    let (out, init_bytes) = driven?;
    let (stats, student) = finish_stats(scenario, out, &server_log, init_bytes)?;
    Ok(RunOutcome { stats, transcript, server_log, student })
}
