use serde::Serialize;

use super::{Message, ProtocolError};
use crate::distill::{train_student, AlgoParams};
use crate::model::{save_checkpoint, StudentModel, Teacher};

/// What the server did for one request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServerEvent {
    pub index: u64,
    pub naive: bool,
    pub steps: usize,
    pub initial_metric: f64,
    pub best_metric: f64,
}

/// Teacher plus the server's copy of the student.
#[derive(Debug, Clone)]
pub struct Server {
    teacher: Teacher,
    student: StudentModel,
    params: AlgoParams,
    log: Vec<ServerEvent>,
}

impl Server {
    pub fn new(teacher: Teacher, student: StudentModel, params: AlgoParams) -> Self {
        Self { teacher, student, params, log: Vec::new() }
    }

    pub fn init_message(&self) -> Message {
        Message::InitStudent { checkpoint: save_checkpoint(&self.student) }
    }

    pub fn student(&self) -> &StudentModel {
        &self.student
    }

    pub fn log(&self) -> &[ServerEvent] {
        &self.log
    }

    pub fn into_log(self) -> Vec<ServerEvent> {
        self.log
    }

    /// Reply to one client message.
    pub fn handle(&mut self, msg: Message) -> Result<Message, ProtocolError> {
        match msg {
            Message::KeyFrame { index, frame } => {
                let (label, _) = self.teacher.infer(index, &frame)?;
                let r = train_student(self.student.clone(), &frame, &label, &self.params)?;
                log::debug!(
                    "key frame {index}: metric {:.4} -> {:.4} in {} steps",
                    r.initial_metric,
                    r.best_metric,
                    r.steps_taken
                );
                self.log.push(ServerEvent {
                    index,
                    naive: false,
                    steps: r.steps_taken,
                    initial_metric: r.initial_metric,
                    best_metric: r.best_metric,
                });
                self.student = r.student;
                Ok(Message::StudentUpdate { metric: r.best_metric as f32, delta: self.student.extract_diff() })
            }
            Message::NaiveFrame { index, frame } => {
                let (label, _) = self.teacher.infer(index, &frame)?;
                self.log.push(ServerEvent { index, naive: true, steps: 0, initial_metric: 1.0, best_metric: 1.0 });
                Ok(Message::NaivePrediction { index, labels: label.into_labels() })
            }
            other => Err(ProtocolError::Unexpected(other.name())),
        }
    }
}

/// Server end of a reliable, ordered message channel.
pub trait ServerTransport {
    fn send(&mut self, msg: &Message) -> Result<(), ProtocolError>;
    /// `Ok(None)` once the client has closed.
    fn recv(&mut self) -> Result<Option<Message>, ProtocolError>;
}

/// Sends the initial student, then answers requests until the client closes.
pub fn server_loop<T: ServerTransport>(server: &mut Server, transport: &mut T) -> Result<(), ProtocolError> {
    transport.send(&server.init_message())?;
    loop {
        let msg = match transport.recv() {
            Ok(Some(m)) => m,
            Ok(None) => return Ok(()),
            Err(e) => {
                log::error!("server aborting connection: {e}");
                return Err(e);
            }
        };
        let reply = server.handle(msg)?;
        transport.send(&reply)?;
    }
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;
    use std::sync::Arc;

    use super::*;
    use crate::model::{ArchDescriptor, OracleTeacher};
    use crate::videogen::{generate, SceneConfig};

    struct Scripted {
        inbox: VecDeque<Message>,
        sent: Vec<Message>,
    }

    impl ServerTransport for Scripted {
        fn send(&mut self, msg: &Message) -> Result<(), ProtocolError> {
            self.sent.push(msg.clone());
            Ok(())
        }
        fn recv(&mut self) -> Result<Option<Message>, ProtocolError> {
            Ok(self.inbox.pop_front())
        }
    }

    fn server() -> (Server, crate::videogen::LabeledStream) {
        let s = generate(&SceneConfig { height: 32, width: 32, seed: 3, ..Default::default() }, 3).unwrap();
        let teacher = Teacher::Oracle(OracleTeacher::new(Arc::new(s.labels.clone()), 4, 0.0, 0));
        let student = StudentModel::build(ArchDescriptor::desk_student(4), 1).unwrap();
        (Server::new(teacher, student, AlgoParams::default()), s)
    }

    #[test]
    fn immediate_close_sends_only_init() {
        let (mut srv, _) = server();
        let mut t = Scripted { inbox: VecDeque::new(), sent: vec![] };
        server_loop(&mut srv, &mut t).unwrap();
        assert_eq!(t.sent.len(), 1);
        assert!(matches!(t.sent[0], Message::InitStudent { .. }));
    }

    #[test]
    fn updates_follow_key_frames_in_order() {
        let (mut srv, s) = server();
        let inbox = (0..3).map(|i| Message::KeyFrame { index: i, frame: s.frames[i as usize].clone() }).collect();
        let mut t = Scripted { inbox, sent: vec![] };
        server_loop(&mut srv, &mut t).unwrap();
        assert_eq!(t.sent.len(), 4);
        assert!(t.sent[1..].iter().all(|m| matches!(m, Message::StudentUpdate { .. })));
        assert_eq!(srv.log().iter().map(|e| e.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        let Message::StudentUpdate { delta, .. } = &t.sent[3] else { unreachable!() };
        assert_eq!(delta, &srv.student().extract_diff());
    }

    #[test]
    fn naive_frames_get_teacher_labels() {
        let (mut srv, s) = server();
        let reply = srv.handle(Message::NaiveFrame { index: 1, frame: s.frames[1].clone() }).unwrap();
        assert_eq!(reply, Message::NaivePrediction { index: 1, labels: s.labels[1].labels().to_vec() });
    }

    #[test]
    fn client_only_messages_rejected() {
        let (mut srv, _) = server();
        let init = srv.init_message();
        assert!(matches!(srv.handle(init), Err(ProtocolError::Unexpected("InitStudent"))));
    }
}
