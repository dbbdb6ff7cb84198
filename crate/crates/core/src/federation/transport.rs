//! Framed point-to-point links between the coordinator and one hospital.

use std::io::Write;
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};

use super::message::{decode_frame, encode_frame, read_frame, Message};
use crate::error::{Error, Result};

/// One end of a protocol conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Party {
    Coordinator,
    Hospital(u16),
}

/// Byte and frame counters for one link end.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub frames_sent: u64,
    pub frames_received: u64,
}

/// A frame as it crossed a link, recorded by the sender.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoggedFrame {
    pub from: Party,
    pub to: Party,
    pub bytes: Vec<u8>,
}

/// Shared append-only record of every frame sent on the links that hold it.
#[derive(Debug, Clone, Default)]
pub struct FrameLog(Arc<Mutex<Vec<LoggedFrame>>>);

impl FrameLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, frame: LoggedFrame) {
        self.0.lock().expect("frame log poisoned").push(frame);
    }

    pub fn frames(&self) -> Vec<LoggedFrame> {
        self.0.lock().expect("frame log poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("frame log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub trait Link: Send {
    fn send(&mut self, msg: &Message) -> Result<()>;
    fn recv(&mut self) -> Result<Message>;
    fn stats(&self) -> LinkStats;
    fn local(&self) -> Party;
    fn peer(&self) -> Party;
}

/// Counting, logging and codec shared by the concrete links.
#[derive(Debug)]
struct Framing {
    local: Party,
    peer: Party,
    stats: LinkStats,
    log: Option<FrameLog>,
}

impl Framing {
    fn outgoing(&mut self, msg: &Message) -> Result<Vec<u8>> {
        let frame = encode_frame(msg)?;
        self.stats.bytes_sent += frame.len() as u64;
        self.stats.frames_sent += 1;
        if let Some(log) = &self.log {
            log.push(LoggedFrame {
                from: self.local,
                to: self.peer,
                bytes: frame.clone(),
            });
        }
        Ok(frame)
    }

    fn incoming(&mut self, frame: &[u8]) -> Result<Message> {
        self.stats.bytes_received += frame.len() as u64;
        self.stats.frames_received += 1;
        decode_frame(frame)
    }
}

/// In-process link over a pair of channels carrying encoded frames.
#[derive(Debug)]
pub struct ChannelLink {
    framing: Framing,
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

/// Both ends of an in-process coordinator ↔ hospital link.
pub fn channel_pair(hospital: u16, log: Option<FrameLog>) -> (ChannelLink, ChannelLink) {
    let (to_hospital, hospital_rx) = channel();
    let (to_coordinator, coordinator_rx) = channel();
    let end = |local, peer, tx, rx| ChannelLink {
        framing: Framing {
            local,
            peer,
            stats: LinkStats::default(),
            log: log.clone(),
        },
        tx,
        rx,
    };
    (
        end(Party::Coordinator, Party::Hospital(hospital), to_hospital, coordinator_rx),
        end(Party::Hospital(hospital), Party::Coordinator, to_coordinator, hospital_rx),
    )
}

impl Link for ChannelLink {
    fn send(&mut self, msg: &Message) -> Result<()> {
        let frame = self.framing.outgoing(msg)?;
        self.tx
            .send(frame)
            .map_err(|_| Error::Transport(format!("{:?} hung up", self.framing.peer)))
    }

    fn recv(&mut self) -> Result<Message> {
        let frame = self
            .rx
            .recv()
            .map_err(|_| Error::Transport(format!("{:?} hung up", self.framing.peer)))?;
        self.framing.incoming(&frame)
    }

    fn stats(&self) -> LinkStats {
        self.framing.stats
    }

    fn local(&self) -> Party {
        self.framing.local
    }

    fn peer(&self) -> Party {
        self.framing.peer
    }
}

/// Link over a TCP stream.
#[derive(Debug)]
pub struct TcpLink {
    framing: Framing,
    stream: TcpStream,
}

impl TcpLink {
    fn new(stream: TcpStream, local: Party, peer: Party, log: Option<FrameLog>) -> Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self {
            framing: Framing {
                local,
                peer,
                stats: LinkStats::default(),
                log,
            },
            stream,
        })
    }
}

impl Link for TcpLink {
    fn send(&mut self, msg: &Message) -> Result<()> {
        let frame = self.framing.outgoing(msg)?;
        self.stream
            .write_all(&frame)
            .map_err(|e| Error::Transport(format!("send to {:?}: {e}", self.framing.peer)))
    }

    fn recv(&mut self) -> Result<Message> {
        let frame = read_frame(&mut self.stream).map_err(|e| match e {
            Error::Io(io) => Error::Transport(format!("receive from {:?}: {io}", self.framing.peer)),
            other => other,
        })?;
        self.framing.incoming(&frame)
    }

    fn stats(&self) -> LinkStats {
        self.framing.stats
    }

    fn local(&self) -> Party {
        self.framing.local
    }

    fn peer(&self) -> Party {
        self.framing.peer
    }
}

/// Participant half of the handshake: announce the id, wait for the coordinator's greeting.
pub fn hello_as_participant(link: &mut dyn Link, hospital: u16) -> Result<()> {
    link.send(&Message::Hello {
        hospital: Some(hospital),
    })?;
    match link.recv()? {
        Message::Hello { hospital: None } => Ok(()),
        Message::Abort { reason } => Err(Error::Aborted(reason)),
        other => Err(Error::Protocol(format!("expected coordinator Hello, got {}", other.describe()))),
    }
}

fn read_participant_hello(link: &mut dyn Link) -> Result<u16> {
    match link.recv()? {
        Message::Hello { hospital: Some(id) } => Ok(id),
        other => Err(Error::Protocol(format!("expected participant Hello, got {}", other.describe()))),
    }
}

/// Coordinator half of the handshake on a link whose peer is already known.
pub fn hello_as_coordinator(link: &mut dyn Link, expected: u16) -> Result<()> {
    let id = read_participant_hello(link)?;
    if id != expected {
        return Err(Error::Protocol(format!("hospital {id} answered on the link of hospital {expected}")));
    }
    link.send(&Message::Hello { hospital: None })
}

/// Connects to a coordinator and completes the handshake as `hospital`.
pub fn connect<A: ToSocketAddrs>(addr: A, hospital: u16, log: Option<FrameLog>) -> Result<TcpLink> {
    let stream = TcpStream::connect(addr).map_err(|e| Error::Transport(format!("connect: {e}")))?;
    let mut link = TcpLink::new(stream, Party::Hospital(hospital), Party::Coordinator, log)?;
    hello_as_participant(&mut link, hospital)?;
    Ok(link)
}

/// Accepts `k` participants, completes each handshake and returns the links ordered by hospital id.
pub fn accept_participants(listener: &TcpListener, k: usize, log: Option<FrameLog>) -> Result<Vec<TcpLink>> {
    let mut slots: Vec<Option<TcpLink>> = (0..k).map(|_| None).collect();
    for _ in 0..k {
        let (stream, _) = listener.accept()?;
        // the peer is unknown until its Hello arrives
        let mut link = TcpLink::new(stream, Party::Coordinator, Party::Coordinator, log.clone())?;
        let id = read_participant_hello(&mut link)?;
        let slot = slots
            .get_mut(id as usize)
            .ok_or_else(|| Error::Protocol(format!("hospital id {id} out of range for K = {k}")))?;
        if slot.is_some() {
            return Err(Error::Protocol(format!("hospital {id} connected twice")));
        }
        link.framing.peer = Party::Hospital(id);
        link.send(&Message::Hello { hospital: None })?;
        *slot = Some(link);
    }
    Ok(slots.into_iter().map(|l| l.expect("every slot filled")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_counts_bytes_both_ways() {
        let log = FrameLog::new();
        let (mut c, mut h) = channel_pair(2, Some(log.clone()));
        std::thread::scope(|s| {
            s.spawn(|| hello_as_participant(&mut h, 2).unwrap());
            hello_as_coordinator(&mut c, 2).unwrap();
        });
        assert_eq!(c.stats().bytes_received, 11);
        assert_eq!(c.stats().bytes_sent, 9);
        assert_eq!(h.stats().bytes_sent, 11);
        assert_eq!(log.len(), 2);
        assert_eq!(log.frames()[0].from, Party::Hospital(2));
    }

    #[test]
    fn tcp_handshake_orders_by_id() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let links = std::thread::scope(|s| {
            for id in [1u16, 0] {
                s.spawn(move || {
                    let mut l = connect(addr, id, None).unwrap();
                    l.send(&Message::Converged { round: id as u32, stop: false }).unwrap();
                });
            }
            let mut links = accept_participants(&listener, 2, None).unwrap();
            for (i, l) in links.iter_mut().enumerate() {
                assert_eq!(l.recv().unwrap(), Message::Converged { round: i as u32, stop: false });
            }
            links
        });
        assert_eq!(links[0].peer(), Party::Hospital(0));
        assert_eq!(links[1].peer(), Party::Hospital(1));
    }
}
