//! Frame transports and the simulated network that carries protocol traffic.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::thread::JoinHandle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::message::{
    decode_frame, encode_frame, frame_payload_len, Message, MessageKind, NodeId, Payload,
    HEADER_LEN, SERVER,
};
use super::{OrchestratorError, Result};

/// Moves one encoded frame from sender to receiver and returns the bytes
/// that arrived.
pub trait Transport: Send {
    fn deliver(&mut self, frame: Vec<u8>) -> std::io::Result<Vec<u8>>;
}

/// In-process transport: frames arrive unchanged.
#[derive(Debug, Default)]
pub struct SimTransport;

impl Transport for SimTransport {
    fn deliver(&mut self, frame: Vec<u8>) -> std::io::Result<Vec<u8>> {
        Ok(frame)
    }
}

/// Loopback TCP transport. A relay thread reads each frame from the socket
/// and writes it back, so every message crosses a real socket twice.
pub struct TcpTransport {
    stream: TcpStream,
    relay: Option<JoinHandle<()>>,
}

fn read_frame(stream: &mut impl Read) -> std::io::Result<Vec<u8>> {
    let mut header = [0u8; HEADER_LEN];
    stream.read_exact(&mut header)?;
    let len = usize::try_from(frame_payload_len(&header))
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidData, "frame too large"))?;
    let mut frame = header.to_vec();
    frame.resize(HEADER_LEN + len, 0);
    stream.read_exact(&mut frame[HEADER_LEN..])?;
    Ok(frame)
}

impl TcpTransport {
    pub fn loopback() -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let relay = std::thread::spawn(move || {
            let Ok((mut conn, _)) = listener.accept() else {
                return;
            };
            while let Ok(frame) = read_frame(&mut conn) {
                if conn.write_all(&frame).is_err() {
                    break;
                }
            }
        });
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            stream,
            relay: Some(relay),
        })
    }
}

impl Transport for TcpTransport {
    fn deliver(&mut self, frame: Vec<u8>) -> std::io::Result<Vec<u8>> {
        self.stream.write_all(&frame)?;
        read_frame(&mut self.stream)
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
        if let Some(relay) = self.relay.take() {
            let _ = relay.join();
        }
    }
}

/// Fixed-plus-uniform-jitter link latency in simulated seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latency {
    pub fixed: f64,
    pub jitter: f64,
    /// Clock advance between phases on top of the last delivery.
    pub barrier_gap: f64,
}

impl Default for Latency {
    fn default() -> Self {
        Self {
            fixed: 0.005,
            jitter: 0.002,
            barrier_gap: 0.001,
        }
    }
}

/// Log line for one delivered message.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub sender: NodeId,
    pub receiver: NodeId,
    pub kind: MessageKind,
    pub timestamp: f64,
    pub frame_bytes: usize,
}

/// Mailboxes, a simulated clock and a full delivery log over a transport.
///
/// Client-to-client traffic is only allowed when one side is a head.
pub struct Network {
    transport: Box<dyn Transport>,
    latency: Latency,
    jitter_rng: ChaCha8Rng,
    now: f64,
    horizon: f64,
    heads: BTreeSet<NodeId>,
    mailboxes: BTreeMap<NodeId, Vec<Message>>,
    log: Vec<LogEntry>,
}

impl Network {
    pub fn new(transport: Box<dyn Transport>, latency: Latency, seed: u64) -> Self {
        Self {
            transport,
            latency,
            jitter_rng: ChaCha8Rng::seed_from_u64(seed),
            now: 0.0,
            horizon: 0.0,
            heads: BTreeSet::new(),
            mailboxes: BTreeMap::new(),
            log: Vec::new(),
        }
    }

    pub fn set_heads(&mut self, heads: impl IntoIterator<Item = NodeId>) {
        self.heads = heads.into_iter().collect();
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn send(&mut self, sender: NodeId, receiver: NodeId, payload: &Payload) -> Result<()> {
        if sender != SERVER
            && receiver != SERVER
            && !self.heads.contains(&sender)
            && !self.heads.contains(&receiver)
        {
            return Err(OrchestratorError::Topology { sender, receiver });
        }
        let frame = encode_frame(sender, receiver, payload);
        let frame_bytes = frame.len();
        let arrived = self.transport.deliver(frame)?;
        let (from, to, payload) = decode_frame(&arrived)?;
        let jitter = if self.latency.jitter > 0.0 {
            self.jitter_rng.random_range(0.0..self.latency.jitter)
        } else {
            0.0
        };
        let timestamp = self.now + self.latency.fixed + jitter;
        self.horizon = self.horizon.max(timestamp);
        self.log.push(LogEntry {
            sender: from,
            receiver: to,
            kind: payload.kind(),
            timestamp,
            frame_bytes,
        });
        self.mailboxes.entry(to).or_default().push(Message {
            sender: from,
            receiver: to,
            timestamp,
            payload,
        });
        Ok(())
    }

    /// Takes every message waiting for `node`, in delivery order.
    pub fn drain(&mut self, node: NodeId) -> Vec<Message> {
        self.mailboxes.remove(&node).unwrap_or_default()
    }

    /// Ends a phase: all in-flight messages are delivered and the clock
    /// moves past the latest one.
    pub fn barrier(&mut self) {
        self.now = self.now.max(self.horizon) + self.latency.barrier_gap;
        self.horizon = self.now;
    }

    /// Moves the clock forward without traffic.
    pub fn wait(&mut self, seconds: f64) {
        self.now += seconds.max(0.0);
        self.horizon = self.horizon.max(self.now);
    }

    pub fn into_log(self) -> Vec<LogEntry> {
        self.log
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(transport: Box<dyn Transport>) -> Network {
        let mut n = Network::new(transport, Latency::default(), 3);
        n.set_heads([5]);
        n
    }

    #[test]
    fn clients_reach_heads_but_not_each_other() {
        let mut n = net(Box::new(SimTransport));
        n.send(SERVER, 2, &Payload::ReadyQuery).unwrap();
        n.send(2, 5, &Payload::ReadyAck).unwrap();
        n.send(5, 3, &Payload::ReadyAck).unwrap();
        assert!(matches!(
            n.send(2, 3, &Payload::ReadyAck),
            Err(OrchestratorError::Topology {
                sender: 2,
                receiver: 3
            })
        ));
        assert_eq!(n.drain(5).len(), 1);
        assert!(n.drain(5).is_empty());
        assert_eq!(n.into_log().len(), 3);
    }

    #[test]
    fn barriers_order_timestamps() {
        let mut n = net(Box::new(SimTransport));
        for c in 1..20 {
            n.send(c, 5, &Payload::ReadyAck).unwrap();
        }
        n.barrier();
        n.send(5, SERVER, &Payload::BudgetBroadcast(1)).unwrap();
        let log = n.into_log();
        let last = log.last().unwrap().timestamp;
        assert!(log[..log.len() - 1].iter().all(|e| e.timestamp < last));
        assert!(log.iter().all(|e| e.timestamp >= 0.005));
    }

    #[test]
    fn tcp_and_sim_deliver_the_same_messages() {
        let payloads = [
            Payload::ReadyQuery,
            Payload::BudgetBroadcast(9),
            Payload::ClusterAssign {
                cluster_id: 1,
                head_id: 5,
            },
        ];
        let mut sim = net(Box::new(SimTransport));
        let mut tcp = net(Box::new(TcpTransport::loopback().unwrap()));
        for p in &payloads {
            sim.send(SERVER, 7, p).unwrap();
            tcp.send(SERVER, 7, p).unwrap();
        }
        assert_eq!(sim.drain(7), tcp.drain(7));
        assert_eq!(sim.into_log(), tcp.into_log());
    }
}
