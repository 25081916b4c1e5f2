//! Discrete-event model of the controller network: store-and-forward over
//! bandwidth-limited point-to-point links.

mod topology;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

pub use topology::{build_topology, CommTopology, Link, TopologyDocument, TopologyKind, DEFAULT_DELAY_S};

#[derive(Debug, Error)]
pub enum CommError {
    #[error("unknown topology kind {0:?}")]
    Kind(String),
    #[error("{kind} topology needs at least 2 nodes, got {n}")]
    TooFewNodes { kind: TopologyKind, n: usize },
    #[error("bandwidth must be positive, got {0}")]
    Bandwidth(f64),
    #[error("delay must be non-negative, got {0}")]
    Delay(f64),
    #[error("link endpoint {0} is not a node")]
    UnknownNode(usize),
    #[error("self link at node {0}")]
    SelfLink(usize),
    #[error("topology is not connected")]
    Disconnected,
    #[error("event at t={at} is before the clock t={now}")]
    PastEvent { at: f64, now: f64 },
    #[error("bad topology JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("trace output: {0}")]
    Csv(#[from] csv::Error),
}

/// Bytes of fixed header per message.
pub const HEADER_BYTES: usize = 64;
/// Bytes per three-phase quantity (three 8-byte floats).
pub const QUANTITY_BYTES: usize = 24;

/// Serialized size of a message carrying `quantities` three-phase vectors.
pub fn message_size_bytes(quantities: usize) -> usize {
    HEADER_BYTES + QUANTITY_BYTES * quantities
}

#[derive(Debug, Clone)]
pub struct Message<P> {
    pub id: u64,
    pub from: usize,
    pub to: usize,
    pub size_bytes: usize,
    /// Sender's iteration tag.
    pub iteration: u64,
    pub sent_at: f64,
    pub payload: P,
}

/// What the simulator hands back to its driver.
#[derive(Debug, Clone)]
pub enum Notification<P> {
    Tick { agent: usize },
    Delivered(Message<P>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    /// Message is at `node` and waits for its next hop.
    Enqueue { msg: usize, node: usize },
    /// Channel finished serializing its current message.
    LinkFree { channel: usize },
    Deliver { msg: usize },
    AgentTick { agent: usize },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
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
    // reversed so the max-heap pops the earliest event, then the lowest sequence number
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct InFlight<P> {
    msg: Message<P>,
    route: Vec<usize>,
    hop: usize,
}

/// One direction of a link.
#[derive(Default)]
struct Channel {
    queue: VecDeque<usize>,
    busy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub time_s: f64,
    pub event: &'static str,
    /// `a->b` for a link direction, empty otherwise.
    pub link: String,
    pub size_bytes: usize,
    pub msg_iteration: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CommCounters {
    pub enqueued: u64,
    pub delivered: u64,
    pub dropped: u64,
}

pub struct CommSimulator<P> {
    topology: CommTopology,
    now: f64,
    seq: u64,
    queue: BinaryHeap<Event>,
    messages: Vec<Option<InFlight<P>>>,
    channels: Vec<Channel>,
    counters: CommCounters,
    trace: Vec<TraceRecord>,
}

impl<P> CommSimulator<P> {
    pub fn new(topology: CommTopology) -> Self {
        let channels = (0..2 * topology.n_links()).map(|_| Channel::default()).collect();
        CommSimulator {
            topology,
            now: 0.0,
            seq: 0,
            queue: BinaryHeap::new(),
            messages: Vec::new(),
            channels,
            counters: CommCounters::default(),
            trace: Vec::new(),
        }
    }

    pub fn topology(&self) -> &CommTopology {
        &self.topology
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn counters(&self) -> CommCounters {
        self.counters
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    /// Time of the next pending event.
    pub fn peek_time(&self) -> Option<f64> {
        self.queue.peek().map(|e| e.time)
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    fn push(&mut self, time: f64, kind: EventKind) -> Result<(), CommError> {
        if time < self.now || !time.is_finite() {
            return Err(CommError::PastEvent { at: time, now: self.now });
        }
        self.seq += 1;
        self.queue.push(Event {
            time,
            seq: self.seq,
            kind,
        });
        Ok(())
    }

    pub fn schedule_tick(&mut self, agent: usize, at: f64) -> Result<(), CommError> {
        self.push(at, EventKind::AgentTick { agent })
    }

    /// Hands a message to the network at the current time. Returns its id.
    pub fn send(
        &mut self,
        from: usize,
        to: usize,
        size_bytes: usize,
        iteration: u64,
        payload: P,
    ) -> Result<u64, CommError> {
        let id = self.messages.len() as u64;
        let msg = Message {
            id,
            from,
            to,
            size_bytes,
            iteration,
            sent_at: self.now,
            payload,
        };
        self.counters.enqueued += 1;
        self.record("enqueue", String::new(), size_bytes, iteration);
        match self.topology.route(from, to) {
            Some(route) => {
                self.messages.push(Some(InFlight { msg, route, hop: 0 }));
                self.push(self.now, EventKind::Enqueue { msg: id as usize, node: from })?;
            }
            None => {
                log::debug!("t={:.4}: drop message {id} {from}->{to}, no route", self.now);
                self.counters.dropped += 1;
                self.record("drop-no-route", format!("{from}->{to}"), size_bytes, iteration);
                self.messages.push(None);
            }
        }
        Ok(id)
    }

    fn record(&mut self, event: &'static str, link: String, size_bytes: usize, msg_iteration: u64) {
        self.trace.push(TraceRecord {
            time_s: self.now,
            event,
            link,
            size_bytes,
            msg_iteration,
        });
    }

    fn channel_of(&self, a: usize, b: usize) -> usize {
        let k = self.topology.link_between(a, b).expect("route follows links");
        if self.topology.links[k].a == a {
            2 * k
        } else {
            2 * k + 1
        }
    }

    fn channel_label(&self, channel: usize) -> String {
        let l = &self.topology.links[channel / 2];
        if channel % 2 == 0 {
            format!("{}->{}", l.a, l.b)
        } else {
            format!("{}->{}", l.b, l.a)
        }
    }

    fn start_transmission(&mut self, channel: usize) -> Result<(), CommError> {
        let Some(id) = self.channels[channel].queue.pop_front() else {
            self.channels[channel].busy = false;
            return Ok(());
        };
        self.channels[channel].busy = true;
        let link = &self.topology.links[channel / 2];
        let (bw, delay) = (link.bandwidth_bps, link.delay_s);
        let f = self.messages[id].as_mut().expect("queued message exists");
        f.hop += 1;
        let next = f.route[f.hop];
        let (size, iteration) = (f.msg.size_bytes, f.msg.iteration);
        let serialization = size as f64 * 8.0 / bw;
        let label = self.channel_label(channel);
        self.record("transmit", label, size, iteration);
        self.push(self.now + serialization, EventKind::LinkFree { channel })?;
        self.push(
            self.now + serialization + delay,
            EventKind::Enqueue { msg: id, node: next },
        )
    }

    /// Processes internal events until one concerns the driver or the next
    /// event lies after `until`.
    pub fn next_notification(&mut self, until: f64) -> Result<Option<(f64, Notification<P>)>, CommError> {
        while let Some(ev) = self.queue.peek().copied() {
            if ev.time > until {
                return Ok(None);
            }
            self.queue.pop();
            if ev.time < self.now {
                return Err(CommError::PastEvent { at: ev.time, now: self.now });
            }
            self.now = ev.time;
            match ev.kind {
                EventKind::AgentTick { agent } => {
                    self.record("agent-tick", String::new(), 0, 0);
                    return Ok(Some((self.now, Notification::Tick { agent })));
                }
                EventKind::Enqueue { msg, node } => {
                    let f = self.messages[msg].as_ref().expect("message in flight");
                    if node == f.msg.to {
                        self.push(self.now, EventKind::Deliver { msg })?;
                        continue;
                    }
                    let next = f.route[f.hop + 1];
                    let channel = self.channel_of(node, next);
                    self.channels[channel].queue.push_back(msg);
                    if !self.channels[channel].busy {
                        self.start_transmission(channel)?;
                    }
                }
                EventKind::LinkFree { channel } => {
                    self.start_transmission(channel)?;
                }
                EventKind::Deliver { msg } => {
                    let f = self.messages[msg].take().expect("delivered once");
                    self.counters.delivered += 1;
                    self.record("deliver", format!("{}->{}", f.msg.from, f.msg.to), f.msg.size_bytes, f.msg.iteration);
                    return Ok(Some((self.now, Notification::Delivered(f.msg))));
                }
            }
        }
        Ok(None)
    }

    /// Advances to `until`, collecting every notification on the way.
    pub fn run_until(&mut self, until: f64) -> Result<Vec<(f64, Notification<P>)>, CommError> {
        let mut out = Vec::new();
        while let Some(n) = self.next_notification(until)? {
            out.push(n);
        }
        if until.is_finite() && until > self.now {
            self.now = until;
        }
        Ok(out)
    }

    pub fn write_trace<W: Write>(&self, writer: W) -> Result<(), CommError> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.trace {
            w.serialize(r)?;
        }
        w.flush().map_err(|source| CommError::Io {
            path: "trace".into(),
            source,
        })?;
        Ok(())
    }

    pub fn save_trace(&self, path: impl AsRef<std::path::Path>) -> Result<(), CommError> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| CommError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_trace(std::io::BufWriter::new(file))
    }
}
