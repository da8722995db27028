//! Packet traces: the unit of ingestion.
//!
//! A [`Trace`] is an ordered list of `(t, d, s)` packet tuples re-based so the
//! first packet sits at `t = 0`. Traces come either from classic pcap files
//! ([`parse_pcap`] followed by [`assemble_traces`]) or from the canonical
//! JSONL form ([`read_traces`] / [`write_traces`]).

mod assemble;
mod jsonl;
mod pcap;

use std::collections::BTreeSet;
use std::fmt;
use std::net::{IpAddr, SocketAddr};

use ipnet::IpNet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use assemble::{assemble_traces, DEFAULT_SESSION_GAP};
pub use jsonl::{read_traces, read_traces_from, write_traces, write_traces_to};
pub use pcap::parse_pcap;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed pcap header: {0}")]
    MalformedHeader(String),
    #[error("truncated packet record {index} at byte offset {offset}")]
    TruncatedPacket { index: usize, offset: usize },
    #[error("unsupported link type {0} (only Ethernet is parsed)")]
    UnsupportedLinkType(u32),
    #[error("line {line}: field `{field}`: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: packet {index} is earlier than its predecessor")]
    Order { line: usize, index: usize },
    #[error("invalid trace: {0}")]
    Invariant(String),
    #[error("invalid ingest configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Packet direction relative to the user: `In` is provider to client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    In,
    Out,
}

impl Direction {
    /// The signed encoding used in trace files: −1 incoming, +1 outgoing.
    pub fn sign(self) -> i8 {
        match self {
            Direction::In => -1,
            Direction::Out => 1,
        }
    }

    pub fn from_sign(d: i64) -> Option<Self> {
        match d {
            -1 => Some(Direction::In),
            1 => Some(Direction::Out),
            _ => None,
        }
    }
}

/// One packet of a trace: time since the first packet, direction, payload bytes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    pub t: f64,
    pub dir: Direction,
    pub size: u32,
}

impl Packet {
    pub fn new(t: f64, dir: Direction, size: u32) -> Self {
        Self { t, dir, size }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Transport {
    Tcp,
    Udp,
}

/// Flow identity of a captured packet, oriented client first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub transport: Transport,
    pub client: SocketAddr,
    pub remote: SocketAddr,
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let proto = match self.transport {
            Transport::Tcp => "tcp",
            Transport::Udp => "udp",
        };
        write!(f, "{proto} {} -> {}", self.client, self.remote)
    }
}

/// A packet as seen on the wire, before session assembly. `t` is the absolute
/// capture timestamp in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    pub t: f64,
    pub dir: Direction,
    pub size: u32,
    pub flow: FlowKey,
}

impl PacketRecord {
    /// The 5-tuple string of the flow this packet belongs to.
    pub fn src_flow(&self) -> String {
        self.flow.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowScope {
    /// Only flows between the user and the LLM provider.
    #[default]
    Primary,
    /// Every flow observed during the interaction.
    Mixed,
}

impl fmt::Display for FlowScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlowScope::Primary => "primary",
            FlowScope::Mixed => "mixed",
        })
    }
}

impl std::str::FromStr for FlowScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "primary" => Ok(FlowScope::Primary),
            "mixed" => Ok(FlowScope::Mixed),
            other => Err(format!("unknown flow scope `{other}`")),
        }
    }
}

/// A validated packet trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    id: String,
    packets: Vec<Packet>,
    scope: FlowScope,
    label: Option<String>,
    degenerate: bool,
}

impl Trace {
    /// Builds a trace from already re-based packets, checking every invariant.
    pub fn new(
        id: impl Into<String>,
        packets: Vec<Packet>,
        scope: FlowScope,
        label: Option<String>,
    ) -> Result<Self, TraceError> {
        let trace = Self {
            id: id.into(),
            packets,
            scope,
            label,
            degenerate: false,
        };
        trace.validate()?;
        Ok(trace)
    }

    /// A trace with no packets. Only constructible explicitly.
    pub fn degenerate(id: impl Into<String>, scope: FlowScope, label: Option<String>) -> Self {
        Self {
            id: id.into(),
            packets: Vec::new(),
            scope,
            label,
            degenerate: true,
        }
    }

    /// Sorts packets by time and shifts them so the first one is at `t = 0`.
    pub fn rebased(
        id: impl Into<String>,
        mut packets: Vec<Packet>,
        scope: FlowScope,
        label: Option<String>,
    ) -> Result<Self, TraceError> {
        packets.sort_by(|a, b| a.t.total_cmp(&b.t));
        if let Some(t0) = packets.first().map(|p| p.t) {
            for p in &mut packets {
                p.t -= t0;
            }
        }
        Self::new(id, packets, scope, label)
    }

    fn validate(&self) -> Result<(), TraceError> {
        if self.packets.is_empty() && !self.degenerate {
            return Err(TraceError::Invariant(format!("trace `{}` has no packets", self.id)));
        }
        if let Some(first) = self.packets.first() {
            if first.t != 0.0 {
                return Err(TraceError::Invariant(format!(
                    "trace `{}` is not re-based: first packet at t={}",
                    self.id, first.t
                )));
            }
        }
        for (i, p) in self.packets.iter().enumerate() {
            if !p.t.is_finite() || p.t < 0.0 {
                return Err(TraceError::Invariant(format!(
                    "trace `{}` packet {i}: bad timestamp {}",
                    self.id, p.t
                )));
            }
            if p.size == 0 {
                return Err(TraceError::Invariant(format!(
                    "trace `{}` packet {i}: zero size",
                    self.id
                )));
            }
            if i > 0 && p.t < self.packets[i - 1].t {
                return Err(TraceError::Invariant(format!(
                    "trace `{}` packet {i}: out of time order",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn packets(&self) -> &[Packet] {
        &self.packets
    }

    pub fn scope(&self) -> FlowScope {
        self.scope
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    /// Time of the last packet; 0 for empty traces.
    pub fn duration(&self) -> f64 {
        self.packets.last().map_or(0.0, |p| p.t)
    }

    pub fn with_label(mut self, label: Option<String>) -> Self {
        self.label = label;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

/// Observer configuration for turning captures into traces.
#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub client_addrs: BTreeSet<IpAddr>,
    pub provider_addrs: Vec<IpNet>,
    pub scope: FlowScope,
    /// Segments with fewer payload bytes than this are dropped. Must be ≥ 1.
    pub min_payload: u32,
}

impl IngestConfig {
    pub fn new(
        client_addrs: impl IntoIterator<Item = IpAddr>,
        provider_addrs: impl IntoIterator<Item = IpNet>,
        scope: FlowScope,
    ) -> Result<Self, TraceError> {
        let cfg = Self {
            client_addrs: client_addrs.into_iter().collect(),
            provider_addrs: provider_addrs.into_iter().collect(),
            scope,
            min_payload: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        if self.client_addrs.is_empty() {
            return Err(TraceError::Config("no client address configured".into()));
        }
        if self.min_payload == 0 {
            return Err(TraceError::Config("min_payload must be at least 1 byte".into()));
        }
        if let Some(addr) = self.client_addrs.iter().find(|a| self.is_provider(**a)) {
            return Err(TraceError::Config(format!(
                "client address {addr} is also a provider address"
            )));
        }
        Ok(())
    }

    pub fn is_client(&self, addr: IpAddr) -> bool {
        self.client_addrs.contains(&addr)
    }

    pub fn is_provider(&self, addr: IpAddr) -> bool {
        self.provider_addrs.iter().any(|net| net.contains(&addr))
    }
}

/// Parses `addr` or `addr/prefix` into a network, treating bare addresses as
/// host routes.
pub fn parse_prefix(s: &str) -> Result<IpNet, TraceError> {
    let s = s.trim();
    if let Ok(net) = s.parse::<IpNet>() {
        return Ok(net);
    }
    s.parse::<IpAddr>()
        .map(IpNet::from)
        .map_err(|_| TraceError::Config(format!("bad address or prefix `{s}`")))
}
