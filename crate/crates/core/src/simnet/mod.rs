//! Deterministic discrete-event SDN fabric.
//!
//! Switches hold priority flow tables with OpenFlow-style idle and hard
//! timeouts (0 disables a clock). Unmatched ingress packets are escalated to
//! a [`Controller`]; hosts are driven by a [`HostAgent`]. Time is kept in
//! integer microseconds so event ordering never depends on float rounding.

mod engine;
mod flow;
mod packet;
mod topology;

use thiserror::Error;

pub use engine::{
    l2_route, write_trace, Controller, DropReason, ForwardingController, HostAgent, NetConfig,
    Network, PacketCounts, TraceEvent, TraceRecord, TRANSIT_PRIORITY,
};
pub use flow::{Action, ExpiryReason, FlowEntry, FlowMatch, FlowTable, Hit};
pub use packet::{tcp_flags, MacAddr, Packet, IPPROTO_TCP};
pub use topology::{
    build_linear_topology, HostId, HostInfo, Link, PortNo, PortPeer, SwitchId, Topology,
    CONTROLLER_ID,
};

/// Simulated time in microseconds.
pub type SimTime = u64;

pub const MICROS_PER_SECOND: u64 = 1_000_000;

/// Seconds to simulated time, rounded to the nearest microsecond.
pub fn seconds(s: f64) -> SimTime {
    (s * MICROS_PER_SECOND as f64).round().max(0.0) as SimTime
}

pub fn to_seconds(t: SimTime) -> f64 {
    t as f64 / MICROS_PER_SECOND as f64
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("topology: {0}")]
    Topology(String),
    #[error("invalid flow match: {0}")]
    InvalidMatch(String),
    #[error("switch {switch} has no port {port}")]
    NoSuchPort { switch: SwitchId, port: PortNo },
    #[error("no switch {0}")]
    NoSuchSwitch(SwitchId),
    #[error("no host {0}")]
    NoSuchHost(HostId),
    #[error("event at {at} us scheduled before the clock ({now} us)")]
    PastEvent { now: SimTime, at: SimTime },
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Agent(String),
}
