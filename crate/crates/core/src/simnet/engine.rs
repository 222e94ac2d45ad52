use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::flow::{Action, ExpiryReason, FlowEntry, FlowMatch, FlowTable};
use super::packet::{MacAddr, Packet};
use super::topology::{HostId, PortNo, PortPeer, SwitchId, Topology};
use super::{seconds, SimError, SimTime};

/// Priority of the proactive inter-switch transit entries.
pub const TRANSIT_PRIORITY: u16 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// One-way latency of every data link.
    pub link_latency_s: f64,
    /// One-way latency between a switch and the controller.
    pub control_latency_s: f64,
    /// Period of the table expiry sweep.
    pub sweep_interval_s: f64,
    /// Pre-install destination-MAC transit entries on inter-switch ports so
    /// only edge ingress traffic reaches the controller.
    pub transit_rules: bool,
    pub record_trace: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            link_latency_s: 0.001,
            control_latency_s: 0.001,
            sweep_interval_s: 1.0,
            transit_rules: true,
            record_trace: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "cause", rename_all = "snake_case")]
pub enum DropReason {
    /// A Drop flow entry matched.
    FlowRule { priority: u16, seq: u64 },
    /// The controller discarded the packet-in.
    Controller,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Send {
        packet: u64,
        host: HostId,
        src_mac: MacAddr,
        dst_mac: MacAddr,
        src_ip: Ipv4Addr,
        dst_ip: Ipv4Addr,
        flags: u8,
        size: u32,
    },
    Deliver {
        packet: u64,
        host: HostId,
    },
    Drop {
        packet: u64,
        switch: SwitchId,
        #[serde(flatten)]
        reason: DropReason,
    },
    PacketIn {
        packet: u64,
        switch: SwitchId,
        in_port: PortNo,
    },
    Install {
        switch: SwitchId,
        seq: u64,
        replaced: bool,
        entry: FlowEntry,
    },
    Expire {
        switch: SwitchId,
        reason: ExpiryReason,
        entry: FlowEntry,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Simulated time in microseconds.
    pub t_us: SimTime,
    #[serde(flatten)]
    pub event: TraceEvent,
}

pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketCounts {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Debug)]
enum EventKind {
    HostTimer {
        host: HostId,
        token: u64,
    },
    ControllerTimer {
        token: u64,
    },
    AtSwitch {
        switch: SwitchId,
        in_port: PortNo,
        pkt: Packet,
    },
    AtHost {
        host: HostId,
        pkt: Packet,
    },
    PacketIn {
        switch: SwitchId,
        in_port: PortNo,
        pkt: Packet,
    },
    PacketOut {
        switch: SwitchId,
        port: PortNo,
        pkt: Packet,
    },
    Sweep,
}

impl EventKind {
    fn carries_packet(&self) -> bool {
        matches!(
            self,
            EventKind::AtSwitch { .. }
                | EventKind::AtHost { .. }
                | EventKind::PacketIn { .. }
                | EventKind::PacketOut { .. }
        )
    }
}

#[derive(Debug)]
struct Event {
    time: SimTime,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // Reversed so the max-heap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

/// End-host behaviour. One agent drives every host.
pub trait HostAgent {
    fn on_packet(&mut self, net: &mut Network, host: HostId, pkt: Packet) -> Result<(), SimError>;
    fn on_timer(&mut self, net: &mut Network, host: HostId, token: u64) -> Result<(), SimError>;
}

/// The SDN controller.
pub trait Controller {
    /// Called once before the first event is processed.
    fn start(&mut self, _net: &mut Network) -> Result<(), SimError> {
        Ok(())
    }

    fn on_packet_in(
        &mut self,
        net: &mut Network,
        switch: SwitchId,
        in_port: PortNo,
        pkt: Packet,
    ) -> Result<(), SimError>;

    fn on_timer(&mut self, _net: &mut Network, _token: u64) -> Result<(), SimError> {
        Ok(())
    }
}

/// Output port for `pkt` on `switch` by its destination MAC, if known.
pub fn l2_route(topology: &Topology, switch: SwitchId, pkt: &Packet) -> Option<PortNo> {
    let (s, p) = topology.locate(pkt.dst_mac)?;
    Some(topology.route(switch, s, p))
}

/// Reactive forwarding only: every packet-in is sent on towards its
/// destination MAC, no rules are installed.
#[derive(Debug, Default)]
pub struct ForwardingController;

impl Controller for ForwardingController {
    fn on_packet_in(
        &mut self,
        net: &mut Network,
        switch: SwitchId,
        _in_port: PortNo,
        pkt: Packet,
    ) -> Result<(), SimError> {
        match l2_route(net.topology(), switch, &pkt) {
            Some(port) => net.packet_out(switch, port, pkt),
            None => {
                net.drop_at_controller(switch, &pkt);
                Ok(())
            }
        }
    }
}

/// Discrete-event network: switches with flow tables, host links and a
/// control channel. Single-threaded and fully deterministic.
pub struct Network {
    topology: Topology,
    config: NetConfig,
    tables: Vec<FlowTable>,
    queue: BinaryHeap<Event>,
    next_event: u64,
    next_packet: u64,
    now: SimTime,
    trace: Vec<TraceRecord>,
    counts: PacketCounts,
}

impl Network {
    pub fn new(topology: Topology, config: NetConfig) -> Result<Self, SimError> {
        for (name, v) in [
            ("link_latency_s", config.link_latency_s),
            ("control_latency_s", config.control_latency_s),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(config.sweep_interval_s.is_finite() && config.sweep_interval_s > 0.0) {
            return Err(SimError::Config("sweep_interval_s must be > 0".into()));
        }
        let n = topology.n_switches() as usize;
        let mut net = Self {
            topology,
            config,
            tables: vec![FlowTable::new(); n],
            queue: BinaryHeap::new(),
            next_event: 0,
            next_packet: 0,
            now: 0,
            trace: Vec::new(),
            counts: PacketCounts::default(),
        };
        for s in 1..=n as SwitchId {
            net.install(
                s,
                FlowEntry::new(FlowMatch::all(), 0, Action::ToController, 0, 0),
            )?;
        }
        if net.config.transit_rules {
            net.install_transit_rules()?;
        }
        let first_sweep = seconds(net.config.sweep_interval_s);
        net.push(first_sweep, EventKind::Sweep)?;
        Ok(net)
    }

    fn install_transit_rules(&mut self) -> Result<(), SimError> {
        let up = self.topology.upstream_port();
        let down = self.topology.downstream_port();
        let n = self.topology.n_switches();
        let hosts: Vec<(MacAddr, SwitchId, PortNo)> = self
            .topology
            .hosts
            .iter()
            .map(|h| (h.mac, h.switch, h.port))
            .collect();
        for s in 1..=n {
            for &(mac, hs, hp) in &hosts {
                let out = self.topology.route(s, hs, hp);
                for in_port in [up, down] {
                    let from_live_side = (in_port == up && s > 1) || (in_port == down && s < n);
                    if !from_live_side || in_port == out {
                        continue;
                    }
                    let m = FlowMatch {
                        in_port: Some(in_port),
                        dst_mac: Some(mac),
                        ..FlowMatch::default()
                    };
                    self.install(
                        s,
                        FlowEntry::new(m, TRANSIT_PRIORITY, Action::Forward(out), 0, 0),
                    )?;
                }
            }
        }
        Ok(())
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        std::mem::take(&mut self.trace)
    }

    pub fn counts(&self) -> PacketCounts {
        self.counts
    }

    /// Packets still travelling (on a link or the control channel).
    pub fn in_flight(&self) -> u64 {
        self.queue
            .iter()
            .filter(|e| e.kind.carries_packet())
            .count() as u64
    }

    pub fn table(&self, switch: SwitchId) -> Result<&FlowTable, SimError> {
        self.tables
            .get((switch as usize).wrapping_sub(1))
            .ok_or(SimError::NoSuchSwitch(switch))
    }

    fn table_mut(&mut self, switch: SwitchId) -> Result<&mut FlowTable, SimError> {
        self.tables
            .get_mut((switch as usize).wrapping_sub(1))
            .ok_or(SimError::NoSuchSwitch(switch))
    }

    fn record(&mut self, event: TraceEvent) {
        if self.config.record_trace {
            self.trace.push(TraceRecord {
                t_us: self.now,
                event,
            });
        }
    }

    fn push(&mut self, time: SimTime, kind: EventKind) -> Result<(), SimError> {
        if time < self.now {
            return Err(SimError::PastEvent {
                now: self.now,
                at: time,
            });
        }
        let seq = self.next_event;
        self.next_event += 1;
        self.queue.push(Event { time, seq, kind });
        Ok(())
    }

    fn link_delay(&self) -> SimTime {
        seconds(self.config.link_latency_s)
    }

    fn control_delay(&self) -> SimTime {
        seconds(self.config.control_latency_s)
    }

    /// Puts `pkt` on `host`'s access link. Assigns and returns the packet id.
    pub fn send(&mut self, host: HostId, mut pkt: Packet) -> Result<u64, SimError> {
        let info = self.topology.host(host).ok_or(SimError::NoSuchHost(host))?;
        let (switch, in_port) = (info.switch, info.port);
        if pkt.size == 0 {
            return Err(SimError::Config("packet size must be > 0".into()));
        }
        pkt.id = self.next_packet;
        pkt.timestamp = self.now;
        self.next_packet += 1;
        self.counts.generated += 1;
        self.record(TraceEvent::Send {
            packet: pkt.id,
            host,
            src_mac: pkt.src_mac,
            dst_mac: pkt.dst_mac,
            src_ip: pkt.src_ip,
            dst_ip: pkt.dst_ip,
            flags: pkt.tcp_flags,
            size: pkt.size,
        });
        let id = pkt.id;
        let at = self.now + self.link_delay();
        self.push(
            at,
            EventKind::AtSwitch {
                switch,
                in_port,
                pkt,
            },
        )?;
        Ok(id)
    }

    pub fn schedule_host_timer(
        &mut self,
        host: HostId,
        at: SimTime,
        token: u64,
    ) -> Result<(), SimError> {
        if self.topology.host(host).is_none() {
            return Err(SimError::NoSuchHost(host));
        }
        self.push(at, EventKind::HostTimer { host, token })
    }

    pub fn schedule_controller_timer(&mut self, at: SimTime, token: u64) -> Result<(), SimError> {
        self.push(at, EventKind::ControllerTimer { token })
    }

    /// Controller instructs `switch` to emit `pkt` on `port`.
    pub fn packet_out(
        &mut self,
        switch: SwitchId,
        port: PortNo,
        pkt: Packet,
    ) -> Result<(), SimError> {
        self.table(switch)?;
        let at = self.now + self.control_delay();
        self.push(at, EventKind::PacketOut { switch, port, pkt })
    }

    /// Controller discards a packet-in.
    pub fn drop_at_controller(&mut self, switch: SwitchId, pkt: &Packet) {
        self.counts.dropped += 1;
        self.record(TraceEvent::Drop {
            packet: pkt.id,
            switch,
            reason: DropReason::Controller,
        });
    }

    /// Installs an entry now. Returns its sequence number.
    pub fn install(&mut self, switch: SwitchId, entry: FlowEntry) -> Result<u64, SimError> {
        if let Action::Forward(port) = entry.action {
            if self.topology.peer(switch, port).is_none() {
                return Err(SimError::NoSuchPort { switch, port });
            }
        }
        let now = self.now;
        let (seq, replaced) = self.table_mut(switch)?.install(entry, now)?;
        if self.config.record_trace {
            let entry = self
                .table(switch)?
                .entries()
                .find(|(s, _)| *s == seq)
                .map(|(_, e)| e.clone())
                .expect("just installed");
            self.record(TraceEvent::Install {
                switch,
                seq,
                replaced,
                entry,
            });
        }
        Ok(seq)
    }

    fn expire_switch(&mut self, switch: SwitchId) -> Result<(), SimError> {
        let now = self.now;
        let removed = self.table_mut(switch)?.expire(now);
        for (entry, reason) in removed {
            self.record(TraceEvent::Expire {
                switch,
                reason,
                entry,
            });
        }
        Ok(())
    }

    fn emit(&mut self, switch: SwitchId, port: PortNo, pkt: Packet) -> Result<(), SimError> {
        let at = self.now + self.link_delay();
        match self.topology.peer(switch, port) {
            Some(PortPeer::Host(host)) => self.push(at, EventKind::AtHost { host, pkt }),
            Some(PortPeer::Switch(next, in_port)) => self.push(
                at,
                EventKind::AtSwitch {
                    switch: next,
                    in_port,
                    pkt,
                },
            ),
            None => Err(SimError::NoSuchPort { switch, port }),
        }
    }

    fn at_switch(
        &mut self,
        switch: SwitchId,
        in_port: PortNo,
        pkt: Packet,
    ) -> Result<(), SimError> {
        self.expire_switch(switch)?;
        let now = self.now;
        let hit = self.table_mut(switch)?.match_packet(&pkt, in_port, now);
        match hit.map(|h| (h.action, h.priority, h.seq)) {
            Some((Action::Forward(port), _, _)) => self.emit(switch, port, pkt),
            Some((Action::Drop, priority, seq)) => {
                self.counts.dropped += 1;
                self.record(TraceEvent::Drop {
                    packet: pkt.id,
                    switch,
                    reason: DropReason::FlowRule { priority, seq },
                });
                Ok(())
            }
            Some((Action::ToController, _, _)) | None => {
                self.record(TraceEvent::PacketIn {
                    packet: pkt.id,
                    switch,
                    in_port,
                });
                let at = self.now + self.control_delay();
                self.push(
                    at,
                    EventKind::PacketIn {
                        switch,
                        in_port,
                        pkt,
                    },
                )
            }
        }
    }

    /// Processes events in time order up to and including `until`, then
    /// leaves the clock at `until`. Later events stay queued.
    pub fn run(
        &mut self,
        hosts: &mut dyn HostAgent,
        controller: &mut dyn Controller,
        until: SimTime,
    ) -> Result<(), SimError> {
        while self.queue.peek().is_some_and(|e| e.time <= until) {
            let ev = self.queue.pop().expect("peeked");
            if ev.time < self.now {
                return Err(SimError::PastEvent {
                    now: self.now,
                    at: ev.time,
                });
            }
            self.now = ev.time;
            match ev.kind {
                EventKind::HostTimer { host, token } => hosts.on_timer(self, host, token)?,
                EventKind::ControllerTimer { token } => controller.on_timer(self, token)?,
                EventKind::AtSwitch {
                    switch,
                    in_port,
                    pkt,
                } => self.at_switch(switch, in_port, pkt)?,
                EventKind::AtHost { host, pkt } => {
                    self.counts.delivered += 1;
                    self.record(TraceEvent::Deliver {
                        packet: pkt.id,
                        host,
                    });
                    hosts.on_packet(self, host, pkt)?;
                }
                EventKind::PacketIn {
                    switch,
                    in_port,
                    pkt,
                } => controller.on_packet_in(self, switch, in_port, pkt)?,
                EventKind::PacketOut { switch, port, pkt } => self.emit(switch, port, pkt)?,
                EventKind::Sweep => {
                    for s in 1..=self.topology.n_switches() {
                        self.expire_switch(s)?;
                    }
                    let next = self.now + seconds(self.config.sweep_interval_s);
                    self.push(next, EventKind::Sweep)?;
                }
            }
        }
        self.now = self.now.max(until);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::packet::tcp_flags;
    use crate::simnet::topology::build_linear_topology;

    struct Sink(Vec<(HostId, u64)>);

    impl HostAgent for Sink {
        fn on_packet(
            &mut self,
            _: &mut Network,
            host: HostId,
            pkt: Packet,
        ) -> Result<(), SimError> {
            self.0.push((host, pkt.id));
            Ok(())
        }
        fn on_timer(&mut self, _: &mut Network, _: HostId, _: u64) -> Result<(), SimError> {
            Ok(())
        }
    }

    fn packet(net: &Network, from: HostId, to: HostId) -> Packet {
        let (a, b) = (
            net.topology().host(from).unwrap(),
            net.topology().host(to).unwrap(),
        );
        Packet::tcp(a.mac, b.mac, a.ip, b.ip, 4000, 80, tcp_flags::SYN, 60)
    }

    #[test]
    fn no_events_empty_trace() {
        let topo = build_linear_topology(2, 2).unwrap();
        let cfg = NetConfig {
            transit_rules: false,
            ..NetConfig::default()
        };
        let mut net = Network::new(topo, cfg).unwrap();
        net.take_trace();
        net.run(&mut Sink(vec![]), &mut ForwardingController, seconds(0.5))
            .unwrap();
        assert!(net.trace().is_empty());
    }

    #[test]
    fn miss_goes_to_controller_then_delivered() {
        let topo = build_linear_topology(8, 8).unwrap();
        let mut net = Network::new(topo, NetConfig::default()).unwrap();
        let p = packet(&net, 64, 1);
        net.send(64, p).unwrap();
        let mut sink = Sink(vec![]);
        net.run(&mut sink, &mut ForwardingController, seconds(1.0))
            .unwrap();
        assert_eq!(sink.0, vec![(1, 0)]);
        let ins: Vec<_> = net
            .trace()
            .iter()
            .filter(|r| matches!(r.event, TraceEvent::PacketIn { .. }))
            .collect();
        assert_eq!(ins.len(), 1, "only the ingress switch escalates");
        assert_eq!(net.counts().delivered, 1);
    }

    #[test]
    fn drop_rule_counts() {
        let topo = build_linear_topology(1, 2).unwrap();
        let mut net = Network::new(topo, NetConfig::default()).unwrap();
        let m = FlowMatch {
            src_mac: Some(MacAddr(2)),
            ..FlowMatch::default()
        };
        net.install(1, FlowEntry::new(m, 1000, Action::Drop, 0, 300))
            .unwrap();
        let p = packet(&net, 2, 1);
        net.send(2, p).unwrap();
        let mut sink = Sink(vec![]);
        net.run(&mut sink, &mut ForwardingController, seconds(1.0))
            .unwrap();
        assert!(sink.0.is_empty());
        assert_eq!(net.counts().dropped, 1);
        let (_, e) = net
            .table(1)
            .unwrap()
            .entries()
            .find(|(_, e)| e.priority == 1000)
            .unwrap();
        assert_eq!(e.packet_count, 1);
    }

    #[test]
    fn forward_to_missing_port_is_an_error() {
        let topo = build_linear_topology(1, 2).unwrap();
        let mut net = Network::new(topo, NetConfig::default()).unwrap();
        let err = net
            .install(
                1,
                FlowEntry::new(FlowMatch::all(), 1, Action::Forward(9), 0, 0),
            )
            .unwrap_err();
        assert!(matches!(err, SimError::NoSuchPort { switch: 1, port: 9 }));
    }

    #[test]
    fn past_events_rejected() {
        let topo = build_linear_topology(1, 2).unwrap();
        let mut net = Network::new(topo, NetConfig::default()).unwrap();
        net.run(&mut Sink(vec![]), &mut ForwardingController, seconds(2.0))
            .unwrap();
        assert!(matches!(
            net.schedule_host_timer(1, seconds(1.0), 0),
            Err(SimError::PastEvent { .. })
        ));
    }
}
