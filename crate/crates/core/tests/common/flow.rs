//! Reference flow table, operation generators and the conservation driver.

use std::collections::HashSet;
use std::net::Ipv4Addr;

use fasa_core::simnet::{
    build_linear_topology, seconds, tcp_flags, Action, Controller, ExpiryReason, FlowEntry,
    FlowMatch, FlowTable, ForwardingController, HostAgent, HostId, MacAddr, NetConfig, Network,
    Packet, PortNo, SimError, SimTime, SwitchId, TraceEvent,
};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

/// Match spec over a small field universe so collisions are common.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSpec {
    pub any: bool,
    pub in_port: Option<u16>,
    pub src_mac: Option<u64>,
    pub dst_ip: Option<u8>,
    pub syn_only: Option<bool>,
}

impl MatchSpec {
    pub fn to_match(&self) -> FlowMatch {
        if self.any {
            return FlowMatch::all();
        }
        FlowMatch {
            in_port: self.in_port,
            src_mac: self.src_mac.map(MacAddr),
            dst_ip: self.dst_ip.map(|d| Ipv4Addr::new(10, 0, 0, d)),
            tcp_flags: self.syn_only.map(|s| {
                let mask = tcp_flags::SYN | tcp_flags::ACK;
                (mask, if s { tcp_flags::SYN } else { mask })
            }),
            ..FlowMatch::default()
        }
    }

    /// Reference predicate written field by field.
    pub fn accepts(&self, p: &Probe) -> bool {
        if self.any {
            return true;
        }
        if let Some(v) = self.in_port {
            if v != p.in_port {
                return false;
            }
        }
        if let Some(v) = self.src_mac {
            if v != p.src_mac {
                return false;
            }
        }
        if let Some(v) = self.dst_ip {
            if v != p.dst_ip {
                return false;
            }
        }
        if let Some(s) = self.syn_only {
            if s != p.syn_only {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone)]
pub struct Probe {
    pub in_port: u16,
    pub src_mac: u64,
    pub dst_ip: u8,
    pub syn_only: bool,
}

impl Probe {
    pub fn packet(&self) -> Packet {
        let flags = if self.syn_only {
            tcp_flags::SYN
        } else {
            tcp_flags::SYN | tcp_flags::ACK
        };
        Packet::tcp(
            MacAddr(self.src_mac),
            MacAddr(99),
            Ipv4Addr::new(10, 0, 0, 200),
            Ipv4Addr::new(10, 0, 0, self.dst_ip),
            1234,
            80,
            flags,
            60,
        )
    }
}

pub fn match_spec() -> impl Strategy<Value = MatchSpec> {
    prop_oneof![
        1 => Just(MatchSpec { any: true, in_port: None, src_mac: None, dst_ip: None, syn_only: None }),
        6 => (
            proptest::option::of(1u16..3),
            proptest::option::of(1u64..4),
            proptest::option::of(1u8..4),
            proptest::option::of(any::<bool>()),
        )
            .prop_filter("at least one field", |(a, b, c, d)| {
                a.is_some() || b.is_some() || c.is_some() || d.is_some()
            })
            .prop_map(|(in_port, src_mac, dst_ip, syn_only)| MatchSpec {
                any: false,
                in_port,
                src_mac,
                dst_ip,
                syn_only,
            }),
    ]
}

pub fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        (1u16..5).prop_map(Action::Forward),
        Just(Action::Drop),
        Just(Action::ToController)
    ]
}

#[derive(Debug, Clone)]
pub struct Install {
    pub spec: MatchSpec,
    pub priority: u16,
    pub action: Action,
    pub idle: u32,
    pub hard: u32,
}

pub fn install() -> impl Strategy<Value = Install> {
    (match_spec(), 0u16..4, action(), 0u32..4, 0u32..5).prop_map(
        |(spec, priority, action, idle, hard)| Install {
            spec,
            priority,
            action,
            idle,
            hard,
        },
    )
}

pub fn probe() -> impl Strategy<Value = Probe> {
    (1u16..3, 1u64..4, 1u8..4, any::<bool>()).prop_map(|(in_port, src_mac, dst_ip, syn_only)| {
        Probe {
            in_port,
            src_mac,
            dst_ip,
            syn_only,
        }
    })
}

/// Reference table: a list in insertion order with explicit clocks.
#[derive(Debug, Default)]
pub struct RefTable {
    pub rows: Vec<RefRow>,
    pub next_seq: u64,
}

#[derive(Debug)]
pub struct RefRow {
    pub seq: u64,
    pub ins: Install,
    pub installed: SimTime,
    pub last: SimTime,
}

impl RefTable {
    pub fn install(&mut self, ins: Install, now: SimTime) -> u64 {
        if let Some(r) = self
            .rows
            .iter_mut()
            .find(|r| r.ins.priority == ins.priority && r.ins.spec == ins.spec)
        {
            r.ins = ins;
            r.installed = now;
            r.last = now;
            return r.seq;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.rows.push(RefRow {
            seq,
            ins,
            installed: now,
            last: now,
        });
        seq
    }

    pub fn live(r: &RefRow, now: SimTime) -> bool {
        let hard_ok = r.ins.hard == 0 || now - r.installed < SimTime::from(r.ins.hard) * 1_000_000;
        let idle_ok = r.ins.idle == 0 || now - r.last < SimTime::from(r.ins.idle) * 1_000_000;
        hard_ok && idle_ok
    }

    pub fn lookup(&mut self, p: &Probe, now: SimTime) -> Option<(u64, Action, u16)> {
        let mut best: Option<usize> = None;
        for (i, r) in self.rows.iter().enumerate() {
            if !Self::live(r, now) || !r.ins.spec.accepts(p) {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) if r.ins.priority > self.rows[b].ins.priority => best = Some(i),
                _ => {}
            }
        }
        let r = &mut self.rows[best?];
        r.last = now;
        Some((r.seq, r.ins.action, r.ins.priority))
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Install(Install),
    Lookup(Probe),
    Expire,
}

pub fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => install().prop_map(Op::Install),
        5 => probe().prop_map(Op::Lookup),
        1 => Just(Op::Expire),
    ]
}

pub fn entry(ins: &Install) -> FlowEntry {
    FlowEntry::new(
        ins.spec.to_match(),
        ins.priority,
        ins.action,
        ins.idle,
        ins.hard,
    )
}

/// Sends scripted packets from timers and otherwise stays silent.
pub struct Script {
    pub sends: Vec<(HostId, Packet)>,
}

impl HostAgent for Script {
    fn on_packet(&mut self, _: &mut Network, _: HostId, _: Packet) -> Result<(), SimError> {
        Ok(())
    }

    fn on_timer(&mut self, net: &mut Network, host: HostId, token: u64) -> Result<(), SimError> {
        let (h, pkt) = self.sends[token as usize].clone();
        debug_assert_eq!(h, host);
        net.send(host, pkt).map(|_| ())
    }
}

/// Forwards like the L2 controller but also installs random drop rules
/// when asked.
pub struct Dropper {
    pub inner: ForwardingController,
    pub drops: Vec<(SwitchId, u64)>,
}

impl Controller for Dropper {
    fn start(&mut self, net: &mut Network) -> Result<(), SimError> {
        for &(switch, mac) in &self.drops {
            let m = FlowMatch {
                src_mac: Some(MacAddr(mac)),
                ..FlowMatch::default()
            };
            net.install(switch, FlowEntry::new(m, 50, Action::Drop, 0, 2))?;
        }
        Ok(())
    }

    fn on_packet_in(
        &mut self,
        net: &mut Network,
        switch: SwitchId,
        in_port: PortNo,
        pkt: Packet,
    ) -> Result<(), SimError> {
        self.inner.on_packet_in(net, switch, in_port, pkt)
    }
}

pub fn table_case() -> impl Strategy<Value = Vec<(Op, u64)>> {
    proptest::collection::vec((op(), 0u64..1_500_000), 1..60)
}

/// Replays `ops` against the table and the reference. Lookups must return
/// the highest-priority live match, the earliest-installed among equal
/// priorities; expiry must remove exactly the entries whose idle or hard
/// clock has run out, with 0 meaning never.
pub fn check_table(ops: Vec<(Op, u64)>) -> Result<(), TestCaseError> {
    let mut table = FlowTable::new();
    let mut reference = RefTable::default();
    let mut now: SimTime = 0;
    for (op, dt) in ops {
        now += dt;
        match op {
            Op::Install(ins) => {
                let (seq, _) = table.install(entry(&ins), now).unwrap();
                let want = reference.install(ins, now);
                prop_assert_eq!(seq, want);
            }
            Op::Lookup(p) => {
                let got = table.match_packet(&p.packet(), p.in_port, now);
                let want = reference.lookup(&p, now);
                prop_assert_eq!(got.map(|h| (h.seq, h.action, h.priority)), want);
            }
            Op::Expire => {
                let before: Vec<u64> = table.entries().map(|(s, _)| s).collect();
                table.expire(now);
                let after: HashSet<u64> = table.entries().map(|(s, _)| s).collect();
                let removed: HashSet<u64> =
                    before.into_iter().filter(|s| !after.contains(s)).collect();
                let dead: HashSet<u64> = reference
                    .rows
                    .iter()
                    .filter(|r| !RefTable::live(r, now))
                    .map(|r| r.seq)
                    .collect();
                prop_assert_eq!(&removed, &dead);
                reference.rows.retain(|r| RefTable::live(r, now));
            }
        }
        prop_assert_eq!(table.len(), reference.rows.len());
    }
    Ok(())
}

/// An entry with both clocks at 0 survives any amount of time.
pub fn check_zero_timeouts(later: u64, prio: u16) -> Result<(), TestCaseError> {
    let mut table = FlowTable::new();
    table
        .install(
            FlowEntry::new(FlowMatch::all(), prio, Action::Drop, 0, 0),
            0,
        )
        .unwrap();
    prop_assert!(table.expire(later).is_empty());
    let p = Probe {
        in_port: 1,
        src_mac: 1,
        dst_ip: 1,
        syn_only: true,
    };
    prop_assert!(table.match_packet(&p.packet(), 1, later).is_some());
    Ok(())
}

/// Entries live until the first clock runs out; the hard clock wins a tie.
pub fn check_boundaries(idle: u32, hard: u32) -> Result<(), TestCaseError> {
    let mut table = FlowTable::new();
    table
        .install(
            FlowEntry::new(FlowMatch::all(), 1, Action::Drop, idle, hard),
            0,
        )
        .unwrap();
    let first = idle.min(hard);
    let just_before = seconds(f64::from(first)) - 1;
    prop_assert!(table.clone().expire(just_before).is_empty());
    let removed = table.expire(seconds(f64::from(first)));
    prop_assert_eq!(removed.len(), 1);
    let want = if hard <= idle {
        ExpiryReason::Hard
    } else {
        ExpiryReason::Idle
    };
    prop_assert_eq!(removed[0].1, want);
    Ok(())
}

#[derive(Debug, Clone)]
pub struct NetCase {
    pub n_switches: u32,
    pub hosts_per_switch: u16,
    pub sends: Vec<(u32, u32, u64)>,
    pub drops: Vec<(u32, u64)>,
    pub stop: u64,
}

pub fn net_case() -> impl Strategy<Value = NetCase> {
    (
        1u32..4,
        1u16..4,
        proptest::collection::vec((0u32..12, 0u32..13, 0u64..3_000_000), 0..40),
        proptest::collection::vec((1u32..4, 1u64..13), 0..3),
        0u64..4_000_000,
    )
        .prop_map(
            |(n_switches, hosts_per_switch, sends, drops, stop)| NetCase {
                n_switches,
                hosts_per_switch,
                sends,
                drops,
                stop,
            },
        )
}

/// Every generated packet is delivered, dropped or still in flight, and the
/// trace settles each exactly once.
pub fn check_conservation(case: NetCase) -> Result<(), TestCaseError> {
    let topo = build_linear_topology(case.n_switches, case.hosts_per_switch).unwrap();
    let n_hosts = case.n_switches * u32::from(case.hosts_per_switch);
    let mut net = Network::new(topo, NetConfig::default()).unwrap();
    let mut script = Script { sends: Vec::new() };
    for (i, &(src, dst, at)) in case.sends.iter().enumerate() {
        let src = src % n_hosts + 1;
        // dst may fall outside the topology: an unknown MAC the controller
        // cannot route.
        let dst = u64::from(dst) + 1;
        let pkt = Packet::tcp(
            MacAddr(u64::from(src)),
            MacAddr(dst),
            Ipv4Addr::new(10, 0, 0, src as u8),
            Ipv4Addr::new(10, 0, 0, dst as u8),
            1000,
            80,
            tcp_flags::SYN,
            60,
        );
        script.sends.push((src, pkt));
        net.schedule_host_timer(src, at, i as u64).unwrap();
    }
    let drops = case
        .drops
        .into_iter()
        .filter(|&(s, _)| s <= case.n_switches)
        .collect();
    let mut ctrl = Dropper {
        inner: ForwardingController,
        drops,
    };
    ctrl.start(&mut net).unwrap();

    net.run(&mut script, &mut ctrl, case.stop).unwrap();
    let c = net.counts();
    prop_assert_eq!(c.generated, c.delivered + c.dropped + net.in_flight());

    net.run(&mut script, &mut ctrl, 10_000_000).unwrap();
    let c = net.counts();
    prop_assert_eq!(net.in_flight(), 0);
    prop_assert_eq!(c.generated, case.sends.len() as u64);
    prop_assert_eq!(c.generated, c.delivered + c.dropped);

    let mut sent = HashSet::new();
    let mut settled = HashSet::new();
    for r in net.trace() {
        match &r.event {
            TraceEvent::Send { packet, .. } => {
                prop_assert!(sent.insert(*packet));
            }
            TraceEvent::Deliver { packet, .. } | TraceEvent::Drop { packet, .. } => {
                prop_assert!(settled.insert(*packet), "packet {} settled twice", packet);
            }
            _ => {}
        }
    }
    prop_assert_eq!(sent, settled);
    Ok(())
}
