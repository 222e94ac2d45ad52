use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::packet::{MacAddr, Packet};
use super::{seconds, SimError, SimTime};

/// Set fields must all equal the packet's; unset fields are wildcards.
/// An empty match is only valid with `wildcard_all`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowMatch {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_port: Option<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub src_mac: Option<MacAddr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dst_mac: Option<MacAddr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub src_ip: Option<Ipv4Addr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dst_ip: Option<Ipv4Addr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ip_protocol: Option<u8>,
    /// `(mask, value)`: matches when `flags & mask == value`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tcp_flags: Option<(u8, u8)>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub wildcard_all: bool,
}

impl FlowMatch {
    pub fn all() -> Self {
        Self {
            wildcard_all: true,
            ..Self::default()
        }
    }

    fn has_fields(&self) -> bool {
        self.in_port.is_some()
            || self.src_mac.is_some()
            || self.dst_mac.is_some()
            || self.src_ip.is_some()
            || self.dst_ip.is_some()
            || self.ip_protocol.is_some()
            || self.tcp_flags.is_some()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match (self.wildcard_all, self.has_fields()) {
            (false, false) => Err(SimError::InvalidMatch(
                "no field set and no wildcard marker".into(),
            )),
            (true, true) => Err(SimError::InvalidMatch(
                "wildcard marker combined with match fields".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn matches(&self, pkt: &Packet, in_port: u16) -> bool {
        fn eq<T: PartialEq>(want: Option<T>, got: T) -> bool {
            want.is_none_or(|w| w == got)
        }
        eq(self.in_port, in_port)
            && eq(self.src_mac, pkt.src_mac)
            && eq(self.dst_mac, pkt.dst_mac)
            && eq(self.src_ip, pkt.src_ip)
            && eq(self.dst_ip, pkt.dst_ip)
            && eq(self.ip_protocol, pkt.ip_protocol)
            && self
                .tcp_flags
                .is_none_or(|(mask, value)| pkt.tcp_flags & mask == value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Forward(u16),
    Drop,
    ToController,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowEntry {
    #[serde(rename = "match")]
    pub flow_match: FlowMatch,
    pub priority: u16,
    pub action: Action,
    /// Seconds; 0 never expires by this clock.
    pub idle_timeout: u32,
    /// Seconds; 0 never expires by this clock.
    pub hard_timeout: u32,
    pub install_time: SimTime,
    pub last_match_time: SimTime,
    pub packet_count: u64,
    pub byte_count: u64,
}

impl FlowEntry {
    pub fn new(
        flow_match: FlowMatch,
        priority: u16,
        action: Action,
        idle_timeout: u32,
        hard_timeout: u32,
    ) -> Self {
        Self {
            flow_match,
            priority,
            action,
            idle_timeout,
            hard_timeout,
            install_time: 0,
            last_match_time: 0,
            packet_count: 0,
            byte_count: 0,
        }
    }

    /// Which clock, if any, has run out at `now`.
    pub fn expiry(&self, now: SimTime) -> Option<ExpiryReason> {
        if self.hard_timeout > 0
            && now.saturating_sub(self.install_time) >= seconds(self.hard_timeout as f64)
        {
            return Some(ExpiryReason::Hard);
        }
        if self.idle_timeout > 0
            && now.saturating_sub(self.last_match_time) >= seconds(self.idle_timeout as f64)
        {
            return Some(ExpiryReason::Idle);
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpiryReason {
    Idle,
    Hard,
}

/// Result of a table lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hit {
    pub action: Action,
    pub priority: u16,
    /// Insertion sequence of the winning entry.
    pub seq: u64,
}

/// Priority-ordered flow table. Equal priorities resolve to the entry
/// installed first.
#[derive(Debug, Clone, Default)]
pub struct FlowTable {
    entries: Vec<(u64, FlowEntry)>,
    next_seq: u64,
}

impl FlowTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries with their insertion sequence numbers, in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = (u64, &FlowEntry)> {
        self.entries.iter().map(|(s, e)| (*s, e))
    }

    /// Installs at `now`. An entry with the same match and priority is
    /// replaced in place (keeping its sequence number) with fresh timers and
    /// counters. Returns the sequence number and whether a replacement
    /// happened.
    pub fn install(&mut self, mut entry: FlowEntry, now: SimTime) -> Result<(u64, bool), SimError> {
        entry.flow_match.validate()?;
        if let Action::Forward(0) = entry.action {
            return Err(SimError::InvalidMatch("forward to port 0".into()));
        }
        entry.install_time = now;
        entry.last_match_time = now;
        entry.packet_count = 0;
        entry.byte_count = 0;
        if let Some((seq, slot)) = self
            .entries
            .iter_mut()
            .find(|(_, e)| e.priority == entry.priority && e.flow_match == entry.flow_match)
        {
            *slot = entry;
            return Ok((*seq, true));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.entries.push((seq, entry));
        Ok((seq, false))
    }

    /// Highest-priority live entry matching the packet; updates its counters.
    /// Entries whose expiry condition holds at `now` are never returned.
    pub fn match_packet(&mut self, pkt: &Packet, in_port: u16, now: SimTime) -> Option<Hit> {
        let mut best: Option<usize> = None;
        for (i, (_, e)) in self.entries.iter().enumerate() {
            if e.expiry(now).is_some() || !e.flow_match.matches(pkt, in_port) {
                continue;
            }
            // Entries are stored in insertion order, so strict `>` keeps the
            // earliest among equal priorities.
            if best.is_none_or(|b| e.priority > self.entries[b].1.priority) {
                best = Some(i);
            }
        }
        let (seq, e) = &mut self.entries[best?];
        e.last_match_time = now;
        e.packet_count += 1;
        e.byte_count += u64::from(pkt.size);
        Some(Hit {
            action: e.action,
            priority: e.priority,
            seq: *seq,
        })
    }

    /// Removes and returns every entry whose idle or hard clock has run out.
    pub fn expire(&mut self, now: SimTime) -> Vec<(FlowEntry, ExpiryReason)> {
        let mut removed = Vec::new();
        self.entries.retain(|(_, e)| match e.expiry(now) {
            Some(reason) => {
                removed.push((e.clone(), reason));
                false
            }
            None => true,
        });
        removed
    }

    /// Removes entries matching `pred`; returns how many were removed.
    pub fn remove_where(&mut self, pred: impl Fn(&FlowEntry) -> bool) -> usize {
        let before = self.entries.len();
        self.entries.retain(|(_, e)| !pred(e));
        before - self.entries.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::packet::tcp_flags;

    fn pkt(src: u64) -> Packet {
        Packet::tcp(
            MacAddr(src),
            MacAddr(1),
            Ipv4Addr::new(10, 0, 0, src as u8),
            Ipv4Addr::new(10, 0, 0, 1),
            1234,
            80,
            tcp_flags::SYN,
            60,
        )
    }

    fn by_src(mac: u64) -> FlowMatch {
        FlowMatch {
            src_mac: Some(MacAddr(mac)),
            ..FlowMatch::default()
        }
    }

    #[test]
    fn empty_table_misses() {
        assert_eq!(FlowTable::new().match_packet(&pkt(2), 1, 0), None);
    }

    #[test]
    fn higher_priority_wins() {
        let mut t = FlowTable::new();
        t.install(
            FlowEntry::new(FlowMatch::all(), 10, Action::Forward(2), 0, 0),
            0,
        )
        .unwrap();
        t.install(FlowEntry::new(by_src(5), 1000, Action::Drop, 0, 300), 0)
            .unwrap();
        let hit = t.match_packet(&pkt(5), 1, 1).unwrap();
        assert_eq!((hit.action, hit.priority), (Action::Drop, 1000));
        assert_eq!(
            t.match_packet(&pkt(6), 1, 1).unwrap().action,
            Action::Forward(2)
        );
    }

    #[test]
    fn first_installed_wins_ties() {
        let mut t = FlowTable::new();
        t.install(FlowEntry::new(by_src(5), 7, Action::Forward(1), 0, 0), 0)
            .unwrap();
        let m = FlowMatch {
            dst_ip: Some(Ipv4Addr::new(10, 0, 0, 1)),
            ..FlowMatch::default()
        };
        t.install(FlowEntry::new(m, 7, Action::Forward(2), 0, 0), 0)
            .unwrap();
        assert_eq!(
            t.match_packet(&pkt(5), 1, 0).unwrap().action,
            Action::Forward(1)
        );
    }

    #[test]
    fn reinstall_replaces_and_resets() {
        let mut t = FlowTable::new();
        let e = FlowEntry::new(by_src(5), 7, Action::Drop, 0, 10);
        t.install(e.clone(), 0).unwrap();
        t.match_packet(&pkt(5), 1, seconds(1.0)).unwrap();
        let (_, replaced) = t.install(e, seconds(5.0)).unwrap();
        assert!(replaced);
        assert_eq!(t.len(), 1);
        let (_, entry) = t.entries().next().unwrap();
        assert_eq!(entry.packet_count, 0);
        assert_eq!(entry.install_time, seconds(5.0));
        assert!(t.expire(seconds(12.0)).is_empty());
    }

    #[test]
    fn timeouts() {
        let mut t = FlowTable::new();
        t.install(FlowEntry::new(by_src(2), 1, Action::Drop, 200, 0), 0)
            .unwrap();
        t.install(FlowEntry::new(by_src(3), 1000, Action::Drop, 0, 300), 0)
            .unwrap();
        t.install(
            FlowEntry::new(by_src(4), 10, Action::Forward(1), 200, 400),
            0,
        )
        .unwrap();
        // keep the idle clock of the third entry fresh
        for s in (0..400).step_by(50) {
            t.match_packet(&pkt(4), 1, seconds(s as f64));
        }
        let at = |s: f64| seconds(s);
        assert_eq!(t.expire(at(199.0)).len(), 0);
        let gone = t.expire(at(200.0));
        assert_eq!(gone.len(), 1);
        assert_eq!(gone[0].1, ExpiryReason::Idle);
        assert!(t.expire(at(299.999)).is_empty());
        assert_eq!(t.expire(at(300.0))[0].1, ExpiryReason::Hard);
        assert!(t.expire(at(399.0)).is_empty());
        assert_eq!(t.expire(at(400.0))[0].1, ExpiryReason::Hard);
        assert!(t.is_empty());
    }

    #[test]
    fn expired_entries_never_match() {
        let mut t = FlowTable::new();
        t.install(FlowEntry::new(by_src(2), 1, Action::Drop, 0, 5), 0)
            .unwrap();
        assert_eq!(t.match_packet(&pkt(2), 1, seconds(5.0)), None);
    }

    #[test]
    fn invalid_match_rejected() {
        let mut t = FlowTable::new();
        let e = FlowEntry::new(FlowMatch::default(), 1, Action::Drop, 0, 0);
        assert!(matches!(t.install(e, 0), Err(SimError::InvalidMatch(_))));
        let mut both = by_src(1);
        both.wildcard_all = true;
        assert!(both.validate().is_err());
    }
}
