//! Controller-side detection loop: per-window flow aggregates, a pps
//! pre-threshold, ANFIS classification of each flow row, attacker MAC
//! identification and flow-rule mitigation.

mod controller;
mod model;

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anfis::{AnfisError, AnfisModel, Classification};
use crate::simnet::{
    seconds, tcp_flags, Action, FlowEntry, FlowMatch, MacAddr, Network, Packet, PortNo, SimError,
    SwitchId,
};
use crate::traffic::TrafficError;

pub use controller::{simulate, ControllerMode, FasaController, FasaReport, WindowSummary};
pub use model::{
    collect_training_rows, default_model, train_detector, training_scenario, SIM_FEATURES,
};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("nothing to mitigate: no malicious rows")]
    NothingToMitigate,
    #[error("unknown MAC {0}: not in the host-location table")]
    UnknownMac(MacAddr),
    #[error("unroutable destination {0}")]
    Unroutable(Ipv4Addr),
    #[error("model feature {0:?} cannot be computed from window statistics")]
    UnknownFeature(String),
    #[error("invalid detector configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Anfis(#[from] AnfisError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub priority: u16,
    pub idle_timeout_s: u32,
    pub hard_timeout_s: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Serving-capacity limit in packets per second.
    pub pps_threshold: f64,
    pub collection_interval_s: f64,
    pub block_rule: RuleSpec,
    pub allow_rule: RuleSpec,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            pps_threshold: 700.0,
            collection_interval_s: 5.0,
            block_rule: RuleSpec {
                priority: 1000,
                idle_timeout_s: 0,
                hard_timeout_s: 300,
            },
            allow_rule: RuleSpec {
                priority: 10,
                idle_timeout_s: 200,
                hard_timeout_s: 400,
            },
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        if !(self.pps_threshold.is_finite() && self.pps_threshold > 0.0) {
            return Err(DetectError::Config(format!(
                "pps_threshold must be > 0, got {}",
                self.pps_threshold
            )));
        }
        if !(self.collection_interval_s.is_finite() && self.collection_interval_s > 0.0) {
            return Err(DetectError::Config(format!(
                "collection_interval_s must be > 0, got {}",
                self.collection_interval_s
            )));
        }
        if self.block_rule.priority == self.allow_rule.priority {
            return Err(DetectError::Config(
                "block and allow rules need distinct priorities".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub src_mac: MacAddr,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
}

impl FlowKey {
    pub fn of(pkt: &Packet) -> Self {
        Self {
            src_mac: pkt.src_mac,
            src_ip: pkt.src_ip,
            dst_ip: pkt.dst_ip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub key: FlowKey,
    pub packets: u64,
    pub syn: u64,
    pub ack: u64,
    pub bytes: u64,
    /// Distinct source IPs seen from this row's MAC in the window.
    pub mac_src_ips: u64,
    /// Id of the first packet of the row, for joining with ground truth.
    pub first_packet: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub rows: Vec<FlowRow>,
    pub total_packets: u64,
    pub pps: f64,
}

impl WindowStats {
    /// Packets per MAC over all rows.
    pub fn packets_by_mac(&self) -> BTreeMap<MacAddr, u64> {
        let mut out = BTreeMap::new();
        for r in &self.rows {
            *out.entry(r.key.src_mac).or_default() += r.packets;
        }
        out
    }
}

/// Incremental per-window aggregation of the packets seen by the
/// controller.
#[derive(Debug, Clone, Default)]
pub struct WindowCollector {
    rows: BTreeMap<FlowKey, FlowRow>,
    ips_by_mac: BTreeMap<MacAddr, BTreeSet<Ipv4Addr>>,
    total: u64,
}

impl WindowCollector {
    pub fn observe(&mut self, pkt: &Packet) {
        let key = FlowKey::of(pkt);
        let row = self.rows.entry(key).or_insert_with(|| FlowRow {
            key,
            packets: 0,
            syn: 0,
            ack: 0,
            bytes: 0,
            mac_src_ips: 0,
            first_packet: pkt.id,
        });
        row.packets += 1;
        row.syn += u64::from(pkt.has(tcp_flags::SYN));
        row.ack += u64::from(pkt.has(tcp_flags::ACK));
        row.bytes += u64::from(pkt.size);
        self.ips_by_mac
            .entry(pkt.src_mac)
            .or_default()
            .insert(pkt.src_ip);
        self.total += 1;
    }

    /// Closes the window and resets the collector.
    pub fn finish(&mut self, index: usize, start_s: f64, end_s: f64) -> WindowStats {
        let ips = std::mem::take(&mut self.ips_by_mac);
        let rows = std::mem::take(&mut self.rows)
            .into_values()
            .map(|mut r| {
                r.mac_src_ips = ips.get(&r.key.src_mac).map_or(0, |s| s.len() as u64);
                r
            })
            .collect();
        let total = std::mem::take(&mut self.total);
        let span = end_s - start_s;
        WindowStats {
            index,
            start_s,
            end_s,
            rows,
            total_packets: total,
            pps: if span > 0.0 { total as f64 / span } else { 0.0 },
        }
    }
}

/// Aggregates `packets` observed during `[start_s, start_s + interval_s)`.
pub fn collect_window(
    packets: &[Packet],
    index: usize,
    start_s: f64,
    interval_s: f64,
) -> WindowStats {
    let mut c = WindowCollector::default();
    for p in packets {
        c.observe(p);
    }
    c.finish(index, start_s, start_s + interval_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precheck {
    Pass,
    Suspicious,
}

/// Suspicious iff the window rate exceeds the serving capacity.
pub fn precheck(stats: &WindowStats, config: &DetectorConfig) -> Precheck {
    if stats.pps > config.pps_threshold {
        Precheck::Suspicious
    } else {
        Precheck::Pass
    }
}

/// Raw value of a named window feature.
pub fn row_feature(row: &FlowRow, name: &str) -> Result<f64, DetectError> {
    let ratio = |n: u64| {
        if row.packets == 0 {
            0.0
        } else {
            n as f64 / row.packets as f64
        }
    };
    Ok(match name {
        "syn_ratio" => ratio(row.syn),
        "ack_ratio" => ratio(row.ack),
        "log_src_ip_fanout" => (row.mac_src_ips.max(1) as f64).ln(),
        "packets" => row.packets as f64,
        "bytes" => row.bytes as f64,
        "mean_packet_bytes" => {
            if row.packets == 0 {
                0.0
            } else {
                row.bytes as f64 / row.packets as f64
            }
        }
        other => return Err(DetectError::UnknownFeature(other.to_string())),
    })
}

/// Unscaled feature vector in the order of `names`.
pub fn raw_features(row: &FlowRow, names: &[String]) -> Result<Vec<f64>, DetectError> {
    names.iter().map(|n| row_feature(row, n)).collect()
}

/// Model input for `row`: the model's features, scaled with its embedded
/// scaler.
pub fn featurize(row: &FlowRow, model: &AnfisModel) -> Result<Vec<f64>, DetectError> {
    if model.feature_names().len() != model.n_inputs() {
        return Err(DetectError::Config(format!(
            "model names {} features for {} inputs",
            model.feature_names().len(),
            model.n_inputs()
        )));
    }
    let raw = raw_features(row, model.feature_names())?;
    Ok(model.scale_input(&raw)?)
}

pub fn classify_flow(model: &AnfisModel, features: &[f64]) -> Result<Classification, DetectError> {
    Ok(model.classify(features)?)
}

/// MAC with the most distinct source IPs over the malicious rows; ties go to
/// more packets, then the lowest MAC.
pub fn identify_attacker(stats: &WindowStats, malicious: &[bool]) -> Result<MacAddr, DetectError> {
    let mut per_mac: BTreeMap<MacAddr, (BTreeSet<Ipv4Addr>, u64)> = BTreeMap::new();
    for (row, _) in stats.rows.iter().zip(malicious).filter(|(_, &m)| m) {
        let e = per_mac.entry(row.key.src_mac).or_default();
        e.0.insert(row.key.src_ip);
        e.1 += row.packets;
    }
    per_mac
        .into_iter()
        // Reversed MAC so the lowest one wins a full tie.
        .max_by(|(ma, (ia, pa)), (mb, (ib, pb))| {
            (ia.len(), pa, std::cmp::Reverse(ma)).cmp(&(ib.len(), pb, std::cmp::Reverse(mb)))
        })
        .map(|(mac, _)| mac)
        .ok_or(DetectError::NothingToMitigate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitigationKind {
    DropFromMac,
    BlockPort,
    AllowFlow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationAction {
    pub kind: MitigationKind,
    pub switch: SwitchId,
    pub port: PortNo,
    pub mac: MacAddr,
    pub entry: FlowEntry,
    pub time_us: u64,
}

fn entry(m: FlowMatch, spec: &RuleSpec, action: Action) -> FlowEntry {
    FlowEntry::new(
        m,
        spec.priority,
        action,
        spec.idle_timeout_s,
        spec.hard_timeout_s,
    )
}

/// Drops everything from `mac` and blocks its switch port, on the switch the
/// MAC is attached to. Both entries go in within the same instant.
pub fn mitigate(
    mac: MacAddr,
    net: &mut Network,
    config: &DetectorConfig,
) -> Result<Vec<MitigationAction>, DetectError> {
    let (switch, port) = net
        .topology()
        .locate(mac)
        .ok_or(DetectError::UnknownMac(mac))?;
    let by_mac = entry(
        FlowMatch {
            src_mac: Some(mac),
            ..FlowMatch::default()
        },
        &config.block_rule,
        Action::Drop,
    );
    let by_port = entry(
        FlowMatch {
            in_port: Some(port),
            ..FlowMatch::default()
        },
        &config.block_rule,
        Action::Drop,
    );
    let now = net.now();
    let mut out = Vec::with_capacity(2);
    for (kind, e) in [
        (MitigationKind::DropFromMac, by_mac),
        (MitigationKind::BlockPort, by_port),
    ] {
        net.install(switch, e.clone())?;
        out.push(MitigationAction {
            kind,
            switch,
            port,
            mac,
            entry: FlowEntry {
                install_time: now,
                last_match_time: now,
                ..e
            },
            time_us: now,
        });
    }
    Ok(out)
}

/// Forward entry for a legitimate flow on its source's edge switch.
pub fn allow(
    key: &FlowKey,
    net: &mut Network,
    config: &DetectorConfig,
) -> Result<MitigationAction, DetectError> {
    let topo = net.topology();
    let (switch, port) = topo
        .locate(key.src_mac)
        .ok_or(DetectError::UnknownMac(key.src_mac))?;
    let dst = topo
        .host_by_ip(key.dst_ip)
        .ok_or(DetectError::Unroutable(key.dst_ip))?;
    let out_port = topo.route(switch, dst.switch, dst.port);
    let e = entry(
        FlowMatch {
            src_mac: Some(key.src_mac),
            src_ip: Some(key.src_ip),
            dst_ip: Some(key.dst_ip),
            ..FlowMatch::default()
        },
        &config.allow_rule,
        Action::Forward(out_port),
    );
    net.install(switch, e.clone())?;
    let now = net.now();
    Ok(MitigationAction {
        kind: MitigationKind::AllowFlow,
        switch,
        port,
        mac: key.src_mac,
        entry: FlowEntry {
            install_time: now,
            last_match_time: now,
            ..e
        },
        time_us: now,
    })
}

/// Window length helper shared with the controller.
pub(crate) fn interval_us(config: &DetectorConfig) -> u64 {
    seconds(config.collection_interval_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::{build_linear_topology, NetConfig};

    fn pkt(id: u64, mac: u64, src: [u8; 4], flags: u8) -> Packet {
        let mut p = Packet::tcp(
            MacAddr(mac),
            MacAddr(1),
            Ipv4Addr::from(src),
            Ipv4Addr::new(10, 0, 0, 1),
            5000,
            80,
            flags,
            60,
        );
        p.id = id;
        p
    }

    #[test]
    fn window_rates() {
        let packets: Vec<Packet> = (0..3500)
            .map(|i| pkt(i, 2, [10, 0, 0, 2], tcp_flags::SYN))
            .collect();
        let s = collect_window(&packets, 0, 0.0, 5.0);
        assert_eq!(s.pps, 700.0);
        assert_eq!(collect_window(&[], 0, 0.0, 5.0).pps, 0.0);
    }

    #[test]
    fn two_flows_two_rows() {
        let mut packets = vec![];
        for i in 0..7 {
            packets.push(pkt(i, 2, [10, 0, 0, 2], tcp_flags::ACK));
        }
        for i in 7..10 {
            packets.push(pkt(i, 3, [10, 0, 0, 3], tcp_flags::SYN));
        }
        let s = collect_window(&packets, 0, 0.0, 5.0);
        assert_eq!(s.rows.len(), 2);
        assert_eq!((s.rows[0].packets, s.rows[0].ack), (7, 7));
        assert_eq!((s.rows[1].packets, s.rows[1].syn), (3, 3));
        assert_eq!(s.rows[1].first_packet, 7);
    }

    #[test]
    fn precheck_boundary() {
        let mut s = collect_window(&[], 0, 0.0, 5.0);
        let cfg = DetectorConfig::default();
        s.pps = 699.0;
        assert_eq!(precheck(&s, &cfg), Precheck::Pass);
        s.pps = 701.0;
        assert_eq!(precheck(&s, &cfg), Precheck::Suspicious);
        let low = DetectorConfig {
            pps_threshold: 100.0,
            ..cfg
        };
        s.pps = 150.0;
        assert_eq!(precheck(&s, &low), Precheck::Suspicious);
    }

    #[test]
    fn attacker_identification() {
        let mut packets = vec![];
        let mut id = 0;
        for i in 0..500u32 {
            packets.push(pkt(id, 21, (0xAC10_0000 + i).to_be_bytes(), tcp_flags::SYN));
            id += 1;
        }
        for mac in 2..6 {
            for _ in 0..50 {
                packets.push(pkt(id, mac, [10, 0, 0, mac as u8], tcp_flags::SYN));
                id += 1;
            }
        }
        let s = collect_window(&packets, 0, 0.0, 5.0);
        let all = vec![true; s.rows.len()];
        assert_eq!(identify_attacker(&s, &all).unwrap(), MacAddr(21));
        // equal fanout (one IP each): packet count decides
        let mut few = vec![];
        for i in 0..3 {
            few.push(pkt(i, 4, [10, 0, 0, 4], tcp_flags::SYN));
        }
        few.push(pkt(3, 2, [10, 0, 0, 2], tcp_flags::SYN));
        let s = collect_window(&few, 0, 0.0, 5.0);
        assert_eq!(identify_attacker(&s, &[true, true]).unwrap(), MacAddr(4));
        // full tie: lowest MAC
        let tie = vec![pkt(0, 9, [10, 0, 0, 9], 2), pkt(1, 7, [10, 0, 0, 7], 2)];
        let s = collect_window(&tie, 0, 0.0, 5.0);
        assert_eq!(identify_attacker(&s, &[true, true]).unwrap(), MacAddr(7));
        assert_eq!(identify_attacker(&s, &[false, true]).unwrap(), MacAddr(9));
        assert!(matches!(
            identify_attacker(&s, &[false, false]),
            Err(DetectError::NothingToMitigate)
        ));
    }

    #[test]
    fn mitigation_installs_two_drops_on_edge_switch() {
        let mut net =
            Network::new(build_linear_topology(8, 8).unwrap(), NetConfig::default()).unwrap();
        let cfg = DetectorConfig::default();
        let acts = mitigate(MacAddr(21), &mut net, &cfg).unwrap();
        assert_eq!(acts.len(), 2);
        assert!(acts.iter().all(|a| a.switch == 3 && a.port == 5));
        assert!(acts.iter().all(|a| a.entry.priority == 1000
            && a.entry.idle_timeout == 0
            && a.entry.hard_timeout == 300
            && a.entry.action == Action::Drop));
        assert_eq!(acts[0].kind, MitigationKind::DropFromMac);
        assert_eq!(acts[1].kind, MitigationKind::BlockPort);
        assert!(matches!(
            mitigate(MacAddr(999), &mut net, &cfg),
            Err(DetectError::UnknownMac(_))
        ));
    }

    #[test]
    fn allow_routes_or_refuses() {
        let mut net =
            Network::new(build_linear_topology(8, 8).unwrap(), NetConfig::default()).unwrap();
        let cfg = DetectorConfig::default();
        let key = FlowKey {
            src_mac: MacAddr(30),
            src_ip: Ipv4Addr::new(10, 0, 0, 30),
            dst_ip: Ipv4Addr::new(10, 0, 0, 1),
        };
        let a = allow(&key, &mut net, &cfg).unwrap();
        assert_eq!((a.switch, a.entry.action), (4, Action::Forward(9)));
        assert_eq!(
            (a.entry.priority, a.entry.idle_timeout, a.entry.hard_timeout),
            (10, 200, 400)
        );
        let bad = FlowKey {
            dst_ip: Ipv4Addr::new(172, 16, 0, 9),
            ..key
        };
        assert!(matches!(
            allow(&bad, &mut net, &cfg),
            Err(DetectError::Unroutable(_))
        ));
    }

    #[test]
    fn feature_values() {
        let row = FlowRow {
            key: FlowKey {
                src_mac: MacAddr(2),
                src_ip: Ipv4Addr::new(10, 0, 0, 2),
                dst_ip: Ipv4Addr::new(10, 0, 0, 1),
            },
            packets: 4,
            syn: 1,
            ack: 3,
            bytes: 400,
            mac_src_ips: 1,
            first_packet: 0,
        };
        let names: Vec<String> = SIM_FEATURES.iter().map(|s| s.to_string()).collect();
        assert_eq!(raw_features(&row, &names).unwrap(), vec![0.25, 0.75, 0.0]);
        assert!(matches!(
            row_feature(&row, "Flow IAT Mean"),
            Err(DetectError::UnknownFeature(_))
        ));
    }
}
