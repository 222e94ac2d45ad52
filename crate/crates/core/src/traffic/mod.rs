//! Scenario workloads on the linear fabric: long-lived benign TCP transfers
//! to a server and a spoofed-source SYN flood from one attacker host.

mod agent;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simnet::{
    build_linear_topology, seconds, Controller, HostId, NetConfig, Network, PacketCounts, SimError,
    SimTime, Topology, TraceRecord,
};
use agent::TrafficAgent;

pub const BENIGN: u8 = 0;
pub const ATTACK: u8 = 1;

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("scenario file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub duration_s: f64,
    pub collection_interval_s: f64,
    /// Aggregate benign payload rate the clients aim for.
    pub bandwidth_mbps: f64,
    pub server_host: HostId,
    pub server_port: u16,
    /// Concurrent benign connections; each slot reconnects when one ends.
    pub benign_connections: usize,
    pub connection_duration_s: f64,
    /// Size of one benign data packet (a segmentation-offloaded burst).
    pub segment_bytes: u32,
    /// Size of SYN, SYN/ACK, ACK and FIN packets.
    pub control_bytes: u32,
    /// Initial SYN retransmission timeout; doubles per retry.
    pub syn_retry_s: f64,
    pub syn_retries_max: u32,
    pub attack_enabled: bool,
    pub attack_start_s: f64,
    pub attack_rate_pps: f64,
    /// Relative spread of the attack inter-send gap, in `[0, 1)`.
    pub attack_jitter: f64,
    pub attacker_host: HostId,
    pub spoof_pool_size: usize,
    pub attack_packet_bytes: u32,
    pub half_open_limit: usize,
    pub half_open_timeout_s: f64,
    pub n_switches: u32,
    pub hosts_per_switch: u16,
    pub network: NetConfig,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            duration_s: 140.0,
            collection_interval_s: 5.0,
            bandwidth_mbps: 100.0,
            server_host: 1,
            server_port: 80,
            benign_connections: 4,
            connection_duration_s: 10.0,
            segment_bytes: 65_160,
            control_bytes: 66,
            syn_retry_s: 1.0,
            syn_retries_max: 6,
            attack_enabled: true,
            attack_start_s: 60.0,
            attack_rate_pps: 700.0,
            attack_jitter: 0.2,
            attacker_host: 21,
            spoof_pool_size: 10_000,
            attack_packet_bytes: 54,
            half_open_limit: 1024,
            half_open_timeout_s: 3.0,
            n_switches: 8,
            hosts_per_switch: 8,
            network: NetConfig::default(),
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, TrafficError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrafficError> {
        let text = std::fs::read_to_string(path).map_err(|source| TrafficError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Data packets per second sent by one benign connection.
    pub fn per_connection_pps(&self) -> f64 {
        self.bandwidth_mbps * 1e6
            / (8.0 * f64::from(self.segment_bytes))
            / self.benign_connections.max(1) as f64
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        let bad = |m: String| Err(TrafficError::Config(m));
        let positive = [
            ("duration_s", self.duration_s),
            ("collection_interval_s", self.collection_interval_s),
            ("bandwidth_mbps", self.bandwidth_mbps),
            ("connection_duration_s", self.connection_duration_s),
            ("syn_retry_s", self.syn_retry_s),
            ("attack_rate_pps", self.attack_rate_pps),
            ("half_open_timeout_s", self.half_open_timeout_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(self.attack_start_s >= 0.0 && self.attack_start_s <= self.duration_s) {
            return bad(format!(
                "attack_start_s must lie in [0, duration_s], got {}",
                self.attack_start_s
            ));
        }
        if !(0.0..1.0).contains(&self.attack_jitter) {
            return bad(format!(
                "attack_jitter must lie in [0, 1), got {}",
                self.attack_jitter
            ));
        }
        if self.benign_connections == 0 {
            return bad("benign_connections must be >= 1".into());
        }
        if self.segment_bytes == 0 || self.control_bytes == 0 || self.attack_packet_bytes == 0 {
            return bad("packet sizes must be > 0".into());
        }
        if self.spoof_pool_size == 0 || self.spoof_pool_size > 1 << 20 {
            return bad(format!(
                "spoof_pool_size must lie in [1, 1048576], got {}",
                self.spoof_pool_size
            ));
        }
        if self.half_open_limit == 0 {
            return bad("half_open_limit must be >= 1".into());
        }
        if self.attack_enabled && self.attacker_host == self.server_host {
            return bad("attacker and server must be different hosts".into());
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<Topology, TrafficError> {
        Ok(build_linear_topology(
            self.n_switches,
            self.hosts_per_switch,
        )?)
    }

    pub fn interval(&self) -> SimTime {
        seconds(self.collection_interval_s)
    }

    pub fn n_windows(&self) -> usize {
        (self.duration_s / self.collection_interval_s).ceil() as usize
    }
}

/// Label of every generated packet, fixed by the generator that sent it.
/// Packet ids index both vectors.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub labels: Vec<u8>,
    pub sent_at: Vec<SimTime>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, packet: u64) -> Option<u8> {
        self.labels.get(packet as usize).copied()
    }

    /// `(benign, attack)` packets generated in each window.
    pub fn window_counts(&self, interval: SimTime, n_windows: usize) -> Vec<(u64, u64)> {
        let mut out = vec![(0, 0); n_windows];
        for (&l, &t) in self.labels.iter().zip(&self.sent_at) {
            if let Some(w) = out.get_mut((t / interval) as usize) {
                if l == ATTACK {
                    w.1 += 1;
                } else {
                    w.0 += 1;
                }
            }
        }
        out
    }
}

/// One collection interval of the timeline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimelineRow {
    pub window: usize,
    pub start_s: f64,
    pub end_s: f64,
    /// All packets delivered to the server, per second.
    pub server_pps: f64,
    pub benign_pps: f64,
    pub attack_pps: f64,
    /// Accepted benign payload at the server.
    pub goodput_mbps: f64,
    pub benign_sent: u64,
    pub attack_sent: u64,
    pub syn_rejected: u64,
    pub half_open_peak: usize,
    pub malicious_rows: u64,
    pub mitigations: u64,
}

pub fn write_timeline<W: Write>(rows: &[TimelineRow], out: W) -> Result<(), TrafficError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| TrafficError::Io {
        path: "timeline".into(),
        source,
    })?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerSummary {
    pub half_open_at_end: usize,
    pub handshakes_completed: u64,
    pub syn_acks_to_spoofed: u64,
    /// ACKs received from spoofed addresses; always 0.
    pub acks_from_spoofed: u64,
    /// `(origin, arrival)` of attack packets that reached the server.
    pub attack_arrivals: Vec<(SimTime, SimTime)>,
}

pub struct ScenarioOutcome {
    pub config: ScenarioConfig,
    pub topology: Topology,
    pub timeline: Vec<TimelineRow>,
    pub truth: GroundTruth,
    pub trace: Vec<TraceRecord>,
    pub counts: PacketCounts,
    pub in_flight: u64,
    pub server: ServerSummary,
}

impl ScenarioOutcome {
    /// Mean goodput over whole windows inside `[from_s, to_s)`.
    pub fn mean_goodput_mbps(&self, from_s: f64, to_s: f64) -> f64 {
        let rows: Vec<&TimelineRow> = self
            .timeline
            .iter()
            .filter(|r| r.start_s >= from_s && r.end_s <= to_s)
            .collect();
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter().map(|r| r.goodput_mbps).sum::<f64>() / rows.len() as f64
    }
}

/// Runs the workload on `topology` with `controller` in charge of the
/// switches until `config.duration_s`.
pub fn run_scenario(
    config: &ScenarioConfig,
    topology: Topology,
    controller: &mut dyn Controller,
) -> Result<ScenarioOutcome, TrafficError> {
    config.validate()?;
    let mut net = Network::new(topology.clone(), config.network.clone())?;
    let mut agent = TrafficAgent::new(config, &net)?;
    agent.start(&mut net)?;
    controller.start(&mut net)?;
    net.run(&mut agent, controller, seconds(config.duration_s))?;

    let interval = config.collection_interval_s;
    let n = config.n_windows();
    let sent = agent.truth.window_counts(config.interval(), n);
    let timeline = (0..n)
        .map(|w| {
            let acc = agent.windows.get(w).cloned().unwrap_or_default();
            let start = w as f64 * interval;
            let end = (start + interval).min(config.duration_s);
            let span = end - start;
            TimelineRow {
                window: w,
                start_s: start,
                end_s: end,
                server_pps: acc.packets as f64 / span,
                benign_pps: acc.benign_packets as f64 / span,
                attack_pps: acc.attack_packets as f64 / span,
                goodput_mbps: acc.goodput_bytes as f64 * 8.0 / span / 1e6,
                benign_sent: sent[w].0,
                attack_sent: sent[w].1,
                syn_rejected: acc.syn_rejected,
                half_open_peak: acc.half_open_peak,
                malicious_rows: 0,
                mitigations: 0,
            }
        })
        .collect();
    Ok(ScenarioOutcome {
        config: config.clone(),
        topology,
        timeline,
        counts: net.counts(),
        in_flight: net.in_flight(),
        server: ServerSummary {
            half_open_at_end: agent.half_open_len(),
            handshakes_completed: agent.handshakes_completed,
            syn_acks_to_spoofed: agent.syn_acks_to_spoofed,
            acks_from_spoofed: agent.acks_to_spoofed,
            attack_arrivals: std::mem::take(&mut agent.attack_arrivals),
        },
        truth: std::mem::take(&mut agent.truth),
        trace: net.take_trace(),
    })
}
