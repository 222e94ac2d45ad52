//! Host behaviour for a scenario: benign clients, the server and the
//! attacker, all driven by one seeded RNG.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::Ipv4Addr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::{GroundTruth, ScenarioConfig, ATTACK, BENIGN};
use crate::simnet::{
    seconds, tcp_flags, HostAgent, HostId, HostInfo, Network, Packet, SimError, SimTime,
};

/// Addresses spoofed by the attacker are drawn from 172.16.0.0/12, which
/// never overlaps the host subnet.
const SPOOF_BASE: u32 = 0xAC10_0000;
const SPOOF_SPAN: usize = 1 << 20;

#[derive(Debug, Clone, Copy)]
enum Timer {
    Start { slot: usize },
    SynRetry { slot: usize, conn: u64 },
    Data { slot: usize, conn: u64 },
    AttackTick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ConnState {
    SynSent,
    Established,
}

#[derive(Debug, Clone)]
struct Conn {
    id: u64,
    host: HostId,
    port: u16,
    state: ConnState,
    duration: SimTime,
    end: SimTime,
    retries: u32,
}

#[derive(Debug, Default, Clone)]
struct Slot {
    conn: Option<Conn>,
    /// Connections opened so far by this slot.
    opened: u64,
}

/// Per-window accumulators at the server.
#[derive(Debug, Default, Clone)]
pub(crate) struct ServerWindow {
    pub packets: u64,
    pub benign_packets: u64,
    pub attack_packets: u64,
    pub goodput_bytes: u64,
    pub syn_rejected: u64,
    pub half_open_peak: usize,
}

pub(crate) struct TrafficAgent {
    cfg: ScenarioConfig,
    rng: ChaCha8Rng,
    server: HostInfo,
    attacker: Option<HostInfo>,
    clients: Vec<HostInfo>,
    spoof_pool: Vec<Ipv4Addr>,
    data_gap: Exp<f64>,
    slots: Vec<Slot>,
    timers: HashMap<u64, Timer>,
    next_token: u64,
    next_conn: u64,
    half_open: BTreeMap<(Ipv4Addr, u16), SimTime>,
    established: BTreeSet<(Ipv4Addr, u16)>,
    pub(crate) truth: GroundTruth,
    pub(crate) windows: Vec<ServerWindow>,
    /// `(origin, arrival)` of every attack packet that reached the server.
    pub(crate) attack_arrivals: Vec<(SimTime, SimTime)>,
    pub(crate) handshakes_completed: u64,
    pub(crate) syn_acks_to_spoofed: u64,
    pub(crate) acks_to_spoofed: u64,
}

impl TrafficAgent {
    pub(crate) fn new(cfg: &ScenarioConfig, net: &Network) -> Result<Self, SimError> {
        let topo = net.topology();
        let server = topo
            .host(cfg.server_host)
            .cloned()
            .ok_or(SimError::NoSuchHost(cfg.server_host))?;
        let attacker = if cfg.attack_enabled {
            Some(
                topo.host(cfg.attacker_host)
                    .cloned()
                    .ok_or(SimError::NoSuchHost(cfg.attacker_host))?,
            )
        } else {
            None
        };
        let clients: Vec<HostInfo> = topo
            .hosts
            .iter()
            .filter(|h| h.id != cfg.server_host && h.id != cfg.attacker_host)
            .cloned()
            .collect();
        if clients.is_empty() && cfg.benign_connections > 0 {
            return Err(SimError::Config("no hosts left for benign clients".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let spoof_pool = index::sample(&mut rng, SPOOF_SPAN, cfg.spoof_pool_size)
            .into_iter()
            .map(|i| Ipv4Addr::from(SPOOF_BASE + i as u32))
            .collect();
        let data_gap = Exp::new(cfg.per_connection_pps())
            .map_err(|e| SimError::Config(format!("benign rate: {e}")))?;
        Ok(Self {
            cfg: cfg.clone(),
            rng,
            server,
            attacker,
            clients,
            spoof_pool,
            data_gap,
            slots: vec![Slot::default(); cfg.benign_connections],
            timers: HashMap::new(),
            next_token: 0,
            next_conn: 0,
            half_open: BTreeMap::new(),
            established: BTreeSet::new(),
            truth: GroundTruth::default(),
            windows: Vec::new(),
            attack_arrivals: Vec::new(),
            handshakes_completed: 0,
            syn_acks_to_spoofed: 0,
            acks_to_spoofed: 0,
        })
    }

    /// Queues the first timers of every generator.
    pub(crate) fn start(&mut self, net: &mut Network) -> Result<(), SimError> {
        for slot in 0..self.slots.len() {
            self.timer(net, self.clients[0].id, 0, Timer::Start { slot })?;
        }
        if let Some(att) = &self.attacker {
            let (id, at) = (att.id, seconds(self.cfg.attack_start_s));
            self.timer(net, id, at, Timer::AttackTick)?;
        }
        Ok(())
    }

    pub(crate) fn half_open_len(&self) -> usize {
        self.half_open.len()
    }

    fn timer(
        &mut self,
        net: &mut Network,
        host: HostId,
        at: SimTime,
        t: Timer,
    ) -> Result<(), SimError> {
        let token = self.next_token;
        self.next_token += 1;
        self.timers.insert(token, t);
        net.schedule_host_timer(host, at, token)
    }

    fn send(
        &mut self,
        net: &mut Network,
        host: HostId,
        pkt: Packet,
        label: u8,
    ) -> Result<(), SimError> {
        let id = net.send(host, pkt)?;
        debug_assert_eq!(id as usize, self.truth.labels.len());
        self.truth.labels.push(label);
        self.truth.sent_at.push(net.now());
        Ok(())
    }

    fn window(&mut self, now: SimTime) -> &mut ServerWindow {
        let w = (now / seconds(self.cfg.collection_interval_s)) as usize;
        if self.windows.len() <= w {
            self.windows.resize(w + 1, ServerWindow::default());
        }
        &mut self.windows[w]
    }

    fn client_packet(&self, conn: &Conn, flags: u8, size: u32) -> Packet {
        let c = &self.clients[self.client_index(conn.host)];
        Packet::tcp(
            c.mac,
            self.server.mac,
            c.ip,
            self.server.ip,
            conn.port,
            self.cfg.server_port,
            flags,
            size,
        )
    }

    fn client_index(&self, host: HostId) -> usize {
        self.clients
            .iter()
            .position(|c| c.id == host)
            .expect("connections only use client hosts")
    }

    fn open_connection(&mut self, net: &mut Network, slot: usize) -> Result<(), SimError> {
        let now = net.now();
        if now >= seconds(self.cfg.duration_s) {
            self.slots[slot].conn = None;
            return Ok(());
        }
        let host = self.clients[self.rng.random_range(0..self.clients.len())].id;
        let full = seconds(self.cfg.connection_duration_s);
        // The first connection of each slot is shortened so reconnects are
        // spread out instead of happening in lockstep.
        let duration = if self.slots[slot].opened == 0 {
            full * (slot as u64 + 1) / self.slots.len() as u64
        } else {
            full
        };
        let conn = Conn {
            id: self.next_conn,
            host,
            port: 1024 + (self.next_conn % 60_000) as u16,
            state: ConnState::SynSent,
            duration,
            end: 0,
            retries: 0,
        };
        self.next_conn += 1;
        self.slots[slot].opened += 1;
        let syn = self.client_packet(&conn, tcp_flags::SYN, self.cfg.control_bytes);
        let (id, retry_at) = (conn.id, now + seconds(self.cfg.syn_retry_s));
        self.slots[slot].conn = Some(conn);
        self.send(net, host, syn, BENIGN)?;
        self.timer(net, host, retry_at, Timer::SynRetry { slot, conn: id })
    }

    fn live_conn(&self, slot: usize, id: u64) -> Option<&Conn> {
        self.slots[slot].conn.as_ref().filter(|c| c.id == id)
    }

    fn on_syn_retry(&mut self, net: &mut Network, slot: usize, id: u64) -> Result<(), SimError> {
        let Some(conn) = self.live_conn(slot, id).cloned() else {
            return Ok(());
        };
        if conn.state != ConnState::SynSent {
            return Ok(());
        }
        if conn.retries >= self.cfg.syn_retries_max {
            log::debug!("connection {id} gave up after {} SYN retries", conn.retries);
            return self.open_connection(net, slot);
        }
        let retries = conn.retries + 1;
        let backoff = self.cfg.syn_retry_s * f64::from(1u32 << retries.min(16));
        self.slots[slot].conn.as_mut().expect("live").retries = retries;
        let syn = self.client_packet(&conn, tcp_flags::SYN, self.cfg.control_bytes);
        self.send(net, conn.host, syn, BENIGN)?;
        let at = net.now() + seconds(backoff);
        self.timer(net, conn.host, at, Timer::SynRetry { slot, conn: id })
    }

    fn on_data(&mut self, net: &mut Network, slot: usize, id: u64) -> Result<(), SimError> {
        let Some(conn) = self.live_conn(slot, id).cloned() else {
            return Ok(());
        };
        let now = net.now();
        if now >= conn.end {
            let fin = self.client_packet(
                &conn,
                tcp_flags::FIN | tcp_flags::ACK,
                self.cfg.control_bytes,
            );
            self.send(net, conn.host, fin, BENIGN)?;
            return self.open_connection(net, slot);
        }
        let data = self.client_packet(
            &conn,
            tcp_flags::PSH | tcp_flags::ACK,
            self.cfg.segment_bytes,
        );
        self.send(net, conn.host, data, BENIGN)?;
        let gap = seconds(self.data_gap.sample(&mut self.rng)).max(1);
        self.timer(net, conn.host, now + gap, Timer::Data { slot, conn: id })
    }

    fn on_attack_tick(&mut self, net: &mut Network) -> Result<(), SimError> {
        let now = net.now();
        if now >= seconds(self.cfg.duration_s) {
            return Ok(());
        }
        let att = self
            .attacker
            .clone()
            .expect("attack timer only with an attacker");
        let src_ip = self.spoof_pool[self.rng.random_range(0..self.spoof_pool.len())];
        let src_port = self.rng.random_range(1024..=u16::MAX);
        let syn = Packet::tcp(
            att.mac,
            self.server.mac,
            src_ip,
            self.server.ip,
            src_port,
            self.cfg.server_port,
            tcp_flags::SYN,
            self.cfg.attack_packet_bytes,
        );
        self.send(net, att.id, syn, ATTACK)?;
        let jitter = self.cfg.attack_jitter * self.rng.random_range(-1.0..=1.0);
        let gap = seconds((1.0 + jitter) / self.cfg.attack_rate_pps).max(1);
        self.timer(net, att.id, now + gap, Timer::AttackTick)
    }

    fn server_reply(&mut self, net: &mut Network, to: &Packet, flags: u8) -> Result<(), SimError> {
        let reply = Packet::tcp(
            self.server.mac,
            to.src_mac,
            self.server.ip,
            to.src_ip,
            self.cfg.server_port,
            to.src_port,
            flags,
            self.cfg.control_bytes,
        );
        if is_spoofed(to.src_ip) {
            self.syn_acks_to_spoofed += 1;
        }
        self.send(net, self.server.id, reply, BENIGN)
    }

    fn on_server_packet(&mut self, net: &mut Network, pkt: Packet) -> Result<(), SimError> {
        let now = net.now();
        let label = self.truth.labels[pkt.id as usize];
        {
            let w = self.window(now);
            w.packets += 1;
            if label == ATTACK {
                w.attack_packets += 1;
            } else {
                w.benign_packets += 1;
            }
        }
        if label == ATTACK {
            self.attack_arrivals.push((pkt.timestamp, now));
        }
        if pkt.dst_port != self.cfg.server_port {
            return Ok(());
        }
        let key = (pkt.src_ip, pkt.src_port);
        let timeout = seconds(self.cfg.half_open_timeout_s);
        self.half_open
            .retain(|_, &mut t| now.saturating_sub(t) < timeout);

        if pkt.is_syn_only() {
            if self.half_open.contains_key(&key) || self.established.contains(&key) {
                return self.server_reply(net, &pkt, tcp_flags::SYN | tcp_flags::ACK);
            }
            if self.half_open.len() >= self.cfg.half_open_limit {
                self.window(now).syn_rejected += 1;
                return Ok(());
            }
            self.half_open.insert(key, now);
            let len = self.half_open.len();
            let w = self.window(now);
            w.half_open_peak = w.half_open_peak.max(len);
            return self.server_reply(net, &pkt, tcp_flags::SYN | tcp_flags::ACK);
        }
        if pkt.has(tcp_flags::FIN) {
            self.established.remove(&key);
            return Ok(());
        }
        if pkt.has(tcp_flags::ACK) {
            if is_spoofed(pkt.src_ip) {
                self.acks_to_spoofed += 1;
            }
            if self.half_open.remove(&key).is_some() {
                self.established.insert(key);
                self.handshakes_completed += 1;
            }
            if pkt.has(tcp_flags::PSH) && self.established.contains(&key) {
                self.window(now).goodput_bytes += u64::from(pkt.size);
            }
        }
        Ok(())
    }

    fn on_client_packet(
        &mut self,
        net: &mut Network,
        host: HostId,
        pkt: Packet,
    ) -> Result<(), SimError> {
        if !(pkt.has(tcp_flags::SYN) && pkt.has(tcp_flags::ACK)) {
            return Ok(());
        }
        let slot = self.slots.iter().position(|s| {
            s.conn
                .as_ref()
                .is_some_and(|c| c.host == host && c.port == pkt.dst_port)
        });
        let Some(slot) = slot else {
            return Ok(());
        };
        let conn = self.slots[slot].conn.clone().expect("found above");
        let ack = self.client_packet(&conn, tcp_flags::ACK, self.cfg.control_bytes);
        self.send(net, host, ack, BENIGN)?;
        if conn.state == ConnState::SynSent {
            let now = net.now();
            let c = self.slots[slot].conn.as_mut().expect("live");
            c.state = ConnState::Established;
            c.end = now + c.duration;
            let gap = seconds(self.data_gap.sample(&mut self.rng)).max(1);
            self.timer(
                net,
                host,
                now + gap,
                Timer::Data {
                    slot,
                    conn: conn.id,
                },
            )?;
        }
        Ok(())
    }
}

impl HostAgent for TrafficAgent {
    fn on_packet(&mut self, net: &mut Network, host: HostId, pkt: Packet) -> Result<(), SimError> {
        if host == self.server.id {
            self.on_server_packet(net, pkt)
        } else if self.attacker.as_ref().is_some_and(|a| a.id == host) {
            // The attacker never answers a SYN/ACK.
            Ok(())
        } else {
            self.on_client_packet(net, host, pkt)
        }
    }

    fn on_timer(&mut self, net: &mut Network, _host: HostId, token: u64) -> Result<(), SimError> {
        let Some(t) = self.timers.remove(&token) else {
            return Err(SimError::Agent(format!("unknown timer token {token}")));
        };
        match t {
            Timer::Start { slot } => self.open_connection(net, slot),
            Timer::SynRetry { slot, conn } => self.on_syn_retry(net, slot, conn),
            Timer::Data { slot, conn } => self.on_data(net, slot, conn),
            Timer::AttackTick => self.on_attack_tick(net),
        }
    }
}

pub(crate) fn is_spoofed(ip: Ipv4Addr) -> bool {
    let v = u32::from(ip);
    (SPOOF_BASE..SPOOF_BASE + SPOOF_SPAN as u32).contains(&v)
}
