use std::collections::BTreeMap;
use std::io::Write;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::{
    allow, classify_flow, featurize, identify_attacker, interval_us, mitigate, precheck,
    raw_features, DetectError, DetectorConfig, MitigationAction, MitigationKind, Precheck,
    WindowCollector, WindowStats,
};
use crate::anfis::AnfisModel;
use crate::metrics::{self, EvalReport, RocCurve};
use crate::simnet::{
    l2_route, seconds, to_seconds, Controller, MacAddr, Network, Packet, PortNo, SimError, SimTime,
    SwitchId,
};
use crate::traffic::{run_scenario, ScenarioConfig, ScenarioOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    /// Classify every window and install block/allow rules.
    Detect,
    /// Forward and record window statistics only.
    CollectOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Benign,
    Malicious,
}

/// One classified flow row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub window: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub src_mac: MacAddr,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub packets: u64,
    pub features: Vec<f64>,
    pub probability: f64,
    pub label: Verdict,
    pub precheck: Precheck,
    pub action: String,
    pub first_packet: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub pps: f64,
    pub precheck: Precheck,
    pub rows: usize,
    pub malicious_rows: u64,
    pub mitigations: u64,
    pub attacker: Option<MacAddr>,
}

pub struct FasaController {
    model: AnfisModel,
    config: DetectorConfig,
    mode: ControllerMode,
    collector: WindowCollector,
    /// MAC → time its block rules expire.
    blocked: BTreeMap<MacAddr, SimTime>,
    pub decisions: Vec<DecisionRecord>,
    pub actions: Vec<MitigationAction>,
    pub windows: Vec<WindowSummary>,
    /// Every closed window's statistics (kept in collect-only mode).
    pub collected: Vec<WindowStats>,
}

impl FasaController {
    pub fn new(
        model: AnfisModel,
        config: DetectorConfig,
        mode: ControllerMode,
    ) -> Result<Self, DetectError> {
        config.validate()?;
        Ok(Self {
            model,
            config,
            mode,
            collector: WindowCollector::default(),
            blocked: BTreeMap::new(),
            decisions: Vec::new(),
            actions: Vec::new(),
            windows: Vec::new(),
            collected: Vec::new(),
        })
    }

    fn is_blocked(&self, mac: MacAddr, now: SimTime) -> bool {
        self.blocked.get(&mac).is_some_and(|&until| now < until)
    }

    fn close_window(&mut self, net: &mut Network, index: usize) -> Result<(), DetectError> {
        let interval = self.config.collection_interval_s;
        let start = index as f64 * interval;
        let stats = self.collector.finish(index, start, start + interval);
        let check = precheck(&stats, &self.config);
        if check == Precheck::Suspicious {
            log::info!(
                "window {index} [{start:.0}, {:.0}) s: {:.0} pps exceeds {:.0}",
                start + interval,
                stats.pps,
                self.config.pps_threshold
            );
        }
        let mut summary = WindowSummary {
            index,
            start_s: stats.start_s,
            end_s: stats.end_s,
            pps: stats.pps,
            precheck: check,
            rows: stats.rows.len(),
            malicious_rows: 0,
            mitigations: 0,
            attacker: None,
        };
        if self.mode == ControllerMode::CollectOnly {
            self.collected.push(stats);
            self.windows.push(summary);
            return Ok(());
        }

        let mut probs = Vec::with_capacity(stats.rows.len());
        let mut malicious = Vec::with_capacity(stats.rows.len());
        for row in &stats.rows {
            let x = featurize(row, &self.model)?;
            let c = classify_flow(&self.model, &x)?;
            probs.push(c.probability);
            malicious.push(c.label == 1);
        }
        summary.malicious_rows = malicious.iter().filter(|&&m| m).count() as u64;

        let now = net.now();
        let mut attacker = None;
        let mut newly_blocked = false;
        if summary.malicious_rows > 0 {
            let mac = identify_attacker(&stats, &malicious)?;
            attacker = Some(mac);
            if !self.is_blocked(mac, now) {
                match mitigate(mac, net, &self.config) {
                    Ok(acts) => {
                        log::info!(
                            "window {index}: blocking {mac} on switch {} port {}",
                            acts[0].switch,
                            acts[0].port
                        );
                        let hard = self.config.block_rule.hard_timeout_s;
                        let until = if hard == 0 {
                            SimTime::MAX
                        } else {
                            now + seconds(f64::from(hard))
                        };
                        self.blocked.insert(mac, until);
                        summary.mitigations += acts.len() as u64;
                        self.actions.extend(acts);
                        newly_blocked = true;
                    }
                    Err(DetectError::UnknownMac(m)) => {
                        log::warn!("window {index}: attacker MAC {m} not in host table, no action");
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        summary.attacker = attacker;

        for ((row, &p), &bad) in stats.rows.iter().zip(&probs).zip(&malicious) {
            let action = if bad {
                match attacker {
                    Some(m) if m == row.key.src_mac && newly_blocked => "block".to_string(),
                    Some(m) if m == row.key.src_mac && self.is_blocked(m, now) => {
                        "already_blocked".into()
                    }
                    _ => "none".into(),
                }
            } else {
                match allow(&row.key, net, &self.config) {
                    Ok(act) => {
                        self.actions.push(act);
                        "allow".into()
                    }
                    Err(DetectError::Unroutable(ip)) => {
                        log::debug!("window {index}: no route to {ip}, flow left reactive");
                        "unroutable".into()
                    }
                    Err(DetectError::UnknownMac(m)) => {
                        log::debug!("window {index}: source {m} unknown, flow left reactive");
                        "unknown_mac".into()
                    }
                    Err(e) => return Err(e),
                }
            };
            self.decisions.push(DecisionRecord {
                window: index,
                start_s: stats.start_s,
                end_s: stats.end_s,
                src_mac: row.key.src_mac,
                src_ip: row.key.src_ip,
                dst_ip: row.key.dst_ip,
                packets: row.packets,
                features: raw_features(row, self.model.feature_names())?,
                probability: p,
                label: if bad {
                    Verdict::Malicious
                } else {
                    Verdict::Benign
                },
                precheck: check,
                action,
                first_packet: row.first_packet,
            });
        }
        self.windows.push(summary);
        Ok(())
    }
}

fn agent_error(e: DetectError) -> SimError {
    match e {
        DetectError::Sim(s) => s,
        other => SimError::Agent(other.to_string()),
    }
}

impl Controller for FasaController {
    fn start(&mut self, net: &mut Network) -> Result<(), SimError> {
        let first = net.now() + interval_us(&self.config);
        net.schedule_controller_timer(first, 0)
    }

    fn on_packet_in(
        &mut self,
        net: &mut Network,
        switch: SwitchId,
        _in_port: PortNo,
        pkt: Packet,
    ) -> Result<(), SimError> {
        if self.is_blocked(pkt.src_mac, net.now()) {
            net.drop_at_controller(switch, &pkt);
            return Ok(());
        }
        self.collector.observe(&pkt);
        match l2_route(net.topology(), switch, &pkt) {
            Some(port) => net.packet_out(switch, port, pkt),
            None => {
                net.drop_at_controller(switch, &pkt);
                Ok(())
            }
        }
    }

    fn on_timer(&mut self, net: &mut Network, token: u64) -> Result<(), SimError> {
        let index = token as usize;
        self.close_window(net, index).map_err(agent_error)?;
        let next = seconds((index + 2) as f64 * self.config.collection_interval_s);
        net.schedule_controller_timer(next, token + 1)
    }
}

/// Everything a detection run produces.
pub struct FasaReport {
    pub outcome: ScenarioOutcome,
    pub windows: Vec<WindowSummary>,
    pub decisions: Vec<DecisionRecord>,
    pub actions: Vec<MitigationAction>,
    /// Decision rows scored against ground truth.
    pub eval: Option<EvalReport>,
    pub roc: Option<RocCurve>,
    pub first_malicious_s: Option<f64>,
    pub first_block_s: Option<f64>,
}

impl FasaReport {
    /// Ground-truth label of each decision row.
    pub fn decision_labels(&self) -> Vec<u8> {
        self.decisions
            .iter()
            .map(|d| self.outcome.truth.label(d.first_packet).unwrap_or(0))
            .collect()
    }

    pub fn write_decisions<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for d in &self.decisions {
            serde_json::to_writer(&mut out, d)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Every installed drop entry.
    pub fn block_actions(&self) -> Vec<&MitigationAction> {
        self.actions
            .iter()
            .filter(|a| {
                matches!(
                    a.kind,
                    MitigationKind::DropFromMac | MitigationKind::BlockPort
                )
            })
            .collect()
    }
}

/// Runs `scenario` with a detecting controller driven by `model`.
pub fn simulate(
    scenario: &ScenarioConfig,
    detector: &DetectorConfig,
    model: AnfisModel,
) -> Result<FasaReport, DetectError> {
    if (scenario.collection_interval_s - detector.collection_interval_s).abs() > 1e-9 {
        return Err(DetectError::Config(format!(
            "scenario interval {} s differs from detector interval {} s",
            scenario.collection_interval_s, detector.collection_interval_s
        )));
    }
    let mut ctrl = FasaController::new(model, detector.clone(), ControllerMode::Detect)?;
    let mut outcome = run_scenario(scenario, scenario.topology()?, &mut ctrl)?;
    for w in &ctrl.windows {
        // The window closing at the horizon is processed but has no row.
        if let Some(row) = outcome.timeline.get_mut(w.index) {
            row.malicious_rows = w.malicious_rows;
            row.mitigations = w.mitigations;
        }
    }
    let first_malicious_s = ctrl
        .decisions
        .iter()
        .find(|d| d.label == Verdict::Malicious)
        .map(|d| d.end_s);
    let first_block_s = ctrl
        .actions
        .iter()
        .find(|a| a.kind == MitigationKind::DropFromMac)
        .map(|a| to_seconds(a.time_us));
    let mut report = FasaReport {
        outcome,
        windows: std::mem::take(&mut ctrl.windows),
        decisions: std::mem::take(&mut ctrl.decisions),
        actions: std::mem::take(&mut ctrl.actions),
        eval: None,
        roc: None,
        first_malicious_s,
        first_block_s,
    };
    let labels = report.decision_labels();
    if !labels.is_empty() {
        let preds: Vec<u8> = report
            .decisions
            .iter()
            .map(|d| u8::from(d.label == Verdict::Malicious))
            .collect();
        let probs: Vec<f64> = report.decisions.iter().map(|d| d.probability).collect();
        let cm = metrics::confusion(&preds, &labels).expect("equal lengths, binary");
        let mut eval = metrics::scores(&cm).expect("non-empty");
        report.roc = metrics::roc_auc(&probs, &labels).ok();
        eval.auc = report.roc.as_ref().map(|r| r.auc);
        eval.threshold = ctrl.model.threshold();
        report.eval = Some(eval);
    }
    Ok(report)
}
