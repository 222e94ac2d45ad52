use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::packet::MacAddr;
use super::SimError;

pub type SwitchId = u32;
pub type HostId = u32;
pub type PortNo = u16;

/// Switch id used for the controller in link and trace records.
pub const CONTROLLER_ID: SwitchId = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostInfo {
    pub id: HostId,
    pub mac: MacAddr,
    pub ip: Ipv4Addr,
    pub switch: SwitchId,
    pub port: PortNo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Link {
    SwitchSwitch {
        a: SwitchId,
        a_port: PortNo,
        b: SwitchId,
        b_port: PortNo,
    },
    SwitchHost {
        switch: SwitchId,
        port: PortNo,
        host: HostId,
    },
}

/// Where a frame leaving a switch port ends up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortPeer {
    Host(HostId),
    Switch(SwitchId, PortNo),
}

/// Linear chain of switches `1..=n`, each with the same number of hosts on
/// ports `1..=h`. Port `h + 1` faces the previous switch, `h + 2` the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub switches: Vec<SwitchId>,
    pub hosts: Vec<HostInfo>,
    pub links: Vec<Link>,
    pub controller: SwitchId,
    hosts_per_switch: u16,
    /// mac → (switch, port)
    locations: BTreeMap<MacAddr, (SwitchId, PortNo)>,
}

pub fn build_linear_topology(n_switches: u32, hosts_per_switch: u16) -> Result<Topology, SimError> {
    if n_switches == 0 || hosts_per_switch == 0 {
        return Err(SimError::Topology(
            "need at least one switch and one host per switch".into(),
        ));
    }
    let total = u64::from(n_switches) * u64::from(hosts_per_switch);
    if total > 254 {
        return Err(SimError::Topology(format!(
            "{total} hosts do not fit in 10.0.0.0/24"
        )));
    }
    let h = hosts_per_switch;
    let mut hosts = Vec::new();
    let mut links = Vec::new();
    let mut locations = BTreeMap::new();
    for s in 1..=n_switches {
        for p in 1..=h {
            let id = (s - 1) * u32::from(h) + u32::from(p);
            let mac = MacAddr(u64::from(id));
            hosts.push(HostInfo {
                id,
                mac,
                ip: Ipv4Addr::new(10, 0, 0, id as u8),
                switch: s,
                port: p,
            });
            links.push(Link::SwitchHost {
                switch: s,
                port: p,
                host: id,
            });
            locations.insert(mac, (s, p));
        }
        if s > 1 {
            links.push(Link::SwitchSwitch {
                a: s - 1,
                a_port: h + 2,
                b: s,
                b_port: h + 1,
            });
        }
    }
    Ok(Topology {
        switches: (1..=n_switches).collect(),
        hosts,
        links,
        controller: CONTROLLER_ID,
        hosts_per_switch: h,
        locations,
    })
}

impl Topology {
    pub fn n_switches(&self) -> u32 {
        self.switches.len() as u32
    }

    pub fn hosts_per_switch(&self) -> u16 {
        self.hosts_per_switch
    }

    /// Port facing switch `s - 1`.
    pub fn upstream_port(&self) -> PortNo {
        self.hosts_per_switch + 1
    }

    /// Port facing switch `s + 1`.
    pub fn downstream_port(&self) -> PortNo {
        self.hosts_per_switch + 2
    }

    pub fn host(&self, id: HostId) -> Option<&HostInfo> {
        id.checked_sub(1).and_then(|i| self.hosts.get(i as usize))
    }

    pub fn host_by_ip(&self, ip: Ipv4Addr) -> Option<&HostInfo> {
        self.hosts.iter().find(|h| h.ip == ip)
    }

    pub fn host_by_mac(&self, mac: MacAddr) -> Option<&HostInfo> {
        let (s, p) = self.locate(mac)?;
        self.host((s - 1) * u32::from(self.hosts_per_switch) + u32::from(p))
    }

    /// Host-location table lookup.
    pub fn locate(&self, mac: MacAddr) -> Option<(SwitchId, PortNo)> {
        self.locations.get(&mac).copied()
    }

    pub fn location_table(&self) -> &BTreeMap<MacAddr, (SwitchId, PortNo)> {
        &self.locations
    }

    /// Output port on `switch` towards the host at `(dst_switch, dst_port)`.
    pub fn route(&self, switch: SwitchId, dst_switch: SwitchId, dst_port: PortNo) -> PortNo {
        use std::cmp::Ordering::*;
        match dst_switch.cmp(&switch) {
            Equal => dst_port,
            Less => self.upstream_port(),
            Greater => self.downstream_port(),
        }
    }

    /// What is attached to `port` on `switch`, if anything.
    pub fn peer(&self, switch: SwitchId, port: PortNo) -> Option<PortPeer> {
        if switch == 0 || switch > self.n_switches() || port == 0 {
            return None;
        }
        let h = self.hosts_per_switch;
        if port <= h {
            Some(PortPeer::Host(
                (switch - 1) * u32::from(h) + u32::from(port),
            ))
        } else if port == h + 1 && switch > 1 {
            Some(PortPeer::Switch(switch - 1, h + 2))
        } else if port == h + 2 && switch < self.n_switches() {
            Some(PortPeer::Switch(switch + 1, h + 1))
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape() {
        let t = build_linear_topology(8, 8).unwrap();
        assert_eq!(t.switches.len(), 8);
        assert_eq!(t.hosts.len(), 64);
        assert_eq!(t.location_table().len(), 64);
        assert_eq!(t.host(1).unwrap().ip.to_string(), "10.0.0.1");
        assert_eq!(t.host(1).unwrap().mac.to_string(), "00:00:00:00:00:01");
        assert_eq!(t.locate(MacAddr(21)), Some((3, 5)));
        assert_eq!(t.host_by_mac(MacAddr(21)).unwrap().id, 21);
        assert_eq!(t.links.len(), 64 + 7);
    }

    #[test]
    fn single() {
        let t = build_linear_topology(1, 1).unwrap();
        assert_eq!(
            (t.switches.len(), t.hosts.len(), t.location_table().len()),
            (1, 1, 1)
        );
        assert_eq!(t.peer(1, 2), None);
        assert_eq!(t.peer(1, 3), None);
    }

    #[test]
    fn errors() {
        assert!(build_linear_topology(0, 8).is_err());
        assert!(build_linear_topology(8, 0).is_err());
        assert!(build_linear_topology(16, 16).is_err());
    }

    #[test]
    fn ports_and_routes() {
        let t = build_linear_topology(3, 4).unwrap();
        assert_eq!(t.peer(2, 5), Some(PortPeer::Switch(1, 6)));
        assert_eq!(t.peer(2, 6), Some(PortPeer::Switch(3, 5)));
        assert_eq!(t.peer(1, 5), None);
        assert_eq!(t.peer(2, 3), Some(PortPeer::Host(7)));
        assert_eq!(t.route(2, 2, 3), 3);
        assert_eq!(t.route(2, 1, 3), 5);
        assert_eq!(t.route(2, 3, 3), 6);
    }
}
