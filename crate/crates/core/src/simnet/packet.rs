use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::SimTime;

/// 48-bit Ethernet address held in the low bits of a `u64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MacAddr(pub u64);

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0.to_be_bytes();
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[2], b[3], b[4], b[5], b[6], b[7]
        )
    }
}

pub mod tcp_flags {
    pub const FIN: u8 = 0x01;
    pub const SYN: u8 = 0x02;
    pub const RST: u8 = 0x04;
    pub const PSH: u8 = 0x08;
    pub const ACK: u8 = 0x10;
}

pub const IPPROTO_TCP: u8 = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    /// Assigned by the network when the packet is sent.
    pub id: u64,
    /// Time the originating host sent it.
    pub timestamp: SimTime,
    pub src_mac: MacAddr,
    pub dst_mac: MacAddr,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub ip_protocol: u8,
    pub tcp_flags: u8,
    pub src_port: u16,
    pub dst_port: u16,
    pub size: u32,
}

impl Packet {
    /// TCP segment with the id and timestamp left for the network to fill.
    #[allow(clippy::too_many_arguments)]
    pub fn tcp(
        src_mac: MacAddr,
        dst_mac: MacAddr,
        src_ip: Ipv4Addr,
        dst_ip: Ipv4Addr,
        src_port: u16,
        dst_port: u16,
        tcp_flags: u8,
        size: u32,
    ) -> Self {
        Self {
            id: 0,
            timestamp: 0,
            src_mac,
            dst_mac,
            src_ip,
            dst_ip,
            ip_protocol: IPPROTO_TCP,
            tcp_flags,
            src_port,
            dst_port,
            size,
        }
    }

    pub fn has(&self, flag: u8) -> bool {
        self.tcp_flags & flag == flag
    }

    /// SYN set, ACK clear.
    pub fn is_syn_only(&self) -> bool {
        self.has(tcp_flags::SYN) && !self.has(tcp_flags::ACK)
    }
}
