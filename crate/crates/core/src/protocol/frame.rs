use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::topology::{BridgeId, HostId};

/// 48-bit MAC address stored in the low bits of a `u64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mac(pub u64);

impl Mac {
    pub const BROADCAST: Mac = Mac(0xffff_ffff_ffff);

    /// Locally administered address derived from the host id.
    pub fn host(id: HostId) -> Mac {
        Mac(0x0200_0000_0000 | u64::from(id.0))
    }

    pub fn is_broadcast(self) -> bool {
        self == Mac::BROADCAST
    }
}

impl fmt::Display for Mac {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0.to_be_bytes();
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[2], b[3], b[4], b[5], b[6], b[7]
        )
    }
}

impl HostId {
    /// 10.0.0.0/8 address derived from the host id.
    pub fn ip(self) -> Ipv4Addr {
        Ipv4Addr::from(0x0a00_0000 | (self.0 & 0x00ff_ffff))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    ArpRequest,
    ArpReply,
    UnicastData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterDst {
    Broadcast,
    Edge(BridgeId),
}

/// Outer header added by a Bridge-Path edge bridge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Encapsulation {
    pub src: BridgeId,
    pub dst: OuterDst,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub kind: FrameKind,
    pub src_mac: Mac,
    pub dst_mac: Mac,
    pub src_ip: Option<Ipv4Addr>,
    pub dst_ip: Option<Ipv4Addr>,
    pub outer: Option<Encapsulation>,
    pub size_bits: u64,
    /// Bridges that handled this copy, in order. Instrumentation only.
    pub trace: Vec<BridgeId>,
}

impl Frame {
    /// Broadcast ARP Request from `src` asking for `target_ip`.
    pub fn arp_request(src: Mac, src_ip: Ipv4Addr, target_ip: Ipv4Addr, size_bits: u64) -> Frame {
        Frame {
            kind: FrameKind::ArpRequest,
            src_mac: src,
            dst_mac: Mac::BROADCAST,
            src_ip: Some(src_ip),
            dst_ip: Some(target_ip),
            outer: None,
            size_bits,
            trace: Vec::new(),
        }
    }

    pub fn arp_reply(
        src: Mac,
        dst: Mac,
        src_ip: Ipv4Addr,
        dst_ip: Ipv4Addr,
        size_bits: u64,
    ) -> Frame {
        Frame {
            kind: FrameKind::ArpReply,
            src_mac: src,
            dst_mac: dst,
            src_ip: Some(src_ip),
            dst_ip: Some(dst_ip),
            outer: None,
            size_bits,
            trace: Vec::new(),
        }
    }

    pub fn data(src: Mac, dst: Mac, size_bits: u64) -> Frame {
        Frame {
            kind: FrameKind::UnicastData,
            src_mac: src,
            dst_mac: dst,
            src_ip: None,
            dst_ip: None,
            outer: None,
            size_bits,
            trace: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.src_mac.is_broadcast() {
            return Err(ProtocolError::Malformed("broadcast source address"));
        }
        match self.kind {
            FrameKind::ArpRequest => {
                if !self.dst_mac.is_broadcast() {
                    return Err(ProtocolError::Malformed("ARP request must be broadcast"));
                }
                if self.src_ip.is_none() || self.dst_ip.is_none() {
                    return Err(ProtocolError::Malformed("ARP request without IP addresses"));
                }
            }
            FrameKind::ArpReply => {
                if self.dst_mac.is_broadcast() {
                    return Err(ProtocolError::Malformed("ARP reply must be unicast"));
                }
                if self.src_ip.is_none() || self.dst_ip.is_none() {
                    return Err(ProtocolError::Malformed("ARP reply without IP addresses"));
                }
            }
            FrameKind::UnicastData => {
                if self.dst_mac.is_broadcast() {
                    return Err(ProtocolError::Malformed(
                        "data frame with broadcast destination",
                    ));
                }
            }
        }
        if let Some(outer) = self.outer {
            let outer_bcast = outer.dst == OuterDst::Broadcast;
            if outer_bcast != self.dst_mac.is_broadcast() {
                return Err(ProtocolError::Malformed(
                    "outer destination must be broadcast exactly when the inner one is",
                ));
            }
        }
        Ok(())
    }

    pub(crate) fn encapsulated(&self, src: BridgeId, dst: OuterDst) -> Frame {
        let mut f = self.clone();
        f.outer = Some(Encapsulation { src, dst });
        f
    }

    pub(crate) fn decapsulated(&self) -> Frame {
        let mut f = self.clone();
        f.outer = None;
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mac_display() {
        assert_eq!(Mac::host(HostId(10)).to_string(), "02:00:00:00:00:0a");
        assert_eq!(Mac::BROADCAST.to_string(), "ff:ff:ff:ff:ff:ff");
    }

    #[test]
    fn validation_rules() {
        let a = Mac::host(HostId(1));
        let b = Mac::host(HostId(2));
        let ip = HostId(1).ip();
        assert!(Frame::arp_request(a, ip, HostId(2).ip(), 512)
            .validate()
            .is_ok());

        let mut bad = Frame::arp_request(a, ip, HostId(2).ip(), 512);
        bad.dst_mac = b;
        assert!(bad.validate().is_err());

        let req = Frame::arp_request(a, ip, HostId(2).ip(), 512);
        assert!(req
            .encapsulated(BridgeId(1), OuterDst::Broadcast)
            .validate()
            .is_ok());
        assert!(req
            .encapsulated(BridgeId(1), OuterDst::Edge(BridgeId(3)))
            .validate()
            .is_err());

        let data = Frame::data(a, b, 100);
        assert!(data
            .encapsulated(BridgeId(1), OuterDst::Broadcast)
            .validate()
            .is_err());
        assert!(data
            .encapsulated(BridgeId(1), OuterDst::Edge(BridgeId(2)))
            .validate()
            .is_ok());
    }
}
