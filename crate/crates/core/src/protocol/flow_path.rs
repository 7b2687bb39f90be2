//! Flow-Path: the same flood-and-lock race as ARP-Path, but every entry is
//! private to one pair of hosts. While the destination MAC is unresolved the
//! provisional entry is keyed by the IP pair; the ARP Reply renames it to the
//! resolved MAC pair and learns the reverse direction.

use super::{
    BridgeState, Egress, EntryKey, EntryState, FlowPeer, ForwardingDecision, ForwardingEntry,
    Frame, FrameKind, ProtocolError, TableMutation,
};
use crate::protocol::DropReason;
use crate::topology::PortId;

pub fn handle(
    state: &mut BridgeState,
    ingress: PortId,
    mut frame: Frame,
    now: f64,
) -> Result<ForwardingDecision, ProtocolError> {
    state.check_port(ingress)?;
    frame.validate()?;
    if frame.outer.is_some() {
        return Err(ProtocolError::Malformed(
            "encapsulated frame on a Flow-Path bridge",
        ));
    }
    state.tick(now);
    frame.trace.push(state.id);

    let mut muts = Vec::new();
    let port = match frame.kind {
        FrameKind::ArpRequest => {
            let (ip_src, ip_dst) = ips(&frame)?;
            if state
                .race_guard
                .get(&(frame.src_mac, ip_src, ip_dst))
                .is_some_and(|&until| until > now)
            {
                return Ok(ForwardingDecision::dropped(DropReason::LateCopy, muts));
            }
            let key = EntryKey::Flow {
                mac_src: frame.src_mac,
                peer: FlowPeer::Unknown { ip_src, ip_dst },
            };
            return Ok(match state.race(key, ingress, now, &mut muts) {
                Ok(()) => ForwardingDecision {
                    outputs: state.flood(ingress, &frame),
                    mutations: muts,
                    drop: None,
                },
                Err(reason) => ForwardingDecision::dropped(reason, muts),
            });
        }
        FrameKind::ArpReply => {
            // Reply from B (ip_src) to A (ip_dst).
            let (ip_b, ip_a) = ips(&frame)?;
            let requester = frame.dst_mac;
            let provisional = EntryKey::Flow {
                mac_src: requester,
                peer: FlowPeer::Unknown {
                    ip_src: ip_a,
                    ip_dst: ip_b,
                },
            };
            let confirmed = EntryKey::Flow {
                mac_src: requester,
                peer: FlowPeer::Known(frame.src_mac),
            };
            if let Some(prov) = state.table.remove(&provisional) {
                state
                    .race_guard
                    .insert((requester, ip_a, ip_b), prov.expires_at);
                state.table.insert(
                    confirmed,
                    ForwardingEntry {
                        key: confirmed,
                        port: prov.port,
                        state: EntryState::Learnt,
                        expires_at: now + state.config.learnt_timer,
                        confirmed: true,
                    },
                );
                muts.push(TableMutation::Renamed {
                    from: provisional,
                    to: confirmed,
                });
            } else if !state.table.contains_key(&confirmed) {
                return Ok(ForwardingDecision::dropped(DropReason::NoProvisional, muts));
            }
            let reverse = EntryKey::Flow {
                mac_src: frame.src_mac,
                peer: FlowPeer::Known(requester),
            };
            state.learn(reverse, ingress, now, &mut muts);
            state.follow(confirmed, ingress, now, true, &mut muts)
        }
        FrameKind::UnicastData => {
            let towards = EntryKey::Flow {
                mac_src: frame.dst_mac,
                peer: FlowPeer::Known(frame.src_mac),
            };
            let back = EntryKey::Flow {
                mac_src: frame.src_mac,
                peer: FlowPeer::Known(frame.dst_mac),
            };
            let port = state.follow(towards, ingress, now, false, &mut muts);
            state.refresh_on_port(back, ingress, now, &mut muts);
            port
        }
    };
    Ok(match port {
        Ok(port) => ForwardingDecision {
            outputs: vec![Egress { port, frame }],
            mutations: muts,
            drop: None,
        },
        Err(reason) => ForwardingDecision::dropped(reason, muts),
    })
}

fn ips(frame: &Frame) -> Result<(std::net::Ipv4Addr, std::net::Ipv4Addr), ProtocolError> {
    match (frame.src_ip, frame.dst_ip) {
        (Some(s), Some(d)) => Ok((s, d)),
        _ => Err(ProtocolError::Malformed("ARP frame without IP addresses")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Mac, Protocol, ProtocolConfig};
    use crate::topology::{BridgeId, Endpoint, HostId};

    fn mac(h: u32) -> Mac {
        Mac::host(HostId(h))
    }

    fn req(from: u32, to: u32) -> Frame {
        Frame::arp_request(mac(from), HostId(from).ip(), HostId(to).ip(), 512)
    }

    fn reply(from: u32, to: u32) -> Frame {
        Frame::arp_reply(mac(from), mac(to), HostId(from).ip(), HostId(to).ip(), 512)
    }

    /// Bridge with host A on port 0 and hosts B, C on ports 1, 2.
    fn single() -> BridgeState {
        BridgeState::new(
            BridgeId(1),
            vec![
                Endpoint::Host(HostId(1)),
                Endpoint::Host(HostId(2)),
                Endpoint::Host(HostId(3)),
            ],
            Protocol::FlowPath,
            ProtocolConfig::default(),
        )
    }

    #[test]
    fn provisional_entry_then_confirmation() {
        let mut s = single();
        s.handle(PortId(0), req(1, 2), 0.0).unwrap();
        let prov = EntryKey::Flow {
            mac_src: mac(1),
            peer: FlowPeer::Unknown {
                ip_src: HostId(1).ip(),
                ip_dst: HostId(2).ip(),
            },
        };
        assert_eq!(s.entry(&prov).unwrap().state, EntryState::Locked);

        let d = s.handle(PortId(1), reply(2, 1), 0.001).unwrap();
        assert_eq!(d.output_ports(), vec![PortId(0)]);
        assert!(s.entry(&prov).is_none());
        let ab = EntryKey::Flow {
            mac_src: mac(1),
            peer: FlowPeer::Known(mac(2)),
        };
        let ba = EntryKey::Flow {
            mac_src: mac(2),
            peer: FlowPeer::Known(mac(1)),
        };
        assert_eq!(s.entry(&ab).unwrap().state, EntryState::Learnt);
        assert_eq!(s.entry(&ba).unwrap().port, PortId(1));
        assert_eq!(s.entry_count(), 2);
    }

    #[test]
    fn flows_from_same_source_are_independent() {
        let mut s = single();
        s.handle(PortId(0), req(1, 2), 0.0).unwrap();
        // a second flow from A is not blocked by the first lock
        let d = s.handle(PortId(0), req(1, 3), 0.0001).unwrap();
        assert_eq!(d.drop, None);
        assert_eq!(s.entry_count(), 2);
    }

    #[test]
    fn reply_without_provisional_is_dropped() {
        let mut s = single();
        let d = s.handle(PortId(1), reply(2, 1), 0.0).unwrap();
        assert_eq!(d.drop, Some(DropReason::NoProvisional));
        assert_eq!(s.entry_count(), 0);
    }

    #[test]
    fn late_copy_after_confirmation_is_dropped() {
        let mut s = BridgeState::new(
            BridgeId(1),
            vec![
                Endpoint::Bridge(BridgeId(2)),
                Endpoint::Bridge(BridgeId(3)),
                Endpoint::Host(HostId(2)),
            ],
            Protocol::FlowPath,
            ProtocolConfig::default(),
        );
        s.handle(PortId(0), req(1, 2), 0.0).unwrap();
        s.handle(PortId(2), reply(2, 1), 0.001).unwrap();
        let d = s.handle(PortId(1), req(1, 2), 0.002).unwrap();
        assert_eq!(d.drop, Some(DropReason::LateCopy));
        // once the lock window has passed a new exchange is accepted
        let d = s.handle(PortId(1), req(1, 2), 1.0).unwrap();
        assert_eq!(d.drop, None);
    }

    #[test]
    fn data_uses_flow_key() {
        let mut s = single();
        s.handle(PortId(0), req(1, 2), 0.0).unwrap();
        s.handle(PortId(1), reply(2, 1), 0.001).unwrap();
        let d = s
            .handle(PortId(0), Frame::data(mac(1), mac(2), 12_000), 0.01)
            .unwrap();
        assert_eq!(d.output_ports(), vec![PortId(1)]);
        let d = s
            .handle(PortId(2), Frame::data(mac(3), mac(2), 12_000), 0.01)
            .unwrap();
        assert_eq!(d.drop, Some(DropReason::Miss));
    }
}
