//! Bridge-Path in its MAC-in-MAC form. Edge bridges wrap frames from their
//! hosts in an outer header naming the ingress and egress edge bridges; every
//! bridge then runs the ARP-Path race and learning on the outer addresses
//! only. The egress edge strips the header and delivers to the host.
//!
//! Two hosts behind the same edge bridge talk without touching the core.

use super::{
    BridgeState, DirectoryEntry, Egress, EntryKey, EntryState, ForwardingDecision, Frame,
    FrameKind, OuterDst, ProtocolError, TableMutation,
};
use crate::protocol::DropReason;
use crate::topology::{Endpoint, PortId};

pub fn handle(
    state: &mut BridgeState,
    ingress: PortId,
    mut frame: Frame,
    now: f64,
) -> Result<ForwardingDecision, ProtocolError> {
    let peer = state.check_port(ingress)?;
    frame.validate()?;
    state.tick(now);
    frame.trace.push(state.id);

    match peer {
        Endpoint::Host(_) => from_host(state, ingress, frame, now),
        Endpoint::Bridge(_) => from_core(state, ingress, frame, now),
    }
}

fn host_ports(state: &BridgeState) -> impl Iterator<Item = PortId> + '_ {
    state
        .ports
        .iter()
        .enumerate()
        .filter(|(_, p)| matches!(p, Endpoint::Host(_)))
        .map(|(i, _)| PortId(i as u32))
}

fn bridge_ports(state: &BridgeState) -> impl Iterator<Item = PortId> + '_ {
    state
        .ports
        .iter()
        .enumerate()
        .filter(|(_, p)| matches!(p, Endpoint::Bridge(_)))
        .map(|(i, _)| PortId(i as u32))
}

fn learn_directory(
    state: &mut BridgeState,
    frame: &Frame,
    now: f64,
    muts: &mut Vec<TableMutation>,
) {
    let Some(outer) = frame.outer else { return };
    let expires_at = now + state.config.learnt_timer;
    let prev = state.directory.insert(
        frame.src_mac,
        DirectoryEntry {
            edge: outer.src,
            expires_at,
        },
    );
    if prev.map(|p| p.edge) != Some(outer.src) {
        muts.push(TableMutation::DirectoryLearnt {
            mac: frame.src_mac,
            edge: outer.src,
        });
    }
}

/// Ingress edge: encapsulate and inject into the core.
fn from_host(
    state: &mut BridgeState,
    ingress: PortId,
    frame: Frame,
    now: f64,
) -> Result<ForwardingDecision, ProtocolError> {
    if frame.outer.is_some() {
        return Err(ProtocolError::Malformed("host sent an encapsulated frame"));
    }
    let own = state.id;
    let mut muts = Vec::new();
    if state.local_hosts.insert(frame.src_mac, ingress) != Some(ingress) {
        muts.push(TableMutation::LocalHost {
            mac: frame.src_mac,
            port: ingress,
        });
    }

    if frame.kind == FrameKind::ArpRequest {
        let mut outputs: Vec<Egress> = host_ports(state)
            .filter(|&p| p != ingress)
            .map(|port| Egress {
                port,
                frame: frame.clone(),
            })
            .collect();
        let encap = frame.encapsulated(own, OuterDst::Broadcast);
        let core_drop = match state.race(EntryKey::Edge(own), ingress, now, &mut muts) {
            Ok(()) => {
                outputs.extend(bridge_ports(state).map(|port| Egress {
                    port,
                    frame: encap.clone(),
                }));
                None
            }
            Err(reason) => Some(reason),
        };
        let drop = if outputs.is_empty() { core_drop } else { None };
        return Ok(ForwardingDecision {
            outputs,
            mutations: muts,
            drop,
        });
    }

    // Local peer: deliver without encapsulation.
    if let Some(&port) = state.local_hosts.get(&frame.dst_mac) {
        if port == ingress {
            return Ok(ForwardingDecision::dropped(DropReason::Reflected, muts));
        }
        return Ok(ForwardingDecision {
            outputs: vec![Egress { port, frame }],
            mutations: muts,
            drop: None,
        });
    }

    let Some(dir) = state.directory.get(&frame.dst_mac).copied() else {
        return Ok(ForwardingDecision::dropped(DropReason::Unresolved, muts));
    };
    let is_reply = frame.kind == FrameKind::ArpReply;
    if is_reply {
        state.learn(EntryKey::Edge(own), ingress, now, &mut muts);
    } else {
        state.refresh_on_port(EntryKey::Edge(own), ingress, now, &mut muts);
    }
    let encap = frame.encapsulated(own, OuterDst::Edge(dir.edge));
    Ok(
        match state.follow(EntryKey::Edge(dir.edge), ingress, now, is_reply, &mut muts) {
            Ok(port) => ForwardingDecision {
                outputs: vec![Egress { port, frame: encap }],
                mutations: muts,
                drop: None,
            },
            Err(reason) => ForwardingDecision::dropped(reason, muts),
        },
    )
}

/// Transit or egress: forwarding uses only the outer addresses.
fn from_core(
    state: &mut BridgeState,
    ingress: PortId,
    frame: Frame,
    now: f64,
) -> Result<ForwardingDecision, ProtocolError> {
    let Some(outer) = frame.outer else {
        return Err(ProtocolError::Malformed(
            "plain frame on a Bridge-Path core port",
        ));
    };
    let own = state.id;
    let mut muts = Vec::new();
    let src_key = EntryKey::Edge(outer.src);

    match outer.dst {
        OuterDst::Broadcast => {
            if let Err(reason) = state.race(src_key, ingress, now, &mut muts) {
                return Ok(ForwardingDecision::dropped(reason, muts));
            }
            let mut outputs: Vec<Egress> = bridge_ports(state)
                .filter(|&p| p != ingress)
                .map(|port| Egress {
                    port,
                    frame: frame.clone(),
                })
                .collect();
            let hosts: Vec<PortId> = host_ports(state).collect();
            if !hosts.is_empty() {
                learn_directory(state, &frame, now, &mut muts);
                let plain = frame.decapsulated();
                outputs.extend(hosts.into_iter().map(|port| Egress {
                    port,
                    frame: plain.clone(),
                }));
            }
            Ok(ForwardingDecision {
                outputs,
                mutations: muts,
                drop: None,
            })
        }
        OuterDst::Edge(target) => {
            let is_reply = frame.kind == FrameKind::ArpReply;
            if is_reply {
                state.learn(src_key, ingress, now, &mut muts);
            } else {
                state.refresh_on_port(src_key, ingress, now, &mut muts);
            }
            if target != own {
                return Ok(
                    match state.follow(EntryKey::Edge(target), ingress, now, is_reply, &mut muts) {
                        Ok(port) => ForwardingDecision {
                            outputs: vec![Egress { port, frame }],
                            mutations: muts,
                            drop: None,
                        },
                        Err(reason) => ForwardingDecision::dropped(reason, muts),
                    },
                );
            }

            // Egress edge: the own-id entry is part of the path too.
            let own_key = EntryKey::Edge(own);
            let learnt_timer = state.config.learnt_timer;
            if let Some(e) = state.table.get_mut(&own_key) {
                match e.state {
                    EntryState::Locked if is_reply && !e.confirmed => {
                        e.confirmed = true;
                        muts.push(TableMutation::Confirmed { key: own_key });
                    }
                    EntryState::Learnt => e.expires_at = now + learnt_timer,
                    _ => {}
                }
            }
            learn_directory(state, &frame, now, &mut muts);
            match state.local_hosts.get(&frame.dst_mac) {
                Some(&port) => Ok(ForwardingDecision {
                    outputs: vec![Egress {
                        port,
                        frame: frame.decapsulated(),
                    }],
                    mutations: muts,
                    drop: None,
                }),
                None => Ok(ForwardingDecision::dropped(DropReason::Miss, muts)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Encapsulation, Mac, Protocol, ProtocolConfig};
    use crate::topology::{BridgeId, HostId};

    fn mac(h: u32) -> Mac {
        Mac::host(HostId(h))
    }

    fn edge() -> BridgeState {
        // bridge 1: core neighbour 2 on port 0, hosts A and D on ports 1, 2
        BridgeState::new(
            BridgeId(1),
            vec![
                Endpoint::Bridge(BridgeId(2)),
                Endpoint::Host(HostId(1)),
                Endpoint::Host(HostId(4)),
            ],
            Protocol::BridgePath,
            ProtocolConfig::default(),
        )
    }

    #[test]
    fn request_is_encapsulated_with_broadcast_outer() {
        let mut s = edge();
        let req = Frame::arp_request(mac(1), HostId(1).ip(), HostId(2).ip(), 512);
        let d = s.handle(PortId(1), req, 0.0).unwrap();
        assert_eq!(d.output_ports(), vec![PortId(2), PortId(0)]);
        assert_eq!(d.outputs[0].frame.outer, None);
        assert_eq!(
            d.outputs[1].frame.outer,
            Some(Encapsulation {
                src: BridgeId(1),
                dst: OuterDst::Broadcast
            })
        );
        assert!(s.entry(&EntryKey::Edge(BridgeId(1))).is_some());
    }

    #[test]
    fn unicast_to_unknown_host_is_unresolved() {
        let mut s = edge();
        let d = s
            .handle(PortId(1), Frame::data(mac(1), mac(9), 100), 0.0)
            .unwrap();
        assert_eq!(d.drop, Some(DropReason::Unresolved));
    }

    #[test]
    fn same_edge_hosts_bypass_core() {
        let mut s = edge();
        s.handle(PortId(2), Frame::data(mac(4), mac(1), 100), 0.0)
            .unwrap();
        let d = s
            .handle(PortId(1), Frame::data(mac(1), mac(4), 100), 0.0)
            .unwrap();
        assert_eq!(d.output_ports(), vec![PortId(2)]);
        assert_eq!(d.outputs[0].frame.outer, None);
        assert_eq!(s.entry_count(), 0);
    }

    #[test]
    fn plain_frame_from_core_is_malformed() {
        let mut s = edge();
        let f = Frame::data(mac(2), mac(1), 100);
        assert!(s.handle(PortId(0), f, 0.0).is_err());
    }

    #[test]
    fn core_bridge_learns_edge_keys_only() {
        let mut s = BridgeState::new(
            BridgeId(2),
            vec![Endpoint::Bridge(BridgeId(1)), Endpoint::Bridge(BridgeId(3))],
            Protocol::BridgePath,
            ProtocolConfig::default(),
        );
        let req = Frame::arp_request(mac(1), HostId(1).ip(), HostId(2).ip(), 512)
            .encapsulated(BridgeId(1), OuterDst::Broadcast);
        s.handle(PortId(0), req, 0.0).unwrap();
        let reply = Frame::arp_reply(mac(2), mac(1), HostId(2).ip(), HostId(1).ip(), 512)
            .encapsulated(BridgeId(3), OuterDst::Edge(BridgeId(1)));
        let d = s.handle(PortId(1), reply, 0.001).unwrap();
        assert_eq!(d.output_ports(), vec![PortId(0)]);
        let keys: Vec<_> = s.entries().map(|e| e.key).collect();
        assert_eq!(
            keys,
            vec![EntryKey::Edge(BridgeId(1)), EntryKey::Edge(BridgeId(3))]
        );
        assert!(s.directory().is_empty());
    }
}
