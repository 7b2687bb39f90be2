//! ARP-Path: the first copy of a flooded ARP Request locks its ingress port
//! for the source MAC; the ARP Reply walks back along those locks, learning
//! the path to the replier as it goes.

use super::{BridgeState, EntryKey, ForwardingDecision, Frame, FrameKind, ProtocolError};
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
            "encapsulated frame on an ARP-Path bridge",
        ));
    }
    state.tick(now);
    frame.trace.push(state.id);

    let mut muts = Vec::new();
    let src = EntryKey::Host(frame.src_mac);
    let dst = EntryKey::Host(frame.dst_mac);
    let port = match frame.kind {
        FrameKind::ArpRequest => {
            return Ok(match state.race(src, ingress, now, &mut muts) {
                Ok(()) => ForwardingDecision {
                    outputs: state.flood(ingress, &frame),
                    mutations: muts,
                    drop: None,
                },
                Err(reason) => ForwardingDecision::dropped(reason, muts),
            });
        }
        FrameKind::ArpReply => {
            state.learn(src, ingress, now, &mut muts);
            state.follow(dst, ingress, now, true, &mut muts)
        }
        FrameKind::UnicastData => {
            let port = state.follow(dst, ingress, now, false, &mut muts);
            state.refresh_on_port(src, ingress, now, &mut muts);
            port
        }
    };
    Ok(match port {
        Ok(port) => ForwardingDecision {
            outputs: vec![super::Egress { port, frame }],
            mutations: muts,
            drop: None,
        },
        Err(reason) => ForwardingDecision::dropped(reason, muts),
    })
}
