//! Trace validators: structural checks for any trace file plus the
//! handover pattern checker used by the SSH redirection experiment.
//!
//! Every check here works from the trace alone (file text or in-memory
//! events); nothing peeks at simulator state, so a stored trace can be
//! re-validated at any time.

use crate::model::{Ipv4Addr, MacAddr, TcpFlags, MAX_PAYLOAD};
use crate::orchestrator::Mechanism;
use crate::trace::{parse_trace, ParsedEvent, Trace, TraceDetail, TraceKind};

/// Structural validation of a trace file: parseable lines, non-decreasing
/// timestamps and payload lengths within the segment cap. Returns the
/// number of events on success.
pub fn validate_trace_text(text: &str) -> Result<usize, String> {
    let events = parse_trace(text).map_err(|e| e.to_string())?;
    let mut last = 0u64;
    for (i, ev) in events.iter().enumerate() {
        if ev.time_ms() < last {
            return Err(format!("event {i}: time {} ms goes backwards", ev.time_ms()));
        }
        last = ev.time_ms();
        if let ParsedEvent::Frame { len, .. } = ev {
            if *len > MAX_PAYLOAD {
                return Err(format!("event {i}: payload length {len} exceeds cap"));
            }
        }
    }
    Ok(events.len())
}

/// Checks the migration handover pattern on a parsed trace:
///
/// 1. relative handshake on the attacker link is Seq=0 / Seq=0,Ack=1 /
///    Seq=1,Ack=1;
/// 2. the first client payload is `payload_len` bytes at Seq=1, Ack=1;
/// 3. the payload reaches the backend decoy exactly once;
/// 4. the client retransmits the payload at least once while migration is
///    in progress, and never after it completes;
/// 5. after migration the attacker observes Ack = payload_len + 1;
/// 6. under mechanism 2 the frontend connection is terminated.
///
/// Fails with a description of the first violated assertion.
pub fn validate_handover(
    events: &[ParsedEvent],
    mechanism: Mechanism,
    attacker_link: &str,
    backend: &str,
    payload_len: usize,
) -> Result<(), String> {
    struct Frame<'a> {
        time_ms: u64,
        receiver: &'a str,
        flags: TcpFlags,
        rel_seq: u32,
        rel_ack: u32,
        len: usize,
    }
    let attacker_frames: Vec<Frame> = events
        .iter()
        .filter_map(|ev| match ev {
            ParsedEvent::Frame {
                time_ms,
                link,
                receiver,
                flags,
                rel_seq,
                rel_ack,
                len,
                ..
            } if link == attacker_link => Some(Frame {
                time_ms: *time_ms,
                receiver,
                flags: *flags,
                rel_seq: *rel_seq,
                rel_ack: *rel_ack,
                len: *len,
            }),
            _ => None,
        })
        .collect();
    if attacker_frames.len() < 4 {
        return Err(format!(
            "expected at least 4 frames on link {attacker_link}, saw {}",
            attacker_frames.len()
        ));
    }

    // 1. three-way handshake in relative sequence numbers
    let syn = &attacker_frames[0];
    if !syn.flags.contains(TcpFlags::SYN)
        || syn.flags.contains(TcpFlags::ACK)
        || syn.rel_seq != 0
    {
        return Err("first attacker-link frame is not a SYN with Seq=0".into());
    }
    let synack = &attacker_frames[1];
    if !(synack.flags.contains(TcpFlags::SYN)
        && synack.flags.contains(TcpFlags::ACK)
        && synack.receiver == "attacker"
        && synack.rel_seq == 0
        && synack.rel_ack == 1)
    {
        return Err("second attacker-link frame is not a SYN/ACK with Seq=0 Ack=1".into());
    }
    let ack = &attacker_frames[2];
    if !(ack.flags.contains(TcpFlags::ACK)
        && !ack.flags.contains(TcpFlags::SYN)
        && ack.len == 0
        && ack.rel_seq == 1
        && ack.rel_ack == 1)
    {
        return Err("third attacker-link frame is not the final ACK with Seq=1 Ack=1".into());
    }

    // 2. first client payload
    let uplink_payloads: Vec<&Frame> = attacker_frames
        .iter()
        .filter(|f| f.receiver != "attacker" && f.len > 0)
        .collect();
    let first = uplink_payloads
        .first()
        .ok_or("no client payload on the attacker link")?;
    if first.len != payload_len || first.rel_seq != 1 || first.rel_ack != 1 {
        return Err(format!(
            "first client payload is Len={} Seq={} Ack={}, expected Len={payload_len} Seq=1 Ack=1",
            first.len, first.rel_seq, first.rel_ack
        ));
    }

    // 3. exactly one payload delivery at the backend
    let backend_payloads: Vec<u64> = events
        .iter()
        .filter_map(|ev| match ev {
            ParsedEvent::Frame {
                time_ms, receiver, len, ..
            } if receiver == backend && *len > 0 => Some(*time_ms),
            _ => None,
        })
        .collect();
    if backend_payloads.len() != 1 {
        return Err(format!(
            "expected exactly 1 payload delivery at {backend}, saw {}",
            backend_payloads.len()
        ));
    }
    let migrated_ms = backend_payloads[0];

    // 4. retransmissions happen, and only before the handover completes
    let retransmits: Vec<&&Frame> = uplink_payloads.iter().skip(1).collect();
    if retransmits.is_empty() {
        return Err("no client payload retransmission before migration".into());
    }
    for r in &retransmits {
        if r.rel_seq != first.rel_seq || r.len != first.len {
            return Err("client payload frames are not retransmissions of the first".into());
        }
        if r.time_ms >= migrated_ms {
            return Err(format!(
                "payload retransmission at {} ms after migration completed at {} ms",
                r.time_ms, migrated_ms
            ));
        }
    }

    // 5. the attacker sees the payload acknowledged after migration
    let want_ack = payload_len as u32 + 1;
    let acked = attacker_frames.iter().any(|f| {
        f.receiver == "attacker" && f.time_ms >= migrated_ms && f.rel_ack == want_ack
    });
    if !acked {
        return Err(format!(
            "attacker never observed Ack={want_ack} after migration"
        ));
    }

    // 6. mechanism 2 tears the frontend connection down
    if mechanism == Mechanism::M2 {
        let terminated = events.iter().any(|ev| {
            matches!(ev, ParsedEvent::Other { kind, .. } if kind == "ConnTerminated")
        });
        if !terminated {
            return Err("no ConnTerminated event for the frontend connection".into());
        }
    }
    Ok(())
}

/// Convenience wrapper: render an in-memory trace to text, parse it back
/// and run the handover checks, so the validation provably uses only
/// trace-file content.
pub fn validate_handover_trace(
    trace: &Trace,
    mechanism: Mechanism,
    attacker_link: &str,
    backend: &str,
    payload_len: usize,
) -> Result<(), String> {
    let events = parse_trace(&trace.to_text()).map_err(|e| e.to_string())?;
    validate_handover(&events, mechanism, attacker_link, backend, payload_len)
}

/// Fingerprint check on the attacker-facing link: every server-side frame
/// must carry the advertised IP and MAC, and relative sequence numbers must
/// stay within `rel_bound` of the ISN (an absolute jump would expose the
/// backend's own numbering).
pub fn check_fingerprint(
    trace: &Trace,
    attacker_link: &str,
    server_ip: Ipv4Addr,
    server_mac: MacAddr,
    rel_bound: u32,
) -> Result<(), String> {
    for ev in &trace.events {
        if ev.kind != TraceKind::FrameDelivered {
            continue;
        }
        let TraceDetail::Frame {
            link,
            receiver,
            segment,
            rel_seq,
            rel_ack,
        } = &ev.detail
        else {
            continue;
        };
        if link != attacker_link {
            continue;
        }
        if receiver == "attacker" {
            if segment.src_ip != server_ip || segment.src_mac != server_mac {
                return Err(format!(
                    "frame to attacker carries identity {}/{}, advertised {}/{}",
                    segment.src_ip, segment.src_mac, server_ip, server_mac
                ));
            }
        } else if segment.dst_ip != server_ip || segment.dst_mac != server_mac {
            return Err(format!(
                "attacker frame addressed to {}/{}, advertised {}/{}",
                segment.dst_ip, segment.dst_mac, server_ip, server_mac
            ));
        }
        if *rel_seq > rel_bound || *rel_ack > rel_bound {
            return Err(format!(
                "relative numbers Seq={rel_seq} Ack={rel_ack} exceed bound {rel_bound} \
                 on the attacker link"
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structural_validation_catches_bad_lines() {
        assert!(validate_trace_text("not a trace").is_err());
        let good = "0\tFrameDelivered\ta~b@b\t10.0.0.1:1\t10.0.0.2:2\tSYN\t0\t0\t0\n";
        assert_eq!(validate_trace_text(good).unwrap(), 1);
        let backwards = format!(
            "5\tDecision\tctrl\tx\n3\tDecision\tctrl\ty\n"
        );
        assert!(validate_trace_text(&backwards).is_err());
    }

    #[test]
    fn handover_validator_needs_a_handshake() {
        let events = parse_trace("0\tDecision\tctrl\tx\n").unwrap();
        let err = validate_handover(&events, Mechanism::M2, "attacker~fcf", "hih0", 43)
            .unwrap_err();
        assert!(err.contains("at least 4 frames"), "{err}");
    }
}
