//! Run traces: every frame delivery, controller decision and log line.
//!
//! The `FrameDelivered` text line is the golden-file contract:
//!
//! ```text
//! time_ms<TAB>FrameDelivered<TAB>location<TAB>src_ip:port<TAB>dst_ip:port<TAB>flags<TAB>relseq<TAB>relack<TAB>len
//! ```
//!
//! `location` is `<link>@<receiver>` so a trace alone identifies both the
//! wire and the receiving interface. Sequence numbers are shown relative to
//! each direction's ISN as learned from the SYNs observed on that link;
//! absolute values are kept on the in-memory event for debugging.

use std::collections::HashMap;
use std::fmt;

use crate::model::{parse_endpoint, FiveTuple, Ipv4Addr, ModelError, Segment, TcpFlags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceKind {
    FrameDelivered,
    Alert,
    Decision,
    FlowInstalled,
    DecoyLog,
    ConnTerminated,
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TraceKind::FrameDelivered => "FrameDelivered",
            TraceKind::Alert => "Alert",
            TraceKind::Decision => "Decision",
            TraceKind::FlowInstalled => "FlowInstalled",
            TraceKind::DecoyLog => "DecoyLog",
            TraceKind::ConnTerminated => "ConnTerminated",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceDetail {
    Frame {
        link: String,
        receiver: String,
        segment: Segment,
        rel_seq: u32,
        rel_ack: u32,
    },
    /// Everything that is not a frame: one location plus free text.
    Note { location: String, text: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub time_us: u64,
    pub kind: TraceKind,
    pub detail: TraceDetail,
}

impl TraceEvent {
    pub fn time_ms(&self) -> u64 {
        self.time_us / 1000
    }

    pub fn to_line(&self) -> String {
        match &self.detail {
            TraceDetail::Frame {
                link,
                receiver,
                segment,
                rel_seq,
                rel_ack,
            } => format!(
                "{}\t{}\t{}@{}\t{}:{}\t{}:{}\t{}\t{}\t{}\t{}",
                self.time_ms(),
                self.kind,
                link,
                receiver,
                segment.src_ip,
                segment.src_port,
                segment.dst_ip,
                segment.dst_port,
                segment.flags,
                rel_seq,
                rel_ack,
                segment.payload.len()
            ),
            TraceDetail::Note { location, text } => {
                format!("{}\t{}\t{}\t{}", self.time_ms(), self.kind, location, text)
            }
        }
    }
}

/// A full run trace. Event times are non-decreasing.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn push(&mut self, ev: TraceEvent) {
        debug_assert!(self.events.last().map_or(true, |p| p.time_us <= ev.time_us));
        self.events.push(ev);
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(&ev.to_line());
            out.push('\n');
        }
        out
    }

    pub fn frames(&self) -> impl Iterator<Item = (&TraceEvent, &Segment, &str, &str, u32, u32)> {
        self.events.iter().filter_map(|ev| match &ev.detail {
            TraceDetail::Frame {
                link,
                receiver,
                segment,
                rel_seq,
                rel_ack,
            } => Some((ev, segment, link.as_str(), receiver.as_str(), *rel_seq, *rel_ack)),
            _ => None,
        })
    }
}

/// One parsed line of a trace file. The frame variant is fully structured;
/// other kinds keep their free text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedEvent {
    Frame {
        time_ms: u64,
        link: String,
        receiver: String,
        src: (Ipv4Addr, u16),
        dst: (Ipv4Addr, u16),
        flags: TcpFlags,
        rel_seq: u32,
        rel_ack: u32,
        len: usize,
    },
    Other {
        time_ms: u64,
        kind: String,
        location: String,
        text: String,
    },
}

impl ParsedEvent {
    pub fn time_ms(&self) -> u64 {
        match self {
            ParsedEvent::Frame { time_ms, .. } => *time_ms,
            ParsedEvent::Other { time_ms, .. } => *time_ms,
        }
    }
}

pub fn parse_trace(text: &str) -> Result<Vec<ParsedEvent>, ModelError> {
    let bad = |line: &str| ModelError::Parse {
        what: "trace line",
        input: line.to_string(),
    };
    let mut out = Vec::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 {
            return Err(bad(line));
        }
        let time_ms: u64 = cols[0].parse().map_err(|_| bad(line))?;
        if cols[1] == "FrameDelivered" {
            if cols.len() != 9 {
                return Err(bad(line));
            }
            let (link, receiver) = cols[2].rsplit_once('@').ok_or_else(|| bad(line))?;
            out.push(ParsedEvent::Frame {
                time_ms,
                link: link.to_string(),
                receiver: receiver.to_string(),
                src: parse_endpoint(cols[3])?,
                dst: parse_endpoint(cols[4])?,
                flags: cols[5].parse()?,
                rel_seq: cols[6].parse().map_err(|_| bad(line))?,
                rel_ack: cols[7].parse().map_err(|_| bad(line))?,
                len: cols[8].parse().map_err(|_| bad(line))?,
            });
        } else {
            out.push(ParsedEvent::Other {
                time_ms,
                kind: cols[1].to_string(),
                location: cols[2].to_string(),
                text: cols[3..].join("\t"),
            });
        }
    }
    Ok(out)
}

/// Per-link ISN tracking so recorded frames carry Wireshark-style relative
/// sequence numbers (SYN shows Seq=0, the SYN/ACK Seq=0 Ack=1, ...).
#[derive(Debug, Default)]
pub struct RelSeqTracker {
    isns: HashMap<(String, FiveTuple), u32>,
}

impl RelSeqTracker {
    pub fn observe(&mut self, link: &str, seg: &Segment) -> (u32, u32) {
        if !seg.is_tcp() {
            return (0, 0);
        }
        let tuple = seg.five_tuple();
        if seg.flags.contains(TcpFlags::SYN) {
            self.isns.insert((link.to_string(), tuple), seg.seq);
        }
        let rel_seq = self
            .isns
            .get(&(link.to_string(), tuple))
            .map_or(seg.seq, |isn| seg.seq.wrapping_sub(*isn));
        let rel_ack = if seg.flags.contains(TcpFlags::ACK) {
            self.isns
                .get(&(link.to_string(), tuple.reversed()))
                .map_or(seg.ack, |isn| seg.ack.wrapping_sub(*isn))
        } else {
            0
        };
        (rel_seq, rel_ack)
    }
}

/// Histogram of frame deliveries at one node, `bin_ms` wide bins keyed by
/// bin start time. Computed from a parsed trace file alone.
pub fn packets_per_bin(events: &[ParsedEvent], node: &str, bin_ms: u64) -> Vec<(u64, usize)> {
    assert!(bin_ms > 0);
    let mut bins: HashMap<u64, usize> = HashMap::new();
    for ev in events {
        if let ParsedEvent::Frame {
            time_ms, receiver, ..
        } = ev
        {
            if receiver == node {
                *bins.entry(time_ms / bin_ms * bin_ms).or_default() += 1;
            }
        }
    }
    let mut out: Vec<(u64, usize)> = bins.into_iter().collect();
    out.sort_unstable();
    out
}
