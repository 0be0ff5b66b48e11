//! The switch layer: priority-matched flow tables with the two seq/ack
//! rewrite extension actions.
//!
//! Two switch roles exist. The FCF (Flow Classifying Forwarder) isolates
//! identical-fingerprint decoys by steering per five-tuple onto distinct
//! out ports. The SPF (Session Processing Forwarder) sits in front of a
//! redirect target and rewrites Seq/Ack by a constant per-direction diff,
//! keeping the switch itself stateless.

use std::fmt;

use thiserror::Error;

use crate::model::{seq_add, Ipv4Addr, MacAddr, Proto, Segment};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DataplaneError {
    #[error("flow entry must carry at least one action")]
    EmptyActionList,
    #[error("seq/ack diff action applied to non-TCP segment")]
    DiffOnNonTcp,
    #[error("action list has no terminal drop/output/controller disposition")]
    NoDisposition,
}

/// Optional header constraints; an absent field is a wildcard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MatchFields {
    pub in_port: Option<u32>,
    pub proto: Option<Proto>,
    pub src_ip: Option<Ipv4Addr>,
    pub dst_ip: Option<Ipv4Addr>,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
}

impl MatchFields {
    pub fn matches(&self, seg: &Segment, in_port: u32) -> bool {
        self.in_port.map_or(true, |p| p == in_port)
            && self.proto.map_or(true, |p| p == seg.proto)
            && self.src_ip.map_or(true, |ip| ip == seg.src_ip)
            && self.dst_ip.map_or(true, |ip| ip == seg.dst_ip)
            && self.src_port.map_or(true, |p| p == seg.src_port)
            && self.dst_port.map_or(true, |p| p == seg.dst_port)
    }

    /// Pin a directional five-tuple, optionally anchored to an ingress port.
    pub fn for_tuple(tuple: &crate::model::FiveTuple, in_port: Option<u32>) -> MatchFields {
        MatchFields {
            in_port,
            proto: Some(tuple.proto),
            src_ip: Some(tuple.src_ip),
            dst_ip: Some(tuple.dst_ip),
            src_port: Some(tuple.src_port),
            dst_port: Some(tuple.dst_port),
        }
    }
}

impl fmt::Display for MatchFields {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = Vec::new();
        if let Some(p) = self.proto {
            parts.push(p.to_string());
        }
        if let Some(p) = self.in_port {
            parts.push(format!("in_port={p}"));
        }
        if let Some(ip) = self.src_ip {
            parts.push(format!("nw_src={ip}"));
        }
        if let Some(ip) = self.dst_ip {
            parts.push(format!("nw_dst={ip}"));
        }
        if let Some(p) = self.src_port {
            parts.push(format!("tp_src={p}"));
        }
        if let Some(p) = self.dst_port {
            parts.push(format!("tp_dst={p}"));
        }
        if parts.is_empty() {
            parts.push("any".to_string());
        }
        write!(f, "{}", parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowAction {
    Drop,
    Output(u32),
    ToController,
    /// Adds the diff to the TCP sequence number, mod 2^32.
    SetTcpSeqDiff(i64),
    /// Adds the diff to the TCP acknowledgment number, mod 2^32.
    SetTcpAckDiff(i64),
    /// Stateless destination rewrite for UDP/IP redirection.
    RewriteDst(Ipv4Addr, MacAddr),
}

impl fmt::Display for FlowAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowAction::Drop => write!(f, "drop"),
            FlowAction::Output(p) => write!(f, "output:{p}"),
            FlowAction::ToController => write!(f, "CONTROLLER:65535"),
            FlowAction::SetTcpSeqDiff(d) => write!(f, "set_tcp_seq_diff:{d:+}"),
            FlowAction::SetTcpAckDiff(d) => write!(f, "set_tcp_ack_diff:{d:+}"),
            FlowAction::RewriteDst(ip, mac) => write!(f, "rewrite_dst:{ip}/{mac}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowEntry {
    pub priority: u32,
    pub match_fields: MatchFields,
    pub actions: Vec<FlowAction>,
    pub n_packets: u64,
    pub n_bytes: u64,
    pub install_time_us: u64,
    pub cookie: u64,
    seqno: u64,
}

impl FlowEntry {
    pub fn new(priority: u32, match_fields: MatchFields, actions: Vec<FlowAction>) -> FlowEntry {
        FlowEntry {
            priority,
            match_fields,
            actions,
            n_packets: 0,
            n_bytes: 0,
            install_time_us: 0,
            cookie: 0,
            seqno: 0,
        }
    }

    fn dump_line(&self, now_us: u64) -> String {
        let duration_s = now_us.saturating_sub(self.install_time_us) / 1_000_000;
        let actions: Vec<String> = self.actions.iter().map(|a| a.to_string()).collect();
        format!(
            "cookie=0x{:x}, duration={}s, table=0, n_packets={}, n_bytes={}, priority={},{} actions={}",
            self.cookie,
            duration_s,
            self.n_packets,
            self.n_bytes,
            self.priority,
            self.match_fields,
            actions.join(",")
        )
    }

    /// The stable `priority=..,<match> actions=..` presentation of one entry.
    pub fn normalized_line(&self) -> String {
        let actions: Vec<String> = self.actions.iter().map(|a| a.to_string()).collect();
        format!(
            "priority={},{} actions={}",
            self.priority,
            self.match_fields,
            actions.join(",")
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchRole {
    Fcf,
    Spf,
}

/// Disposition of a segment after its matching entry's actions ran.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    EmitOn(u32, Segment),
    Dropped,
    SentToController(Segment),
}

#[derive(Debug, Clone)]
pub struct SwitchNode {
    pub name: String,
    pub role: SwitchRole,
    pub table: Vec<FlowEntry>,
    next_seqno: u64,
}

impl SwitchNode {
    pub fn new(name: impl Into<String>, role: SwitchRole) -> SwitchNode {
        SwitchNode {
            name: name.into(),
            role,
            table: Vec::new(),
            next_seqno: 0,
        }
    }

    /// Installs an entry. Duplicates are retained; on ties the earliest
    /// installed entry wins matches.
    pub fn install_entry(&mut self, mut entry: FlowEntry, now_us: u64) -> Result<(), DataplaneError> {
        if entry.actions.is_empty() {
            return Err(DataplaneError::EmptyActionList);
        }
        entry.install_time_us = now_us;
        entry.seqno = self.next_seqno;
        self.next_seqno += 1;
        self.table.push(entry);
        Ok(())
    }

    /// Removes every entry whose match fields pin the given tuple exactly.
    pub fn remove_entries_for(&mut self, m: &MatchFields) {
        self.table.retain(|e| e.match_fields != *m);
    }

    /// Highest priority wins, ties go to the earliest install. The winning
    /// entry's counters are charged one packet plus payload bytes.
    pub fn match_segment(&mut self, seg: &Segment, in_port: u32) -> Option<&FlowEntry> {
        let mut winner: Option<usize> = None;
        for (i, entry) in self.table.iter().enumerate() {
            if !entry.match_fields.matches(seg, in_port) {
                continue;
            }
            winner = Some(match winner {
                None => i,
                Some(w) => {
                    let wv = &self.table[w];
                    if entry.priority > wv.priority
                        || (entry.priority == wv.priority && entry.seqno < wv.seqno)
                    {
                        i
                    } else {
                        w
                    }
                }
            });
        }
        winner.map(|i| {
            let e = &mut self.table[i];
            e.n_packets += 1;
            e.n_bytes += seg.payload.len() as u64;
            &self.table[i]
        })
    }

    /// Table lookup plus action application. Table miss drops (fail closed).
    pub fn process_ingress(
        &mut self,
        seg: Segment,
        in_port: u32,
    ) -> Result<Outcome, DataplaneError> {
        let actions = match self.match_segment(&seg, in_port) {
            Some(entry) => entry.actions.clone(),
            None => return Ok(Outcome::Dropped),
        };
        apply_actions(seg, &actions)
    }

    /// Flow table in the ovs-ofctl dump presentation, lookup order.
    pub fn dump_flows(&self, now_us: u64) -> String {
        self.sorted()
            .iter()
            .map(|e| e.dump_line(now_us))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Dump restricted to the stable fields used by golden comparisons.
    pub fn dump_flows_normalized(&self) -> String {
        self.sorted()
            .iter()
            .map(|e| e.normalized_line())
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn sorted(&self) -> Vec<&FlowEntry> {
        let mut entries: Vec<&FlowEntry> = self.table.iter().collect();
        entries.sort_by(|a, b| b.priority.cmp(&a.priority).then(a.seqno.cmp(&b.seqno)));
        entries
    }
}

/// Applies an action list left to right; rewrites compose, the terminal
/// Drop/Output/ToController action decides the disposition.
pub fn apply_actions(mut seg: Segment, actions: &[FlowAction]) -> Result<Outcome, DataplaneError> {
    enum Terminal {
        Drop,
        Output(u32),
        Controller,
    }
    let mut terminal: Option<Terminal> = None;
    for action in actions {
        match action {
            FlowAction::SetTcpSeqDiff(d) => {
                if !seg.is_tcp() {
                    return Err(DataplaneError::DiffOnNonTcp);
                }
                seg.seq = seq_add(seg.seq, *d);
            }
            FlowAction::SetTcpAckDiff(d) => {
                if !seg.is_tcp() {
                    return Err(DataplaneError::DiffOnNonTcp);
                }
                seg.ack = seq_add(seg.ack, *d);
            }
            FlowAction::RewriteDst(ip, mac) => {
                seg.dst_ip = *ip;
                seg.dst_mac = *mac;
            }
            FlowAction::Drop => terminal = Some(Terminal::Drop),
            FlowAction::Output(port) => terminal = Some(Terminal::Output(*port)),
            FlowAction::ToController => terminal = Some(Terminal::Controller),
        }
    }
    match terminal {
        Some(Terminal::Output(port)) => Ok(Outcome::EmitOn(port, seg)),
        Some(Terminal::Controller) => Ok(Outcome::SentToController(seg)),
        Some(Terminal::Drop) => Ok(Outcome::Dropped),
        None => Err(DataplaneError::NoDisposition),
    }
}
