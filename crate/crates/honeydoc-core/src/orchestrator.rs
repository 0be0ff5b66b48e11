//! The control plane: decision engine and redirection engine.
//!
//! The controller consumes PacketIn events, classifies the first payload
//! segment of each connection, and executes the two TCP migration
//! mechanisms. Mechanism 1 answers handshakes itself and replays every
//! accepted connection toward the chosen decoy; mechanism 2 lets a VM
//! frontend answer, observes its ISN through the switch tap, and migrates
//! only on redirect decisions.
//!
//! Sequence synchronization: the replayed SYN reuses the attacker's
//! original ISN, so the attacker's seq space is preserved end to end and
//! only two constants are needed per connection: `ack_diff = backend_isn -
//! frontend_isn` on the attacker->backend direction and `seq_diff =
//! -ack_diff` on the way back.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataplane::{FlowAction, FlowEntry, MatchFields};
use crate::decoy::DecoyClass;
use crate::model::{
    seq_add, seq_diff as isn_diff, FiveTuple, Ipv4Addr, MacAddr, Proto, Segment, TcpFlags,
};
use crate::rules::{classify, ClassificationRule, RuleAction, TranslationResult};
use crate::trace::TraceKind;

/// Flow-table priorities used by the controller, above any rule priority.
const PRIO_OUTBOUND_TAP: u32 = 50;
const PRIO_PIN: u32 = 100;
const PRIO_FRONTEND_DROP: u32 = 200;
const PRIO_SPF_TAP: u32 = 300;
const PRIO_SPF_REWRITE: u32 = 400;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("rule sid {sid} targets {class:?} but the scenario has no such decoy")]
    NoDecoyForClass { sid: u32, class: DecoyClass },
    #[error("mechanism 2 requires a frontend decoy")]
    MissingFrontend,
    #[error("frontend decoy {0:?} not found")]
    UnknownFrontend(String),
    #[error("replay target {0:?} must sit behind a seq/ack-rewriting forwarder")]
    TargetWithoutSpf(String),
    #[error("outbound redirect target {0:?} not found")]
    UnknownOutboundTarget(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    /// No controller: statically forwarded baseline.
    Direct,
    /// Controller acts as the connection frontend.
    M1,
    /// A VM decoy acts as the frontend.
    M2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingConfig {
    pub link_latency_us: u64,
    pub controller_channel_us: u64,
    pub controller_processing_us: u64,
    pub classify_delay_us: u64,
    pub handshake_timeout_us: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            link_latency_us: 1_000,
            controller_channel_us: 5_000,
            controller_processing_us: 2_000,
            classify_delay_us: 0,
            handshake_timeout_us: 3_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutboundDefault {
    Discard,
    Allow,
}

#[derive(Debug, Clone)]
pub struct OutboundPolicy {
    pub default: OutboundDefault,
    pub redirect_map: HashMap<(Ipv4Addr, u16), String>,
}

impl Default for OutboundPolicy {
    fn default() -> Self {
        OutboundPolicy {
            default: OutboundDefault::Discard,
            redirect_map: HashMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Drop,
    ForwardTo(String),
    RedirectTo(String),
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Decision::Drop => write!(f, "drop"),
            Decision::ForwardTo(d) => write!(f, "forward:{d}"),
            Decision::RedirectTo(d) => write!(f, "redirect:{d}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    P1Established,
    P2Migrating,
    P3Synchronized,
    Terminated,
}

impl Phase {
    fn rank(self) -> u8 {
        match self {
            Phase::P1Established => 1,
            Phase::P2Migrating => 2,
            Phase::P3Synchronized => 3,
            Phase::Terminated => 4,
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::P1Established => write!(f, "P1"),
            Phase::P2Migrating => write!(f, "P2"),
            Phase::P3Synchronized => write!(f, "P3"),
            Phase::Terminated => write!(f, "terminated"),
        }
    }
}

/// Per-connection migration state.
#[derive(Debug, Clone)]
pub struct ConnectionRecord {
    pub key: FiveTuple,
    pub phase: Phase,
    pub mechanism: Mechanism,
    pub attacker_isn: u32,
    pub frontend_isn: Option<u32>,
    pub backend_isn: Option<u32>,
    pub stored_payload: Option<Segment>,
    pub target: Option<String>,
    pub ack_diff: Option<i64>,
    pub seq_diff: Option<i64>,
    pub decision: Option<Decision>,
    attacker_mac: MacAddr,
    torn_down: bool,
}

/// How the controller reaches one decoy.
#[derive(Debug, Clone)]
pub struct DecoyPath {
    pub name: String,
    pub class: DecoyClass,
    pub ip: Ipv4Addr,
    pub mac: MacAddr,
    pub fcf_port: u32,
    /// Index of the rewriting switch in front of this decoy, if any.
    pub spf: Option<usize>,
    /// Ports the decoy (and mechanism 1's port simulation) answer on.
    pub open_ports: BTreeSet<u16>,
}

/// Controller's static view of the data plane.
#[derive(Debug, Clone)]
pub struct ControllerTopo {
    pub fcf: usize,
    pub attacker_port: u32,
    pub spf_uplink_port: u32,
    pub spf_decoy_port: u32,
    pub decoys: Vec<DecoyPath>,
}

impl ControllerTopo {
    fn decoy_by_name(&self, name: &str) -> Option<&DecoyPath> {
        self.decoys.iter().find(|d| d.name == name)
    }

    fn decoy_by_spf(&self, switch: usize) -> Option<&DecoyPath> {
        self.decoys.iter().find(|d| d.spf == Some(switch))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimerTag {
    pub conn: FiveTuple,
}

/// One controller reaction; the simulator adds channel latency on top of
/// the handler-provided delay.
#[derive(Debug, Clone)]
pub enum CtrlOutput {
    PacketOut {
        switch: usize,
        port: u32,
        seg: Segment,
        delay_us: u64,
    },
    FlowMod {
        switch: usize,
        entry: FlowEntry,
        delay_us: u64,
    },
    StartTimer {
        tag: TimerTag,
        after_us: u64,
    },
    Trace {
        kind: TraceKind,
        location: String,
        text: String,
    },
}

#[derive(Debug, Clone)]
struct OutboundRelay {
    /// Tuple as seen from the originating decoy: decoy -> original target.
    origin: FiveTuple,
    /// Link address of the originating decoy.
    origin_mac: MacAddr,
    /// Link address the decoy believes the external host has.
    external_mac: MacAddr,
    origin_port_on_fcf: u32,
    /// Where the traffic really goes.
    target: String,
}

/// Computes the per-direction synchronization constants: `ack_diff` is
/// applied to attacker->backend ACK fields, `seq_diff = -ack_diff` to
/// backend->attacker SEQ fields. Normalized to the smallest absolute
/// representative mod 2^32.
pub fn compute_diffs(frontend_isn: u32, backend_isn: u32) -> (i64, i64) {
    let mut ack_diff = isn_diff(backend_isn, frontend_isn);
    if ack_diff > (1 << 31) {
        ack_diff -= 1 << 32;
    } else if ack_diff < -(1 << 31) {
        ack_diff += 1 << 32;
    }
    (ack_diff, -ack_diff)
}

#[derive(Debug)]
pub struct Controller {
    pub mechanism: Mechanism,
    pub topo: ControllerTopo,
    pub rules: Vec<ClassificationRule>,
    pub conns: HashMap<FiveTuple, ConnectionRecord>,
    pub classify_counts: HashMap<FiveTuple, u32>,
    timing: TimingConfig,
    policy: OutboundPolicy,
    open_ports: BTreeSet<u16>,
    decoy_ips: HashSet<Ipv4Addr>,
    frontend: Option<String>,
    rng: ChaCha8Rng,
    isn_override: Option<u32>,
    rr_mih: usize,
    rr_hih: usize,
    outbound_relays: Vec<OutboundRelay>,
}

impl Controller {
    /// Builds the controller and the initial FCF entries (translated rules
    /// plus the decoy-port taps that surface decoy-originated traffic).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mechanism: Mechanism,
        topo: ControllerTopo,
        translation: TranslationResult,
        timing: TimingConfig,
        policy: OutboundPolicy,
        frontend: Option<String>,
        seed: u64,
    ) -> Result<(Controller, Vec<(usize, FlowEntry)>), ConfigError> {
        for rule in &translation.controller_rules {
            let class = match rule.action {
                RuleAction::Mih => Some(DecoyClass::Mih),
                RuleAction::Hih => Some(DecoyClass::Hih),
                RuleAction::Drop => None,
            };
            if let Some(class) = class {
                if !topo.decoys.iter().any(|d| d.class == class) {
                    return Err(ConfigError::NoDecoyForClass {
                        sid: rule.sid,
                        class,
                    });
                }
            }
        }
        let frontend = match mechanism {
            Mechanism::M2 => {
                let name = frontend.ok_or(ConfigError::MissingFrontend)?;
                if topo.decoy_by_name(&name).is_none() {
                    return Err(ConfigError::UnknownFrontend(name));
                }
                Some(name)
            }
            _ => None,
        };
        // Every decoy that can be picked as a replay target needs a
        // rewriting forwarder in front of it: all MIH/HIH under mechanism 1,
        // and the HIH redirect targets under mechanism 2 (the frontend keeps
        // its own connection and never needs one).
        for decoy in &topo.decoys {
            let needs_spf = match (mechanism, decoy.class) {
                (Mechanism::M1, DecoyClass::Mih | DecoyClass::Hih) => true,
                (Mechanism::M2, DecoyClass::Hih) => Some(&decoy.name) != frontend.as_ref(),
                _ => false,
            };
            if needs_spf && decoy.spf.is_none() {
                return Err(ConfigError::TargetWithoutSpf(decoy.name.clone()));
            }
        }
        for (dst, target) in &policy.redirect_map {
            if topo.decoy_by_name(target).is_none() {
                let _ = dst;
                return Err(ConfigError::UnknownOutboundTarget(target.clone()));
            }
        }

        let mut installs: Vec<(usize, FlowEntry)> = Vec::new();
        for entry in &translation.dataplane_entries {
            installs.push((topo.fcf, entry.clone()));
        }
        for decoy in &topo.decoys {
            // tap: anything a decoy originates that no pin matches goes to
            // the controller (replay-era handshakes, outbound traffic)
            installs.push((
                topo.fcf,
                FlowEntry::new(
                    PRIO_OUTBOUND_TAP,
                    MatchFields {
                        in_port: Some(decoy.fcf_port),
                        ..Default::default()
                    },
                    vec![FlowAction::ToController],
                ),
            ));
            if let Some(spf) = decoy.spf {
                installs.push((
                    spf,
                    FlowEntry::new(
                        PRIO_SPF_TAP,
                        MatchFields {
                            in_port: Some(topo.spf_decoy_port),
                            ..Default::default()
                        },
                        vec![FlowAction::ToController],
                    ),
                ));
            }
        }

        let open_ports: BTreeSet<u16> = topo
            .decoys
            .iter()
            .flat_map(|d| d.open_ports.iter().copied())
            .collect();
        let decoy_ips = topo.decoys.iter().map(|d| d.ip).collect();
        Ok((
            Controller {
                mechanism,
                rules: translation.controller_rules,
                conns: HashMap::new(),
                classify_counts: HashMap::new(),
                timing,
                policy,
                open_ports,
                decoy_ips,
                frontend,
                rng: ChaCha8Rng::seed_from_u64(seed ^ 0x436f6e74726f6c),
                isn_override: None,
                rr_mih: 0,
                rr_hih: 0,
                outbound_relays: Vec::new(),
                topo,
            },
            installs,
        ))
    }

    /// Test hook: the next controller-chosen ISN (mechanism 1 frontends)
    /// takes this value instead of a random one.
    pub fn force_next_isn(&mut self, isn: u32) {
        self.isn_override = Some(isn);
    }

    pub fn connection(&self, key: &FiveTuple) -> Option<&ConnectionRecord> {
        self.conns.get(key)
    }

    pub fn classify_count(&self, key: &FiveTuple) -> u32 {
        self.classify_counts.get(key).copied().unwrap_or(0)
    }

    /// Entry point for every PacketIn the simulator delivers.
    pub fn handle_packet_in(&mut self, switch: usize, in_port: u32, seg: Segment) -> Vec<CtrlOutput> {
        let mut out = Vec::new();
        if switch != self.topo.fcf {
            self.on_spf_frame(switch, seg, &mut out);
            return out;
        }
        if in_port == self.topo.attacker_port {
            match self.mechanism {
                Mechanism::M1 => self.m1_on_attacker_frame(seg, &mut out),
                Mechanism::M2 => self.m2_on_attacker_frame(seg, &mut out),
                Mechanism::Direct => {}
            }
            return out;
        }
        // a decoy-facing FCF port: frontend traffic of a tracked connection,
        // a masquerade leg, or fresh decoy-originated outbound traffic
        let rev = seg.five_tuple().reversed();
        if self.conns.contains_key(&rev) {
            self.on_frontend_frame(seg, &mut out);
        } else if !self.try_relay_return(&seg, &mut out) {
            self.on_outbound(in_port, seg, &mut out);
        }
        out
    }

    pub fn handle_timer(&mut self, tag: TimerTag) -> Vec<CtrlOutput> {
        let mut out = Vec::new();
        let timed_out = matches!(
            self.conns.get(&tag.conn),
            Some(c) if c.phase == Phase::P2Migrating && c.backend_isn.is_none()
        );
        if timed_out {
            self.trace(
                &mut out,
                TraceKind::ConnTerminated,
                format!("conn {} handshake timeout during migration", tag.conn),
            );
            self.set_phase(tag.conn, Phase::Terminated, &mut out);
        }
        out
    }

    fn m1_on_attacker_frame(&mut self, seg: Segment, out: &mut Vec<CtrlOutput>) {
        let key = seg.five_tuple();
        let pr = self.timing.controller_processing_us;
        if seg.flags.contains(TcpFlags::SYN) && !seg.flags.contains(TcpFlags::ACK) {
            if let Some(conn) = self.conns.get(&key) {
                // retransmitted SYN: repeat the handshake answer
                if conn.phase == Phase::P1Established {
                    if let Some(fisn) = conn.frontend_isn {
                        let synack = reply_to(&seg, TcpFlags::SYN | TcpFlags::ACK, fisn, seq_add(seg.seq, 1));
                        out.push(CtrlOutput::PacketOut {
                            switch: self.topo.fcf,
                            port: self.topo.attacker_port,
                            seg: synack,
                            delay_us: pr,
                        });
                    }
                }
                return;
            }
            if !self.open_ports.contains(&key.dst_port) {
                // no service advertises this port; stay silent
                self.trace(
                    out,
                    TraceKind::Decision,
                    format!("conn {key} closed port, SYN dropped"),
                );
                return;
            }
            let fisn = self.next_isn();
            let synack = reply_to(&seg, TcpFlags::SYN | TcpFlags::ACK, fisn, seq_add(seg.seq, 1));
            out.push(CtrlOutput::PacketOut {
                switch: self.topo.fcf,
                port: self.topo.attacker_port,
                seg: synack,
                delay_us: pr,
            });
            self.conns.insert(key, ConnectionRecord {
                key,
                phase: Phase::P1Established,
                mechanism: Mechanism::M1,
                attacker_isn: seg.seq,
                frontend_isn: Some(fisn),
                backend_isn: None,
                stored_payload: None,
                target: None,
                ack_diff: None,
                seq_diff: None,
                decision: None,
                attacker_mac: seg.src_mac,
                torn_down: false,
            });
            self.trace(out, TraceKind::Decision, format!("conn {key} phase=P1"));
            return;
        }
        let Some(conn) = self.conns.get(&key) else {
            return;
        };
        match conn.phase {
            Phase::P1Established => {
                if !seg.payload.is_empty() {
                    self.on_first_payload(key, seg, out);
                } else if seg.flags.contains(TcpFlags::FIN) {
                    let fisn = conn.frontend_isn.unwrap_or(0);
                    let finack = reply_to(
                        &seg,
                        TcpFlags::FIN | TcpFlags::ACK,
                        seq_add(fisn, 1),
                        seq_add(seg.seq, 1),
                    );
                    out.push(CtrlOutput::PacketOut {
                        switch: self.topo.fcf,
                        port: self.topo.attacker_port,
                        seg: finack,
                        delay_us: pr,
                    });
                    self.set_phase(key, Phase::Terminated, out);
                } else if seg.flags.contains(TcpFlags::RST) {
                    self.set_phase(key, Phase::Terminated, out);
                }
                // bare handshake ACKs need no answer
            }
            // P2: retransmissions are absorbed while the backend syncs up;
            // P3: pins handle the data path, stray frames are stale
            _ => {}
        }
    }

    fn m2_on_attacker_frame(&mut self, seg: Segment, out: &mut Vec<CtrlOutput>) {
        let pr = self.timing.controller_processing_us;
        let key = seg.five_tuple();
        let front = self
            .topo
            .decoy_by_name(self.frontend.as_deref().expect("m2 has a frontend"))
            .expect("validated at build")
            .clone();
        if seg.flags.contains(TcpFlags::SYN) && !seg.flags.contains(TcpFlags::ACK) {
            if !self.conns.contains_key(&key) {
                self.conns.insert(key, ConnectionRecord {
                    key,
                    phase: Phase::P1Established,
                    mechanism: Mechanism::M2,
                    attacker_isn: seg.seq,
                    frontend_isn: None,
                    backend_isn: None,
                    stored_payload: None,
                    target: None,
                    ack_diff: None,
                    seq_diff: None,
                    decision: None,
                    attacker_mac: seg.src_mac,
                    torn_down: false,
                });
                self.trace(out, TraceKind::Decision, format!("conn {key} phase=P1"));
            }
            // relay toward the frontend (duplicates included: the frontend
            // answers duplicate SYNs itself)
            out.push(CtrlOutput::PacketOut {
                switch: self.topo.fcf,
                port: front.fcf_port,
                seg,
                delay_us: pr,
            });
            return;
        }
        let Some(conn) = self.conns.get(&key) else {
            return;
        };
        match conn.phase {
            Phase::P1Established => {
                if seg.payload.is_empty() {
                    let is_rst = seg.flags.contains(TcpFlags::RST);
                    out.push(CtrlOutput::PacketOut {
                        switch: self.topo.fcf,
                        port: front.fcf_port,
                        seg,
                        delay_us: pr,
                    });
                    if is_rst {
                        self.set_phase(key, Phase::Terminated, out);
                    }
                } else {
                    self.on_first_payload(key, seg, out);
                }
            }
            _ => {}
        }
    }

    /// First payload of a connection: classify once, decide, and either
    /// tear down, hand over to the frontend, or start the migration.
    fn on_first_payload(&mut self, key: FiveTuple, seg: Segment, out: &mut Vec<CtrlOutput>) {
        let alert = classify(&seg, &self.rules);
        *self.classify_counts.entry(key).or_insert(0) += 1;
        let delay = self.timing.controller_processing_us + self.timing.classify_delay_us;
        match &alert {
            Some(a) => self.trace(
                out,
                TraceKind::Alert,
                format!(
                    "conn {key} sid={} action={} rule_priority={}",
                    a.sid, a.action, a.matched_rule_priority
                ),
            ),
            None => self.trace(out, TraceKind::Alert, format!("conn {key} no-match action=DROP")),
        }
        let decision = match alert.map(|a| a.action) {
            None | Some(RuleAction::Drop) => Decision::Drop,
            Some(RuleAction::Mih) => match self.mechanism {
                // the frontend is the medium-interaction service: keep it
                Mechanism::M2 => Decision::ForwardTo(self.frontend.clone().expect("m2 frontend")),
                _ => match self.select_target(DecoyClass::Mih) {
                    Some(t) => Decision::ForwardTo(t),
                    None => Decision::Drop,
                },
            },
            Some(RuleAction::Hih) => match self.select_target(DecoyClass::Hih) {
                Some(t) => Decision::RedirectTo(t),
                None => Decision::Drop,
            },
        };
        self.trace(out, TraceKind::Decision, format!("conn {key} decision={decision}"));
        self.conns.get_mut(&key).expect("conn exists").decision = Some(decision.clone());
        match decision {
            Decision::Drop => {
                if self.mechanism == Mechanism::M2 {
                    self.teardown_frontend(key, delay, out);
                }
                self.set_phase(key, Phase::Terminated, out);
            }
            Decision::ForwardTo(t)
                if self.mechanism == Mechanism::M2 && Some(&t) == self.frontend.as_ref() =>
            {
                // no migration: pin the connection onto the frontend and
                // release the held payload
                let front = self.topo.decoy_by_name(&t).expect("frontend exists").clone();
                for entry in pin_entries(&key, self.topo.attacker_port, front.fcf_port) {
                    out.push(CtrlOutput::FlowMod {
                        switch: self.topo.fcf,
                        entry,
                        delay_us: delay,
                    });
                }
                out.push(CtrlOutput::PacketOut {
                    switch: self.topo.fcf,
                    port: front.fcf_port,
                    seg,
                    delay_us: delay,
                });
                self.set_phase(key, Phase::P3Synchronized, out);
            }
            Decision::ForwardTo(t) | Decision::RedirectTo(t) => {
                {
                    let conn = self.conns.get_mut(&key).expect("conn exists");
                    conn.stored_payload = Some(seg);
                    conn.target = Some(t.clone());
                }
                self.set_phase(key, Phase::P2Migrating, out);
                self.replay_handshake(key, &t, delay, out);
            }
        }
    }

    /// Opens the backend connection by replaying a SYN that reuses the
    /// attacker's original ISN, emitted directly on the target's access port
    /// so no table entry is needed yet.
    fn replay_handshake(&mut self, key: FiveTuple, target: &str, delay_us: u64, out: &mut Vec<CtrlOutput>) {
        let conn = self.conns.get(&key).expect("conn exists");
        let path = self.topo.decoy_by_name(target).expect("target exists").clone();
        let syn = Segment::make(
            conn.attacker_mac,
            path.mac,
            key.src_ip,
            key.dst_ip,
            Proto::Tcp,
            u64::from(key.src_port),
            u64::from(key.dst_port),
            TcpFlags::SYN,
            conn.attacker_isn,
            0,
            Vec::new(),
        )
        .expect("valid replay SYN");
        let (switch, port) = match path.spf {
            Some(spf) => (spf, self.topo.spf_decoy_port),
            None => (self.topo.fcf, path.fcf_port),
        };
        out.push(CtrlOutput::PacketOut {
            switch,
            port,
            seg: syn,
            delay_us,
        });
        out.push(CtrlOutput::StartTimer {
            tag: TimerTag { conn: key },
            after_us: delay_us + self.timing.handshake_timeout_us,
        });
        self.trace(
            out,
            TraceKind::Decision,
            format!("conn {key} replaying handshake toward {target}"),
        );
    }

    /// Frames the SPF tap lifts out: the backend's handshake answer during a
    /// migration, or the return leg of an outbound masquerade.
    fn on_spf_frame(&mut self, switch: usize, seg: Segment, out: &mut Vec<CtrlOutput>) {
        let Some(path) = self.topo.decoy_by_spf(switch).cloned() else {
            return;
        };
        let key = seg.five_tuple().reversed();
        let migrating = matches!(
            self.conns.get(&key),
            Some(c) if c.phase == Phase::P2Migrating && c.target.as_deref() == Some(path.name.as_str())
        );
        if !migrating {
            self.try_relay_return(&seg, out);
            return;
        }
        if seg.flags.contains(TcpFlags::RST) {
            self.trace(
                out,
                TraceKind::ConnTerminated,
                format!("conn {key} backend refused replayed handshake"),
            );
            self.set_phase(key, Phase::Terminated, out);
            return;
        }
        if !(seg.flags.contains(TcpFlags::SYN) && seg.flags.contains(TcpFlags::ACK)) {
            return;
        }
        let pr = self.timing.controller_processing_us;
        let backend_isn = seg.seq;
        let (attacker_isn, frontend_isn, stored) = {
            let conn = self.conns.get_mut(&key).expect("checked above");
            let fisn = conn.frontend_isn.expect("frontend ISN known before migration");
            let (ack_diff, seq_diff) = compute_diffs(fisn, backend_isn);
            conn.backend_isn = Some(backend_isn);
            conn.ack_diff = Some(ack_diff);
            conn.seq_diff = Some(seq_diff);
            (conn.attacker_isn, fisn, conn.stored_payload.take())
        };
        let (ack_diff, seq_diff) = compute_diffs(frontend_isn, backend_isn);
        // stateless per-direction rewrites at the SPF
        out.push(CtrlOutput::FlowMod {
            switch,
            entry: FlowEntry::new(
                PRIO_SPF_REWRITE,
                MatchFields::for_tuple(&key, Some(self.topo.spf_uplink_port)),
                vec![
                    FlowAction::SetTcpAckDiff(ack_diff),
                    FlowAction::Output(self.topo.spf_decoy_port),
                ],
            ),
            delay_us: pr,
        });
        out.push(CtrlOutput::FlowMod {
            switch,
            entry: FlowEntry::new(
                PRIO_SPF_REWRITE,
                MatchFields::for_tuple(&key.reversed(), Some(self.topo.spf_decoy_port)),
                vec![
                    FlowAction::SetTcpSeqDiff(seq_diff),
                    FlowAction::Output(self.topo.spf_uplink_port),
                ],
            ),
            delay_us: pr,
        });
        // five-tuple pins steering this connection onto the target's port
        for entry in pin_entries(&key, self.topo.attacker_port, path.fcf_port) {
            out.push(CtrlOutput::FlowMod {
                switch: self.topo.fcf,
                entry,
                delay_us: pr,
            });
        }
        // complete the backend handshake on the decoy's own port
        let final_ack = Segment::make(
            self.conns[&key].attacker_mac,
            path.mac,
            key.src_ip,
            key.dst_ip,
            Proto::Tcp,
            u64::from(key.src_port),
            u64::from(key.dst_port),
            TcpFlags::ACK,
            seq_add(attacker_isn, 1),
            seq_add(backend_isn, 1),
            Vec::new(),
        )
        .expect("valid final ACK");
        out.push(CtrlOutput::PacketOut {
            switch,
            port: self.topo.spf_decoy_port,
            seg: final_ack,
            delay_us: pr,
        });
        // the held payload re-enters at the FCF so the SPF applies its
        // freshly installed ack rewrite on the way in
        if let Some(payload) = stored {
            out.push(CtrlOutput::PacketOut {
                switch: self.topo.fcf,
                port: path.fcf_port,
                seg: payload,
                delay_us: pr,
            });
        }
        self.set_phase(key, Phase::P3Synchronized, out);
        if self.mechanism == Mechanism::M2 {
            self.teardown_frontend(key, pr, out);
        }
    }

    /// Mechanism 2: reset the superseded frontend connection, impersonating
    /// the attacker, and drop whatever the frontend still sends.
    fn teardown_frontend(&mut self, key: FiveTuple, delay_us: u64, out: &mut Vec<CtrlOutput>) {
        let front = self
            .topo
            .decoy_by_name(self.frontend.as_deref().expect("m2 has a frontend"))
            .expect("validated at build")
            .clone();
        let (attacker_mac, attacker_isn) = {
            let conn = self.conns.get_mut(&key).expect("conn exists");
            if conn.torn_down {
                return;
            }
            conn.torn_down = true;
            (conn.attacker_mac, conn.attacker_isn)
        };
        let rst = Segment::make(
            attacker_mac,
            front.mac,
            key.src_ip,
            key.dst_ip,
            Proto::Tcp,
            u64::from(key.src_port),
            u64::from(key.dst_port),
            TcpFlags::RST,
            seq_add(attacker_isn, 1),
            0,
            Vec::new(),
        )
        .expect("valid RST");
        out.push(CtrlOutput::PacketOut {
            switch: self.topo.fcf,
            port: front.fcf_port,
            seg: rst,
            delay_us,
        });
        out.push(CtrlOutput::FlowMod {
            switch: self.topo.fcf,
            entry: FlowEntry::new(
                PRIO_FRONTEND_DROP,
                MatchFields::for_tuple(&key.reversed(), Some(front.fcf_port)),
                vec![FlowAction::Drop],
            ),
            delay_us,
        });
        self.trace(
            out,
            TraceKind::ConnTerminated,
            format!("conn {key} frontend connection reset"),
        );
    }

    /// Mechanism 2 frames arriving from the frontend's FCF port for a
    /// tracked connection.
    fn on_frontend_frame(&mut self, seg: Segment, out: &mut Vec<CtrlOutput>) {
        let key = seg.five_tuple().reversed();
        let pr = self.timing.controller_processing_us;
        let Some(conn) = self.conns.get_mut(&key) else {
            return;
        };
        if conn.mechanism != Mechanism::M2 {
            return;
        }
        let forwarded_here = matches!(
            (&conn.decision, self.frontend.as_ref()),
            (Some(Decision::ForwardTo(t)), Some(f)) if t == f
        );
        match conn.phase {
            Phase::P1Established => {
                if seg.flags.contains(TcpFlags::SYN)
                    && seg.flags.contains(TcpFlags::ACK)
                    && conn.frontend_isn.is_none()
                {
                    conn.frontend_isn = Some(seg.seq);
                }
                let is_rst = seg.flags.contains(TcpFlags::RST);
                out.push(CtrlOutput::PacketOut {
                    switch: self.topo.fcf,
                    port: self.topo.attacker_port,
                    seg,
                    delay_us: pr,
                });
                if is_rst {
                    self.set_phase(key, Phase::Terminated, out);
                }
            }
            Phase::P3Synchronized if forwarded_here => {
                // normally handled by the pins; a race before install lands
                // here, relay it through
                out.push(CtrlOutput::PacketOut {
                    switch: self.topo.fcf,
                    port: self.topo.attacker_port,
                    seg,
                    delay_us: pr,
                });
            }
            // during and after migration the frontend is cut off
            _ => {}
        }
    }

    /// Decoy-originated traffic to a non-decoy address: apply the outbound
    /// containment policy.
    fn on_outbound(&mut self, in_port: u32, seg: Segment, out: &mut Vec<CtrlOutput>) {
        let tuple = seg.five_tuple();
        if !self.decoy_ips.contains(&tuple.src_ip) || self.decoy_ips.contains(&tuple.dst_ip) {
            return;
        }
        let pr = self.timing.controller_processing_us;
        if let Some(relay) = self
            .outbound_relays
            .iter()
            .find(|r| r.origin == tuple)
            .cloned()
        {
            self.relay_forward(&relay, seg, out);
            return;
        }
        if let Some(target) = self
            .policy
            .redirect_map
            .get(&(tuple.dst_ip, tuple.dst_port))
            .cloned()
        {
            self.trace(
                out,
                TraceKind::Decision,
                format!("outbound {tuple} redirected to {target}"),
            );
            let relay = OutboundRelay {
                origin: tuple,
                origin_mac: seg.src_mac,
                external_mac: seg.dst_mac,
                origin_port_on_fcf: in_port,
                target,
            };
            self.outbound_relays.push(relay.clone());
            self.relay_forward(&relay, seg, out);
            return;
        }
        match self.policy.default {
            OutboundDefault::Allow => {
                self.trace(out, TraceKind::Decision, format!("outbound {tuple} allowed"));
                out.push(CtrlOutput::PacketOut {
                    switch: self.topo.fcf,
                    port: self.topo.attacker_port,
                    seg,
                    delay_us: pr,
                });
            }
            OutboundDefault::Discard => {
                self.trace(out, TraceKind::Decision, format!("outbound {tuple} discarded"));
            }
        }
    }

    /// Masquerade forward leg: the decoy's frame, redirected onto the
    /// emulation target.
    fn relay_forward(&self, relay: &OutboundRelay, mut seg: Segment, out: &mut Vec<CtrlOutput>) {
        let target = self
            .topo
            .decoy_by_name(&relay.target)
            .expect("validated at build");
        seg.dst_ip = target.ip;
        seg.dst_mac = target.mac;
        let (switch, port) = match target.spf {
            Some(spf) => (spf, self.topo.spf_decoy_port),
            None => (self.topo.fcf, target.fcf_port),
        };
        out.push(CtrlOutput::PacketOut {
            switch,
            port,
            seg,
            delay_us: self.timing.controller_processing_us,
        });
    }

    /// Masquerade return leg: if this frame is an emulation target answering
    /// a redirected flow, restore the original external identity and hand it
    /// back to the originating decoy. Returns true when consumed.
    fn try_relay_return(&mut self, seg: &Segment, out: &mut Vec<CtrlOutput>) -> bool {
        let relay = self.outbound_relays.iter().find(|r| {
            self.topo.decoy_by_name(&r.target).is_some_and(|t| {
                seg.src_ip == t.ip
                    && seg.src_port == r.origin.dst_port
                    && seg.dst_ip == r.origin.src_ip
                    && seg.dst_port == r.origin.src_port
            })
        });
        let Some(relay) = relay.cloned() else {
            return false;
        };
        let mut back = seg.clone();
        back.src_ip = relay.origin.dst_ip;
        back.src_mac = relay.external_mac;
        back.dst_mac = relay.origin_mac;
        out.push(CtrlOutput::PacketOut {
            switch: self.topo.fcf,
            port: relay.origin_port_on_fcf,
            seg: back,
            delay_us: self.timing.controller_processing_us,
        });
        true
    }

    fn select_target(&mut self, class: DecoyClass) -> Option<String> {
        let names: Vec<&str> = self
            .topo
            .decoys
            .iter()
            .filter(|d| d.class == class)
            .map(|d| d.name.as_str())
            .collect();
        if names.is_empty() {
            return None;
        }
        let ctr = match class {
            DecoyClass::Mih => &mut self.rr_mih,
            _ => &mut self.rr_hih,
        };
        let pick = names[*ctr % names.len()].to_string();
        *ctr += 1;
        Some(pick)
    }

    fn next_isn(&mut self) -> u32 {
        self.isn_override.take().unwrap_or_else(|| self.rng.next_u32())
    }

    fn set_phase(&mut self, key: FiveTuple, phase: Phase, out: &mut Vec<CtrlOutput>) {
        if let Some(conn) = self.conns.get_mut(&key) {
            debug_assert!(phase.rank() >= conn.phase.rank(), "phase never goes back");
            if conn.phase != phase {
                conn.phase = phase;
                self.trace(out, TraceKind::Decision, format!("conn {key} phase={phase}"));
            }
        }
    }

    fn trace(&self, out: &mut Vec<CtrlOutput>, kind: TraceKind, text: String) {
        out.push(CtrlOutput::Trace {
            kind,
            location: "controller".to_string(),
            text,
        });
    }
}

/// The pair of FCF entries pinning one connection onto a decoy port.
fn pin_entries(key: &FiveTuple, attacker_port: u32, decoy_port: u32) -> [FlowEntry; 2] {
    [
        FlowEntry::new(
            PRIO_PIN,
            MatchFields::for_tuple(key, Some(attacker_port)),
            vec![FlowAction::Output(decoy_port)],
        ),
        FlowEntry::new(
            PRIO_PIN,
            MatchFields::for_tuple(&key.reversed(), Some(decoy_port)),
            vec![FlowAction::Output(attacker_port)],
        ),
    ]
}

/// Swap-direction reply reusing the incoming frame's addressing.
fn reply_to(seg: &Segment, flags: TcpFlags, seq: u32, ack: u32) -> Segment {
    Segment::make(
        seg.dst_mac,
        seg.src_mac,
        seg.dst_ip,
        seg.src_ip,
        Proto::Tcp,
        u64::from(seg.dst_port),
        u64::from(seg.src_port),
        flags,
        seq,
        ack,
        Vec::new(),
    )
    .expect("valid reply")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::RuleProto;

    fn mac(n: u8) -> MacAddr {
        MacAddr([2, 0, 0, 0, 0, n])
    }

    fn topo_one_mih() -> ControllerTopo {
        ControllerTopo {
            fcf: 0,
            attacker_port: 1,
            spf_uplink_port: 1,
            spf_decoy_port: 2,
            decoys: vec![DecoyPath {
                name: "mih0".to_string(),
                class: DecoyClass::Mih,
                ip: "10.1.1.2".parse().unwrap(),
                mac: mac(9),
                fcf_port: 2,
                spf: Some(1),
                open_ports: [25u16].into_iter().collect(),
            }],
        }
    }

    fn mih_rule(port: u16) -> ClassificationRule {
        ClassificationRule {
            proto: RuleProto::Tcp,
            src_ip: None,
            src_port: None,
            dst_ip: None,
            dst_port: Some(port),
            action: RuleAction::Mih,
            sid: 100,
            priority: 2,
            content: None,
        }
    }

    fn translation(rules: Vec<ClassificationRule>) -> TranslationResult {
        TranslationResult {
            dataplane_entries: Vec::new(),
            controller_rules: rules,
        }
    }

    fn attacker_syn(isn: u32) -> Segment {
        Segment::make(
            mac(1),
            mac(9),
            "10.1.0.2".parse().unwrap(),
            "10.1.1.2".parse().unwrap(),
            Proto::Tcp,
            36093,
            25,
            TcpFlags::SYN,
            isn,
            0,
            Vec::new(),
        )
        .unwrap()
    }

    fn m1_controller() -> Controller {
        Controller::new(
            Mechanism::M1,
            topo_one_mih(),
            translation(vec![mih_rule(25)]),
            TimingConfig::default(),
            OutboundPolicy::default(),
            None,
            7,
        )
        .unwrap()
        .0
    }

    #[test]
    fn compute_diffs_examples() {
        // worked example: frontend 1000, backend 5000
        assert_eq!(compute_diffs(1000, 5000), (4000, -4000));
        assert_eq!(compute_diffs(77, 77), (0, 0));
        // wraparound: frontend near the top of the space
        let (ack, seq) = compute_diffs(u32::MAX - 9, 5);
        assert_eq!(ack, 15);
        assert_eq!(seq, -15);
        // either way the modular effect matches the unnormalized subtraction
        assert_eq!(seq_add(u32::MAX - 9, ack), 5);
        assert_eq!(seq_add(5, seq), u32::MAX - 9);
    }

    proptest::proptest! {
        #[test]
        fn diffs_synchronize_any_isn_pair(fisn: u32, bisn: u32) {
            let (ack_diff, seq_diff) = compute_diffs(fisn, bisn);
            // attacker acks relative to the frontend ISN; after the rewrite
            // they must land relative to the backend ISN, and vice versa
            proptest::prop_assert_eq!(seq_add(seq_add(fisn, 1), ack_diff), seq_add(bisn, 1));
            proptest::prop_assert_eq!(seq_add(seq_add(bisn, 1), seq_diff), seq_add(fisn, 1));
            proptest::prop_assert_eq!(ack_diff, -seq_diff);
            proptest::prop_assert!(ack_diff.abs() <= 1 << 31);
        }
    }

    #[test]
    fn m1_syn_gets_synack_and_record() {
        let mut ctrl = m1_controller();
        ctrl.force_next_isn(9999);
        let syn = attacker_syn(1234);
        let out = ctrl.handle_packet_in(0, 1, syn.clone());
        let synack = out
            .iter()
            .find_map(|o| match o {
                CtrlOutput::PacketOut { switch: 0, port: 1, seg, .. } => Some(seg.clone()),
                _ => None,
            })
            .expect("SYN/ACK sent to attacker");
        assert_eq!(synack.flags, TcpFlags::SYN | TcpFlags::ACK);
        assert_eq!(synack.seq, 9999);
        assert_eq!(synack.ack, 1235);
        let conn = ctrl.connection(&syn.five_tuple()).unwrap();
        assert_eq!(conn.phase, Phase::P1Established);
        assert_eq!(conn.attacker_isn, 1234);
        assert_eq!(conn.frontend_isn, Some(9999));
    }

    #[test]
    fn m1_closed_port_syn_silently_dropped() {
        let mut ctrl = m1_controller();
        let mut syn = attacker_syn(1);
        syn.dst_port = 2222;
        let out = ctrl.handle_packet_in(0, 1, syn.clone());
        assert!(out
            .iter()
            .all(|o| !matches!(o, CtrlOutput::PacketOut { .. })));
        assert!(ctrl.connection(&syn.five_tuple()).is_none());
    }

    #[test]
    fn m1_full_migration_sequence() {
        let mut ctrl = m1_controller();
        ctrl.force_next_isn(5_000);
        let syn = attacker_syn(1_000);
        let key = syn.five_tuple();
        ctrl.handle_packet_in(0, 1, syn.clone());

        // handshake ACK needs no reply
        let mut ack = syn.clone();
        ack.flags = TcpFlags::ACK;
        ack.seq = 1_001;
        ack.ack = 5_001;
        let out = ctrl.handle_packet_in(0, 1, ack.clone());
        assert!(out.is_empty());

        // first payload: classify, store, replay toward the MIH
        let mut psh = ack.clone();
        psh.flags = TcpFlags::PSH | TcpFlags::ACK;
        psh.payload = b"HELO test\n".to_vec();
        let out = ctrl.handle_packet_in(0, 1, psh.clone());
        let replay = out
            .iter()
            .find_map(|o| match o {
                CtrlOutput::PacketOut { switch: 1, port: 2, seg, .. } => Some(seg.clone()),
                _ => None,
            })
            .expect("replayed SYN at the SPF decoy port");
        assert_eq!(replay.flags, TcpFlags::SYN);
        assert_eq!(replay.seq, 1_000, "attacker ISN is reused");
        assert!(out
            .iter()
            .any(|o| matches!(o, CtrlOutput::StartTimer { .. })));
        assert_eq!(ctrl.connection(&key).unwrap().phase, Phase::P2Migrating);
        assert_eq!(ctrl.classify_count(&key), 1);

        // retransmission while migrating is absorbed
        assert!(ctrl.handle_packet_in(0, 1, psh.clone()).is_empty());
        assert_eq!(ctrl.classify_count(&key), 1, "classification happens once");

        // backend SYN/ACK arrives through the SPF tap
        let backend_synack = Segment::make(
            mac(9),
            mac(1),
            "10.1.1.2".parse().unwrap(),
            "10.1.0.2".parse().unwrap(),
            Proto::Tcp,
            25,
            36093,
            TcpFlags::SYN | TcpFlags::ACK,
            8_000,
            1_001,
            Vec::new(),
        )
        .unwrap();
        let out = ctrl.handle_packet_in(1, 2, backend_synack);
        let flowmods: Vec<&FlowEntry> = out
            .iter()
            .filter_map(|o| match o {
                CtrlOutput::FlowMod { entry, .. } => Some(entry),
                _ => None,
            })
            .collect();
        assert_eq!(flowmods.len(), 4, "two rewrites, two pins");
        let ack_rewrites: Vec<i64> = flowmods
            .iter()
            .flat_map(|e| e.actions.iter())
            .filter_map(|a| match a {
                FlowAction::SetTcpAckDiff(d) => Some(*d),
                _ => None,
            })
            .collect();
        assert_eq!(ack_rewrites, vec![3_000], "backend 8000 - frontend 5000");
        let final_ack = out
            .iter()
            .find_map(|o| match o {
                CtrlOutput::PacketOut { switch: 1, port: 2, seg, .. }
                    if seg.flags == TcpFlags::ACK =>
                {
                    Some(seg.clone())
                }
                _ => None,
            })
            .expect("final handshake ACK");
        assert_eq!((final_ack.seq, final_ack.ack), (1_001, 8_001));
        let re_emitted = out
            .iter()
            .find_map(|o| match o {
                CtrlOutput::PacketOut { switch: 0, port: 2, seg, .. } => Some(seg.clone()),
                _ => None,
            })
            .expect("stored payload re-enters at the FCF");
        assert_eq!(re_emitted.payload, psh.payload);
        assert_eq!(re_emitted.ack, 5_001, "rewrite happens in the data plane");
        let conn = ctrl.connection(&key).unwrap();
        assert_eq!(conn.phase, Phase::P3Synchronized);
        assert_eq!(conn.backend_isn, Some(8_000));
        assert_eq!(conn.ack_diff, Some(3_000));
        assert_eq!(conn.seq_diff, Some(-3_000));
    }

    #[test]
    fn migration_timeout_terminates() {
        let mut ctrl = m1_controller();
        let syn = attacker_syn(50);
        let key = syn.five_tuple();
        ctrl.handle_packet_in(0, 1, syn.clone());
        let mut psh = syn;
        psh.flags = TcpFlags::PSH | TcpFlags::ACK;
        psh.seq = 51;
        psh.payload = vec![b'x'];
        ctrl.handle_packet_in(0, 1, psh);
        let out = ctrl.handle_timer(TimerTag { conn: key });
        assert!(out
            .iter()
            .any(|o| matches!(o, CtrlOutput::Trace { kind: TraceKind::ConnTerminated, .. })));
        assert_eq!(ctrl.connection(&key).unwrap().phase, Phase::Terminated);
        // once synchronized the timer is inert
        assert!(ctrl.handle_timer(TimerTag { conn: key }).is_empty());
    }

    #[test]
    fn unmatched_payload_fails_closed() {
        let mut ctrl = Controller::new(
            Mechanism::M1,
            topo_one_mih(),
            translation(vec![mih_rule(21)]), // rule covers a different port
            TimingConfig::default(),
            OutboundPolicy::default(),
            None,
            7,
        )
        .unwrap()
        .0;
        let syn = attacker_syn(10);
        let key = syn.five_tuple();
        ctrl.handle_packet_in(0, 1, syn.clone());
        let mut psh = syn;
        psh.flags = TcpFlags::PSH | TcpFlags::ACK;
        psh.payload = vec![b'x'];
        ctrl.handle_packet_in(0, 1, psh);
        assert_eq!(ctrl.connection(&key).unwrap().phase, Phase::Terminated);
    }

    #[test]
    fn config_validation_errors() {
        // a rule class without a decoy
        let err = Controller::new(
            Mechanism::M1,
            topo_one_mih(),
            translation(vec![ClassificationRule {
                action: RuleAction::Hih,
                ..mih_rule(22)
            }]),
            TimingConfig::default(),
            OutboundPolicy::default(),
            None,
            7,
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::NoDecoyForClass { .. }));

        // mechanism 2 without a frontend
        let err = Controller::new(
            Mechanism::M2,
            topo_one_mih(),
            translation(vec![]),
            TimingConfig::default(),
            OutboundPolicy::default(),
            None,
            7,
        )
        .unwrap_err();
        assert_eq!(err, ConfigError::MissingFrontend);

        // mechanism 1 replay target lacking a rewriting forwarder
        let mut topo = topo_one_mih();
        topo.decoys[0].spf = None;
        let err = Controller::new(
            Mechanism::M1,
            topo,
            translation(vec![]),
            TimingConfig::default(),
            OutboundPolicy::default(),
            None,
            7,
        )
        .unwrap_err();
        assert_eq!(err, ConfigError::TargetWithoutSpf("mih0".to_string()));
    }

    #[test]
    fn round_robin_target_selection() {
        let mut topo = topo_one_mih();
        let mut second = topo.decoys[0].clone();
        second.name = "mih1".to_string();
        second.fcf_port = 3;
        second.spf = Some(2);
        topo.decoys.push(second);
        let mut ctrl = Controller::new(
            Mechanism::M1,
            topo,
            translation(vec![]),
            TimingConfig::default(),
            OutboundPolicy::default(),
            None,
            7,
        )
        .unwrap()
        .0;
        assert_eq!(ctrl.select_target(DecoyClass::Mih).as_deref(), Some("mih0"));
        assert_eq!(ctrl.select_target(DecoyClass::Mih).as_deref(), Some("mih1"));
        assert_eq!(ctrl.select_target(DecoyClass::Mih).as_deref(), Some("mih0"));
        assert_eq!(ctrl.select_target(DecoyClass::Hih), None);
    }
}
