//! Deterministic packet-level honeynet orchestration.
//!
//! The crate models a camouflage-oriented honeynet: an SDN-style data plane
//! (flow-table switches with TCP seq/ack rewrite actions), a controller that
//! classifies attacker traffic against Snort-like rules and migrates live
//! TCP connections between decoys of different interaction levels, scripted
//! decoy services, and a discrete-event simulator that drives it all with
//! reproducible timing.

pub mod dataplane;
pub mod decoy;
pub mod experiments;
pub mod model;
pub mod orchestrator;
pub mod rules;
pub mod scenario;
pub mod script;
pub mod simnet;
pub mod trace;
pub mod validate;

pub use dataplane::{FlowAction, FlowEntry, MatchFields, Outcome, SwitchNode, SwitchRole};
pub use decoy::{ActivityLogEntry, Decoy, DecoyClass, DecoyConfig};
pub use model::{seq_add, seq_diff, FiveTuple, Ipv4Addr, MacAddr, Proto, Segment, TcpFlags};
pub use orchestrator::{
    compute_diffs, Controller, ControllerTopo, CtrlOutput, Decision, DecoyPath, Mechanism,
    OutboundDefault, OutboundPolicy, Phase, TimingConfig,
};
pub use rules::{classify, parse_rule, parse_ruleset, translate_rules, ClassificationRule};
pub use scenario::{Scenario, ScenarioError};
pub use script::{builtin_scripts, ServiceScript};
pub use simnet::{AttackerConnSpec, AttackerConnState, AttackerConnStats, AttackerSpec, World};
pub use trace::{parse_trace, RelSeqTracker, Trace, TraceEvent, TraceKind};
pub use validate::{check_fingerprint, validate_handover, validate_trace_text};
