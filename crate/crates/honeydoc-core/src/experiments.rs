//! The four canned experiments: classification sensibility, SSH handover,
//! first-PSH latency sweep and attack-data reduction.
//!
//! Every report is computed from the run trace alone so stored traces can
//! be re-evaluated offline.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataplane::{SwitchNode, SwitchRole};
use crate::model::Proto;
use crate::orchestrator::Mechanism;
use crate::rules::{parse_ruleset, translate_rules};
use crate::scenario::{Scenario, ScenarioError};
use crate::simnet::{AttackerConnSpec, AttackerConnState, World};
use crate::trace::{packets_per_bin, parse_trace};
use crate::validate::validate_handover;

/// Bundled scenarios; also installed under `scenarios/` in the repository.
pub const FIG8_SCN: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/fig8.scn"));
pub const SENSIBILITY_SCN: &str = include_str!(concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../../scenarios/sensibility.scn"
));
pub const LATENCY_SCN: &str = include_str!(concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../../scenarios/latency.scn"
));

/// The allowlisted service ports and their observed hit counts, used both
/// as the reduction ruleset and as the traffic generator weights.
pub const ALLOWLIST_PORTS: [u16; 9] = [21, 42, 135, 445, 1433, 5060, 40950, 42737, 53360];
pub const ALLOWLIST_WEIGHTS: [u64; 9] = [115, 28, 12, 2, 2, 7, 1, 1, 1];

// ---------------------------------------------------------------------------
// sensibility
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    pub port: u16,
    pub delivered: bool,
}

#[derive(Debug, Clone)]
pub struct SensibilityReport {
    /// Normalized dump of the FCF table produced by rule translation alone.
    pub dump: String,
    /// One probe per scripted connection: did the service answer?
    pub probes: Vec<ProbeOutcome>,
}

/// Translates the sensibility ruleset, dumps the resulting classifier
/// table, then runs one probe connection per port and reports whether each
/// was delivered (service answered) or denied.
pub fn exp_sensibility() -> Result<SensibilityReport, ScenarioError> {
    let scn = Scenario::parse(SENSIBILITY_SCN)?;
    let rules = parse_ruleset(&scn.rules_text)?;
    let translated = translate_rules(&rules);
    let mut fcf = SwitchNode::new("fcf", SwitchRole::Fcf);
    for entry in translated.dataplane_entries {
        fcf.install_entry(entry, 0).expect("translated entries are well-formed");
    }
    let dump = fcf.dump_flows_normalized();

    let mut world = scn.build()?;
    world.run(None);
    let probes = scn
        .conns
        .iter()
        .zip(world.attacker_conn_states())
        .map(|(spec, state)| ProbeOutcome {
            port: spec.dst_port,
            delivered: state == AttackerConnState::Established,
        })
        .collect();
    Ok(SensibilityReport { dump, probes })
}

// ---------------------------------------------------------------------------
// handover
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct HandoverOutcome {
    pub trace_text: String,
    /// `Err` carries the first violated assertion.
    pub verdict: Result<(), String>,
}

/// Runs the SSH redirection scenario under the given mechanism and checks
/// the trace against the expected handover pattern (43-byte client banner,
/// retransmissions only during migration, single backend delivery).
pub fn exp_handover(mechanism: Mechanism, seed: u64) -> Result<HandoverOutcome, ScenarioError> {
    let mut scn = Scenario::parse(FIG8_SCN)?;
    scn.mechanism = mechanism;
    scn.seed = seed;
    if mechanism == Mechanism::M1 {
        // no frontend VM under mechanism 1: the controller answers itself
        let frontend = scn.frontend.take().expect("bundled scenario names a frontend");
        scn.decoys.retain(|d| d.name != frontend);
    }
    let mut world = scn.build()?;
    world.run(None);
    let trace_text = world.trace.to_text();
    let events = parse_trace(&trace_text).expect("own trace is parseable");
    let verdict = validate_handover(&events, mechanism, "attacker~fcf", "hih0", 43);
    Ok(HandoverOutcome { trace_text, verdict })
}

// ---------------------------------------------------------------------------
// latency
// ---------------------------------------------------------------------------

pub const LATENCY_MECHANISMS: [Mechanism; 3] = [Mechanism::Direct, Mechanism::M1, Mechanism::M2];

#[derive(Debug, Clone)]
pub struct LatencyRow {
    pub mechanism: Mechanism,
    pub conn_id: usize,
    pub latency_us: u64,
}

#[derive(Debug, Clone, Default)]
pub struct LatencyReport {
    pub rows: Vec<LatencyRow>,
    /// Frames per 100 ms bin at the FCF, per mechanism.
    pub histograms: Vec<(Mechanism, Vec<(u64, usize)>)>,
}

fn mechanism_label(m: Mechanism) -> &'static str {
    match m {
        Mechanism::Direct => "direct",
        Mechanism::M1 => "m1",
        Mechanism::M2 => "m2",
    }
}

impl LatencyReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("mechanism,conn_id,latency_ms\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{:.3}\n",
                mechanism_label(row.mechanism),
                row.conn_id,
                row.latency_us as f64 / 1000.0
            ));
        }
        out
    }

    fn latencies(&self, m: Mechanism) -> Vec<u64> {
        let mut v: Vec<u64> = self
            .rows
            .iter()
            .filter(|r| r.mechanism == m)
            .map(|r| r.latency_us)
            .collect();
        v.sort_unstable();
        v
    }

    pub fn mean_us(&self, m: Mechanism) -> f64 {
        let v = self.latencies(m);
        assert!(!v.is_empty(), "no rows for {m:?}");
        v.iter().sum::<u64>() as f64 / v.len() as f64
    }

    pub fn percentile_us(&self, m: Mechanism, p: f64) -> u64 {
        let v = self.latencies(m);
        assert!(!v.is_empty(), "no rows for {m:?}");
        let idx = ((v.len() as f64 - 1.0) * p).round() as usize;
        v[idx]
    }

    pub fn summary(&self) -> String {
        let mut out = String::from("mechanism,mean_ms,p50_ms,p95_ms\n");
        for m in LATENCY_MECHANISMS {
            if self.rows.iter().all(|r| r.mechanism != m) {
                continue;
            }
            out.push_str(&format!(
                "{},{:.3},{:.3},{:.3}\n",
                mechanism_label(m),
                self.mean_us(m) / 1000.0,
                self.percentile_us(m, 0.50) as f64 / 1000.0,
                self.percentile_us(m, 0.95) as f64 / 1000.0,
            ));
        }
        out
    }
}

/// Closed-form first-PSH latency for one connection on the three-link
/// attacker → FCF → SPF → decoy path, measured from the client's send of
/// the SYN to the first payload byte arriving at the decoy interface.
///
/// Every controller round trip costs one channel traversal per direction
/// plus one processing delay; classification adds its own delay once.
pub fn first_psh_latency_us(t: &crate::orchestrator::TimingConfig, m: Mechanism) -> u64 {
    let l = t.link_latency_us;
    let ch = t.controller_channel_us;
    let pr = t.controller_processing_us;
    let cd = t.classify_delay_us;
    match m {
        // SYN out (3 links), SYN/ACK back (3), payload out (3)
        Mechanism::Direct => 9 * l,
        // handshake answered by the controller, then replay + tap + release
        Mechanism::M1 => 7 * l + 6 * ch + 3 * pr + cd,
        // as mechanism 1 plus the relayed frontend handshake round trip
        Mechanism::M2 => 9 * l + 8 * ch + 4 * pr + cd,
    }
}

/// The extra first-PSH latency mechanism 1 pays over the direct baseline.
pub fn controller_path_overhead_us(t: &crate::orchestrator::TimingConfig) -> u64 {
    first_psh_latency_us(t, Mechanism::M1) - first_psh_latency_us(t, Mechanism::Direct)
}

fn latency_scenario(mechanism: Mechanism, n: usize, rate_per_s: u64, seed: u64) -> String {
    assert!(n >= 1 && n <= 20_000, "connection count out of range");
    assert!(rate_per_s >= 1);
    let mut text = String::new();
    text.push_str("[general]\nname = latency-sweep\n");
    text.push_str(&format!("mechanism = {}\n", mechanism_label(mechanism)));
    text.push_str(&format!("seed = {seed}\n"));
    if mechanism == Mechanism::M2 {
        text.push_str("frontend = lih0\n");
    }
    text.push_str("\n[rules]\n");
    if mechanism != Mechanism::Direct {
        let class = if mechanism == Mechanism::M1 { "MIH" } else { "HIH" };
        text.push_str(&format!(
            "alert tcp any any -> any 25 (msg:\"{class}\"; sid:1000003; priority:2;)\n"
        ));
        text.push_str("alert tcp any any -> any any (msg:\"DROP\"; sid:1000008; priority:0;)\n");
    }
    text.push_str("\n[decoys]\n");
    if mechanism == Mechanism::M2 {
        text.push_str(
            "decoy name=lih0 class=lih ip=10.1.1.2 mac=02:00:00:00:01:01 ports=25 scripts=25:smtp-postfix\n",
        );
        text.push_str(
            "decoy name=hih0 class=hih ip=10.1.1.2 mac=02:00:00:00:01:01 ports=25 scripts=25:smtp-postfix behind_spf\n",
        );
    } else {
        text.push_str(
            "decoy name=mih0 class=mih ip=10.1.1.2 mac=02:00:00:00:01:01 ports=25 scripts=25:smtp-postfix behind_spf\n",
        );
    }
    text.push_str("\n[attacker]\n");
    for i in 0..n {
        text.push_str(&format!(
            "conn start_ms={} src_port={} dst=10.1.1.2:25 script=smtp-client\n",
            i as u64 * 1000 / rate_per_s,
            36093 + i as u16,
        ));
    }
    text
}

/// Runs `n` scripted SMTP connections at `rate_per_s` under each mechanism
/// and records the first-PSH latency: the time from the client starting
/// the connection to the first payload byte arriving at the target decoy.
pub fn exp_latency(n: usize, rate_per_s: u64, seed: u64) -> Result<LatencyReport, ScenarioError> {
    let mut report = LatencyReport::default();
    for mechanism in LATENCY_MECHANISMS {
        let scn = Scenario::parse(&latency_scenario(mechanism, n, rate_per_s, seed))?;
        let mut world = scn.build()?;
        world.run(None);

        // first payload delivery at any decoy interface, keyed by the
        // connection's source port
        let mut first_psh: BTreeMap<u16, u64> = BTreeMap::new();
        for (ev, seg, _link, receiver, _rs, _ra) in world.trace.frames() {
            if seg.payload.is_empty() || receiver == "attacker" || receiver.starts_with("fcf") {
                continue;
            }
            if world.decoy(receiver).is_some() && seg.src_ip == scn.attacker_ip {
                first_psh.entry(seg.src_port).or_insert(ev.time_us);
            }
        }
        for (i, spec) in scn.conns.iter().enumerate() {
            let at = *first_psh
                .get(&spec.src_port)
                .unwrap_or_else(|| panic!("conn {i} under {mechanism:?} never delivered"));
            report.rows.push(LatencyRow {
                mechanism,
                conn_id: i,
                latency_us: at - spec.start_us,
            });
        }
        let events = parse_trace(&world.trace.to_text()).expect("own trace is parseable");
        report
            .histograms
            .push((mechanism, packets_per_bin(&events, "fcf", 100)));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// data reduction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct ReductionReport {
    /// Destination ports generated, per port.
    pub generated: BTreeMap<u16, usize>,
    /// Connections reaching a decoy with no filtering installed.
    pub before: BTreeMap<u16, usize>,
    /// Connections reaching a decoy under the allowlist ruleset.
    pub after: BTreeMap<u16, usize>,
}

impl ReductionReport {
    /// Deliveries on ports outside the allowlist after filtering.
    pub fn offlist_after(&self) -> usize {
        self.after
            .iter()
            .filter(|(p, _)| !ALLOWLIST_PORTS.contains(p))
            .map(|(_, n)| n)
            .sum()
    }

    pub fn table(&self) -> String {
        let mut ports: BTreeSet<u16> = self.generated.keys().copied().collect();
        ports.extend(self.before.keys());
        ports.extend(self.after.keys());
        let mut out = String::from("port,generated,delivered_before,delivered_after\n");
        for p in ports {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p,
                self.generated.get(&p).copied().unwrap_or(0),
                self.before.get(&p).copied().unwrap_or(0),
                self.after.get(&p).copied().unwrap_or(0),
            ));
        }
        out
    }
}

/// Destination ports for a synthetic attack trace: with probability
/// `offlist_frac` a uniform port outside the allowlist, otherwise an
/// allowlisted port sampled by the observed hit-count weights.
pub fn generate_attack_ports(n: usize, offlist_frac: f64, seed: u64) -> Vec<u16> {
    assert!((0.0..=1.0).contains(&offlist_frac));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7265647563650000);
    let total: u64 = ALLOWLIST_WEIGHTS.iter().sum();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let coin = rng.next_u32() as f64 / u32::MAX as f64;
        if coin < offlist_frac {
            loop {
                let p = (rng.next_u32() % 65535 + 1) as u16;
                if !ALLOWLIST_PORTS.contains(&p) {
                    out.push(p);
                    break;
                }
            }
        } else {
            let mut r = rng.next_u64() % total;
            for (port, w) in ALLOWLIST_PORTS.iter().zip(ALLOWLIST_WEIGHTS) {
                if r < w {
                    out.push(*port);
                    break;
                }
                r -= w;
            }
        }
    }
    out
}

fn reduction_conns(ports: &[u16]) -> Vec<AttackerConnSpec> {
    assert!(ports.len() <= 40_000, "source port space exhausted");
    ports
        .iter()
        .enumerate()
        .map(|(i, &port)| AttackerConnSpec {
            start_us: i as u64 * 1_000,
            src_port: 20_000 + i as u16,
            dst_ip: "10.1.1.2".parse().unwrap(),
            dst_port: port,
            dst_mac: crate::model::MacAddr([0; 6]), // resolved by the builder
            turns: vec![b"PING\r\n".to_vec()],
            isn: None,
        })
        .collect()
}

fn reduction_scenario(filtered: bool, seed: u64) -> String {
    let scripts: Vec<String> = ALLOWLIST_PORTS
        .iter()
        .map(|p| format!("{p}:distcc-listener"))
        .collect();
    let ports: Vec<String> = ALLOWLIST_PORTS.iter().map(|p| p.to_string()).collect();
    let mut text = format!(
        "[general]\nname = reduction\nmechanism = {}\nseed = {seed}\n\n[rules]\n",
        if filtered { "m1" } else { "direct" }
    );
    if filtered {
        for (i, p) in ALLOWLIST_PORTS.iter().enumerate() {
            text.push_str(&format!(
                "alert tcp any any -> any {p} (msg:\"MIH\"; sid:{}; priority:2;)\n",
                1_000_100 + i
            ));
        }
        text.push_str("alert tcp any any -> any any (msg:\"DROP\"; sid:1000199; priority:0;)\n");
    }
    text.push_str(&format!(
        "\n[decoys]\ndecoy name=mih0 class=mih ip=10.1.1.2 mac=02:00:00:00:01:01 ports={} scripts={}{}\n",
        ports.join(","),
        scripts.join(","),
        if filtered { " behind_spf" } else { "" },
    ));
    text
}

fn count_decoy_syns(world: &World, decoy: &str) -> BTreeMap<u16, usize> {
    let mut counts = BTreeMap::new();
    for (_ev, seg, _link, receiver, _rs, _ra) in world.trace.frames() {
        if receiver == decoy && seg.flags.contains(crate::model::TcpFlags::SYN) {
            *counts.entry(seg.dst_port).or_insert(0) += 1;
        }
    }
    counts
}

/// Generates a synthetic attack mix and replays it twice: once with every
/// port statically forwarded to a decoy (no filtering) and once under the
/// allowlist ruleset. Reports per-port decoy-delivered connection counts
/// for both runs.
pub fn exp_data_reduction(
    n: usize,
    offlist_frac: f64,
    seed: u64,
) -> Result<ReductionReport, ScenarioError> {
    let ports = generate_attack_ports(n, offlist_frac, seed);
    let mut report = ReductionReport::default();
    for &p in &ports {
        *report.generated.entry(p).or_insert(0) += 1;
    }
    let conns = reduction_conns(&ports);

    // unfiltered baseline: wildcard forwarding between the attacker port
    // and the decoy port, no controller
    let mut scn = Scenario::parse(&reduction_scenario(false, seed))?;
    scn.conns = conns.clone();
    let mut world = scn.build()?;
    let fcf = 0; // first switch added by the builder
    world.install_flow(
        fcf,
        crate::dataplane::FlowEntry::new(
            1,
            crate::dataplane::MatchFields {
                in_port: Some(1),
                proto: Some(Proto::Tcp),
                ..Default::default()
            },
            vec![crate::dataplane::FlowAction::Output(2)],
        ),
    );
    world.run(None);
    report.before = count_decoy_syns(&world, "mih0");

    // filtered run: allowlist rules in front of the mechanism-1 controller
    let mut scn = Scenario::parse(&reduction_scenario(true, seed))?;
    scn.conns = conns;
    let mut world = scn.build()?;
    world.run(None);
    report.after = count_decoy_syns(&world, "mih0");
    Ok(report)
}

// ---------------------------------------------------------------------------
// stealth sweep
// ---------------------------------------------------------------------------

/// One case of the stream-integrity sweep: a full dialogue of `turns`
/// request/response exchanges under forced attacker/frontend/backend ISNs.
/// Verifies that the attacker and backend application byte streams agree
/// and that the attacker link never leaks the backend identity or absolute
/// sequence numbers. Returns the first violation as an error.
pub fn check_isn_triple(
    mechanism: Mechanism,
    attacker_isn: u32,
    frontend_isn: u32,
    backend_isn: u32,
    turns: usize,
    seed: u64,
) -> Result<(), String> {
    use crate::decoy::{Decoy, DecoyClass, DecoyConfig};
    use crate::model::{FiveTuple, MacAddr};
    use crate::orchestrator::{Controller, ControllerTopo, DecoyPath, OutboundPolicy, TimingConfig};
    use crate::script::{builtin_scripts, Expect, ScriptTurn, ServiceScript};
    use crate::simnet::AttackerSpec;
    use crate::validate::check_fingerprint;

    assert!((1..=10).contains(&turns), "sweep dialogues are 1..=10 turns");
    const SERVICE_PORT: u16 = 4242;
    const SRC_PORT: u16 = 40_000;
    let decoy_ip: crate::model::Ipv4Addr = "10.1.1.2".parse().unwrap();
    let decoy_mac = MacAddr([2, 0, 0, 0, 1, 1]);
    let ctx = format!(
        "{mechanism:?} isns=({attacker_isn},{frontend_isn},{backend_isn}) turns={turns}"
    );

    let client_turns: Vec<Vec<u8>> =
        (0..turns).map(|i| format!("cmd-{i}\n").into_bytes()).collect();
    let expected_responses: Vec<u8> =
        (0..turns).flat_map(|i| format!("reply-{i}\r\n").into_bytes()).collect();
    let mut scripts = builtin_scripts();
    scripts.push(ServiceScript::new(
        "echo",
        (0..10)
            .map(|i| ScriptTurn {
                expect: Expect::Any,
                respond: format!("reply-{i}\r\n").into_bytes(),
                stage: None,
            })
            .collect(),
    ));
    let decoy_cfg = |name: &str, class: DecoyClass, switch_port: u32, behind_spf: bool| DecoyConfig {
        name: name.to_string(),
        class,
        ip: decoy_ip,
        mac: decoy_mac,
        switch_port,
        open_ports: [SERVICE_PORT].into_iter().collect(),
        service_scripts: [(SERVICE_PORT, "echo".to_string())].into_iter().collect(),
        response_delay_ms: 0,
        behind_spf,
        silent: false,
    };

    let spec = AttackerSpec {
        conns: vec![AttackerConnSpec {
            start_us: 0,
            src_port: SRC_PORT,
            dst_ip: decoy_ip,
            dst_port: SERVICE_PORT,
            dst_mac: decoy_mac,
            turns: client_turns.clone(),
            isn: Some(attacker_isn),
        }],
        ..AttackerSpec::default()
    };
    let mut world = World::new(TimingConfig::default(), spec, seed);
    let fcf = world.add_switch("fcf", SwitchRole::Fcf);
    let spf = world.add_switch("spf-be0", SwitchRole::Spf);
    world.attach_attacker(fcf, 1);
    world.connect_switches(fcf, 2, spf, 1);

    let backend_class = match mechanism {
        Mechanism::M1 => DecoyClass::Mih,
        _ => DecoyClass::Hih,
    };
    let backend = Decoy::new(decoy_cfg("be0", backend_class, 2, true), &scripts, seed)
        .expect("echo script registered");
    world.add_decoy(backend, spf, 2);
    let mut paths = vec![DecoyPath {
        name: "be0".to_string(),
        class: backend_class,
        ip: decoy_ip,
        mac: decoy_mac,
        fcf_port: 2,
        spf: Some(spf),
        open_ports: [SERVICE_PORT].into_iter().collect(),
    }];
    let mut frontend_name = None;
    if mechanism == Mechanism::M2 {
        let fe = Decoy::new(decoy_cfg("fe0", DecoyClass::Mih, 3, false), &scripts, seed)
            .expect("echo script registered");
        world.add_decoy(fe, fcf, 3);
        paths.push(DecoyPath {
            name: "fe0".to_string(),
            class: DecoyClass::Mih,
            ip: decoy_ip,
            mac: decoy_mac,
            fcf_port: 3,
            spf: None,
            open_ports: [SERVICE_PORT].into_iter().collect(),
        });
        frontend_name = Some("fe0".to_string());
    }

    let action = if mechanism == Mechanism::M1 { "MIH" } else { "HIH" };
    let rules = parse_ruleset(&format!(
        "alert tcp any any -> any {SERVICE_PORT} (msg:\"{action}\"; sid:100; priority:2;)\n"
    ))
    .expect("valid sweep rule");
    let topo = ControllerTopo {
        fcf,
        attacker_port: 1,
        spf_uplink_port: 1,
        spf_decoy_port: 2,
        decoys: paths,
    };
    let (mut ctrl, installs) = Controller::new(
        mechanism,
        topo,
        translate_rules(&rules),
        TimingConfig::default(),
        OutboundPolicy::default(),
        frontend_name,
        seed,
    )
    .map_err(|e| format!("{ctx}: {e}"))?;
    if mechanism == Mechanism::M1 {
        ctrl.force_next_isn(frontend_isn);
    } else {
        world.decoy_mut("fe0").unwrap().force_next_isn(frontend_isn);
    }
    world.decoy_mut("be0").unwrap().force_next_isn(backend_isn);
    world.set_controller(ctrl, installs);
    world.run(None);

    let stats = &world.attacker_conn_stats()[0];
    if !stats.completed {
        return Err(format!("dialogue incomplete: {ctx}"));
    }
    if stats.app_rx != expected_responses {
        return Err(format!("client received a corrupted stream: {ctx}"));
    }
    let tuple = FiveTuple {
        src_ip: "10.1.0.2".parse().unwrap(),
        src_port: SRC_PORT,
        dst_ip: decoy_ip,
        dst_port: SERVICE_PORT,
        proto: Proto::Tcp,
    };
    let backend = world.decoy("be0").unwrap();
    if backend.app_received(&tuple).unwrap_or_default() != client_turns.concat() {
        return Err(format!("backend received a corrupted stream: {ctx}"));
    }
    if backend.app_sent(&tuple).unwrap_or_default() != stats.app_rx {
        return Err(format!("backend sent bytes the client never saw: {ctx}"));
    }
    check_fingerprint(&world.trace, "attacker~fcf", decoy_ip, decoy_mac, 4096)
        .map_err(|e| format!("fingerprint violation: {e} ({ctx})"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_respects_the_offlist_fraction() {
        let ports = generate_attack_ports(2_000, 0.9, 1);
        let off = ports.iter().filter(|p| !ALLOWLIST_PORTS.contains(p)).count();
        assert!((1_600..=2_000).contains(&off), "off-list count {off}");
        let ports = generate_attack_ports(500, 0.0, 2);
        assert!(ports.iter().all(|p| ALLOWLIST_PORTS.contains(p)));
    }

    #[test]
    fn latency_scenarios_parse_for_all_mechanisms() {
        for m in LATENCY_MECHANISMS {
            let scn = Scenario::parse(&latency_scenario(m, 3, 10, 5)).unwrap();
            assert_eq!(scn.conns.len(), 3);
            assert_eq!(scn.conns[1].start_us, 100_000);
            scn.build().unwrap();
        }
    }

    #[test]
    fn sensibility_dump_matches_the_expected_translation() {
        let report = exp_sensibility().unwrap();
        assert_eq!(
            report.dump,
            "priority=2,tcp,tp_dst=21 actions=CONTROLLER:65535\n\
             priority=2,tcp,tp_dst=25 actions=CONTROLLER:65535\n\
             priority=0,tcp actions=drop"
        );
        let by_port: BTreeMap<u16, bool> =
            report.probes.iter().map(|p| (p.port, p.delivered)).collect();
        assert_eq!(by_port[&21], true);
        assert_eq!(by_port[&25], true);
        assert_eq!(by_port[&22], false);
    }
}
