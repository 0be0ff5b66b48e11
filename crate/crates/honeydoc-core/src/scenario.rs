//! Scenario files: a line-oriented description of one run — topology,
//! decoys, rules, attacker behavior, timing and outbound policy — plus the
//! builder that assembles the simulated world from it.
//!
//! Format: `[section]` headers group `key = value` lines (or raw rule
//! lines inside `[rules]`). The topology is always a star around one FCF:
//! the attacker on port 1, each decoy on its own port, and an SPF switch
//! auto-inserted in front of every `behind_spf` decoy.
//!
//! ```text
//! [general]
//! name = demo
//! mechanism = m1
//! seed = 42
//!
//! [rules]
//! alert tcp any any -> any 25 (msg:"MIH"; sid:100; priority:2;)
//!
//! [decoys]
//! decoy name=mih0 class=mih ip=10.1.1.2 mac=02:00:00:00:01:01 ports=25 scripts=25:smtp-postfix behind_spf
//!
//! [attacker]
//! conn start_ms=0 src_port=36093 dst=10.1.1.2:25 script=smtp-client
//! ```

use std::collections::BTreeMap;

use thiserror::Error;

use crate::dataplane::{FlowAction, FlowEntry, MatchFields, SwitchRole};
use crate::decoy::{Decoy, DecoyClass, DecoyConfig, DecoyError};
use crate::model::{parse_endpoint, Ipv4Addr, MacAddr, ModelError, Proto};
use crate::orchestrator::{
    ConfigError, Controller, ControllerTopo, DecoyPath, Mechanism, OutboundDefault,
    OutboundPolicy, TimingConfig,
};
use crate::rules::{parse_ruleset, translate_rules, RuleError};
use crate::script::builtin_scripts;
use crate::simnet::{AttackerConnSpec, AttackerSpec, World};

/// Priority of the static forwarding entries in the direct baseline.
const PRIO_STATIC: u32 = 10;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {what}")]
    Syntax { line: usize, what: String },
    #[error("missing required key {0:?}")]
    Missing(&'static str),
    #[error("unknown client script {0:?}")]
    UnknownClientScript(String),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Decoy(#[from] DecoyError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One scripted outbound attempt from a (notionally compromised) decoy.
#[derive(Debug, Clone)]
pub struct OutboundInjection {
    pub at_us: u64,
    pub decoy: String,
    pub src_port: u16,
    pub dst_ip: Ipv4Addr,
    pub dst_port: u16,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub mechanism: Mechanism,
    pub seed: u64,
    /// Mechanism 2's answering decoy.
    pub frontend: Option<String>,
    pub timing: TimingConfig,
    pub rto_initial_us: u64,
    pub max_retries: u32,
    pub rules_text: String,
    pub decoys: Vec<DecoyConfig>,
    pub attacker_ip: Ipv4Addr,
    pub attacker_mac: MacAddr,
    pub conns: Vec<AttackerConnSpec>,
    pub outbound: OutboundPolicy,
    pub injections: Vec<OutboundInjection>,
}

/// Client-side dialogue scripts the attacker model can play.
pub fn client_turns(name: &str) -> Option<Vec<Vec<u8>>> {
    let turns: Vec<&str> = match name {
        "smtp-client" => vec![
            "HELO test\n",
            "MAIL FROM: <test@test.test>\n",
            "RCPT TO: <root@localhost>\n",
            "DATA.\n",
            "test.\n",
        ],
        // the 43-byte client banner used by the handover experiment
        "ssh-client" => vec!["SSH-2.0-OpenSSH_6.6.1p1 Ubuntu-2ubuntu2.1\r\n"],
        "ftp-user" => vec!["USER anonymous\r\n"],
        "syn-only" => vec![],
        _ => return None,
    };
    Some(turns.into_iter().map(|t| t.as_bytes().to_vec()).collect())
}

/// key=value tokens plus bare flags, split on whitespace.
fn parse_tokens(line: &str) -> (BTreeMap<&str, &str>, Vec<&str>) {
    let mut kv = BTreeMap::new();
    let mut flags = Vec::new();
    for tok in line.split_whitespace() {
        match tok.split_once('=') {
            Some((k, v)) => {
                kv.insert(k, v);
            }
            None => flags.push(tok),
        }
    }
    (kv, flags)
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let syntax = |line: usize, what: &str| ScenarioError::Syntax {
            line,
            what: what.to_string(),
        };
        let mut section = String::new();
        let mut name = "scenario".to_string();
        let mut mechanism = None;
        let mut seed = None;
        let mut frontend = None;
        let mut timing = TimingConfig::default();
        let mut rto_initial_us = 200_000;
        let mut max_retries = 3;
        let mut rules_text = String::new();
        let mut decoys: Vec<DecoyConfig> = Vec::new();
        let mut attacker_ip: Ipv4Addr = "10.1.0.2".parse().unwrap();
        let mut attacker_mac = MacAddr([2, 0, 0, 0, 0, 0xaa]);
        let mut conns: Vec<AttackerConnSpec> = Vec::new();
        let mut outbound = OutboundPolicy::default();
        let mut injections = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].to_string();
                continue;
            }
            match section.as_str() {
                "general" => {
                    let (key, value) = line
                        .split_once('=')
                        .map(|(k, v)| (k.trim(), v.trim()))
                        .ok_or_else(|| syntax(lineno, "expected key = value"))?;
                    match key {
                        "name" => name = value.to_string(),
                        "mechanism" => {
                            mechanism = Some(match value {
                                "direct" => Mechanism::Direct,
                                "m1" => Mechanism::M1,
                                "m2" => Mechanism::M2,
                                _ => return Err(syntax(lineno, "mechanism is direct|m1|m2")),
                            })
                        }
                        "seed" => {
                            seed = Some(
                                value
                                    .parse()
                                    .map_err(|_| syntax(lineno, "seed must be an integer"))?,
                            )
                        }
                        "frontend" => frontend = Some(value.to_string()),
                        _ => return Err(syntax(lineno, "unknown [general] key")),
                    }
                }
                "timing" => {
                    let (key, value) = line
                        .split_once('=')
                        .map(|(k, v)| (k.trim(), v.trim()))
                        .ok_or_else(|| syntax(lineno, "expected key = value"))?;
                    let n: u64 = value
                        .parse()
                        .map_err(|_| syntax(lineno, "timing values are integers"))?;
                    match key {
                        "link_latency_ms" => timing.link_latency_us = n * 1_000,
                        "controller_channel_ms" => timing.controller_channel_us = n * 1_000,
                        "controller_processing_ms" => timing.controller_processing_us = n * 1_000,
                        "classify_delay_ms" => timing.classify_delay_us = n * 1_000,
                        "handshake_timeout_ms" => timing.handshake_timeout_us = n * 1_000,
                        "rto_initial_ms" => rto_initial_us = n * 1_000,
                        "max_retries" => max_retries = n as u32,
                        _ => return Err(syntax(lineno, "unknown [timing] key")),
                    }
                }
                "rules" => {
                    rules_text.push_str(raw);
                    rules_text.push('\n');
                }
                "decoys" => {
                    let rest = line
                        .strip_prefix("decoy")
                        .ok_or_else(|| syntax(lineno, "expected a `decoy ...` line"))?;
                    let (kv, flags) = parse_tokens(rest);
                    let get = |k: &str| {
                        kv.get(k)
                            .copied()
                            .ok_or_else(|| syntax(lineno, &format!("decoy needs {k}=")))
                    };
                    let class = match get("class")? {
                        "lih" => DecoyClass::Lih,
                        "mih" => DecoyClass::Mih,
                        "hih" => DecoyClass::Hih,
                        _ => return Err(syntax(lineno, "class is lih|mih|hih")),
                    };
                    let open_ports = match kv.get("ports") {
                        Some(s) if !s.is_empty() => s
                            .split(',')
                            .map(|p| p.parse::<u16>())
                            .collect::<Result<_, _>>()
                            .map_err(|_| syntax(lineno, "ports is a comma list of integers"))?,
                        _ => Default::default(),
                    };
                    let mut service_scripts = BTreeMap::new();
                    if let Some(s) = kv.get("scripts") {
                        for pair in s.split(',') {
                            let (port, script) = pair
                                .split_once(':')
                                .ok_or_else(|| syntax(lineno, "scripts is port:name,..."))?;
                            service_scripts.insert(
                                port.parse::<u16>()
                                    .map_err(|_| syntax(lineno, "bad script port"))?,
                                script.to_string(),
                            );
                        }
                    }
                    let name = get("name")?.to_string();
                    // each decoy owns one switch port; a reused name would
                    // collapse two endpoints onto the same port
                    if decoys.iter().any(|d| d.name == name) {
                        return Err(syntax(lineno, "duplicate decoy name"));
                    }
                    decoys.push(DecoyConfig {
                        name,
                        class,
                        ip: get("ip")?
                            .parse()
                            .map_err(|_| syntax(lineno, "bad decoy ip"))?,
                        mac: get("mac")?
                            .parse()
                            .map_err(|_| syntax(lineno, "bad decoy mac"))?,
                        switch_port: 0, // assigned by the builder
                        open_ports,
                        service_scripts,
                        response_delay_ms: kv
                            .get("delay_ms")
                            .map(|v| v.parse())
                            .transpose()
                            .map_err(|_| syntax(lineno, "bad delay_ms"))?
                            .unwrap_or(0),
                        behind_spf: flags.contains(&"behind_spf"),
                        silent: flags.contains(&"silent"),
                    });
                }
                "attacker" => {
                    if let Some(rest) = line.strip_prefix("conn") {
                        let (kv, _) = parse_tokens(rest);
                        let (dst_ip, dst_port) = parse_endpoint(
                            kv.get("dst")
                                .ok_or_else(|| syntax(lineno, "conn needs dst=ip:port"))?,
                        )?;
                        let turns = match kv.get("script") {
                            Some(s) => client_turns(s)
                                .ok_or_else(|| ScenarioError::UnknownClientScript(s.to_string()))?,
                            None => Vec::new(),
                        };
                        conns.push(AttackerConnSpec {
                            start_us: kv
                                .get("start_ms")
                                .map(|v| v.parse::<u64>())
                                .transpose()
                                .map_err(|_| syntax(lineno, "bad start_ms"))?
                                .unwrap_or(0)
                                * 1_000,
                            src_port: kv
                                .get("src_port")
                                .map(|v| v.parse())
                                .transpose()
                                .map_err(|_| syntax(lineno, "bad src_port"))?
                                .unwrap_or(36093),
                            dst_ip,
                            dst_port,
                            dst_mac: MacAddr([0; 6]), // resolved by the builder
                            turns,
                            isn: kv
                                .get("isn")
                                .map(|v| v.parse())
                                .transpose()
                                .map_err(|_| syntax(lineno, "bad isn"))?,
                        });
                    } else {
                        let (key, value) = line
                            .split_once('=')
                            .map(|(k, v)| (k.trim(), v.trim()))
                            .ok_or_else(|| syntax(lineno, "expected key = value or conn ..."))?;
                        match key {
                            "ip" => {
                                attacker_ip =
                                    value.parse().map_err(|_| syntax(lineno, "bad attacker ip"))?
                            }
                            "mac" => {
                                attacker_mac = value
                                    .parse()
                                    .map_err(|_| syntax(lineno, "bad attacker mac"))?
                            }
                            _ => return Err(syntax(lineno, "unknown [attacker] key")),
                        }
                    }
                }
                "outbound" => {
                    if let Some(rest) = line.strip_prefix("redirect") {
                        let (from, to) = rest
                            .split_once("->")
                            .ok_or_else(|| syntax(lineno, "redirect ip:port -> decoy"))?;
                        let (ip, port) = parse_endpoint(from.trim())?;
                        outbound
                            .redirect_map
                            .insert((ip, port), to.trim().to_string());
                    } else if let Some(rest) = line.strip_prefix("inject") {
                        let (kv, _) = parse_tokens(rest);
                        let (dst_ip, dst_port) = parse_endpoint(
                            kv.get("dst")
                                .ok_or_else(|| syntax(lineno, "inject needs dst=ip:port"))?,
                        )?;
                        injections.push(OutboundInjection {
                            at_us: kv
                                .get("at_ms")
                                .map(|v| v.parse::<u64>())
                                .transpose()
                                .map_err(|_| syntax(lineno, "bad at_ms"))?
                                .unwrap_or(0)
                                * 1_000,
                            decoy: kv
                                .get("from")
                                .ok_or_else(|| syntax(lineno, "inject needs from=decoy"))?
                                .to_string(),
                            src_port: kv
                                .get("src_port")
                                .map(|v| v.parse())
                                .transpose()
                                .map_err(|_| syntax(lineno, "bad src_port"))?
                                .unwrap_or(40000),
                            dst_ip,
                            dst_port,
                        });
                    } else {
                        let (key, value) = line
                            .split_once('=')
                            .map(|(k, v)| (k.trim(), v.trim()))
                            .ok_or_else(|| syntax(lineno, "expected key = value"))?;
                        match (key, value) {
                            ("default", "discard") => outbound.default = OutboundDefault::Discard,
                            ("default", "allow") => outbound.default = OutboundDefault::Allow,
                            _ => return Err(syntax(lineno, "unknown [outbound] line")),
                        }
                    }
                }
                "" => return Err(syntax(lineno, "content before the first [section]")),
                other => {
                    return Err(syntax(lineno, &format!("unknown section [{other}]")));
                }
            }
        }

        Ok(Scenario {
            name,
            mechanism: mechanism.ok_or(ScenarioError::Missing("mechanism"))?,
            seed: seed.ok_or(ScenarioError::Missing("seed"))?,
            frontend,
            timing,
            rto_initial_us,
            max_retries,
            rules_text,
            decoys,
            attacker_ip,
            attacker_mac,
            conns,
            outbound,
            injections,
        })
    }

    /// Replaces the seed when the `HONEYDOC_SEED` environment variable is a
    /// valid integer.
    pub fn apply_env_seed(&mut self) {
        if let Some(seed) = std::env::var("HONEYDOC_SEED")
            .ok()
            .and_then(|v| v.parse().ok())
        {
            self.seed = seed;
        }
    }

    /// Assembles the world: switches, links, decoys, attacker and (except
    /// for the direct baseline) the controller with its initial tables.
    pub fn build(&self) -> Result<World, ScenarioError> {
        let mut conns = self.conns.clone();
        for conn in &mut conns {
            // the attacker addresses the advertised identity: the first
            // decoy holding the destination ip
            let advertised = self
                .decoys
                .iter()
                .find(|d| d.ip == conn.dst_ip)
                .map(|d| d.mac)
                .unwrap_or(MacAddr([2, 0, 0, 0, 0xff, 0xfe]));
            conn.dst_mac = advertised;
        }
        let spec = AttackerSpec {
            ip: self.attacker_ip,
            mac: self.attacker_mac,
            rto_initial_us: self.rto_initial_us,
            max_retries: self.max_retries,
            conns,
        };
        let mut world = World::new(self.timing, spec, self.seed);
        let fcf = world.add_switch("fcf", SwitchRole::Fcf);
        world.attach_attacker(fcf, 1);

        let scripts = builtin_scripts();
        let mut paths = Vec::new();
        let mut next_port = 2u32;
        for cfg in &self.decoys {
            let fcf_port = next_port;
            next_port += 1;
            let mut cfg = cfg.clone();
            let (spf, attach) = if cfg.behind_spf {
                let spf = world.add_switch(format!("spf-{}", cfg.name), SwitchRole::Spf);
                world.connect_switches(fcf, fcf_port, spf, 1);
                (Some(spf), (spf, 2))
            } else {
                (None, (fcf, fcf_port))
            };
            cfg.switch_port = attach.1;
            paths.push(DecoyPath {
                name: cfg.name.clone(),
                class: cfg.class,
                ip: cfg.ip,
                mac: cfg.mac,
                fcf_port,
                spf,
                open_ports: cfg.open_ports.clone(),
            });
            let decoy = Decoy::new(cfg, &scripts, self.seed)?;
            world.add_decoy(decoy, attach.0, attach.1);
        }

        let rules = parse_ruleset(&self.rules_text)?;
        match self.mechanism {
            Mechanism::Direct => {
                self.install_direct_entries(&mut world, fcf, &paths);
            }
            _ => {
                let topo = ControllerTopo {
                    fcf,
                    attacker_port: 1,
                    spf_uplink_port: 1,
                    spf_decoy_port: 2,
                    decoys: paths,
                };
                let (ctrl, installs) = Controller::new(
                    self.mechanism,
                    topo,
                    translate_rules(&rules),
                    self.timing,
                    self.outbound.clone(),
                    self.frontend.clone(),
                    self.seed,
                )?;
                world.set_controller(ctrl, installs);
            }
        }
        for inj in &self.injections {
            world.inject_outbound(inj.at_us, &inj.decoy, inj.src_port, inj.dst_ip, inj.dst_port);
        }
        Ok(world)
    }

    /// The controller-free baseline: each advertised service is statically
    /// wired to the first decoy that serves it, and SPF switches pass
    /// traffic through untouched.
    fn install_direct_entries(&self, world: &mut World, fcf: usize, paths: &[DecoyPath]) {
        let mut served: Vec<u16> = Vec::new();
        for (path, cfg) in paths.iter().zip(&self.decoys) {
            for &port in &cfg.open_ports {
                if served.contains(&port) {
                    continue;
                }
                served.push(port);
                world.install_flow(
                    fcf,
                    FlowEntry::new(
                        PRIO_STATIC,
                        MatchFields {
                            in_port: Some(1),
                            proto: Some(Proto::Tcp),
                            dst_ip: Some(cfg.ip),
                            dst_port: Some(port),
                            ..Default::default()
                        },
                        vec![FlowAction::Output(path.fcf_port)],
                    ),
                );
            }
            world.install_flow(
                fcf,
                FlowEntry::new(
                    PRIO_STATIC,
                    MatchFields {
                        in_port: Some(path.fcf_port),
                        ..Default::default()
                    },
                    vec![FlowAction::Output(1)],
                ),
            );
            if let Some(spf) = path.spf {
                world.install_flow(
                    spf,
                    FlowEntry::new(
                        PRIO_STATIC,
                        MatchFields {
                            in_port: Some(1),
                            ..Default::default()
                        },
                        vec![FlowAction::Output(2)],
                    ),
                );
                world.install_flow(
                    spf,
                    FlowEntry::new(
                        PRIO_STATIC,
                        MatchFields {
                            in_port: Some(2),
                            ..Default::default()
                        },
                        vec![FlowAction::Output(1)],
                    ),
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::AttackerConnState;

    const BASIC: &str = r#"
[general]
name = basic
mechanism = m1
seed = 42

[rules]
alert tcp any any -> any 25 (msg:"MIH"; sid:100; priority:2;)

[decoys]
decoy name=mih0 class=mih ip=10.1.1.2 mac=02:00:00:00:01:01 ports=25 scripts=25:smtp-postfix behind_spf

[attacker]
conn start_ms=0 src_port=36093 dst=10.1.1.2:25 script=smtp-client
"#;

    #[test]
    fn parses_and_runs_basic_scenario() {
        let scenario = Scenario::parse(BASIC).unwrap();
        assert_eq!(scenario.name, "basic");
        assert_eq!(scenario.mechanism, Mechanism::M1);
        assert_eq!(scenario.seed, 42);
        assert_eq!(scenario.decoys.len(), 1);
        assert_eq!(scenario.conns[0].turns.len(), 5);

        let mut world = scenario.build().unwrap();
        world.run(None);
        let stats = &world.attacker_conn_stats()[0];
        assert!(stats.completed);
        assert!(stats.app_rx.starts_with(b"250 honeypot"));
    }

    #[test]
    fn direct_baseline_needs_no_controller() {
        let text = BASIC
            .replace("mechanism = m1", "mechanism = direct")
            .replace(" behind_spf", "");
        let scenario = Scenario::parse(&text).unwrap();
        let mut world = scenario.build().unwrap();
        assert!(world.controller().is_none());
        world.run(None);
        assert!(world.attacker_conn_stats()[0].completed);
    }

    #[test]
    fn missing_seed_is_an_error() {
        let text = BASIC.replace("seed = 42", "");
        assert!(matches!(
            Scenario::parse(&text),
            Err(ScenarioError::Missing("seed"))
        ));
    }

    #[test]
    fn duplicate_decoy_name_is_an_error() {
        let dup = BASIC.lines().map(|l| {
            if l.starts_with("decoy ") {
                format!("{l}\n{l}\n")
            } else {
                format!("{l}\n")
            }
        }).collect::<String>();
        match Scenario::parse(&dup) {
            Err(ScenarioError::Syntax { what, .. }) => {
                assert!(what.contains("duplicate decoy name"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_section_and_bad_lines_error_with_line_numbers() {
        let err = Scenario::parse("[nope]\nx = 1\n").unwrap_err();
        match err {
            ScenarioError::Syntax { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
        assert!(Scenario::parse("junk before section\n").is_err());
    }

    #[test]
    fn ssh_client_turn_is_43_bytes() {
        let turns = client_turns("ssh-client").unwrap();
        assert_eq!(turns.len(), 1);
        assert_eq!(turns[0].len(), 43);
    }

    #[test]
    fn closed_port_probe_times_out_against_m1() {
        let text = BASIC.replace("dst=10.1.1.2:25 script=smtp-client", "dst=10.1.1.2:2222 script=syn-only");
        let scenario = Scenario::parse(&text).unwrap();
        let mut world = scenario.build().unwrap();
        world.run(None);
        // no service on 2222: the SYN is silently dropped and the attacker
        // exhausts its retries
        assert_eq!(world.attacker_conn_states()[0], AttackerConnState::GaveUp);
        assert_eq!(world.attacker_conn_stats()[0].retransmissions, 3);
    }
}
