//! Independent-oracle equivalence tests: the fast paths (flow-table
//! matching, rule classification, modular sequence arithmetic) are checked
//! against deliberately naive reference implementations.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use honeydoc_core::dataplane::{FlowAction, FlowEntry, MatchFields, SwitchNode, SwitchRole};
use honeydoc_core::model::{seq_add, Ipv4Addr, MacAddr, Proto, Segment, TcpFlags};
use honeydoc_core::rules::{classify, parse_rule, ClassificationRule};

fn ip(last: u8) -> Ipv4Addr {
    format!("10.1.1.{last}").parse().unwrap()
}

fn random_segment(rng: &mut ChaCha8Rng) -> Segment {
    let ports = [21u16, 25, 80, 4242];
    let payloads: [&[u8]; 4] = [b"", b"USER anonymous\r\n", b"HELO test\n", b"xyz"];
    let proto = if rng.next_u32() % 8 == 0 { Proto::Udp } else { Proto::Tcp };
    let (flags, seq, ack) = match proto {
        Proto::Tcp => (TcpFlags::PSH | TcpFlags::ACK, rng.next_u32(), rng.next_u32()),
        Proto::Udp => (TcpFlags::empty(), 0, 0),
    };
    Segment::make(
        MacAddr([2, 0, 0, 0, 0, 1]),
        MacAddr([2, 0, 0, 0, 0, 2]),
        ip((rng.next_u32() % 4) as u8 + 1),
        ip((rng.next_u32() % 4) as u8 + 1),
        proto,
        ports[rng.next_u32() as usize % ports.len()] as u64,
        ports[rng.next_u32() as usize % ports.len()] as u64,
        flags,
        seq,
        ack,
        payloads[rng.next_u32() as usize % payloads.len()].to_vec(),
    )
    .unwrap()
}

// ---------------------------------------------------------------------------
// seq_add vs. wide-integer arithmetic
// ---------------------------------------------------------------------------

fn seq_add_oracle(base: u32, delta: i64) -> u32 {
    (base as i128 + delta as i128).rem_euclid(1i128 << 32) as u32
}

#[test]
fn seq_add_matches_the_wide_integer_oracle() {
    let bases = [
        0u32,
        1,
        2,
        i32::MAX as u32 - 1,
        i32::MAX as u32,
        1 << 31,
        (1u32 << 31) + 1,
        u32::MAX - 1,
        u32::MAX,
    ];
    let deltas = [
        0i64,
        1,
        -1,
        2,
        -2,
        i64::from(i32::MAX),
        -i64::from(i32::MAX),
        1 << 31,
        -(1i64 << 31),
        (1i64 << 32) - 1,
        -((1i64 << 32) - 1),
    ];
    for base in bases {
        for delta in deltas {
            assert_eq!(
                seq_add(base, delta),
                seq_add_oracle(base, delta),
                "base={base} delta={delta}"
            );
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x7365715f616464);
    for _ in 0..10_000 {
        let base = rng.next_u32();
        // the documented contract restricts deltas to |delta| < 2^32
        let delta = (rng.next_u64() % ((1 << 33) - 1)) as i64 - ((1i64 << 32) - 1);
        assert_eq!(seq_add(base, delta), seq_add_oracle(base, delta), "base={base} delta={delta}");
    }
}

// ---------------------------------------------------------------------------
// match_segment vs. brute-force table scan
// ---------------------------------------------------------------------------

fn random_match_fields(rng: &mut ChaCha8Rng) -> MatchFields {
    let maybe_port = |rng: &mut ChaCha8Rng| match rng.next_u32() % 3 {
        0 => None,
        1 => Some(21u16),
        _ => Some(25u16),
    };
    MatchFields {
        in_port: match rng.next_u32() % 3 {
            0 => None,
            1 => Some(1),
            _ => Some(2),
        },
        proto: if rng.next_u32() % 2 == 0 { Some(Proto::Tcp) } else { None },
        src_ip: if rng.next_u32() % 3 == 0 { Some(ip((rng.next_u32() % 4) as u8 + 1)) } else { None },
        dst_ip: if rng.next_u32() % 3 == 0 { Some(ip((rng.next_u32() % 4) as u8 + 1)) } else { None },
        src_port: maybe_port(rng),
        dst_port: maybe_port(rng),
    }
}

#[test]
fn match_segment_agrees_with_a_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d617463685f);
    for case in 0..10_000 {
        let mut sw = SwitchNode::new("t", SwitchRole::Fcf);
        let n = rng.next_u32() as usize % 30 + 1;
        for i in 0..n {
            sw.install_entry(
                FlowEntry::new(
                    rng.next_u32() % 6,
                    random_match_fields(&mut rng),
                    vec![FlowAction::Output(i as u32 + 1)],
                ),
                0,
            )
            .unwrap();
        }
        let seg = random_segment(&mut rng);
        let in_port = rng.next_u32() % 3 + 1;

        // naive reference: first install wins among the highest-priority
        // matching entries; `table` preserves install order
        let mut expect: Option<usize> = None;
        for (i, e) in sw.table.iter().enumerate() {
            if !e.match_fields.matches(&seg, in_port) {
                continue;
            }
            expect = Some(match expect {
                None => i,
                Some(best) if e.priority > sw.table[best].priority => i,
                Some(best) => best,
            });
        }
        let expect_line = expect.map(|i| sw.table[i].normalized_line());
        let got_line = sw.match_segment(&seg, in_port).map(|e| e.normalized_line());
        assert_eq!(got_line, expect_line, "case {case}");
    }
}

// ---------------------------------------------------------------------------
// classify vs. linear reference matcher
// ---------------------------------------------------------------------------

fn random_ruleset(rng: &mut ChaCha8Rng) -> Vec<ClassificationRule> {
    let n = rng.next_u32() as usize % 12 + 1;
    (0..n)
        .map(|i| {
            let action = ["DROP", "MIH", "HIH"][rng.next_u32() as usize % 3];
            let src = ["any", "10.1.1.1", "10.1.1.2"][rng.next_u32() as usize % 3];
            let dst = ["any", "10.1.1.2", "10.1.1.3"][rng.next_u32() as usize % 3];
            let sport = ["any", "21", "25"][rng.next_u32() as usize % 3];
            let dport = ["any", "21", "25", "4242"][rng.next_u32() as usize % 4];
            let content = match rng.next_u32() % 3 {
                0 => " content:\"USER\";".to_string(),
                1 => " content:\"xyz\";".to_string(),
                _ => String::new(),
            };
            parse_rule(&format!(
                "alert tcp {src} {sport} -> {dst} {dport} \
                 (msg:\"{action}\"; sid:{}; priority:{};{content})",
                i + 1,
                rng.next_u32() % 4,
            ))
            .unwrap()
        })
        .collect()
}

#[test]
fn classify_agrees_with_the_linear_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x636c617373);
    for case in 0..10_000 {
        let rules = random_ruleset(&mut rng);
        let seg = random_segment(&mut rng);

        // reference: scan everything, keep max priority, break ties on the
        // smallest sid
        let mut best: Option<&ClassificationRule> = None;
        for r in &rules {
            if !r.matches(&seg) {
                continue;
            }
            best = Some(match best {
                None => r,
                Some(b) if r.priority > b.priority => r,
                Some(b) if r.priority == b.priority && r.sid < b.sid => r,
                Some(b) => b,
            });
        }
        let got = classify(&seg, &rules);
        match (got, best) {
            (None, None) => {}
            (Some(alert), Some(rule)) => {
                assert_eq!(alert.sid, rule.sid, "case {case}");
                assert_eq!(alert.action, rule.action, "case {case}");
                assert_eq!(alert.matched_rule_priority, rule.priority, "case {case}");
            }
            other => panic!("case {case}: mismatch {other:?}"),
        }
    }
}
