//! Scripted LIH/MIH/HIH endpoints with a minimal TCP state machine and
//! per-decoy activity logging.
//!
//! The TCP model covers handshake, in-order delivery, cumulative ACK and
//! FIN/RST. Decoys never retransmit; links are lossless, only the attacker
//! model retries.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{FiveTuple, Ipv4Addr, MacAddr, ModelError, Proto, Segment, TcpFlags};
use crate::script::{ServiceScript};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecoyError {
    #[error("system-activity capture requires an HIH decoy, {0} is not one")]
    NotHih(String),
    #[error("unknown script {0:?}")]
    UnknownScript(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoyClass {
    Lih,
    Mih,
    Hih,
}

#[derive(Debug, Clone)]
pub struct DecoyConfig {
    pub name: String,
    pub class: DecoyClass,
    pub ip: Ipv4Addr,
    pub mac: MacAddr,
    pub switch_port: u32,
    pub open_ports: BTreeSet<u16>,
    pub service_scripts: BTreeMap<u16, String>,
    pub response_delay_ms: u64,
    /// Reach this decoy through a seq/ack-rewriting forwarder.
    pub behind_spf: bool,
    /// Drop every frame; used to exercise the handshake timeout path.
    pub silent: bool,
}

/// One line of the data-capture surface.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityLogEntry {
    pub time_us: u64,
    pub decoy: String,
    pub script: String,
    pub remote_ip: Ipv4Addr,
    pub remote_port: u16,
    pub message: Vec<u8>,
    pub bytes: usize,
    pub stage: String,
}

#[derive(Debug, Clone)]
struct DecoyConn {
    isn: u32,
    snd_nxt: u32,
    rcv_nxt: u32,
    script_cursor: usize,
    responses_sent: u32,
    app_rx: Vec<u8>,
    app_tx: Vec<u8>,
}

/// Segments the decoy wants on the wire, each after the given delay.
#[derive(Debug, Default)]
pub struct DecoyOutput {
    pub segments: Vec<(u64, Segment)>,
    pub new_log_entries: usize,
}

#[derive(Debug)]
pub struct Decoy {
    pub config: DecoyConfig,
    scripts: HashMap<String, ServiceScript>,
    conns: HashMap<FiveTuple, DecoyConn>,
    pub log: Vec<ActivityLogEntry>,
    rng: ChaCha8Rng,
    isn_override: Option<u32>,
}

impl Decoy {
    pub fn new(
        config: DecoyConfig,
        scripts: &[ServiceScript],
        seed: u64,
    ) -> Result<Decoy, DecoyError> {
        let mut map = HashMap::new();
        for port_script in config.service_scripts.values() {
            let script = scripts
                .iter()
                .find(|s| &s.name == port_script)
                .ok_or_else(|| DecoyError::UnknownScript(port_script.clone()))?;
            map.insert(script.name.clone(), script.clone());
        }
        let rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(&config.name));
        Ok(Decoy {
            config,
            scripts: map,
            conns: HashMap::new(),
            log: Vec::new(),
            rng,
            isn_override: None,
        })
    }

    /// Forces the ISN of the next accepted connection; test hook for the
    /// stream-integrity sweeps.
    pub fn force_next_isn(&mut self, isn: u32) {
        self.isn_override = Some(isn);
    }

    pub fn open_connections(&self) -> usize {
        self.conns.len()
    }

    /// Application byte stream received from the given peer, if any.
    pub fn app_received(&self, key: &FiveTuple) -> Option<&[u8]> {
        self.conns.get(key).map(|c| c.app_rx.as_slice())
    }

    pub fn app_sent(&self, key: &FiveTuple) -> Option<&[u8]> {
        self.conns.get(key).map(|c| c.app_tx.as_slice())
    }

    /// Handles one delivered frame and returns the response segments.
    pub fn endpoint_on_segment(&mut self, seg: &Segment, now_us: u64) -> DecoyOutput {
        let mut out = DecoyOutput::default();
        if self.config.silent || seg.dst_ip != self.config.ip {
            return out;
        }
        if seg.proto == Proto::Udp {
            if !seg.payload.is_empty() {
                self.push_log(now_us, seg, "-");
                out.new_log_entries += 1;
            }
            return out;
        }
        let key = seg.five_tuple();
        let delay_us = self.config.response_delay_ms * 1000;

        if seg.flags.contains(TcpFlags::RST) {
            self.conns.remove(&key);
            return out;
        }
        if seg.flags.contains(TcpFlags::SYN) && !seg.flags.contains(TcpFlags::ACK) {
            if !self.config.open_ports.contains(&seg.dst_port) {
                out.segments.push((0, self.reply(seg, TcpFlags::RST | TcpFlags::ACK, 0, seg.seq.wrapping_add(1), vec![])));
                return out;
            }
            let isn = match self.conns.get(&key) {
                // duplicate SYN: repeat the SYN/ACK, keep state
                Some(conn) => conn.isn,
                None => {
                    let isn = self.isn_override.take().unwrap_or_else(|| self.rng.next_u32());
                    self.conns.insert(
                        key,
                        DecoyConn {
                            isn,
                            snd_nxt: isn.wrapping_add(1),
                            rcv_nxt: seg.seq.wrapping_add(1),
                            script_cursor: 0,
                            responses_sent: 0,
                            app_rx: Vec::new(),
                            app_tx: Vec::new(),
                        },
                    );
                    isn
                }
            };
            out.segments.push((
                0,
                self.reply(seg, TcpFlags::SYN | TcpFlags::ACK, isn, seg.seq.wrapping_add(1), vec![]),
            ));
            return out;
        }
        if seg.flags.contains(TcpFlags::FIN) {
            if let Some(conn) = self.conns.remove(&key) {
                out.segments.push((
                    0,
                    self.reply(
                        seg,
                        TcpFlags::FIN | TcpFlags::ACK,
                        conn.snd_nxt,
                        conn.rcv_nxt.wrapping_add(1),
                        vec![],
                    ),
                ));
            }
            return out;
        }
        if seg.payload.is_empty() {
            return out;
        }

        let Some(mut conn) = self.conns.remove(&key) else {
            // payload for an unknown connection: malformed, log and ignore
            return out;
        };
        if seg.seq != conn.rcv_nxt {
            // duplicate or stale data: re-ACK, no app delivery, no log
            out.segments.push((0, self.reply(seg, TcpFlags::ACK, conn.snd_nxt, conn.rcv_nxt, vec![])));
            self.conns.insert(key, conn);
            return out;
        }
        conn.rcv_nxt = conn.rcv_nxt.wrapping_add(seg.payload.len() as u32);
        conn.app_rx.extend_from_slice(&seg.payload);

        let script = self
            .config
            .service_scripts
            .get(&seg.dst_port)
            .and_then(|name| self.scripts.get(name))
            .cloned();
        let mut respond: Option<Vec<u8>> = None;
        let mut stage = "-".to_string();
        let mut matched = false;
        if let Some(script) = &script {
            if let Some(t) = script.turns.get(conn.script_cursor) {
                if t.expect.matches(&seg.payload) {
                    matched = true;
                    stage = t.stage.clone().unwrap_or_else(|| "-".to_string());
                    if !t.respond.is_empty() {
                        respond = Some(t.respond.clone());
                    }
                    conn.script_cursor += 1;
                }
            }
        }
        // scripted stages are logged on every class; command-level capture
        // of unscripted input is the HIH's job
        if matched {
            self.push_log(now_us, seg, &stage);
            out.new_log_entries += 1;
        } else if self.config.class == DecoyClass::Hih {
            self.hih_record_activity(now_us, seg).expect("class checked");
            out.new_log_entries += 1;
        }

        // an LIH answers at most once per connection
        let may_respond =
            self.config.class != DecoyClass::Lih || conn.responses_sent == 0;
        match respond {
            Some(data) if may_respond => {
                let reply = self.reply(
                    seg,
                    TcpFlags::PSH | TcpFlags::ACK,
                    conn.snd_nxt,
                    conn.rcv_nxt,
                    data.clone(),
                );
                conn.snd_nxt = conn.snd_nxt.wrapping_add(data.len() as u32);
                conn.app_tx.extend_from_slice(&data);
                conn.responses_sent += 1;
                out.segments.push((delay_us, reply));
            }
            _ => {
                out.segments.push((0, self.reply(seg, TcpFlags::ACK, conn.snd_nxt, conn.rcv_nxt, vec![])));
            }
        }
        self.conns.insert(key, conn);
        out
    }

    /// Command-level capture of one payload segment; HIH only.
    pub fn hih_record_activity(
        &mut self,
        now_us: u64,
        seg: &Segment,
    ) -> Result<&ActivityLogEntry, DecoyError> {
        if self.config.class != DecoyClass::Hih {
            return Err(DecoyError::NotHih(self.config.name.clone()));
        }
        self.push_log(now_us, seg, "-");
        Ok(self.log.last().expect("just pushed"))
    }

    fn push_log(&mut self, now_us: u64, seg: &Segment, stage: &str) {
        let script = self
            .config
            .service_scripts
            .get(&seg.dst_port)
            .cloned()
            .unwrap_or_else(|| "activity".to_string());
        self.log.push(ActivityLogEntry {
            time_us: now_us,
            decoy: self.config.name.clone(),
            script,
            remote_ip: seg.src_ip,
            remote_port: seg.src_port,
            message: seg.payload.clone(),
            bytes: seg.payload.len(),
            stage: stage.to_string(),
        });
    }

    fn reply(&self, seg: &Segment, flags: TcpFlags, seq: u32, ack: u32, payload: Vec<u8>) -> Segment {
        Segment {
            src_mac: self.config.mac,
            dst_mac: seg.src_mac,
            src_ip: self.config.ip,
            dst_ip: seg.src_ip,
            proto: Proto::Tcp,
            src_port: seg.dst_port,
            dst_port: seg.src_port,
            flags,
            seq,
            ack,
            payload,
        }
    }

    /// Amun-style log export, one line per entry.
    pub fn export_logs(&self) -> String {
        let mut out = String::new();
        for entry in &self.log {
            let _ = writeln!(
                out,
                "{} INFO [{}] Attacker: {} Message: ['{}'] Bytes: {} Stage: {}",
                format_timestamp(entry.time_us),
                entry.script,
                entry.remote_ip,
                escape_message(&entry.message),
                entry.bytes,
                entry.stage
            );
        }
        out
    }
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a, stable across runs
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn format_timestamp(time_us: u64) -> String {
    let ms = time_us / 1000;
    let s = ms / 1000;
    format!(
        "1970-01-01 {:02}:{:02}:{:02},{:03}",
        s / 3600 % 24,
        s / 60 % 60,
        s % 60,
        ms % 1000
    )
}

/// Renders message bytes the way the FTP capture logs do: `\r` and `\n`
/// become space-prefixed escape tokens, everything unprintable is hex
/// escaped. Lossless; `unescape_message` inverts it.
pub fn escape_message(bytes: &[u8]) -> String {
    let mut out = String::new();
    for &b in bytes {
        match b {
            b'\\' => out.push_str(" \\\\"),
            b'\r' => out.push_str(" \\r"),
            b'\n' => out.push_str(" \\n"),
            b'\'' => out.push_str(" \\q"),
            0x20..=0x7e => out.push(b as char),
            _ => out.push_str(&format!(" \\x{b:02x}")),
        }
    }
    out
}

pub fn unescape_message(s: &str) -> Result<Vec<u8>, ModelError> {
    let bad = || ModelError::Parse {
        what: "log message",
        input: s.to_string(),
    };
    let b = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if b[i] == b' ' && i + 1 < b.len() && b[i + 1] == b'\\' {
            let code = *b.get(i + 2).ok_or_else(bad)?;
            match code {
                b'\\' => out.push(b'\\'),
                b'r' => out.push(b'\r'),
                b'n' => out.push(b'\n'),
                b'q' => out.push(b'\''),
                b'x' => {
                    let hex = s.get(i + 3..i + 5).ok_or_else(bad)?;
                    out.push(u8::from_str_radix(hex, 16).map_err(|_| bad())?);
                    i += 2;
                }
                _ => return Err(bad()),
            }
            i += 3;
        } else {
            out.push(b[i]);
            i += 1;
        }
    }
    Ok(out)
}

/// Parses one exported log line back into an entry; the round trip is the
/// oracle for losslessness of the export format.
pub fn parse_log_line(line: &str) -> Result<ActivityLogEntry, ModelError> {
    let bad = || ModelError::Parse {
        what: "log line",
        input: line.to_string(),
    };
    let (ts, rest) = line.split_at(line.find(" INFO [").ok_or_else(bad)?);
    let rest = rest.strip_prefix(" INFO [").ok_or_else(bad)?;
    let (script, rest) = rest.split_once("] Attacker: ").ok_or_else(bad)?;
    let (ip, rest) = rest.split_once(" Message: ['").ok_or_else(bad)?;
    let (msg, rest) = rest.rsplit_once("'] Bytes: ").ok_or_else(bad)?;
    let (bytes, stage) = rest.split_once(" Stage: ").ok_or_else(bad)?;
    let message = unescape_message(msg)?;
    let time_us = parse_timestamp(ts).ok_or_else(bad)?;
    Ok(ActivityLogEntry {
        time_us,
        decoy: String::new(),
        script: script.to_string(),
        remote_ip: ip.parse().map_err(|_| bad())?,
        remote_port: 0,
        bytes: bytes.parse().map_err(|_| bad())?,
        message,
        stage: stage.to_string(),
    })
}

fn parse_timestamp(ts: &str) -> Option<u64> {
    let (_, clock) = ts.split_once(' ')?;
    let (hms, ms) = clock.split_once(',')?;
    let mut parts = hms.split(':');
    let h: u64 = parts.next()?.parse().ok()?;
    let m: u64 = parts.next()?.parse().ok()?;
    let s: u64 = parts.next()?.parse().ok()?;
    let ms: u64 = ms.parse().ok()?;
    Some(((h * 3600 + m * 60 + s) * 1000 + ms) * 1000)
}
