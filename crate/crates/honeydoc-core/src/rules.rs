//! Snort-subset classification rules and their two-step translation.
//!
//! Grammar (one rule per line, `#` comments):
//!
//! ```text
//! alert <proto> <src-ip> <src-port> -> <dst-ip> <dst-port> (msg:"ACTION"; sid:N; priority:N; content:"bytes";)
//! ```
//!
//! The msg field carries one of the three actions DROP / MIH / HIH. Rules
//! with a DROP action and a blank content field are pushed down into the
//! data plane as drop entries; everything else becomes a send-to-controller
//! entry plus a retained rule for content-based classification.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::dataplane::{FlowAction, FlowEntry, MatchFields};
use crate::model::{Ipv4Addr, Proto, Segment};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RuleError {
    #[error("line {line}: syntax error at byte {offset}: {what}")]
    Syntax {
        line: usize,
        offset: usize,
        what: String,
    },
    #[error("line {line}: unknown action {msg:?} (expected DROP, MIH or HIH)")]
    UnknownAction { line: usize, msg: String },
    #[error("line {line}: duplicate option key {key:?}")]
    DuplicateOption { line: usize, key: String },
    #[error("line {line}: duplicate sid {sid}")]
    DuplicateSid { line: usize, sid: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RuleAction {
    Drop,
    Mih,
    Hih,
}

impl fmt::Display for RuleAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleAction::Drop => write!(f, "DROP"),
            RuleAction::Mih => write!(f, "MIH"),
            RuleAction::Hih => write!(f, "HIH"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleProto {
    Tcp,
    Udp,
    Any,
}

impl RuleProto {
    pub fn matches(self, proto: Proto) -> bool {
        match self {
            RuleProto::Tcp => proto == Proto::Tcp,
            RuleProto::Udp => proto == Proto::Udp,
            RuleProto::Any => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassificationRule {
    pub proto: RuleProto,
    pub src_ip: Option<Ipv4Addr>,
    pub src_port: Option<u16>,
    pub dst_ip: Option<Ipv4Addr>,
    pub dst_port: Option<u16>,
    pub action: RuleAction,
    pub sid: u32,
    pub priority: u32,
    pub content: Option<Vec<u8>>,
}

impl ClassificationRule {
    pub fn header_matches(&self, seg: &Segment) -> bool {
        self.proto.matches(seg.proto)
            && self.src_ip.map_or(true, |ip| ip == seg.src_ip)
            && self.src_port.map_or(true, |p| p == seg.src_port)
            && self.dst_ip.map_or(true, |ip| ip == seg.dst_ip)
            && self.dst_port.map_or(true, |p| p == seg.dst_port)
    }

    pub fn matches(&self, seg: &Segment) -> bool {
        self.header_matches(seg)
            && self
                .content
                .as_ref()
                .map_or(true, |pat| contains_subslice(&seg.payload, pat))
    }

    /// Canonical text form; `parse -> format -> parse` is idempotent.
    pub fn format(&self) -> String {
        let proto = match self.proto {
            RuleProto::Tcp => "tcp",
            RuleProto::Udp => "udp",
            RuleProto::Any => "any",
        };
        let opt_ip = |ip: Option<Ipv4Addr>| ip.map_or("any".to_string(), |i| i.to_string());
        let opt_port = |p: Option<u16>| p.map_or("any".to_string(), |p| p.to_string());
        let mut opts = format!(
            "msg:\"{}\"; sid:{}; priority:{};",
            self.action, self.sid, self.priority
        );
        if let Some(content) = &self.content {
            opts.push_str(&format!(" content:\"{}\";", escape_content(content)));
        }
        format!(
            "alert {} {} {} -> {} {} ({})",
            proto,
            opt_ip(self.src_ip),
            opt_port(self.src_port),
            opt_ip(self.dst_ip),
            opt_port(self.dst_port),
            opts
        )
    }
}

fn contains_subslice(haystack: &[u8], needle: &[u8]) -> bool {
    needle.is_empty() || haystack.windows(needle.len()).any(|w| w == needle)
}

fn escape_content(bytes: &[u8]) -> String {
    let mut out = String::new();
    for &b in bytes {
        match b {
            b'\\' => out.push_str("\\\\"),
            b'"' => out.push_str("\\\""),
            0x20..=0x7e => out.push(b as char),
            b'\r' => out.push_str("\\r"),
            b'\n' => out.push_str("\\n"),
            _ => out.push_str(&format!("\\x{b:02x}")),
        }
    }
    out
}

fn unescape_content(s: &str, line: usize, base: usize) -> Result<Vec<u8>, RuleError> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\\' {
            let err = |what: &str| RuleError::Syntax {
                line,
                offset: base + i,
                what: what.to_string(),
            };
            let esc = *bytes.get(i + 1).ok_or_else(|| err("dangling escape"))?;
            match esc {
                b'\\' => out.push(b'\\'),
                b'"' => out.push(b'"'),
                b'r' => out.push(b'\r'),
                b'n' => out.push(b'\n'),
                b'x' => {
                    let hex = s
                        .get(i + 2..i + 4)
                        .ok_or_else(|| err("truncated \\x escape"))?;
                    out.push(
                        u8::from_str_radix(hex, 16).map_err(|_| err("bad \\x escape"))?,
                    );
                    i += 2;
                }
                _ => return Err(err("unknown escape")),
            }
            i += 2;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    Ok(out)
}

/// The alert a classified segment maps to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alert {
    pub action: RuleAction,
    pub sid: u32,
    pub matched_rule_priority: u32,
}

/// Outcome of the two-step rule translation.
#[derive(Debug, Clone)]
pub struct TranslationResult {
    pub dataplane_entries: Vec<FlowEntry>,
    pub controller_rules: Vec<ClassificationRule>,
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, what: impl Into<String>) -> RuleError {
        RuleError::Syntax {
            line: self.line,
            offset: self.pos,
            what: what.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.text[self.pos..].starts_with(|c: char| c == ' ' || c == '\t') {
            self.pos += 1;
        }
    }

    fn token(&mut self) -> Result<&'a str, RuleError> {
        self.skip_ws();
        let rest = &self.text[self.pos..];
        let end = rest
            .find(|c: char| c == ' ' || c == '\t' || c == '(')
            .unwrap_or(rest.len());
        if end == 0 {
            return Err(self.err("expected token"));
        }
        self.pos += end;
        Ok(&rest[..end])
    }
}

/// Parses one logical rule line.
pub fn parse_rule(text: &str) -> Result<ClassificationRule, RuleError> {
    parse_rule_at(text, 1)
}

fn parse_rule_at(text: &str, line: usize) -> Result<ClassificationRule, RuleError> {
    let mut cur = Cursor { text, pos: 0, line };
    if cur.token()? != "alert" {
        return Err(cur.err("rule must start with 'alert'"));
    }
    let proto = match cur.token()? {
        "tcp" => RuleProto::Tcp,
        "udp" => RuleProto::Udp,
        "any" | "ip" => RuleProto::Any,
        other => return Err(cur.err(format!("unknown protocol {other:?}"))),
    };
    let parse_ip = |cur: &mut Cursor, tok: &str| -> Result<Option<Ipv4Addr>, RuleError> {
        if tok == "any" {
            Ok(None)
        } else {
            tok.parse()
                .map(Some)
                .map_err(|_| cur.err(format!("bad ip {tok:?}")))
        }
    };
    let parse_port = |cur: &mut Cursor, tok: &str| -> Result<Option<u16>, RuleError> {
        if tok == "any" {
            Ok(None)
        } else {
            tok.parse()
                .map(Some)
                .map_err(|_| cur.err(format!("bad port {tok:?}")))
        }
    };
    let tok = cur.token()?;
    let src_ip = parse_ip(&mut cur, tok)?;
    let tok = cur.token()?;
    let src_port = parse_port(&mut cur, tok)?;
    let dir = cur.token()?;
    if dir != "->" && dir != "\u{2192}" {
        return Err(cur.err("expected '->'"));
    }
    let tok = cur.token()?;
    let dst_ip = parse_ip(&mut cur, tok)?;
    let tok = cur.token()?;
    let dst_port = parse_port(&mut cur, tok)?;

    cur.skip_ws();
    if !cur.text[cur.pos..].starts_with('(') {
        return Err(cur.err("expected option block '(...)'"));
    }
    cur.pos += 1;
    let close = cur.text[cur.pos..]
        .rfind(')')
        .ok_or_else(|| cur.err("unterminated option block"))?;
    let opts_base = cur.pos;
    let opts = &cur.text[cur.pos..cur.pos + close];
    let tail = cur.text[opts_base + close + 1..].trim();
    if !tail.is_empty() && !tail.starts_with(';') {
        return Err(cur.err("trailing garbage after option block"));
    }

    let mut msg: Option<String> = None;
    let mut sid: Option<u32> = None;
    let mut priority: Option<u32> = None;
    let mut content: Option<Vec<u8>> = None;
    let mut seen: HashSet<String> = HashSet::new();
    for part in opts.split(';') {
        let part_off = opts_base + (part.as_ptr() as usize - opts.as_ptr() as usize);
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (key, value) = part.split_once(':').ok_or(RuleError::Syntax {
            line,
            offset: part_off,
            what: format!("option {part:?} missing ':'"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_string()) {
            return Err(RuleError::DuplicateOption {
                line,
                key: key.to_string(),
            });
        }
        let unquote = |v: &str| -> Result<String, RuleError> {
            v.strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .map(str::to_string)
                .ok_or(RuleError::Syntax {
                    line,
                    offset: part_off,
                    what: format!("option {key} value must be quoted"),
                })
        };
        match key {
            "msg" => msg = Some(unquote(value)?),
            "sid" => {
                sid = Some(value.parse().map_err(|_| RuleError::Syntax {
                    line,
                    offset: part_off,
                    what: format!("bad sid {value:?}"),
                })?)
            }
            "priority" => {
                priority = Some(value.parse().map_err(|_| RuleError::Syntax {
                    line,
                    offset: part_off,
                    what: format!("bad priority {value:?}"),
                })?)
            }
            "content" => content = Some(unescape_content(&unquote(value)?, line, part_off)?),
            other => {
                return Err(RuleError::Syntax {
                    line,
                    offset: part_off,
                    what: format!("unsupported option {other:?}"),
                })
            }
        }
    }

    let msg = msg.ok_or(RuleError::Syntax {
        line,
        offset: opts_base,
        what: "missing msg option".to_string(),
    })?;
    let action = match msg.as_str() {
        "DROP" => RuleAction::Drop,
        "MIH" => RuleAction::Mih,
        "HIH" => RuleAction::Hih,
        _ => return Err(RuleError::UnknownAction { line, msg }),
    };
    Ok(ClassificationRule {
        proto,
        src_ip,
        src_port,
        dst_ip,
        dst_port,
        action,
        // sid/priority may be omitted as in the short redirect rules;
        // defaults keep single-rule files valid, uniqueness still applies.
        sid: sid.unwrap_or(0),
        priority: priority.unwrap_or(1),
        content,
    })
}

/// Parses a whole rule file: one rule per line, `#` comments and blank
/// lines ignored, duplicate sids rejected.
pub fn parse_ruleset(text: &str) -> Result<Vec<ClassificationRule>, RuleError> {
    let mut rules = Vec::new();
    let mut sids = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let rule = parse_rule_at(line, idx + 1)?;
        if !sids.insert(rule.sid) {
            return Err(RuleError::DuplicateSid {
                line: idx + 1,
                sid: rule.sid,
            });
        }
        rules.push(rule);
    }
    Ok(rules)
}

fn rule_match_fields(rule: &ClassificationRule) -> MatchFields {
    MatchFields {
        in_port: None,
        proto: match rule.proto {
            RuleProto::Tcp => Some(Proto::Tcp),
            RuleProto::Udp => Some(Proto::Udp),
            RuleProto::Any => None,
        },
        src_ip: rule.src_ip,
        dst_ip: rule.dst_ip,
        src_port: rule.src_port,
        dst_port: rule.dst_port,
    }
}

/// Step one of the translation: DROP rules with a blank content field
/// become data-plane drop entries; every other rule becomes a
/// send-to-controller entry and is retained for content classification.
pub fn translate_rules(rules: &[ClassificationRule]) -> TranslationResult {
    let mut dataplane_entries = Vec::new();
    let mut controller_rules = Vec::new();
    for rule in rules {
        let is_plain_drop = rule.action == RuleAction::Drop && rule.content.is_none();
        let action = if is_plain_drop {
            FlowAction::Drop
        } else {
            FlowAction::ToController
        };
        dataplane_entries.push(FlowEntry::new(
            rule.priority,
            rule_match_fields(rule),
            vec![action],
        ));
        if !is_plain_drop {
            controller_rules.push(rule.clone());
        }
    }
    TranslationResult {
        dataplane_entries,
        controller_rules,
    }
}

/// Classifies a first-payload segment: highest priority among matching
/// rules, ties broken by ascending sid. `None` means no rule matched;
/// callers treat that as DROP (fail closed).
pub fn classify(seg: &Segment, rules: &[ClassificationRule]) -> Option<Alert> {
    let mut best: Option<&ClassificationRule> = None;
    for rule in rules {
        if !rule.matches(seg) {
            continue;
        }
        best = Some(match best {
            None => rule,
            Some(b) if rule.priority > b.priority => rule,
            Some(b) if rule.priority == b.priority && rule.sid < b.sid => rule,
            Some(b) => b,
        });
    }
    best.map(|r| Alert {
        action: r.action,
        sid: r.sid,
        matched_rule_priority: r.priority,
    })
}
