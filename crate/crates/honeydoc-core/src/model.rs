//! Shared frame, address and trace types used by every other module.
//!
//! Segments are simulated Ethernet/IP/TCP frames: addresses, ports, flags,
//! seq/ack and payload bytes only. No checksums, options or windows are
//! modeled; the migration machinery operates purely on these fields.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use std::net::Ipv4Addr;

/// Largest payload carried by one segment. Larger application writes are
/// split by the sender.
pub const MAX_PAYLOAD: usize = 1448;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("port {0} out of range 0-65535")]
    PortRange(u64),
    #[error("TCP segment must carry at least one flag")]
    EmptyTcpFlags,
    #[error("UDP segment must not carry flags or seq/ack")]
    UdpWithTcpFields,
    #[error("payload length {0} exceeds cap {MAX_PAYLOAD}")]
    PayloadTooLong(usize),
    #[error("malformed {what}: {input:?}")]
    Parse { what: &'static str, input: String },
}

/// Six-octet link-layer address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MacAddr(pub [u8; 6]);

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl FromStr for MacAddr {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 6];
        let mut parts = s.split(':');
        for slot in out.iter_mut() {
            let part = parts.next().ok_or_else(|| ModelError::Parse {
                what: "mac",
                input: s.to_string(),
            })?;
            if part.len() != 2 {
                return Err(ModelError::Parse {
                    what: "mac",
                    input: s.to_string(),
                });
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| ModelError::Parse {
                what: "mac",
                input: s.to_string(),
            })?;
        }
        if parts.next().is_some() {
            return Err(ModelError::Parse {
                what: "mac",
                input: s.to_string(),
            });
        }
        Ok(MacAddr(out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Proto {
    Tcp,
    Udp,
}

impl fmt::Display for Proto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Proto::Tcp => write!(f, "tcp"),
            Proto::Udp => write!(f, "udp"),
        }
    }
}

/// TCP flag set. Empty for UDP segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TcpFlags(u8);

impl TcpFlags {
    pub const SYN: TcpFlags = TcpFlags(1);
    pub const ACK: TcpFlags = TcpFlags(2);
    pub const PSH: TcpFlags = TcpFlags(4);
    pub const FIN: TcpFlags = TcpFlags(8);
    pub const RST: TcpFlags = TcpFlags(16);

    pub const fn empty() -> Self {
        TcpFlags(0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn union(self, other: TcpFlags) -> TcpFlags {
        TcpFlags(self.0 | other.0)
    }
}

impl std::ops::BitOr for TcpFlags {
    type Output = TcpFlags;
    fn bitor(self, rhs: TcpFlags) -> TcpFlags {
        self.union(rhs)
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "-");
        }
        let mut first = true;
        for (bit, name) in [
            (TcpFlags::SYN, "SYN"),
            (TcpFlags::ACK, "ACK"),
            (TcpFlags::PSH, "PSH"),
            (TcpFlags::FIN, "FIN"),
            (TcpFlags::RST, "RST"),
        ] {
            if self.contains(bit) {
                if !first {
                    write!(f, ",")?;
                }
                write!(f, "{name}")?;
                first = false;
            }
        }
        Ok(())
    }
}

impl FromStr for TcpFlags {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "-" {
            return Ok(TcpFlags::empty());
        }
        let mut flags = TcpFlags::empty();
        for part in s.split(',') {
            flags = flags
                | match part {
                    "SYN" => TcpFlags::SYN,
                    "ACK" => TcpFlags::ACK,
                    "PSH" => TcpFlags::PSH,
                    "FIN" => TcpFlags::FIN,
                    "RST" => TcpFlags::RST,
                    _ => {
                        return Err(ModelError::Parse {
                            what: "flags",
                            input: s.to_string(),
                        })
                    }
                };
        }
        Ok(flags)
    }
}

/// Directional connection identity: a->b and b->a are distinct tuples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FiveTuple {
    pub src_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_ip: Ipv4Addr,
    pub dst_port: u16,
    pub proto: Proto,
}

impl FiveTuple {
    pub fn reversed(&self) -> FiveTuple {
        FiveTuple {
            src_ip: self.dst_ip,
            src_port: self.dst_port,
            dst_ip: self.src_ip,
            dst_port: self.src_port,
            proto: self.proto,
        }
    }
}

impl fmt::Display for FiveTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}:{}->{}:{}",
            self.proto, self.src_ip, self.src_port, self.dst_ip, self.dst_port
        )
    }
}

/// A simulated frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub src_mac: MacAddr,
    pub dst_mac: MacAddr,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub proto: Proto,
    pub src_port: u16,
    pub dst_port: u16,
    pub flags: TcpFlags,
    pub seq: u32,
    pub ack: u32,
    pub payload: Vec<u8>,
}

impl Segment {
    /// Checked constructor. Ports are taken wide so range violations are
    /// reported instead of silently truncated.
    #[allow(clippy::too_many_arguments)]
    pub fn make(
        src_mac: MacAddr,
        dst_mac: MacAddr,
        src_ip: Ipv4Addr,
        dst_ip: Ipv4Addr,
        proto: Proto,
        src_port: u64,
        dst_port: u64,
        flags: TcpFlags,
        seq: u32,
        ack: u32,
        payload: Vec<u8>,
    ) -> Result<Segment, ModelError> {
        let src_port =
            u16::try_from(src_port).map_err(|_| ModelError::PortRange(src_port))?;
        let dst_port =
            u16::try_from(dst_port).map_err(|_| ModelError::PortRange(dst_port))?;
        if payload.len() > MAX_PAYLOAD {
            return Err(ModelError::PayloadTooLong(payload.len()));
        }
        match proto {
            Proto::Tcp if flags.is_empty() => return Err(ModelError::EmptyTcpFlags),
            Proto::Udp if !flags.is_empty() || seq != 0 || ack != 0 => {
                return Err(ModelError::UdpWithTcpFields)
            }
            _ => {}
        }
        Ok(Segment {
            src_mac,
            dst_mac,
            src_ip,
            dst_ip,
            proto,
            src_port,
            dst_port,
            flags,
            seq,
            ack,
            payload,
        })
    }

    pub fn five_tuple(&self) -> FiveTuple {
        FiveTuple {
            src_ip: self.src_ip,
            src_port: self.src_port,
            dst_ip: self.dst_ip,
            dst_port: self.dst_port,
            proto: self.proto,
        }
    }

    pub fn is_tcp(&self) -> bool {
        self.proto == Proto::Tcp
    }

    /// Lossless single-line text form carrying every field, including the
    /// absolute seq/ack and the payload in hex. Used for debugging dumps;
    /// the golden trace line is a lossy projection of this.
    pub fn encode_text(&self) -> String {
        let mut hex = String::with_capacity(self.payload.len() * 2);
        for b in &self.payload {
            hex.push_str(&format!("{b:02x}"));
        }
        format!(
            "{} {} {} {}:{} {}:{} {} {} {} {}",
            self.proto,
            self.src_mac,
            self.dst_mac,
            self.src_ip,
            self.src_port,
            self.dst_ip,
            self.dst_port,
            self.flags,
            self.seq,
            self.ack,
            if hex.is_empty() { "-".to_string() } else { hex }
        )
    }

    pub fn decode_text(line: &str) -> Result<Segment, ModelError> {
        let bad = || ModelError::Parse {
            what: "segment",
            input: line.to_string(),
        };
        let mut it = line.split_whitespace();
        let mut next = || it.next().ok_or_else(bad);
        let proto = match next()? {
            "tcp" => Proto::Tcp,
            "udp" => Proto::Udp,
            _ => return Err(bad()),
        };
        let src_mac: MacAddr = next()?.parse()?;
        let dst_mac: MacAddr = next()?.parse()?;
        let (src_ip, src_port) = parse_endpoint(next()?)?;
        let (dst_ip, dst_port) = parse_endpoint(next()?)?;
        let flags: TcpFlags = next()?.parse()?;
        let seq: u32 = next()?.parse().map_err(|_| bad())?;
        let ack: u32 = next()?.parse().map_err(|_| bad())?;
        let hex = next()?;
        let payload = if hex == "-" {
            Vec::new()
        } else {
            if hex.len() % 2 != 0 {
                return Err(bad());
            }
            (0..hex.len())
                .step_by(2)
                .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| bad()))
                .collect::<Result<Vec<u8>, _>>()?
        };
        Segment::make(
            src_mac,
            dst_mac,
            src_ip,
            dst_ip,
            proto,
            src_port as u64,
            dst_port as u64,
            flags,
            seq,
            ack,
            payload,
        )
    }
}

pub fn parse_endpoint(s: &str) -> Result<(Ipv4Addr, u16), ModelError> {
    let bad = || ModelError::Parse {
        what: "endpoint",
        input: s.to_string(),
    };
    let (ip, port) = s.rsplit_once(':').ok_or_else(bad)?;
    Ok((
        ip.parse().map_err(|_| bad())?,
        port.parse().map_err(|_| bad())?,
    ))
}

/// Modular 32-bit sequence arithmetic: `(base + delta) mod 2^32`.
///
/// `delta` must satisfy `|delta| < 2^32`; diffs between two ISNs always do.
pub fn seq_add(base: u32, delta: i64) -> u32 {
    debug_assert!(delta.abs() < (1i64 << 32));
    (i64::from(base) + delta).rem_euclid(1i64 << 32) as u32
}

/// Wrapped difference `a - b` as a signed offset in (-2^32, 2^32).
pub fn seq_diff(a: u32, b: u32) -> i64 {
    i64::from(a) - i64::from(b)
}
