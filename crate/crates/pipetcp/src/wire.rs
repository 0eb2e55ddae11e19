//! Ethernet/IPv4/TCP wire formats, internet checksums, and flow hashing.
//!
//! Frames are Ethernet II + IPv4 + TCP with at most the timestamp option.
//! Parsing borrows from the raw frame; building produces an owned frame with
//! both checksums filled.

use std::fmt;
use std::net::Ipv4Addr;

use bitflags::bitflags;

pub const ETH_HLEN: usize = 14;
pub const IPV4_HLEN: usize = 20;
pub const TCP_HLEN: usize = 20;
/// NOP,NOP,kind=8,len=10,val,ecr
pub const TCP_TS_OPT_LEN: usize = 12;
pub const MIN_FRAME_LEN: usize = ETH_HLEN + IPV4_HLEN + TCP_HLEN;

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_VLAN: u16 = 0x8100;
pub const IP_PROTO_TCP: u8 = 6;

/// 48-bit Ethernet address.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MacAddr(pub [u8; 6]);

impl fmt::Debug for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

bitflags! {
    /// TCP header flags (the subset the data path cares about).
    #[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Hash)]
    pub struct TcpFlags: u8 {
        const FIN = 0x01;
        const SYN = 0x02;
        const RST = 0x04;
        const PSH = 0x08;
        const ACK = 0x10;
        const ECE = 0x40;
        const CWR = 0x80;
    }
}

/// ECN codepoint from the low two bits of the IP TOS byte.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum Ecn {
    #[default]
    NotEct,
    Ect1,
    Ect0,
    Ce,
}

impl Ecn {
    pub fn from_bits(bits: u8) -> Self {
        match bits & 0b11 {
            0b00 => Ecn::NotEct,
            0b01 => Ecn::Ect1,
            0b10 => Ecn::Ect0,
            _ => Ecn::Ce,
        }
    }

    pub fn bits(self) -> u8 {
        match self {
            Ecn::NotEct => 0b00,
            Ecn::Ect1 => 0b01,
            Ecn::Ect0 => 0b10,
            Ecn::Ce => 0b11,
        }
    }

    pub fn is_ect(self) -> bool {
        !matches!(self, Ecn::NotEct)
    }
}

/// 32-bit TCP sequence number with modular arithmetic.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SeqNum(pub u32);

impl SeqNum {
    pub const ZERO: SeqNum = SeqNum(0);

    /// Signed modular distance `self - other` (RFC 1323 style comparisons).
    pub fn dist(self, other: SeqNum) -> i32 {
        self.0.wrapping_sub(other.0) as i32
    }

    pub fn lt(self, other: SeqNum) -> bool {
        self.dist(other) < 0
    }

    pub fn leq(self, other: SeqNum) -> bool {
        self.dist(other) <= 0
    }

    /// Modular maximum of two sequence numbers.
    pub fn max(self, other: SeqNum) -> SeqNum {
        if self.lt(other) {
            other
        } else {
            self
        }
    }
}

impl std::ops::Add<u32> for SeqNum {
    type Output = SeqNum;
    fn add(self, rhs: u32) -> SeqNum {
        SeqNum(self.0.wrapping_add(rhs))
    }
}

impl std::ops::AddAssign<u32> for SeqNum {
    fn add_assign(&mut self, rhs: u32) {
        self.0 = self.0.wrapping_add(rhs);
    }
}

impl std::ops::Sub<u32> for SeqNum {
    type Output = SeqNum;
    fn sub(self, rhs: u32) -> SeqNum {
        SeqNum(self.0.wrapping_sub(rhs))
    }
}

impl fmt::Debug for SeqNum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Connection 4-tuple. Field order is fixed: RX lookups use
/// (dst_ip, src_ip, dst_port, src_port) of the incoming segment, TX lookups
/// the mirror image. Never canonicalized by sorting.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct FourTuple {
    pub local_ip: Ipv4Addr,
    pub remote_ip: Ipv4Addr,
    pub local_port: u16,
    pub remote_port: u16,
}

impl FourTuple {
    /// The same connection as seen from the peer.
    pub fn flipped(&self) -> FourTuple {
        FourTuple {
            local_ip: self.remote_ip,
            remote_ip: self.local_ip,
            local_port: self.remote_port,
            remote_port: self.local_port,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct EthHdr {
    pub dst: MacAddr,
    pub src: MacAddr,
    pub ethertype: u16,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Ipv4Hdr {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub ecn: Ecn,
    pub ttl: u8,
    pub protocol: u8,
    pub total_len: u16,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TsOpt {
    pub val: u32,
    pub ecr: u32,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TcpHdr {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: SeqNum,
    pub ack: SeqNum,
    pub flags: TcpFlags,
    pub window: u16,
    pub ts: Option<TsOpt>,
}

/// Parsed segment; `payload` aliases the raw frame without copying.
#[derive(Clone, Copy, Debug)]
pub struct SegmentView<'a> {
    pub eth: EthHdr,
    pub ip: Ipv4Hdr,
    pub tcp: TcpHdr,
    pub payload: &'a [u8],
}

impl SegmentView<'_> {
    pub fn four_tuple_rx(&self) -> FourTuple {
        FourTuple {
            local_ip: self.ip.dst,
            remote_ip: self.ip.src,
            local_port: self.tcp.dst_port,
            remote_port: self.tcp.src_port,
        }
    }
}

#[derive(thiserror::Error, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Malformed {
    #[error("frame truncated")]
    Truncated,
    #[error("not an IPv4 frame")]
    NotIpv4,
    #[error("not a TCP segment")]
    NotTcp,
    #[error("ip total length inconsistent with frame")]
    LengthMismatch,
    #[error("bad header field")]
    BadHeader,
}

fn be16(b: &[u8], off: usize) -> u16 {
    u16::from_be_bytes([b[off], b[off + 1]])
}

fn be32(b: &[u8], off: usize) -> u32 {
    u32::from_be_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

/// Byte offsets of the protocol layers inside a raw frame.
#[derive(Clone, Copy, Debug)]
pub struct FrameOffsets {
    pub ip: usize,
    pub tcp: usize,
    pub payload: usize,
    /// One past the last IP-covered byte (total_len based, padding excluded).
    pub end: usize,
}

pub fn frame_offsets(raw: &[u8]) -> Result<FrameOffsets, Malformed> {
    if raw.len() < MIN_FRAME_LEN {
        return Err(Malformed::Truncated);
    }
    if be16(raw, 12) != ETHERTYPE_IPV4 {
        return Err(Malformed::NotIpv4);
    }
    let ip = ETH_HLEN;
    if raw[ip] >> 4 != 4 {
        return Err(Malformed::NotIpv4);
    }
    let ihl = ((raw[ip] & 0x0f) as usize) * 4;
    if ihl < IPV4_HLEN {
        return Err(Malformed::BadHeader);
    }
    let total_len = be16(raw, ip + 2) as usize;
    if total_len < ihl + TCP_HLEN || ip + total_len > raw.len() {
        return Err(Malformed::LengthMismatch);
    }
    if raw[ip + 9] != IP_PROTO_TCP {
        return Err(Malformed::NotTcp);
    }
    let tcp = ip + ihl;
    let doff = ((raw[tcp + 12] >> 4) as usize) * 4;
    if doff < TCP_HLEN || tcp + doff > ip + total_len {
        return Err(Malformed::BadHeader);
    }
    Ok(FrameOffsets {
        ip,
        tcp,
        payload: tcp + doff,
        end: ip + total_len,
    })
}

/// Decode a raw Ethernet frame into a [`SegmentView`].
pub fn parse_segment(raw: &[u8]) -> Result<SegmentView<'_>, Malformed> {
    let off = frame_offsets(raw)?;
    let eth = EthHdr {
        dst: MacAddr(raw[0..6].try_into().unwrap()),
        src: MacAddr(raw[6..12].try_into().unwrap()),
        ethertype: be16(raw, 12),
    };
    let ip = Ipv4Hdr {
        src: Ipv4Addr::from(be32(raw, off.ip + 12)),
        dst: Ipv4Addr::from(be32(raw, off.ip + 16)),
        ecn: Ecn::from_bits(raw[off.ip + 1]),
        ttl: raw[off.ip + 8],
        protocol: raw[off.ip + 9],
        total_len: be16(raw, off.ip + 2),
    };
    let mut ts = None;
    let mut o = off.tcp + TCP_HLEN;
    while o < off.payload {
        match raw[o] {
            0 => break,
            1 => o += 1,
            kind => {
                if o + 1 >= off.payload {
                    return Err(Malformed::BadHeader);
                }
                let len = raw[o + 1] as usize;
                if len < 2 || o + len > off.payload {
                    return Err(Malformed::BadHeader);
                }
                if kind == 8 && len == 10 {
                    ts = Some(TsOpt {
                        val: be32(raw, o + 2),
                        ecr: be32(raw, o + 6),
                    });
                }
                o += len;
            }
        }
    }
    let tcp = TcpHdr {
        src_port: be16(raw, off.tcp),
        dst_port: be16(raw, off.tcp + 2),
        seq: SeqNum(be32(raw, off.tcp + 4)),
        ack: SeqNum(be32(raw, off.tcp + 8)),
        flags: TcpFlags::from_bits_truncate(raw[off.tcp + 13]),
        window: be16(raw, off.tcp + 14),
        ts,
    };
    Ok(SegmentView {
        eth,
        ip,
        tcp,
        payload: &raw[off.payload..off.end],
    })
}

/// Serialize headers + payload into a fresh frame, both checksums filled.
pub fn build_segment(eth: &EthHdr, ip: &Ipv4Hdr, tcp: &TcpHdr, payload: &[u8]) -> Vec<u8> {
    let opt_len = if tcp.ts.is_some() { TCP_TS_OPT_LEN } else { 0 };
    let tcp_len = TCP_HLEN + opt_len + payload.len();
    let total_len = IPV4_HLEN + tcp_len;
    let mut f = vec![0u8; ETH_HLEN + total_len];
    f[0..6].copy_from_slice(&eth.dst.0);
    f[6..12].copy_from_slice(&eth.src.0);
    f[12..14].copy_from_slice(&eth.ethertype.to_be_bytes());

    let b = ETH_HLEN;
    f[b] = 0x45;
    f[b + 1] = ip.ecn.bits();
    f[b + 2..b + 4].copy_from_slice(&(total_len as u16).to_be_bytes());
    // identification/flags/fragment zero
    f[b + 8] = ip.ttl;
    f[b + 9] = ip.protocol;
    f[b + 12..b + 16].copy_from_slice(&ip.src.octets());
    f[b + 16..b + 20].copy_from_slice(&ip.dst.octets());
    let ipsum = internet_checksum(&[&f[b..b + IPV4_HLEN]]);
    f[b + 10..b + 12].copy_from_slice(&ipsum.to_be_bytes());

    let t = b + IPV4_HLEN;
    f[t..t + 2].copy_from_slice(&tcp.src_port.to_be_bytes());
    f[t + 2..t + 4].copy_from_slice(&tcp.dst_port.to_be_bytes());
    f[t + 4..t + 8].copy_from_slice(&tcp.seq.0.to_be_bytes());
    f[t + 8..t + 12].copy_from_slice(&tcp.ack.0.to_be_bytes());
    f[t + 12] = (((TCP_HLEN + opt_len) / 4) as u8) << 4;
    f[t + 13] = tcp.flags.bits();
    f[t + 14..t + 16].copy_from_slice(&tcp.window.to_be_bytes());
    if let Some(ts) = tcp.ts {
        let o = t + TCP_HLEN;
        f[o] = 1;
        f[o + 1] = 1;
        f[o + 2] = 8;
        f[o + 3] = 10;
        f[o + 4..o + 8].copy_from_slice(&ts.val.to_be_bytes());
        f[o + 8..o + 12].copy_from_slice(&ts.ecr.to_be_bytes());
    }
    f[t + TCP_HLEN + opt_len..].copy_from_slice(payload);
    fill_checksum(&mut f).expect("freshly built frame is well formed");
    f
}

/// RFC 1071 ones-complement sum over a sequence of byte slices, treated as one
/// contiguous big-endian 16-bit stream.
pub fn internet_checksum(chunks: &[&[u8]]) -> u16 {
    let mut sum: u32 = 0;
    let mut pending: Option<u8> = None;
    for chunk in chunks {
        for &byte in *chunk {
            match pending.take() {
                None => pending = Some(byte),
                Some(hi) => sum += u32::from(u16::from_be_bytes([hi, byte])),
            }
        }
    }
    if let Some(hi) = pending {
        sum += u32::from(u16::from_be_bytes([hi, 0]));
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

fn tcp_pseudo_header(raw: &[u8], off: FrameOffsets) -> [u8; 12] {
    let tcp_len = (off.end - off.tcp) as u16;
    let mut p = [0u8; 12];
    p[0..4].copy_from_slice(&raw[off.ip + 12..off.ip + 16]);
    p[4..8].copy_from_slice(&raw[off.ip + 16..off.ip + 20]);
    p[9] = IP_PROTO_TCP;
    p[10..12].copy_from_slice(&tcp_len.to_be_bytes());
    p
}

/// True iff the TCP checksum over pseudo-header + segment verifies.
pub fn verify_checksum(raw: &[u8]) -> bool {
    let Ok(off) = frame_offsets(raw) else {
        return false;
    };
    let pseudo = tcp_pseudo_header(raw, off);
    // Valid iff the ones-complement sum over everything (checksum included)
    // folds to zero.
    internet_checksum(&[&pseudo, &raw[off.tcp..off.end]]) == 0
}

/// Recompute and store the TCP checksum (and the IPv4 header checksum) so that
/// [`verify_checksum`] subsequently holds.
pub fn fill_checksum(raw: &mut [u8]) -> Result<(), Malformed> {
    let off = frame_offsets(raw)?;
    let ihl = off.tcp - off.ip;
    raw[off.ip + 10] = 0;
    raw[off.ip + 11] = 0;
    let ipsum = internet_checksum(&[&raw[off.ip..off.ip + ihl]]);
    raw[off.ip + 10..off.ip + 12].copy_from_slice(&ipsum.to_be_bytes());

    raw[off.tcp + 16] = 0;
    raw[off.tcp + 17] = 0;
    let pseudo = tcp_pseudo_header(raw, off);
    let sum = internet_checksum(&[&pseudo, &raw[off.tcp..off.end]]);
    raw[off.tcp + 16..off.tcp + 18].copy_from_slice(&sum.to_be_bytes());
    Ok(())
}

const fn crc32_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xedb8_8320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

static CRC32_TABLE: [u32; 256] = crc32_table();

/// CRC-32 (IEEE polynomial, reflected, init/xorout all-ones).
pub fn crc32(data: &[u8]) -> u32 {
    let mut c = !0u32;
    for &b in data {
        c = CRC32_TABLE[((c ^ b as u32) & 0xff) as usize] ^ (c >> 8);
    }
    !c
}

/// Deterministic flow hash: CRC-32 over the big-endian tuple serialization.
pub fn flow_hash(tuple: &FourTuple) -> u32 {
    let mut buf = [0u8; 12];
    buf[0..4].copy_from_slice(&tuple.local_ip.octets());
    buf[4..8].copy_from_slice(&tuple.remote_ip.octets());
    buf[8..10].copy_from_slice(&tuple.local_port.to_be_bytes());
    buf[10..12].copy_from_slice(&tuple.remote_port.to_be_bytes());
    crc32(&buf)
}

/// Flow-group assignment: `flow_hash(tuple) mod groups`.
pub fn flow_group(tuple: &FourTuple, groups: u32) -> u32 {
    flow_hash(tuple) % groups
}
