//! Partitioned per-connection state.
//!
//! Connection state is split into three partitions with distinct owners:
//! identification (read-shared after install), the protocol machine (single
//! writer: the owning flow-group's protocol stage), and the app-interface +
//! congestion partition (commutative updates from replicated post stages).
//! Each partition has a fixed serialized layout whose size is pinned by tests.

use std::collections::HashMap;
use std::net::Ipv4Addr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::wire::{FourTuple, MacAddr, SeqNum, TcpFlags, TsOpt};

/// Dense handle into the flow table, allocated first-free by the control plane.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct FlowIndex(pub u32);

impl FlowIndex {
    pub const INVALID: FlowIndex = FlowIndex(u32::MAX);
}

impl Default for FlowIndex {
    fn default() -> Self {
        FlowIndex::INVALID
    }
}

/// Identification partition: immutable after flow installation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PreState {
    pub peer_mac: MacAddr,
    pub peer_ip: Ipv4Addr,
    pub local_port: u16,
    pub remote_port: u16,
    pub flow_group: u8,
}

pub const PRE_STATE_LEN: usize = 15;

impl PreState {
    pub fn to_bytes(&self) -> [u8; PRE_STATE_LEN] {
        let mut b = [0u8; PRE_STATE_LEN];
        b[0..6].copy_from_slice(&self.peer_mac.0);
        b[6..10].copy_from_slice(&self.peer_ip.octets());
        b[10..12].copy_from_slice(&self.local_port.to_be_bytes());
        b[12..14].copy_from_slice(&self.remote_port.to_be_bytes());
        b[14] = self.flow_group;
        b
    }

    pub fn from_bytes(b: &[u8; PRE_STATE_LEN]) -> PreState {
        PreState {
            peer_mac: MacAddr(b[0..6].try_into().unwrap()),
            peer_ip: Ipv4Addr::new(b[6], b[7], b[8], b[9]),
            local_port: u16::from_be_bytes([b[10], b[11]]),
            remote_port: u16::from_be_bytes([b[12], b[13]]),
            flow_group: b[14],
        }
    }
}

/// Protocol partition: the pipeline's only serialization point mutates this.
///
/// `rx_pos`/`tx_pos` are free-running byte offsets into the circular socket
/// buffers (ring index = offset masked by the power-of-two buffer size).
/// `tx_pos` tracks the buffer offset of the first sent-but-unacked byte.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct ProtoState {
    pub rx_pos: u32,
    pub tx_pos: u32,
    pub tx_avail: u32,
    pub rx_avail: u32,
    pub remote_win: u16,
    pub tx_sent: u32,
    pub seq: SeqNum,
    pub ack: SeqNum,
    pub ooo_start: SeqNum,
    pub ooo_len: u32,
    pub dupack_cnt: u8,
    pub next_ts: u32,
}

pub const PROTO_STATE_LEN: usize = 43;

impl ProtoState {
    pub fn to_bytes(&self) -> [u8; PROTO_STATE_LEN] {
        let mut b = [0u8; PROTO_STATE_LEN];
        b[0..4].copy_from_slice(&self.rx_pos.to_be_bytes());
        b[4..8].copy_from_slice(&self.tx_pos.to_be_bytes());
        b[8..12].copy_from_slice(&self.tx_avail.to_be_bytes());
        b[12..16].copy_from_slice(&self.rx_avail.to_be_bytes());
        b[16..18].copy_from_slice(&self.remote_win.to_be_bytes());
        b[18..22].copy_from_slice(&self.tx_sent.to_be_bytes());
        b[22..26].copy_from_slice(&self.seq.0.to_be_bytes());
        b[26..30].copy_from_slice(&self.ack.0.to_be_bytes());
        b[30..34].copy_from_slice(&self.ooo_start.0.to_be_bytes());
        b[34..38].copy_from_slice(&self.ooo_len.to_be_bytes());
        b[38] = self.dupack_cnt & 0x0f;
        b[39..43].copy_from_slice(&self.next_ts.to_be_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; PROTO_STATE_LEN]) -> ProtoState {
        let u32at = |o: usize| u32::from_be_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]]);
        ProtoState {
            rx_pos: u32at(0),
            tx_pos: u32at(4),
            tx_avail: u32at(8),
            rx_avail: u32at(12),
            remote_win: u16::from_be_bytes([b[16], b[17]]),
            tx_sent: u32at(18),
            seq: SeqNum(u32at(22)),
            ack: SeqNum(u32at(26)),
            ooo_start: SeqNum(u32at(30)),
            ooo_len: u32at(34),
            dupack_cnt: b[38] & 0x0f,
            next_ts: u32at(39),
        }
    }

    /// Structural invariants; `tx_size` is the transmit buffer capacity and
    /// `remote_win_max` the historical maximum advertised peer window.
    pub fn check_invariants(&self, tx_size: u32, remote_win_max: u32) -> Result<(), String> {
        if self.ooo_len != 0 && !self.ack.lt(self.ooo_start) {
            return Err(format!(
                "ooo interval start {:?} not beyond ack {:?}",
                self.ooo_start, self.ack
            ));
        }
        if self.tx_avail as u64 + self.tx_sent as u64 > tx_size as u64 {
            return Err(format!(
                "tx_avail {} + tx_sent {} exceeds buffer {}",
                self.tx_avail, self.tx_sent, tx_size
            ));
        }
        if self.tx_sent > remote_win_max {
            return Err(format!(
                "tx_sent {} exceeds historical remote window {}",
                self.tx_sent, remote_win_max
            ));
        }
        Ok(())
    }
}

/// App-interface + congestion partition as a plain serializable value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PostState {
    pub opaque: u64,
    pub context: u16,
    pub rx_base: u64,
    pub tx_base: u64,
    pub rx_size: u32,
    pub tx_size: u32,
    pub cnt_ackb: u32,
    pub cnt_ecnb: u32,
    pub cnt_fretx: u8,
    pub rtt_est: u32,
    pub rate: u32,
}

pub const POST_STATE_LEN: usize = 51;

impl PostState {
    pub fn to_bytes(&self) -> [u8; POST_STATE_LEN] {
        let mut b = [0u8; POST_STATE_LEN];
        b[0..8].copy_from_slice(&self.opaque.to_be_bytes());
        b[8..10].copy_from_slice(&self.context.to_be_bytes());
        b[10..18].copy_from_slice(&self.rx_base.to_be_bytes());
        b[18..26].copy_from_slice(&self.tx_base.to_be_bytes());
        b[26..30].copy_from_slice(&self.rx_size.to_be_bytes());
        b[30..34].copy_from_slice(&self.tx_size.to_be_bytes());
        b[34..38].copy_from_slice(&self.cnt_ackb.to_be_bytes());
        b[38..42].copy_from_slice(&self.cnt_ecnb.to_be_bytes());
        b[42] = self.cnt_fretx;
        b[43..47].copy_from_slice(&self.rtt_est.to_be_bytes());
        b[47..51].copy_from_slice(&self.rate.to_be_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; POST_STATE_LEN]) -> PostState {
        let u32at = |o: usize| u32::from_be_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]]);
        let u64at = |o: usize| {
            u64::from_be_bytes([
                b[o],
                b[o + 1],
                b[o + 2],
                b[o + 3],
                b[o + 4],
                b[o + 5],
                b[o + 6],
                b[o + 7],
            ])
        };
        PostState {
            opaque: u64at(0),
            context: u16::from_be_bytes([b[8], b[9]]),
            rx_base: u64at(10),
            tx_base: u64at(18),
            rx_size: u32at(26),
            tx_size: u32at(30),
            cnt_ackb: u32at(34),
            cnt_ecnb: u32at(38),
            cnt_fretx: b[42],
            rtt_est: u32at(43),
            rate: u32at(47),
        }
    }
}

/// Runtime form of the post partition. Counter updates from replicated post
/// instances commute, so they are plain atomics; the buffer geometry fields
/// are read-only after installation.
#[derive(Debug)]
pub struct PostShared {
    pub opaque: u64,
    pub context: u16,
    pub rx_base: u64,
    pub tx_base: u64,
    pub rx_size: u32,
    pub tx_size: u32,
    pub cnt_ackb: AtomicU64,
    pub cnt_ecnb: AtomicU64,
    pub cnt_fretx: AtomicU64,
    rtt_est_bits: AtomicU64,
    pub rate: AtomicU64,
}

impl PostShared {
    pub fn new(opaque: u64, context: u16, rx_base: u64, tx_base: u64, rx_size: u32, tx_size: u32) -> Self {
        assert!(rx_size.is_power_of_two() && tx_size.is_power_of_two());
        PostShared {
            opaque,
            context,
            rx_base,
            tx_base,
            rx_size,
            tx_size,
            cnt_ackb: AtomicU64::new(0),
            cnt_ecnb: AtomicU64::new(0),
            cnt_fretx: AtomicU64::new(0),
            rtt_est_bits: AtomicU64::new(0f64.to_bits()),
            rate: AtomicU64::new(0),
        }
    }

    pub fn rtt_est_us(&self) -> f64 {
        f64::from_bits(self.rtt_est_bits.load(Ordering::Relaxed))
    }

    pub fn set_rtt_est_us(&self, v: f64) {
        self.rtt_est_bits.store(v.to_bits(), Ordering::Relaxed);
    }

    /// EWMA update with gain 1/8.
    pub fn observe_rtt_sample(&self, sample_us: f64) {
        let prev = self.rtt_est_us();
        let next = if prev == 0.0 {
            sample_us
        } else {
            prev + (sample_us - prev) / 8.0
        };
        self.set_rtt_est_us(next);
    }

    pub fn snapshot(&self) -> PostState {
        PostState {
            opaque: self.opaque,
            context: self.context,
            rx_base: self.rx_base,
            tx_base: self.tx_base,
            rx_size: self.rx_size,
            tx_size: self.tx_size,
            cnt_ackb: self.cnt_ackb.load(Ordering::Relaxed) as u32,
            cnt_ecnb: self.cnt_ecnb.load(Ordering::Relaxed) as u32,
            cnt_fretx: self.cnt_fretx.load(Ordering::Relaxed) as u8,
            rtt_est: self.rtt_est_us() as u32,
            rate: self.rate.load(Ordering::Relaxed) as u32,
        }
    }
}

/// Protocol partition plus the shutdown bookkeeping that lives beside it.
#[derive(Clone, Copy, Debug, Default)]
pub struct ProtoBlock {
    pub st: ProtoState,
    /// App requested close; FIN rides the last transmitted segment.
    pub fin_pending: bool,
    /// Our FIN has consumed a sequence number and is in flight.
    pub fin_sent: bool,
    pub fin_acked: bool,
    /// Peer's FIN was consumed in order (stream EOF reached).
    pub peer_fin: bool,
    /// Monotonic mutation counter; orders scheduler hints from racy replicas.
    pub step: u64,
}

impl ProtoBlock {
    /// First unacknowledged sequence number.
    pub fn una(&self) -> SeqNum {
        let fin = if self.fin_sent && !self.fin_acked { 1 } else { 0 };
        self.st.seq - (self.st.tx_sent + fin)
    }

    /// Bytes the flow could transmit right now (window- and data-limited),
    /// counting a pending FIN as one unit so the scheduler still grants it.
    pub fn sendable(&self) -> u32 {
        let win = (self.st.remote_win as u32).saturating_sub(self.st.tx_sent);
        let data = self.st.tx_avail.min(win);
        if data == 0 && (self.fin_pending && !self.fin_sent) && self.st.tx_avail == 0 {
            1
        } else {
            data
        }
    }
}

/// Distilled header fields handed to the protocol and post stages; later
/// stages never reparse the raw segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeaderSummary {
    pub flow: FlowIndex,
    pub seq: SeqNum,
    pub ack: SeqNum,
    pub window: u16,
    pub flags: TcpFlags,
    pub payload_len: u32,
    pub ts: Option<TsOpt>,
    pub ecn_ce: bool,
}

/// One installed connection: all three partitions.
pub struct FlowEntry {
    pub pre: PreState,
    pub tuple: FourTuple,
    pub proto: Mutex<ProtoBlock>,
    pub post: PostShared,
}

/// The active-connection table: dense slots plus the tuple index used by the
/// pre-processing stage.
pub struct FlowTable {
    slots: Vec<RwLock<Option<Arc<FlowEntry>>>>,
    by_tuple: RwLock<HashMap<FourTuple, FlowIndex>>,
}

impl FlowTable {
    pub fn new(capacity: usize) -> Self {
        FlowTable {
            slots: (0..capacity).map(|_| RwLock::new(None)).collect(),
            by_tuple: RwLock::new(HashMap::new()),
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    /// First-free index allocation; `None` when the table is full.
    pub fn first_free(&self) -> Option<FlowIndex> {
        self.slots
            .iter()
            .position(|s| s.read().is_none())
            .map(|i| FlowIndex(i as u32))
    }

    pub fn install(&self, index: FlowIndex, entry: FlowEntry) {
        let tuple = entry.tuple;
        *self.slots[index.0 as usize].write() = Some(Arc::new(entry));
        self.by_tuple.write().insert(tuple, index);
    }

    pub fn remove(&self, index: FlowIndex) -> Option<Arc<FlowEntry>> {
        let entry = self.slots[index.0 as usize].write().take();
        if let Some(e) = &entry {
            self.by_tuple.write().remove(&e.tuple);
        }
        entry
    }

    pub fn get(&self, index: FlowIndex) -> Option<Arc<FlowEntry>> {
        self.slots.get(index.0 as usize)?.read().clone()
    }

    pub fn lookup(&self, tuple: &FourTuple) -> Option<FlowIndex> {
        self.by_tuple.read().get(tuple).copied()
    }

    /// Indices of all installed flows, in index order.
    pub fn installed(&self) -> Vec<FlowIndex> {
        (0..self.slots.len())
            .filter(|&i| self.slots[i].read().is_some())
            .map(|i| FlowIndex(i as u32))
            .collect()
    }
}
