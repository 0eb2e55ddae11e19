//! The protocol stage: the only mutator of a flow's protocol partition.
//!
//! All three entry points (`protocol_rx`, `protocol_tx`, `protocol_hc`) are
//! pure with respect to everything except the passed [`ProtoBlock`]; the
//! pipeline guarantees descriptors of one flow enter in a fixed order, so no
//! locking discipline beyond single ownership is required here.

use crate::state::{FlowIndex, HeaderSummary, ProtoBlock};
use crate::wire::{SeqNum, TcpFlags};

/// Where a received payload lands in the circular receive buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    /// Free-running receive-buffer offset.
    pub buf_offset: u32,
    /// Offset into the segment payload where copying starts (head trim).
    pub payload_start: u32,
    pub len: u32,
}

/// Snapshot of protocol state forwarded to the post stage; everything the
/// acknowledgment builder and the statistics updates need.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProtoSnapshot {
    pub seq: SeqNum,
    pub ack: SeqNum,
    /// Receive window to advertise (clamped to u16 at segment build time).
    pub rx_window: u32,
    /// Peer timestamp to echo as ts_ecr.
    pub next_ts: u32,
    /// The triggering segment's ts_ecr (our reflected clock), 0 when absent.
    pub seg_ts_ecr: u32,
    /// Triggering segment carried a CE codepoint (echo ECE in the ack).
    pub ecn_ce: bool,
    /// Triggering segment carried ECE (peer saw marks on our data).
    pub ece: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SchedHint {
    pub flow: FlowIndex,
    /// Bytes currently sendable (window- and data-limited); a pending FIN
    /// with no data counts as one unit so it still earns a grant.
    pub pending: u32,
    /// Protocol step counter; the scheduler keeps the freshest hint.
    pub step: u64,
}

#[derive(Clone, Debug)]
pub struct RxOutcome {
    pub placement: Option<Placement>,
    pub ack_due: bool,
    /// Newly acknowledged payload bytes (transmit buffer space to free).
    pub freed_tx: u32,
    pub fast_retransmit: bool,
    /// Total in-order advance this step, including an absorbed interval.
    pub new_rx_bytes: u32,
    /// Free-running receive-buffer offset where the advance began.
    pub notify_offset: u32,
    /// Peer FIN consumed in order this step (stream EOF).
    pub peer_fin_reached: bool,
    /// Payload discarded by the single-interval rule.
    pub ooo_dropped: bool,
    pub our_fin_acked: bool,
    pub snapshot: ProtoSnapshot,
    pub hint: SchedHint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TxSegmentPlan {
    pub seq: SeqNum,
    /// Free-running transmit-buffer offset of the first payload byte.
    pub buf_offset: u32,
    pub len: u32,
    pub fin: bool,
}

/// Host-control commands as seen by the protocol stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HcCmd {
    TxBump(u32),
    RxBump(u32),
    Fin,
    Retransmit,
}

#[derive(Clone, Debug)]
pub struct HcOutcome {
    pub hint: SchedHint,
    /// Receive window reopened enough to be worth advertising unprompted.
    pub window_update: Option<ProtoSnapshot>,
}

fn snapshot(blk: &ProtoBlock, s: Option<&HeaderSummary>) -> ProtoSnapshot {
    ProtoSnapshot {
        seq: blk.st.seq,
        ack: blk.st.ack,
        rx_window: blk.st.rx_avail,
        next_ts: blk.st.next_ts,
        seg_ts_ecr: s.and_then(|s| s.ts.map(|t| t.ecr)).unwrap_or(0),
        ecn_ce: s.map(|s| s.ecn_ce).unwrap_or(false),
        ece: s.map(|s| s.flags.contains(TcpFlags::ECE)).unwrap_or(false),
    }
}

fn hint(flow: FlowIndex, blk: &ProtoBlock) -> SchedHint {
    SchedHint {
        flow,
        pending: blk.sendable(),
        step: blk.step,
    }
}

/// Go-back-N reset: rewind the transmission state to the last cumulatively
/// acknowledged sequence number. An unacked FIN gives its number back too.
fn reset_transmission(blk: &mut ProtoBlock) {
    let fin_rewind = if blk.fin_sent && !blk.fin_acked { 1 } else { 0 };
    blk.st.seq = blk.st.seq - (blk.st.tx_sent + fin_rewind);
    blk.st.tx_avail += blk.st.tx_sent;
    blk.st.tx_sent = 0;
    blk.st.dupack_cnt = 0;
    if fin_rewind == 1 {
        blk.fin_sent = false;
    }
}

const DUPACK_THRESHOLD: u8 = 3;

/// Process one received data-path segment in epoch order.
pub fn protocol_rx(flow: FlowIndex, blk: &mut ProtoBlock, s: &HeaderSummary) -> RxOutcome {
    let mut out = RxOutcome {
        placement: None,
        ack_due: false,
        freed_tx: 0,
        fast_retransmit: false,
        new_rx_bytes: 0,
        notify_offset: blk.st.rx_pos,
        peer_fin_reached: false,
        ooo_dropped: false,
        our_fin_acked: false,
        snapshot: snapshot(blk, Some(s)),
        hint: SchedHint::default(),
    };

    // --- acknowledgment processing ---
    if s.flags.contains(TcpFlags::ACK) {
        let una = blk.una();
        let acked_total = s.ack.dist(una);
        let win_changed = s.window != blk.st.remote_win;
        if acked_total > 0 && s.ack.leq(blk.st.seq) {
            let data_acked = (acked_total as u32).min(blk.st.tx_sent);
            blk.st.tx_sent -= data_acked;
            blk.st.tx_pos = blk.st.tx_pos.wrapping_add(data_acked);
            out.freed_tx = data_acked;
            if blk.fin_sent && !blk.fin_acked && s.ack == blk.st.seq {
                blk.fin_acked = true;
                out.our_fin_acked = true;
            }
            blk.st.dupack_cnt = 0;
        } else if acked_total == 0 {
            let pure_dup = s.payload_len == 0
                && !win_changed
                && !s.flags.contains(TcpFlags::FIN)
                && blk.st.tx_sent > 0;
            if pure_dup {
                blk.st.dupack_cnt = blk.st.dupack_cnt.saturating_add(1);
                if blk.st.dupack_cnt >= DUPACK_THRESHOLD {
                    out.fast_retransmit = true;
                    reset_transmission(blk);
                }
            } else if win_changed {
                // A window change breaks the duplicate run.
                blk.st.dupack_cnt = 0;
            }
        }
        // Stale or futuristic acks fall through without touching send state.
        blk.st.remote_win = s.window;
    }
    if let Some(ts) = s.ts {
        blk.st.next_ts = ts.val;
    }

    // --- payload placement ---
    let mut seq_lo = s.seq;
    let mut len = s.payload_len;
    let mut payload_start = 0u32;
    if len > 0 {
        if seq_lo.lt(blk.st.ack) {
            let overlap = blk.st.ack.dist(seq_lo) as u32;
            if overlap >= len {
                // Entirely old: retransmission, answer with the expected seq.
                len = 0;
                out.ack_due = true;
            } else {
                payload_start = overlap;
                len -= overlap;
                seq_lo = blk.st.ack;
            }
        }
    }
    if len > 0 {
        if seq_lo == blk.st.ack {
            let take = len.min(blk.st.rx_avail);
            if take > 0 {
                out.placement = Some(Placement {
                    buf_offset: blk.st.rx_pos,
                    payload_start,
                    len: take,
                });
                let old_ack = blk.st.ack;
                blk.st.ack += take;
                blk.st.rx_pos = blk.st.rx_pos.wrapping_add(take);
                blk.st.rx_avail -= take;
                if blk.st.ooo_len > 0 && blk.st.ooo_start.leq(blk.st.ack) {
                    let int_end = blk.st.ooo_start + blk.st.ooo_len;
                    if blk.st.ack.lt(int_end) {
                        let extra = int_end.dist(blk.st.ack) as u32;
                        debug_assert!(extra <= blk.st.rx_avail);
                        blk.st.ack = int_end;
                        blk.st.rx_pos = blk.st.rx_pos.wrapping_add(extra);
                        blk.st.rx_avail -= extra;
                    }
                    blk.st.ooo_len = 0;
                }
                out.new_rx_bytes = blk.st.ack.dist(old_ack) as u32;
            }
            out.ack_due = true;
        } else {
            // Out of order: grow the single interval or drop.
            let gap = seq_lo.dist(blk.st.ack) as u32;
            if gap >= blk.st.rx_avail {
                out.ooo_dropped = true;
            } else {
                let take = len.min(blk.st.rx_avail - gap);
                let seg_end = seq_lo + take;
                let int_end = blk.st.ooo_start + blk.st.ooo_len;
                if blk.st.ooo_len == 0 {
                    blk.st.ooo_start = seq_lo;
                    blk.st.ooo_len = take;
                    out.placement = Some(Placement {
                        buf_offset: blk.st.rx_pos.wrapping_add(gap),
                        payload_start,
                        len: take,
                    });
                } else if seq_lo.leq(int_end) && blk.st.ooo_start.leq(seg_end) {
                    let new_start = if seq_lo.lt(blk.st.ooo_start) {
                        seq_lo
                    } else {
                        blk.st.ooo_start
                    };
                    let new_end = int_end.max(seg_end);
                    blk.st.ooo_start = new_start;
                    blk.st.ooo_len = new_end.dist(new_start) as u32;
                    out.placement = Some(Placement {
                        buf_offset: blk.st.rx_pos.wrapping_add(gap),
                        payload_start,
                        len: take,
                    });
                } else {
                    out.ooo_dropped = true;
                }
            }
            // Always acknowledge with the expected sequence number so the
            // sender's loss detection fires.
            out.ack_due = true;
        }
    }

    // --- FIN consumption (in order only; an out-of-order FIN is retried) ---
    if s.flags.contains(TcpFlags::FIN) && !blk.peer_fin {
        let fin_seq = s.seq + s.payload_len;
        if fin_seq == blk.st.ack {
            blk.st.ack += 1;
            blk.peer_fin = true;
            out.peer_fin_reached = true;
            out.ack_due = true;
        } else if fin_seq.lt(blk.st.ack) {
            out.ack_due = true;
        }
    }

    blk.step += 1;
    out.snapshot = snapshot(blk, Some(s));
    out.hint = hint(flow, blk);
    out
}

/// Emit transmit segment plans for a scheduler grant of `quantum` bytes.
pub fn protocol_tx(
    flow: FlowIndex,
    blk: &mut ProtoBlock,
    quantum: u32,
    mss: u32,
) -> (Vec<TxSegmentPlan>, SchedHint) {
    let mut plans = Vec::new();
    let mut remaining = quantum;
    loop {
        let win_free = (blk.st.remote_win as u32).saturating_sub(blk.st.tx_sent);
        let len = mss.min(blk.st.tx_avail).min(win_free).min(remaining);
        if len == 0 {
            break;
        }
        plans.push(TxSegmentPlan {
            seq: blk.st.seq,
            buf_offset: blk.st.tx_pos.wrapping_add(blk.st.tx_sent),
            len,
            fin: false,
        });
        blk.st.seq += len;
        blk.st.tx_avail -= len;
        blk.st.tx_sent += len;
        remaining -= len;
    }
    if blk.fin_pending && !blk.fin_sent && blk.st.tx_avail == 0 {
        match plans.last_mut() {
            Some(last) => last.fin = true,
            None => plans.push(TxSegmentPlan {
                seq: blk.st.seq,
                buf_offset: blk.st.tx_pos.wrapping_add(blk.st.tx_sent),
                len: 0,
                fin: true,
            }),
        }
        blk.st.seq += 1;
        blk.fin_sent = true;
    }
    blk.step += 1;
    (plans, hint(flow, blk))
}

/// Apply a host-control command.
pub fn protocol_hc(flow: FlowIndex, blk: &mut ProtoBlock, cmd: HcCmd, mss: u32) -> HcOutcome {
    let mut window_update = None;
    match cmd {
        HcCmd::TxBump(len) => {
            blk.st.tx_avail += len;
        }
        HcCmd::RxBump(len) => {
            let old = blk.st.rx_avail;
            blk.st.rx_avail += len;
            // Reopening from (near) zero deserves an unprompted window
            // update, otherwise a stalled sender may never learn of it.
            if (old == 0 && blk.st.rx_avail > 0) || (old < mss && blk.st.rx_avail >= mss) {
                window_update = Some(snapshot(blk, None));
            }
        }
        HcCmd::Fin => {
            blk.fin_pending = true;
        }
        HcCmd::Retransmit => {
            reset_transmission(blk);
        }
    }
    blk.step += 1;
    if window_update.is_some() {
        window_update = Some(snapshot(blk, None));
    }
    HcOutcome {
        hint: hint(flow, blk),
        window_update,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::ProtoState;
    use crate::wire::TsOpt;

    const FLOW: FlowIndex = FlowIndex(1);
    const MSS: u32 = 1448;

    fn block(st: ProtoState) -> ProtoBlock {
        ProtoBlock {
            st,
            ..Default::default()
        }
    }

    fn data_seg(seq: u32, len: u32) -> HeaderSummary {
        HeaderSummary {
            flow: FLOW,
            seq: SeqNum(seq),
            ack: SeqNum(0),
            window: 65535,
            flags: TcpFlags::ACK | TcpFlags::PSH,
            payload_len: len,
            ts: None,
            ecn_ce: false,
        }
    }

    #[test]
    fn rx_in_order_advances() {
        let mut blk = block(ProtoState {
            ack: SeqNum(1000),
            rx_avail: 4096,
            rx_pos: 64,
            remote_win: 65535,
            ..Default::default()
        });
        let out = protocol_rx(FLOW, &mut blk, &data_seg(1000, 100));
        assert_eq!(blk.st.ack, SeqNum(1100));
        assert_eq!(blk.st.rx_avail, 3996);
        assert_eq!(
            out.placement,
            Some(Placement {
                buf_offset: 64,
                payload_start: 0,
                len: 100
            })
        );
        assert!(out.ack_due);
        assert_eq!(out.new_rx_bytes, 100);
        assert_eq!(out.notify_offset, 64);
    }

    #[test]
    fn rx_out_of_order_opens_interval() {
        let mut blk = block(ProtoState {
            ack: SeqNum(1000),
            rx_avail: 4096,
            remote_win: 65535,
            ..Default::default()
        });
        let out = protocol_rx(FLOW, &mut blk, &data_seg(1200, 100));
        assert_eq!(blk.st.ooo_start, SeqNum(1200));
        assert_eq!(blk.st.ooo_len, 100);
        assert_eq!(blk.st.ack, SeqNum(1000));
        assert!(out.ack_due);
        assert_eq!(out.snapshot.ack, SeqNum(1000));
        assert_eq!(
            out.placement,
            Some(Placement {
                buf_offset: 200,
                payload_start: 0,
                len: 100
            })
        );
        // Second interval beyond the first is dropped, still acked.
        let out = protocol_rx(FLOW, &mut blk, &data_seg(1400, 50));
        assert!(out.ooo_dropped);
        assert!(out.placement.is_none());
        assert!(out.ack_due);
        assert_eq!(out.snapshot.ack, SeqNum(1000));
        assert_eq!(blk.st.ooo_len, 100);
    }

    #[test]
    fn rx_fill_absorbs_interval() {
        let mut blk = block(ProtoState {
            ack: SeqNum(1000),
            rx_avail: 4096,
            remote_win: 65535,
            ooo_start: SeqNum(1200),
            ooo_len: 100,
            ..Default::default()
        });
        let out = protocol_rx(FLOW, &mut blk, &data_seg(1000, 200));
        assert_eq!(blk.st.ack, SeqNum(1300));
        assert_eq!(blk.st.ooo_len, 0);
        assert_eq!(out.new_rx_bytes, 300);
        assert_eq!(blk.st.rx_avail, 4096 - 300);
    }

    #[test]
    fn rx_overlapping_fill_absorbs_interval() {
        let mut blk = block(ProtoState {
            ack: SeqNum(1000),
            rx_avail: 4096,
            remote_win: 65535,
            ooo_start: SeqNum(1200),
            ooo_len: 100,
            ..Default::default()
        });
        // Covers [1000, 1250): overlaps the interval, which ends at 1300.
        let out = protocol_rx(FLOW, &mut blk, &data_seg(1000, 250));
        assert_eq!(blk.st.ack, SeqNum(1300));
        assert_eq!(blk.st.ooo_len, 0);
        assert_eq!(out.new_rx_bytes, 300);
    }

    #[test]
    fn rx_interval_extension_both_ends() {
        let mut blk = block(ProtoState {
            ack: SeqNum(1000),
            rx_avail: 8192,
            remote_win: 65535,
            ooo_start: SeqNum(1200),
            ooo_len: 100,
            ..Default::default()
        });
        // Extend at the tail.
        protocol_rx(FLOW, &mut blk, &data_seg(1300, 100));
        assert_eq!((blk.st.ooo_start, blk.st.ooo_len), (SeqNum(1200), 200));
        // Extend at the head.
        protocol_rx(FLOW, &mut blk, &data_seg(1100, 100));
        assert_eq!((blk.st.ooo_start, blk.st.ooo_len), (SeqNum(1100), 300));
    }

    #[test]
    fn rx_head_trim_of_partly_old_segment() {
        let mut blk = block(ProtoState {
            ack: SeqNum(1000),
            rx_avail: 4096,
            rx_pos: 0,
            remote_win: 65535,
            ..Default::default()
        });
        let out = protocol_rx(FLOW, &mut blk, &data_seg(900, 200));
        assert_eq!(blk.st.ack, SeqNum(1100));
        assert_eq!(
            out.placement,
            Some(Placement {
                buf_offset: 0,
                payload_start: 100,
                len: 100
            })
        );
    }

    #[test]
    fn rx_fully_old_segment_elicits_ack_only() {
        let mut blk = block(ProtoState {
            ack: SeqNum(1000),
            rx_avail: 4096,
            remote_win: 65535,
            ..Default::default()
        });
        let out = protocol_rx(FLOW, &mut blk, &data_seg(800, 100));
        assert!(out.placement.is_none());
        assert!(out.ack_due);
        assert_eq!(blk.st.ack, SeqNum(1000));
    }

    fn pure_ack(ack: u32, window: u16) -> HeaderSummary {
        HeaderSummary {
            flow: FLOW,
            seq: SeqNum(0),
            ack: SeqNum(ack),
            window,
            flags: TcpFlags::ACK,
            payload_len: 0,
            ts: None,
            ecn_ce: false,
        }
    }

    #[test]
    fn ack_frees_transmit_state() {
        let mut blk = block(ProtoState {
            seq: SeqNum(5000),
            tx_sent: 2000,
            tx_pos: 100,
            remote_win: 4000,
            ..Default::default()
        });
        let out = protocol_rx(FLOW, &mut blk, &pure_ack(4000, 4000));
        assert_eq!(out.freed_tx, 1000);
        assert_eq!(blk.st.tx_sent, 1000);
        assert_eq!(blk.st.tx_pos, 1100);
        assert_eq!(blk.una(), SeqNum(4000));
    }

    #[test]
    fn third_pure_duplicate_triggers_fast_retransmit() {
        let mut blk = block(ProtoState {
            seq: SeqNum(8000),
            tx_sent: 2896,
            tx_avail: 104,
            remote_win: 4000,
            ..Default::default()
        });
        for _ in 0..2 {
            let out = protocol_rx(FLOW, &mut blk, &pure_ack(5104, 4000));
            assert!(!out.fast_retransmit);
        }
        let out = protocol_rx(FLOW, &mut blk, &pure_ack(5104, 4000));
        assert!(out.fast_retransmit);
        // Reset example arithmetic: seq 8000 -> 5104, avail 104 -> 3000.
        assert_eq!(blk.st.seq, SeqNum(5104));
        assert_eq!(blk.st.tx_avail, 3000);
        assert_eq!(blk.st.tx_sent, 0);
        assert_eq!(blk.st.dupack_cnt, 0);
    }

    #[test]
    fn window_change_breaks_duplicate_run() {
        let mut blk = block(ProtoState {
            seq: SeqNum(8000),
            tx_sent: 2896,
            remote_win: 4000,
            ..Default::default()
        });
        protocol_rx(FLOW, &mut blk, &pure_ack(5104, 4000));
        protocol_rx(FLOW, &mut blk, &pure_ack(5104, 4000));
        assert_eq!(blk.st.dupack_cnt, 2);
        protocol_rx(FLOW, &mut blk, &pure_ack(5104, 8000));
        assert_eq!(blk.st.dupack_cnt, 0);
        assert_eq!(blk.st.remote_win, 8000);
    }

    #[test]
    fn tx_emits_window_limited_plans() {
        let mut blk = block(ProtoState {
            seq: SeqNum(5000),
            tx_avail: 3000,
            tx_sent: 0,
            remote_win: 2000,
            ..Default::default()
        });
        let (plans, hint) = protocol_tx(FLOW, &mut blk, 4096, MSS);
        assert_eq!(
            plans,
            vec![
                TxSegmentPlan {
                    seq: SeqNum(5000),
                    buf_offset: 0,
                    len: 1448,
                    fin: false
                },
                TxSegmentPlan {
                    seq: SeqNum(6448),
                    buf_offset: 1448,
                    len: 552,
                    fin: false
                },
            ]
        );
        assert_eq!(blk.st.tx_sent, 2000);
        assert_eq!(blk.st.tx_avail, 1000);
        assert_eq!(hint.pending, 0); // window now full

        // Window full: nothing more comes out.
        let (plans, _) = protocol_tx(FLOW, &mut blk, 4096, MSS);
        assert!(plans.is_empty());
    }

    #[test]
    fn tx_with_nothing_to_send_is_empty() {
        let mut blk = block(ProtoState {
            seq: SeqNum(100),
            tx_avail: 0,
            remote_win: 4000,
            ..Default::default()
        });
        let before = blk.st;
        let (plans, _) = protocol_tx(FLOW, &mut blk, 4096, MSS);
        assert!(plans.is_empty());
        assert_eq!(blk.st, before);
    }

    #[test]
    fn hc_bumps_and_reset() {
        let mut blk = block(ProtoState {
            remote_win: 4000,
            ..Default::default()
        });
        let out = protocol_hc(FLOW, &mut blk, HcCmd::TxBump(512), MSS);
        assert_eq!(blk.st.tx_avail, 512);
        assert_eq!(out.hint.pending, 512);

        let mut blk = block(ProtoState {
            seq: SeqNum(8000),
            tx_sent: 2896,
            tx_avail: 104,
            remote_win: 4000,
            ..Default::default()
        });
        protocol_hc(FLOW, &mut blk, HcCmd::Retransmit, MSS);
        assert_eq!(blk.st.seq, SeqNum(5104));
        assert_eq!(blk.st.tx_avail, 3000);
        assert_eq!(blk.st.tx_sent, 0);
        // Go-back-N soundness: the next plan starts at the last acked byte.
        let (plans, _) = protocol_tx(FLOW, &mut blk, 4096, MSS);
        assert_eq!(plans[0].seq, SeqNum(5104));
        assert_eq!(plans[0].buf_offset, blk.st.tx_pos);
    }

    #[test]
    fn fin_rides_last_segment_and_consumes_a_number() {
        let mut blk = block(ProtoState {
            seq: SeqNum(100),
            tx_avail: 700,
            remote_win: 4000,
            ..Default::default()
        });
        protocol_hc(FLOW, &mut blk, HcCmd::Fin, MSS);
        let (plans, _) = protocol_tx(FLOW, &mut blk, 4096, MSS);
        assert_eq!(plans.len(), 1);
        assert!(plans[0].fin);
        assert_eq!(plans[0].len, 700);
        assert_eq!(blk.st.seq, SeqNum(100 + 700 + 1));
        assert!(blk.fin_sent);

        // Peer ack of everything including FIN.
        let out = protocol_rx(FLOW, &mut blk, &pure_ack(801, 4000));
        assert!(out.our_fin_acked);
        assert!(blk.fin_acked);
    }

    #[test]
    fn bare_fin_emits_empty_segment() {
        let mut blk = block(ProtoState {
            seq: SeqNum(100),
            remote_win: 4000,
            ..Default::default()
        });
        protocol_hc(FLOW, &mut blk, HcCmd::Fin, MSS);
        let (plans, _) = protocol_tx(FLOW, &mut blk, 4096, MSS);
        assert_eq!(plans.len(), 1);
        assert_eq!(plans[0].len, 0);
        assert!(plans[0].fin);
        assert_eq!(blk.st.seq, SeqNum(101));
    }

    #[test]
    fn reset_with_unacked_fin_rewinds_it() {
        let mut blk = block(ProtoState {
            seq: SeqNum(100),
            tx_avail: 300,
            remote_win: 4000,
            ..Default::default()
        });
        protocol_hc(FLOW, &mut blk, HcCmd::Fin, MSS);
        protocol_tx(FLOW, &mut blk, 4096, MSS);
        assert_eq!(blk.st.seq, SeqNum(401));
        protocol_hc(FLOW, &mut blk, HcCmd::Retransmit, MSS);
        assert_eq!(blk.st.seq, SeqNum(100));
        assert!(!blk.fin_sent && blk.fin_pending);
        let (plans, _) = protocol_tx(FLOW, &mut blk, 4096, MSS);
        assert_eq!(plans[0].seq, SeqNum(100));
        assert!(plans[0].fin);
    }

    #[test]
    fn peer_fin_consumed_in_order_only() {
        let mut blk = block(ProtoState {
            ack: SeqNum(1000),
            rx_avail: 4096,
            remote_win: 65535,
            ..Default::default()
        });
        let mut seg = data_seg(1200, 50);
        seg.flags |= TcpFlags::FIN;
        let out = protocol_rx(FLOW, &mut blk, &seg);
        assert!(!out.peer_fin_reached);
        assert!(!blk.peer_fin);

        let out = protocol_rx(FLOW, &mut blk, &data_seg(1000, 200));
        assert_eq!(blk.st.ack, SeqNum(1250));
        assert!(!blk.peer_fin);
        assert!(out.ack_due);

        let mut fin = data_seg(1250, 0);
        fin.flags = TcpFlags::ACK | TcpFlags::FIN;
        let out = protocol_rx(FLOW, &mut blk, &fin);
        assert!(out.peer_fin_reached);
        assert_eq!(blk.st.ack, SeqNum(1251));
    }

    #[test]
    fn timestamps_are_echo_tracked() {
        let mut blk = block(ProtoState {
            ack: SeqNum(0),
            rx_avail: 4096,
            remote_win: 65535,
            ..Default::default()
        });
        let mut seg = data_seg(0, 10);
        seg.ts = Some(TsOpt { val: 777, ecr: 555 });
        let out = protocol_rx(FLOW, &mut blk, &seg);
        assert_eq!(blk.st.next_ts, 777);
        assert_eq!(out.snapshot.next_ts, 777);
        assert_eq!(out.snapshot.seg_ts_ecr, 555);
    }

    #[test]
    fn window_trim_limits_in_order_payload() {
        let mut blk = block(ProtoState {
            ack: SeqNum(0),
            rx_avail: 60,
            remote_win: 65535,
            ..Default::default()
        });
        let out = protocol_rx(FLOW, &mut blk, &data_seg(0, 100));
        assert_eq!(out.placement.unwrap().len, 60);
        assert_eq!(blk.st.ack, SeqNum(60));
        assert_eq!(blk.st.rx_avail, 0);
    }
}
