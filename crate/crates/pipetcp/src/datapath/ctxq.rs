//! Context queues: shared command/notification rings between the application
//! library and the data path, signaled by doorbells.
//!
//! Entries have a fixed layout — a kind tag plus three 64-bit operands — so
//! the rings stay stable across process boundaries.

use std::sync::atomic::{AtomicBool, AtomicI64, Ordering};
use std::time::Duration;

use parking_lot::{Condvar, Mutex};

use crate::state::FlowIndex;

/// Commands from the application/control side into the data path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CtxCommand {
    TxBump { flow: FlowIndex, len: u32 },
    RxBump { flow: FlowIndex, len: u32 },
    Fin { flow: FlowIndex },
    Retransmit { flow: FlowIndex },
}

impl CtxCommand {
    pub fn flow(&self) -> FlowIndex {
        match *self {
            CtxCommand::TxBump { flow, .. }
            | CtxCommand::RxBump { flow, .. }
            | CtxCommand::Fin { flow }
            | CtxCommand::Retransmit { flow } => flow,
        }
    }
}

/// Notifications from the data path to the application. A zero-length
/// `RxData` marks stream EOF (peer FIN consumed after all data).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CtxNotification {
    RxData { opaque: u64, offset: u64, len: u64 },
    TxSpaceFreed { opaque: u64, len: u64 },
}

/// A command or notification in its wire-stable form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CtxQueueEntry {
    Command(CtxCommand),
    Notification(CtxNotification),
}

const KIND_RX_DATA: u64 = 1;
const KIND_TX_SPACE: u64 = 2;
const KIND_TX_BUMP: u64 = 3;
const KIND_RX_BUMP: u64 = 4;
const KIND_FIN: u64 = 5;
const KIND_RETRANSMIT: u64 = 6;

impl CtxQueueEntry {
    pub fn encode(&self) -> [u64; 4] {
        match *self {
            CtxQueueEntry::Notification(CtxNotification::RxData { opaque, offset, len }) => {
                [KIND_RX_DATA, opaque, offset, len]
            }
            CtxQueueEntry::Notification(CtxNotification::TxSpaceFreed { opaque, len }) => {
                [KIND_TX_SPACE, opaque, len, 0]
            }
            CtxQueueEntry::Command(CtxCommand::TxBump { flow, len }) => {
                [KIND_TX_BUMP, flow.0 as u64, len as u64, 0]
            }
            CtxQueueEntry::Command(CtxCommand::RxBump { flow, len }) => {
                [KIND_RX_BUMP, flow.0 as u64, len as u64, 0]
            }
            CtxQueueEntry::Command(CtxCommand::Fin { flow }) => [KIND_FIN, flow.0 as u64, 0, 0],
            CtxQueueEntry::Command(CtxCommand::Retransmit { flow }) => {
                [KIND_RETRANSMIT, flow.0 as u64, 0, 0]
            }
        }
    }

    pub fn decode(w: [u64; 4]) -> Option<CtxQueueEntry> {
        Some(match w[0] {
            KIND_RX_DATA => CtxQueueEntry::Notification(CtxNotification::RxData {
                opaque: w[1],
                offset: w[2],
                len: w[3],
            }),
            KIND_TX_SPACE => CtxQueueEntry::Notification(CtxNotification::TxSpaceFreed {
                opaque: w[1],
                len: w[2],
            }),
            KIND_TX_BUMP => CtxQueueEntry::Command(CtxCommand::TxBump {
                flow: FlowIndex(w[1] as u32),
                len: w[2] as u32,
            }),
            KIND_RX_BUMP => CtxQueueEntry::Command(CtxCommand::RxBump {
                flow: FlowIndex(w[1] as u32),
                len: w[2] as u32,
            }),
            KIND_FIN => CtxQueueEntry::Command(CtxCommand::Fin {
                flow: FlowIndex(w[1] as u32),
            }),
            KIND_RETRANSMIT => CtxQueueEntry::Command(CtxCommand::Retransmit {
                flow: FlowIndex(w[1] as u32),
            }),
            _ => return None,
        })
    }
}

struct RingInner {
    buf: Box<[[u64; 4]]>,
    head: usize,
    len: usize,
}

/// Bounded ring of fixed-layout entries.
pub struct CtxRing {
    inner: Mutex<RingInner>,
}

impl CtxRing {
    pub fn new(capacity: usize) -> Self {
        CtxRing {
            inner: Mutex::new(RingInner {
                buf: vec![[0u64; 4]; capacity].into_boxed_slice(),
                head: 0,
                len: 0,
            }),
        }
    }

    pub fn push(&self, entry: CtxQueueEntry) -> Result<(), CtxQueueEntry> {
        let mut r = self.inner.lock();
        if r.len == r.buf.len() {
            return Err(entry);
        }
        let tail = (r.head + r.len) % r.buf.len();
        r.buf[tail] = entry.encode();
        r.len += 1;
        Ok(())
    }

    pub fn pop(&self) -> Option<CtxQueueEntry> {
        let mut r = self.inner.lock();
        if r.len == 0 {
            return None;
        }
        let w = r.buf[r.head];
        r.head = (r.head + 1) % r.buf.len();
        r.len -= 1;
        CtxQueueEntry::decode(w)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Edge-triggered app wakeup: signaled at most once until consumed.
#[derive(Default)]
pub struct Wakeup {
    flag: AtomicBool,
    lock: Mutex<()>,
    cv: Condvar,
}

impl Wakeup {
    pub fn signal(&self) {
        if !self.flag.swap(true, Ordering::AcqRel) {
            let _g = self.lock.lock();
            self.cv.notify_all();
        }
    }

    /// Take the pending wakeup, if any.
    pub fn consume(&self) -> bool {
        self.flag.swap(false, Ordering::AcqRel)
    }

    /// Block until signaled or the timeout elapses (wall-clock mode only).
    pub fn wait(&self, timeout: Duration) -> bool {
        if self.flag.swap(false, Ordering::AcqRel) {
            return true;
        }
        let mut g = self.lock.lock();
        if self.flag.swap(false, Ordering::AcqRel) {
            return true;
        }
        self.cv.wait_for(&mut g, timeout);
        self.flag.swap(false, Ordering::AcqRel)
    }
}

/// One application context: a command ring into the data path, a
/// notification ring out of it, a doorbell, and the wakeup primitive.
pub struct Doorbell {
    pub id: u16,
    pub commands: CtxRing,
    pub notifications: CtxRing,
    rung: AtomicBool,
    pub wakeup: Wakeup,
}

impl Doorbell {
    pub fn new(id: u16, capacity: usize) -> Self {
        Doorbell {
            id,
            commands: CtxRing::new(capacity),
            notifications: CtxRing::new(capacity),
            rung: AtomicBool::new(false),
            wakeup: Wakeup::default(),
        }
    }

    /// MMIO-style doorbell ring after the app appended commands.
    pub fn ring(&self) {
        self.rung.store(true, Ordering::Release);
    }

    /// Data-path poll; clears the doorbell when observed.
    pub fn take(&self) -> bool {
        self.rung.swap(false, Ordering::AcqRel)
    }

    pub fn is_rung(&self) -> bool {
        self.rung.load(Ordering::Acquire)
    }
}

/// Bounded descriptor pool; exhaustion stalls host-interaction processing
/// until descriptors are freed (deferred retry, never loss).
pub struct DescriptorPool {
    free: AtomicI64,
    capacity: i64,
}

impl DescriptorPool {
    pub fn new(capacity: usize) -> Self {
        DescriptorPool {
            free: AtomicI64::new(capacity as i64),
            capacity: capacity as i64,
        }
    }

    pub fn try_acquire(&self) -> bool {
        let prev = self.free.fetch_sub(1, Ordering::AcqRel);
        if prev <= 0 {
            self.free.fetch_add(1, Ordering::AcqRel);
            false
        } else {
            true
        }
    }

    pub fn release(&self) {
        let prev = self.free.fetch_add(1, Ordering::AcqRel);
        debug_assert!(prev < self.capacity);
    }

    pub fn available(&self) -> i64 {
        self.free.load(Ordering::Acquire)
    }
}
