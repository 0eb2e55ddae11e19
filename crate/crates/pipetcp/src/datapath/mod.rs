//! The five data-path stage functions: pre-process, protocol, post-process,
//! payload-transfer, and context-queue, plus the host/data-path message types.

pub mod ctxq;
pub mod payload;
pub mod post;
pub mod pre;
pub mod protocol;

pub use ctxq::{CtxCommand, CtxNotification, CtxQueueEntry, CtxRing, DescriptorPool, Doorbell};
pub use payload::CopyDirective;
pub use post::{AckPlan, PostOutput};
pub use pre::{PreVerdict, RedirectReason};
pub use protocol::{
    HcCmd, HcOutcome, Placement, ProtoSnapshot, RxOutcome, SchedHint, TxSegmentPlan,
};
