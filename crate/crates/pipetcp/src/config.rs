//! Stack and pipeline topology configuration.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::wire::MacAddr;

pub const DEFAULT_MSS: u32 = 1448;
pub const DEFAULT_FLOW_GROUPS: u32 = 4;
pub const DEFAULT_QUEUE_CAPACITY: usize = 512;
pub const DEFAULT_REORDER_CAPACITY: usize = 256;
pub const DEFAULT_BUF_SIZE: u32 = 64 * 1024;

/// Congestion-control policy run by the control plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CcPolicy {
    #[default]
    Dctcp,
    Timely,
    None,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CcConfig {
    pub policy: CcPolicy,
    /// DCTCP alpha gain (1/16).
    pub dctcp_g: f64,
    /// TIMELY multiplicative decrease factor.
    pub timely_beta: f64,
    /// TIMELY/DCTCP additive increase, bytes per second per iteration.
    pub additive_step: f64,
    pub timely_t_low_us: f64,
    pub timely_t_high_us: f64,
    /// Rate floor, bytes/second.
    pub rate_floor: f64,
    /// Line rate, bytes/second (rate clamp ceiling).
    pub line_rate: f64,
    pub rto_min_ns: u64,
    /// Exponential RTO backoff cap (multiplier).
    pub rto_backoff_cap: u32,
}

impl Default for CcConfig {
    fn default() -> Self {
        CcConfig {
            policy: CcPolicy::Dctcp,
            dctcp_g: 1.0 / 16.0,
            timely_beta: 0.8,
            additive_step: 0.0, // 0 = one MSS per RTT, resolved at use
            timely_t_low_us: 50.0,
            timely_t_high_us: 500.0,
            rate_floor: 10_000.0,
            line_rate: 1.25e9, // 10 Gbps
            rto_min_ns: 1_000_000,
            rto_backoff_cap: 64,
        }
    }
}

/// Per-stage replication factors for the parallel pipeline.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Replication {
    pub chain: usize,
    pub pre: usize,
    pub post: usize,
    pub payload: usize,
}

impl Default for Replication {
    fn default() -> Self {
        Replication {
            chain: 1,
            pre: 1,
            post: 1,
            payload: 1,
        }
    }
}

/// Configuration of one stack instance.
#[derive(Clone, Debug)]
pub struct StackConfig {
    pub name: String,
    pub local_mac: MacAddr,
    pub local_ip: Ipv4Addr,
    pub mss: u32,
    pub flow_groups: u32,
    pub max_flows: usize,
    pub rx_buf_size: u32,
    pub tx_buf_size: u32,
    pub queue_capacity: usize,
    pub reorder_capacity: usize,
    pub pool_capacity: usize,
    pub ctx_ring_capacity: usize,
    pub replication: Replication,
    pub cc: CcConfig,
    /// Carry the timestamp option on data-path segments.
    pub timestamps: bool,
    /// Initial/assumed RTT estimate before samples arrive, microseconds.
    pub initial_rtt_us: f64,
    /// Listener backlog / connection-count limit.
    pub max_pending_conns: usize,
}

impl StackConfig {
    pub fn new(name: &str, ip: Ipv4Addr, mac_tail: u8) -> Self {
        StackConfig {
            name: name.to_string(),
            local_mac: MacAddr([0x02, 0, 0, 0, 0, mac_tail]),
            local_ip: ip,
            mss: DEFAULT_MSS,
            flow_groups: DEFAULT_FLOW_GROUPS,
            max_flows: 1024,
            rx_buf_size: DEFAULT_BUF_SIZE,
            tx_buf_size: DEFAULT_BUF_SIZE,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            reorder_capacity: DEFAULT_REORDER_CAPACITY,
            pool_capacity: 256,
            ctx_ring_capacity: 1024,
            replication: Replication::default(),
            cc: CcConfig::default(),
            timestamps: true,
            initial_rtt_us: 100.0,
            max_pending_conns: 4096,
        }
    }
}

/// Pipeline stages addressable in a declarative topology.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Chain,
    Pre,
    Protocol,
    Post,
    Payload,
    CtxQueue,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage: StageKind,
    pub replication: usize,
    #[serde(default = "default_queue_capacity")]
    pub queue_capacity: usize,
    #[serde(default)]
    pub reorder_after: bool,
}

fn default_queue_capacity() -> usize {
    DEFAULT_QUEUE_CAPACITY
}

/// Declarative pipeline topology: stage list, replication factors, queue
/// capacities, and the flow-group count.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TopologySpec {
    #[serde(default = "default_flow_groups")]
    pub flow_groups: u32,
    pub stages: Vec<StageSpec>,
}

fn default_flow_groups() -> u32 {
    DEFAULT_FLOW_GROUPS
}

impl TopologySpec {
    /// The all-scalar default pipeline.
    pub fn scalar(flow_groups: u32) -> Self {
        let stage = |stage, reorder_after| StageSpec {
            stage,
            replication: 1,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            reorder_after,
        };
        TopologySpec {
            flow_groups,
            stages: vec![
                stage(StageKind::Pre, true),
                stage(StageKind::Protocol, false),
                stage(StageKind::Post, false),
                stage(StageKind::Payload, true),
                stage(StageKind::CtxQueue, false),
            ],
        }
    }

    /// Scalar pipeline with pre/post (and payload) replicated `n` times.
    pub fn replicated(flow_groups: u32, n: usize) -> Self {
        let mut t = Self::scalar(flow_groups);
        for s in &mut t.stages {
            match s.stage {
                StageKind::Pre | StageKind::Post | StageKind::Payload => s.replication = n,
                _ => {}
            }
        }
        t
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("topology serializes")
    }

    pub fn replication_of(&self, kind: StageKind) -> usize {
        self.stages
            .iter()
            .find(|s| s.stage == kind)
            .map(|s| s.replication)
            .unwrap_or(1)
    }
}

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum InvalidTopology {
    #[error("protocol stage must not be replicated (got {0})")]
    ReplicatedProtocol(usize),
    #[error("replicated {0:?} stage feeds an order-sensitive consumer without a reorderer")]
    MissingReorderer(StageKind),
    #[error("duplicate stage {0:?} in topology")]
    DuplicateStage(StageKind),
    #[error("replication factor must be >= 1 for {0:?}")]
    ZeroReplication(StageKind),
}

/// Validate the stage graph before engine construction.
pub fn validate_topology(t: &TopologySpec) -> Result<(), InvalidTopology> {
    let mut seen = Vec::new();
    for s in &t.stages {
        if seen.contains(&s.stage) {
            return Err(InvalidTopology::DuplicateStage(s.stage));
        }
        seen.push(s.stage);
        if s.replication == 0 {
            return Err(InvalidTopology::ZeroReplication(s.stage));
        }
        match s.stage {
            StageKind::Protocol => {
                if s.replication != 1 {
                    return Err(InvalidTopology::ReplicatedProtocol(s.replication));
                }
            }
            // Replicated pre feeds the protocol stage; replicated payload and
            // chain feed the wire. Both consumers are order sensitive.
            StageKind::Pre | StageKind::Payload | StageKind::Chain => {
                if s.replication > 1 && !s.reorder_after {
                    return Err(InvalidTopology::MissingReorderer(s.stage));
                }
            }
            StageKind::Post | StageKind::CtxQueue => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_topology_validates() {
        validate_topology(&TopologySpec::scalar(4)).unwrap();
        validate_topology(&TopologySpec::replicated(4, 2)).unwrap();
    }

    #[test]
    fn replicated_protocol_rejected() {
        let mut t = TopologySpec::scalar(4);
        t.stages[1].replication = 2;
        assert_eq!(
            validate_topology(&t),
            Err(InvalidTopology::ReplicatedProtocol(2))
        );
    }

    #[test]
    fn replicated_pre_requires_reorderer() {
        let mut t = TopologySpec::scalar(4);
        t.stages[0].replication = 2;
        t.stages[0].reorder_after = false;
        assert_eq!(
            validate_topology(&t),
            Err(InvalidTopology::MissingReorderer(StageKind::Pre))
        );
    }

    #[test]
    fn topology_roundtrips_through_toml() {
        let t = TopologySpec::replicated(4, 2);
        let text = t.to_toml();
        let back = TopologySpec::from_toml(&text).unwrap();
        assert_eq!(back.flow_groups, 4);
        assert_eq!(back.replication_of(StageKind::Pre), 2);
        assert_eq!(back.replication_of(StageKind::Protocol), 1);
    }
}
