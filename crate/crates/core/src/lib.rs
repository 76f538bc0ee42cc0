//! Chained BFT state machine replication: 3-chain DiemBFT, 2-chain Jolteon,
//! and Ditto with its asynchronous fallback (which, with the steady path
//! disabled and a zero timeout, is 2-chain VABA). The replicas are
//! single-threaded event-at-a-time state machines meant to be driven by a
//! deterministic simulator.

pub mod collect;
pub mod crypto;
pub mod diembft;
pub mod ditto;
pub mod jolteon;
pub mod messages;
pub mod replica;
pub mod tree;
pub mod types;
pub mod wire;

pub use crypto::{hash, Digest, KeyMaterial, ReplicaId, TestScheme, ThresholdScheme};
pub use diembft::DiemBft;
pub use ditto::Ditto;
pub use jolteon::Jolteon;
pub use replica::{
    CommitRecord, Dest, EvidenceCert, LogEntry, Outbox, Output, ProtocolConfig, Replica,
    ReplicaStatus,
};
pub use types::{leader_of, Block, CoinQc, FQc, Ftc, ParentCert, Payload, Qc, Rank, Tc};
