//! Deterministic adversarial network simulator for the chainsmr protocol
//! family: hosts n replica state machines over a discrete-event queue,
//! applies an adversary delay policy, measures causal commit latency in
//! message hops, and emits an append-only trace.

pub mod adversary;
pub mod byzantine;
pub mod hops;
pub mod runner;
pub mod scenario;
pub mod trace;

pub use runner::{run, run_with, standard_replica, ReplicaFactory};
pub use scenario::{AdversaryKind, Duration, InvalidScenario, ProtocolKind, Scenario};
pub use trace::{CommitEvent, SendRecord, Trace};
