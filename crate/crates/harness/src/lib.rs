//! Metrics, safety/liveness checkers, commit-log persistence and report
//! emission over simulator traces.

pub mod checks;
pub mod persist;
pub mod report;
pub mod sweep;

pub use checks::{
    check_all_invariants, check_chain_shape, check_liveness, check_safety,
    check_unique_certification, Verdict,
};
pub use report::{fallback_made_progress, hop_stats, metrics, per_block_hops, Report};
