//! Metrics over a trace, reported as JSON.

use std::collections::{BTreeMap, BTreeSet};

use chainsmr_core::Digest;
use chainsmr_sim::{Scenario, Trace};
use serde::{Deserialize, Serialize};

use crate::checks::{check_liveness, check_safety, Verdict};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HopStats {
    pub mean: f64,
    pub p50: u32,
    pub p95: u32,
    pub p99: u32,
    pub max: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub scenario: Scenario,
    pub end_time: u64,
    pub truncated: bool,
    /// Blocks committed by every honest replica.
    pub commits_total: u64,
    /// Distinct blocks committed directly by a chain rule.
    pub decisions: u64,
    pub steady_commits: u64,
    pub fallback_commits: u64,
    /// Committed transactions per simulated tick.
    pub throughput: f64,
    pub hops: Option<HopStats>,
    pub messages_total: u64,
    pub messages_per_commit: f64,
    pub views_executed: u64,
    pub views_per_decision: f64,
    pub messages_per_view: f64,
    pub equivocations_observed: u64,
    pub safety_verdict: String,
    pub liveness_verdict: String,
    pub trace_digest: String,
}

/// Hop count per block, over blocks committed by every honest replica: the
/// depth at the last honest commit.
pub fn per_block_hops(trace: &Trace) -> BTreeMap<Digest, u32> {
    let honest: BTreeSet<_> = trace.honest_ids().into_iter().collect();
    let mut seen: BTreeMap<Digest, (BTreeSet<u64>, u64, u32)> = BTreeMap::new();
    for c in &trace.commits {
        if !honest.contains(&c.replica) {
            continue;
        }
        let entry = seen.entry(c.block_id).or_insert((BTreeSet::new(), 0, 0));
        entry.0.insert(c.replica);
        if c.time > entry.1 {
            entry.1 = c.time;
            entry.2 = c.hops;
        } else if c.time == entry.1 {
            entry.2 = entry.2.max(c.hops);
        }
    }
    seen.into_iter()
        .filter(|(_, (replicas, _, _))| replicas.len() == honest.len())
        .map(|(id, (_, _, hops))| (id, hops))
        .collect()
}

fn percentile(sorted: &[u32], p: f64) -> u32 {
    if sorted.is_empty() {
        return 0;
    }
    let idx = ((sorted.len() as f64) * p).ceil() as usize;
    sorted[idx.clamp(1, sorted.len()) - 1]
}

pub fn hop_stats(trace: &Trace) -> Option<HopStats> {
    let mut hops: Vec<u32> = per_block_hops(trace).values().copied().collect();
    if hops.is_empty() {
        return None;
    }
    hops.sort_unstable();
    let mean = hops.iter().map(|&h| h as f64).sum::<f64>() / hops.len() as f64;
    Some(HopStats {
        mean,
        p50: percentile(&hops, 0.50),
        p95: percentile(&hops, 0.95),
        p99: percentile(&hops, 0.99),
        max: *hops.last().unwrap(),
    })
}

/// True when some honest replica directly committed a block created in the
/// given view.
pub fn fallback_made_progress(trace: &Trace, view: u64) -> bool {
    let honest: BTreeSet<_> = trace.honest_ids().into_iter().collect();
    trace
        .commits
        .iter()
        .any(|c| c.direct && c.view == view && honest.contains(&c.replica))
}

pub fn metrics(trace: &Trace, liveness_window: u64) -> Report {
    let commits_total = trace.committed_everywhere();
    let honest: BTreeSet<_> = trace.honest_ids().into_iter().collect();
    let decisions: BTreeSet<Digest> = trace
        .commits
        .iter()
        .filter(|c| c.direct && honest.contains(&c.replica))
        .map(|c| c.block_id)
        .collect();
    let mut steady = 0u64;
    let mut fallback = 0u64;
    let mut committed_blocks: BTreeSet<Digest> = BTreeSet::new();
    let mut committed_txns = 0u64;
    for c in &trace.commits {
        if honest.contains(&c.replica) && committed_blocks.insert(c.block_id) {
            if c.fallback.is_some() {
                fallback += 1;
            } else {
                steady += 1;
            }
            if c.batch.is_some() {
                committed_txns += trace.scenario.batch_size;
            }
        }
    }
    let messages_total = trace.message_count();
    let views_executed = trace.coins.len() as u64;
    let safety = check_safety(trace);
    let liveness = check_liveness(trace, liveness_window);
    Report {
        scenario: trace.scenario.clone(),
        end_time: trace.end_time,
        truncated: trace.truncated,
        commits_total,
        decisions: decisions.len() as u64,
        steady_commits: steady,
        fallback_commits: fallback,
        throughput: if trace.end_time > 0 {
            committed_txns as f64 / trace.end_time as f64
        } else {
            0.0
        },
        hops: hop_stats(trace),
        messages_total,
        messages_per_commit: if commits_total > 0 {
            messages_total as f64 / commits_total as f64
        } else {
            f64::NAN
        },
        views_executed,
        views_per_decision: if decisions.is_empty() {
            f64::NAN
        } else {
            views_executed as f64 / decisions.len() as f64
        },
        messages_per_view: if views_executed > 0 {
            messages_total as f64 / views_executed as f64
        } else {
            f64::NAN
        },
        equivocations_observed: trace
            .replicas
            .iter()
            .filter(|r| r.honest)
            .map(|r| r.equivocations)
            .sum(),
        safety_verdict: safety.label(),
        liveness_verdict: liveness.label(),
        trace_digest: trace.digest().hex(),
    }
}

/// Exit-status view of a report.
pub fn report_ok(report: &Report) -> bool {
    report.safety_verdict == Verdict::Pass.label()
}
