//! Safety and liveness checkers plus the structural chain invariants,
//! evaluated over a finished trace. All verdicts derive from the message
//! ledger and the per-replica commit logs alone.

use std::collections::{BTreeMap, BTreeSet};

use chainsmr_core::{Digest, ReplicaId};
use chainsmr_sim::{ProtocolKind, Trace};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail(String),
    NotApplicable(String),
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass)
    }

    pub fn label(&self) -> String {
        match self {
            Verdict::Pass => "PASS".to_string(),
            Verdict::Fail(why) => format!("FAIL: {why}"),
            Verdict::NotApplicable(why) => format!("N/A: {why}"),
        }
    }
}

/// Pairwise prefix consistency of honest commit logs, one payload per
/// position. Reports the first divergent position.
pub fn check_safety(trace: &Trace) -> Verdict {
    let logs = trace.honest_logs();
    for (i, (ra, la)) in logs.iter().enumerate() {
        for (rb, lb) in logs.iter().skip(i + 1) {
            let common = la.len().min(lb.len());
            for pos in 0..common {
                if la[pos].block_id != lb[pos].block_id
                    || la[pos].payload_digest != lb[pos].payload_digest
                {
                    return Verdict::Fail(format!(
                        "replicas {} and {} diverge at position {}: {:?} vs {:?}",
                        ra.id, rb.id, pos, la[pos].block_id, lb[pos].block_id
                    ));
                }
            }
        }
        // One payload per position within a single log is structural, but a
        // duplicated position would also break replay.
        for (pos, entry) in la.iter().enumerate() {
            if entry.position != pos as u64 {
                return Verdict::Fail(format!(
                    "replica {} log position {} holds entry labeled {}",
                    ra.id, pos, entry.position
                ));
            }
        }
    }
    Verdict::Pass
}

/// Every batch injected before `end_time - window` must appear in every
/// honest commit log. Truncated traces carry no liveness claim.
pub fn check_liveness(trace: &Trace, window: u64) -> Verdict {
    if trace.truncated {
        return Verdict::NotApplicable("trace truncated with messages in flight".into());
    }
    if trace.batches.is_empty() {
        return Verdict::Pass;
    }
    let cutoff = trace.end_time.saturating_sub(window);
    // Injection times are implicit in batch ids: id * interval. Recover the
    // committed set per replica instead and bound by the id range.
    let interval = if trace.scenario.load_rate > 0 {
        (trace.scenario.batch_size / trace.scenario.load_rate).max(1)
    } else {
        return Verdict::Pass;
    };
    let due: BTreeSet<u64> = trace
        .batches
        .values()
        .filter(|id| (**id + 1) * interval <= cutoff)
        .copied()
        .collect();
    let digest_of: BTreeMap<u64, Digest> =
        trace.batches.iter().map(|(d, id)| (*id, *d)).collect();
    for (r, log) in trace.honest_logs() {
        let committed: BTreeSet<Digest> = log.iter().map(|e| e.payload_digest).collect();
        for id in &due {
            let d = digest_of[id];
            if !committed.contains(&d) {
                return Verdict::Fail(format!(
                    "batch {} (injected by tick {}) missing from replica {}",
                    id,
                    (*id + 1) * interval,
                    r.id
                ));
            }
        }
    }
    Verdict::Pass
}

/// Ids of blocks holding a regular certificate.
fn regular_certified(trace: &Trace) -> BTreeSet<Digest> {
    trace
        .certs
        .iter()
        .filter(|c| !c.fallback)
        .map(|c| c.block_id)
        .collect()
}

/// Ids of endorsed fallback blocks: the coin-elected leader's certified
/// height-2 f-block, plus the height-1 parent inside it (endorsed by
/// extension, covering adopted chains).
fn endorsed(trace: &Trace) -> BTreeSet<Digest> {
    let mut out = BTreeSet::new();
    for c in trace.certs.iter().filter(|c| c.fallback && c.height == 2) {
        if trace.coins.get(&c.view) == Some(&c.proposer) {
            out.insert(c.block_id);
            if let Some(b) = trace.blocks.get(&c.block_id) {
                if b.parent_is_fallback && b.parent_view == c.view {
                    out.insert(b.parent_id);
                }
            }
        }
    }
    out
}

/// At most one block per (view, round) may gather a quorum with at least
/// f+1 honest voters, counting regular votes; endorsed fallback blocks obey
/// the same rule per view and round.
pub fn check_unique_certification(trace: &Trace) -> Verdict {
    let honest: BTreeSet<ReplicaId> = trace.honest_ids().into_iter().collect();
    let quorum = trace.scenario.quorum() as usize;
    let f = trace.scenario.f as usize;

    let mut winners: BTreeMap<(u64, u64), BTreeSet<Digest>> = BTreeMap::new();
    for ((view, round, block), voters) in &trace.votes {
        let honest_votes = voters.iter().filter(|v| honest.contains(v)).count();
        if voters.len() >= quorum && honest_votes >= f + 1 {
            winners.entry((*view, *round)).or_default().insert(*block);
        }
    }
    for ((view, round), blocks) in &winners {
        if blocks.len() > 1 {
            return Verdict::Fail(format!(
                "two blocks certifiable at view {view} round {round}: {blocks:?}"
            ));
        }
    }
    // Certificates observed on the wire must agree as well.
    let mut by_slot: BTreeMap<(u64, u64), BTreeSet<Digest>> = BTreeMap::new();
    for c in trace.certs.iter().filter(|c| !c.fallback) {
        by_slot.entry((c.view, c.round)).or_default().insert(c.block_id);
    }
    for ((view, round), blocks) in &by_slot {
        if blocks.len() > 1 {
            return Verdict::Fail(format!(
                "two regular certificates at view {view} round {round}"
            ));
        }
    }
    // Endorsed fallback blocks: unique per (view, round).
    let endorsed_ids = endorsed(trace);
    let mut fb_slot: BTreeMap<(u64, u64), BTreeSet<Digest>> = BTreeMap::new();
    for c in trace.certs.iter().filter(|c| c.fallback) {
        if endorsed_ids.contains(&c.block_id) {
            fb_slot.entry((c.view, c.round)).or_default().insert(c.block_id);
        }
    }
    for ((view, round), blocks) in &fb_slot {
        if blocks.len() > 1 {
            return Verdict::Fail(format!(
                "two endorsed f-blocks at view {view} round {round}"
            ));
        }
    }
    Verdict::Pass
}

/// Chain-shape invariants over every certified or endorsed block observed
/// in the trace:
/// - views never decrease along parent links;
/// - parent links are consecutive rounds for the Ditto family (strictly
///   increasing for the TC-gap protocols);
/// - no endorsed f-block parents a certified regular block of its own view;
/// - the endorsed f-blocks of one view form a single chain.
pub fn check_chain_shape(trace: &Trace) -> Verdict {
    let regular = regular_certified(trace);
    let endorsed = endorsed(trace);
    let ditto_family = matches!(
        trace.scenario.protocol,
        ProtocolKind::Ditto | ProtocolKind::Vaba2
    );
    let genesis = chainsmr_core::types::genesis_id();

    for (id, b) in &trace.blocks {
        let in_class = regular.contains(id) || endorsed.contains(id);
        if !in_class && !(ditto_family && trace.certs.iter().any(|c| c.block_id == *id)) {
            // Uncertified blocks carry no obligations.
            continue;
        }
        if b.parent_id == genesis {
            continue;
        }
        if b.view < b.parent_view {
            return Verdict::Fail(format!(
                "block {:?} at view {} extends view {}",
                id, b.view, b.parent_view
            ));
        }
        if ditto_family {
            if b.round != b.parent_round + 1 {
                return Verdict::Fail(format!(
                    "block {:?} at round {} extends round {} (non-consecutive)",
                    id, b.round, b.parent_round
                ));
            }
        } else if b.round <= b.parent_round {
            return Verdict::Fail(format!(
                "block {:?} at round {} fails to increase over parent round {}",
                id, b.round, b.parent_round
            ));
        }
        // An endorsed f-block may not parent a same-view certified regular
        // block.
        if regular.contains(id)
            && b.fallback.is_none()
            && b.parent_is_fallback
            && b.view == b.parent_view
            && endorsed.contains(&b.parent_id)
        {
            return Verdict::Fail(format!(
                "certified regular block {:?} extends an endorsed f-block of its own view {}",
                id, b.view
            ));
        }
    }

    // Endorsed f-blocks of one view extend one another.
    let mut per_view: BTreeMap<u64, Vec<&chainsmr_sim::trace::CertKey>> = BTreeMap::new();
    for c in trace.certs.iter().filter(|c| c.fallback) {
        if endorsed.contains(&c.block_id) {
            per_view.entry(c.view).or_default().push(c);
        }
    }
    for (view, mut certs) in per_view {
        certs.sort_by_key(|c| c.round);
        for pair in certs.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            if let Some(hb) = trace.blocks.get(&hi.block_id) {
                if hb.parent_id != lo.block_id {
                    return Verdict::Fail(format!(
                        "endorsed f-blocks of view {view} do not extend one another"
                    ));
                }
            }
        }
    }
    Verdict::Pass
}

/// All invariant checks a fuzz trace must satisfy.
pub fn check_all_invariants(trace: &Trace) -> Verdict {
    for (name, verdict) in [
        ("safety", check_safety(trace)),
        ("unique-certification", check_unique_certification(trace)),
        ("chain-shape", check_chain_shape(trace)),
    ] {
        if let Verdict::Fail(why) = verdict {
            return Verdict::Fail(format!("{name}: {why}"));
        }
    }
    Verdict::Pass
}
