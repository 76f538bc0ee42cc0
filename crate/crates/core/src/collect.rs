//! Share collectors: certificates form exactly when the distinct-signer
//! count reaches the threshold, duplicates count once, and a signer sending
//! two different payloads for one slot is recorded as Byzantine behavior.

use std::collections::BTreeMap;

use crate::crypto::{Digest, ReplicaId, SigShare};

/// Accumulates shares over one digest; fires once at the threshold with the
/// first `threshold` shares by arrival order.
#[derive(Debug)]
pub struct ShareCollector {
    threshold: usize,
    shares: Vec<SigShare>,
    fired: bool,
}

impl ShareCollector {
    pub fn new(threshold: usize) -> Self {
        ShareCollector {
            threshold,
            shares: Vec::new(),
            fired: false,
        }
    }

    /// Returns the aggregating share set exactly once, when the threshold is
    /// first reached.
    pub fn add(&mut self, share: SigShare) -> Option<&[SigShare]> {
        if self.fired || self.shares.iter().any(|s| s.signer == share.signer) {
            return None;
        }
        self.shares.push(share);
        if self.shares.len() >= self.threshold {
            self.fired = true;
            Some(&self.shares)
        } else {
            None
        }
    }

    pub fn count(&self) -> usize {
        self.shares.len()
    }

    pub fn fired(&self) -> bool {
        self.fired
    }

    pub fn contains(&self, signer: ReplicaId) -> bool {
        self.shares.iter().any(|s| s.signer == signer)
    }
}

/// Detects equivocation per logical slot: the first payload from a signer is
/// kept, a different later one is ignored and counted.
#[derive(Debug, Default)]
pub struct SlotIndex {
    seen: BTreeMap<(SlotKey, ReplicaId), Digest>,
    equivocations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SlotKey {
    Vote { view: u64, round: u64 },
    Proposal { view: u64, round: u64 },
    Timeout { view: u64, round: u64 },
    FallbackVote { view: u64, height: u64, proposer: ReplicaId },
    FallbackProposal { view: u64, height: u64 },
    CoinShare { view: u64 },
}

impl SlotIndex {
    /// True if this (slot, signer, payload) should be processed; false for
    /// duplicates and equivocations.
    pub fn admit(&mut self, slot: SlotKey, signer: ReplicaId, payload: Digest) -> bool {
        match self.seen.get(&(slot, signer)) {
            None => {
                self.seen.insert((slot, signer), payload);
                true
            }
            Some(prev) if *prev == payload => false,
            Some(_) => {
                self.equivocations += 1;
                false
            }
        }
    }

    pub fn equivocations(&self) -> u64 {
        self.equivocations
    }

    /// Drop bookkeeping for slots strictly below the given view.
    pub fn prune_below_view(&mut self, view: u64) {
        self.seen.retain(|(slot, _), _| {
            let v = match slot {
                SlotKey::Vote { view, .. }
                | SlotKey::Proposal { view, .. }
                | SlotKey::Timeout { view, .. }
                | SlotKey::FallbackVote { view, .. }
                | SlotKey::FallbackProposal { view, .. }
                | SlotKey::CoinShare { view } => *view,
            };
            v + 8 >= view
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn share(signer: ReplicaId, tag: u8) -> SigShare {
        SigShare {
            signer,
            message_digest: Digest([tag; 32]),
            share: Digest([tag; 32]),
        }
    }

    #[test]
    fn fires_once_at_threshold() {
        let mut c = ShareCollector::new(3);
        assert!(c.add(share(0, 1)).is_none());
        assert!(c.add(share(1, 1)).is_none());
        // Duplicate signer does not count.
        assert!(c.add(share(1, 1)).is_none());
        let fired = c.add(share(2, 1));
        assert_eq!(fired.map(|s| s.len()), Some(3));
        // Extra shares after firing are ignored.
        assert!(c.add(share(3, 1)).is_none());
    }

    #[test]
    fn under_threshold_not_yet() {
        let mut c = ShareCollector::new(3);
        c.add(share(0, 1));
        c.add(share(1, 1));
        assert!(!c.fired());
        assert_eq!(c.count(), 2);
    }

    #[test]
    fn slot_index_counts_equivocation() {
        let mut idx = SlotIndex::default();
        let slot = SlotKey::Vote { view: 0, round: 3 };
        assert!(idx.admit(slot, 1, Digest([1; 32])));
        // Same payload again: duplicate, not equivocation.
        assert!(!idx.admit(slot, 1, Digest([1; 32])));
        assert_eq!(idx.equivocations(), 0);
        // Different payload, same slot: equivocation.
        assert!(!idx.admit(slot, 1, Digest([2; 32])));
        assert_eq!(idx.equivocations(), 1);
    }
}
