//! Message delay policies. Every honest-to-honest message gets a finite
//! delivery delay (eventual delivery); crashed replicas neither send nor
//! receive.

use chainsmr_core::messages::Message;
use chainsmr_core::{leader_of, ReplicaId, ReplicaStatus};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::scenario::{AdversaryKind, Scenario};

/// Width of the seeded reorder window under asynchrony, in deltas.
pub const ASYNC_SPREAD: u64 = 8;
/// Pre-GST delay window under partial synchrony, in deltas.
pub const PRE_GST_SPREAD: u64 = 20;

pub struct Adversary {
    kind: AdversaryKind,
    delta: u64,
    gst: u64,
    ddos_delay: u64,
    n: u64,
    crashed: Vec<bool>,
}

impl Adversary {
    pub fn new(scenario: &Scenario) -> Self {
        let mut crashed = vec![false; scenario.n as usize];
        for &c in &scenario.crash_set {
            crashed[c as usize] = true;
        }
        Adversary {
            kind: scenario.adversary,
            delta: scenario.delta,
            gst: scenario.gst.unwrap_or(0),
            ddos_delay: scenario.ddos_delay,
            n: scenario.n,
            crashed,
        }
    }

    pub fn is_crashed(&self, id: ReplicaId) -> bool {
        self.crashed[id as usize]
    }

    fn uniform(&self, rng: &mut ChaCha12Rng, upper: u64) -> u64 {
        rng.gen_range(1..=upper.max(1))
    }

    /// Extra delay for the current round leader's outbound traffic while it
    /// is on the steady path. The fallback has no leader to target.
    fn ddos_extra(&self, from: ReplicaId, status: ReplicaStatus) -> u64 {
        if !status.fallback && leader_of(status.r_cur, self.n) == from {
            self.ddos_delay
        } else {
            0
        }
    }

    /// Delivery delay for one message, or None when a crashed endpoint means
    /// it is never delivered.
    pub fn delay(
        &self,
        from: ReplicaId,
        to: ReplicaId,
        _msg: &Message,
        sender_status: ReplicaStatus,
        now: u64,
        rng: &mut ChaCha12Rng,
    ) -> Option<u64> {
        if self.crashed[from as usize] || self.crashed[to as usize] {
            return None;
        }
        if from == to {
            return Some(0);
        }
        let base = match self.kind {
            AdversaryKind::Synchronous | AdversaryKind::Crash => self.uniform(rng, self.delta),
            AdversaryKind::LeaderDdos => self.uniform(rng, self.delta),
            AdversaryKind::Asynchronous => self.uniform(rng, self.delta * ASYNC_SPREAD),
            AdversaryKind::PartialSynchrony | AdversaryKind::Composite => {
                if now < self.gst {
                    self.uniform(rng, self.delta * PRE_GST_SPREAD)
                } else {
                    self.uniform(rng, self.delta)
                }
            }
        };
        let extra = match self.kind {
            AdversaryKind::LeaderDdos | AdversaryKind::Composite => {
                self.ddos_extra(from, sender_status)
            }
            _ => 0,
        };
        Some(base + extra)
    }
}
