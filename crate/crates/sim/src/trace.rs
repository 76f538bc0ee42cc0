//! Run output: the message ledger, commit events, block/certificate
//! registries and per-replica summaries. Append-only during the run; the
//! canonical encoding doubles as the determinism fingerprint.

use std::collections::{BTreeMap, BTreeSet};

use chainsmr_core::messages::Message;
use chainsmr_core::types::{Block, FallbackTag, ParentCert};
use chainsmr_core::wire::{Enc, Wire};
use chainsmr_core::{hash, Digest, LogEntry, ReplicaId};

use crate::scenario::Scenario;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SendRecord {
    pub time: u64,
    pub from: ReplicaId,
    pub to: ReplicaId,
    pub kind: &'static str,
    pub size: u64,
    pub delivered: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommitEvent {
    pub time: u64,
    pub replica: ReplicaId,
    pub block_id: Digest,
    pub round: u64,
    pub view: u64,
    pub fallback: Option<FallbackTag>,
    pub position: u64,
    pub payload_digest: Digest,
    pub payload_len: u64,
    pub hops: u32,
    /// True for the chain-rule candidate, false for swept-in ancestors.
    pub direct: bool,
    /// Load-generator batch carried by this block, if any.
    pub batch: Option<u64>,
}

/// Structure of one block, for chain-shape checks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockInfo {
    pub id: Digest,
    pub round: u64,
    pub view: u64,
    pub parent_id: Digest,
    pub parent_round: u64,
    pub parent_view: u64,
    pub parent_is_fallback: bool,
    pub parent_height: u64,
    pub parent_proposer: ReplicaId,
    pub fallback: Option<FallbackTag>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct CertKey {
    pub fallback: bool,
    pub block_id: Digest,
    pub round: u64,
    pub view: u64,
    pub height: u64,
    pub proposer: ReplicaId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplicaSummary {
    pub id: ReplicaId,
    pub honest: bool,
    pub crashed: bool,
    pub log: Vec<LogEntry>,
    pub equivocations: u64,
    pub final_round: u64,
    pub final_view: u64,
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub scenario: Scenario,
    pub end_time: u64,
    /// True when the run stopped at its bound with messages still in flight.
    pub truncated: bool,
    pub sends: Vec<SendRecord>,
    pub commits: Vec<CommitEvent>,
    pub blocks: BTreeMap<Digest, BlockInfo>,
    pub certs: BTreeSet<CertKey>,
    /// Coin outcomes per view.
    pub coins: BTreeMap<u64, ReplicaId>,
    /// Regular votes observed on the wire: (view, round, block) -> voters.
    pub votes: BTreeMap<(u64, u64, Digest), BTreeSet<ReplicaId>>,
    /// Fallback votes: (view, height, proposer, block) -> voters.
    pub fallback_votes: BTreeMap<(u64, u64, ReplicaId, Digest), BTreeSet<ReplicaId>>,
    /// Injected load batches: payload digest -> batch id.
    pub batches: BTreeMap<Digest, u64>,
    pub replicas: Vec<ReplicaSummary>,
    /// Views in which a timeout was observed (fallbacks started).
    pub timeout_views: BTreeSet<u64>,
}

impl Trace {
    pub fn honest_ids(&self) -> Vec<ReplicaId> {
        self.replicas
            .iter()
            .filter(|r| r.honest)
            .map(|r| r.id)
            .collect()
    }

    pub fn honest_logs(&self) -> Vec<(&ReplicaSummary, &[LogEntry])> {
        self.replicas
            .iter()
            .filter(|r| r.honest)
            .map(|r| (r, r.log.as_slice()))
            .collect()
    }

    /// Record the structure of every block and certificate a message
    /// carries; invoked once per send.
    pub fn register_message(&mut self, msg: &Message) {
        match msg {
            Message::Proposal(b) | Message::FallbackProposal(b) => {
                self.register_block(b);
                if let Some(tc) = &b.tc {
                    for qc in &tc.high_qcs {
                        self.register_cert(&ParentCert::Quorum(qc.clone()));
                    }
                }
                if let Some(coin) = &b.coin_qc {
                    self.coins.entry(coin.view).or_insert(coin.leader);
                }
            }
            Message::Vote(v) => {
                self.votes
                    .entry((v.view, v.round, v.block_id))
                    .or_default()
                    .insert(v.voter);
            }
            Message::FallbackVote(v) => {
                self.fallback_votes
                    .entry((v.view, v.height, v.proposer, v.block_id))
                    .or_default()
                    .insert(v.voter);
            }
            Message::Timeout(t) => {
                self.register_cert(&t.high_qc);
                if let Some(coin) = &t.endorsement {
                    self.coins.entry(coin.view).or_insert(coin.leader);
                }
            }
            Message::TcMsg(tc) => {
                for qc in &tc.high_qcs {
                    self.register_cert(&ParentCert::Quorum(qc.clone()));
                }
            }
            Message::FtcMsg(_) => {}
            Message::FallbackQcMsg(f) => {
                self.register_cert(&ParentCert::Fallback(f.clone()));
            }
            Message::CoinShareMsg(_) => {}
            Message::CoinQcMsg(c) => {
                self.coins.entry(c.view).or_insert(c.leader);
            }
            Message::FetchReq(_) => {}
            Message::FetchResp(resp) => {
                for b in &resp.blocks {
                    self.register_block(b);
                }
            }
        }
    }

    fn register_block(&mut self, b: &Block) {
        self.register_cert(&b.parent);
        let (pf, ph, pp) = match &b.parent {
            ParentCert::Quorum(_) => (false, 0, 0),
            ParentCert::Fallback(f) => (true, f.height, f.proposer),
        };
        self.blocks.entry(b.id).or_insert(BlockInfo {
            id: b.id,
            round: b.round,
            view: b.view,
            parent_id: b.parent.block_id(),
            parent_round: b.parent.round(),
            parent_view: b.parent.view(),
            parent_is_fallback: pf,
            parent_height: ph,
            parent_proposer: pp,
            fallback: b.fallback,
        });
    }

    fn register_cert(&mut self, cert: &ParentCert) {
        let key = match cert {
            ParentCert::Quorum(q) => {
                if q.is_genesis() {
                    return;
                }
                CertKey {
                    fallback: false,
                    block_id: q.block_id,
                    round: q.round,
                    view: q.view,
                    height: 0,
                    proposer: 0,
                }
            }
            ParentCert::Fallback(f) => CertKey {
                fallback: true,
                block_id: f.block_id,
                round: f.round,
                view: f.view,
                height: f.height,
                proposer: f.proposer,
            },
        };
        self.certs.insert(key);
    }

    /// Canonical byte encoding; two runs of one scenario must agree on it.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.u64(self.end_time);
        e.bool(self.truncated);
        e.u64(self.sends.len() as u64);
        for s in &self.sends {
            e.u64(s.time);
            e.u64(s.from);
            e.u64(s.to);
            e.bytes(s.kind.as_bytes());
            e.u64(s.size);
            match s.delivered {
                None => e.u8(0),
                Some(t) => {
                    e.u8(1);
                    e.u64(t);
                }
            }
        }
        e.u64(self.commits.len() as u64);
        for c in &self.commits {
            e.u64(c.time);
            e.u64(c.replica);
            e.digest(&c.block_id);
            e.u64(c.round);
            e.u64(c.view);
            e.u64(c.position);
            e.digest(&c.payload_digest);
            e.u64(c.hops as u64);
        }
        e.u64(self.blocks.len() as u64);
        for (id, info) in &self.blocks {
            e.digest(id);
            e.u64(info.round);
            e.u64(info.view);
            e.digest(&info.parent_id);
        }
        e.u64(self.certs.len() as u64);
        for c in &self.certs {
            e.bool(c.fallback);
            e.digest(&c.block_id);
            e.u64(c.round);
            e.u64(c.view);
            e.u64(c.height);
            e.u64(c.proposer);
        }
        for (view, leader) in &self.coins {
            e.u64(*view);
            e.u64(*leader);
        }
        for r in &self.replicas {
            e.u64(r.id);
            e.bool(r.honest);
            e.u64(r.equivocations);
            e.u64(r.log.len() as u64);
            for entry in &r.log {
                e.digest(&entry.block_id);
                e.digest(&entry.payload_digest);
                e.u64(entry.round);
                e.u64(entry.view);
            }
        }
        e.finish()
    }

    pub fn digest(&self) -> Digest {
        hash(&self.canonical_bytes())
    }

    /// Total non-loopback and loopback sends.
    pub fn message_count(&self) -> u64 {
        self.sends.len() as u64
    }

    /// Committed-by-every-honest-replica block count.
    pub fn committed_everywhere(&self) -> u64 {
        self.honest_logs()
            .iter()
            .map(|(_, log)| log.len() as u64)
            .min()
            .unwrap_or(0)
    }
}

impl Wire for Trace {
    fn encode(&self, e: &mut Enc) {
        e.bytes(&self.canonical_bytes());
    }
}
