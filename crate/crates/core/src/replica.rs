//! The uniform state-machine contract: each replica consumes one input event
//! at a time (message delivery or timer fire) and emits outbound messages,
//! timer requests, and commit records. No internal threads, no clocks.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use crate::collect::SlotIndex;
use crate::crypto::{Digest, KeyMaterial, ReplicaId, ThresholdScheme};
use crate::messages::{FetchReq, FetchResp, Message};
use crate::tree::{BlockTree, TreeError};
use crate::types::{Block, FallbackTag, ParentCert, Payload};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Dest {
    All,
    One(ReplicaId),
}

/// Certificates that justified a commit; the simulator's hop clock keys off
/// these to measure causal commit latency.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum EvidenceCert {
    Qc(Digest),
    FQc(Digest),
    Coin(u64),
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct CommitRecord {
    pub block_id: Digest,
    pub round: u64,
    pub view: u64,
    pub fallback: Option<FallbackTag>,
    pub payload_digest: Digest,
    pub payload_len: u64,
    pub log_position: u64,
    /// True for the chain-rule candidate itself, false for ancestors swept
    /// in with it.
    pub direct: bool,
    pub evidence: Vec<EvidenceCert>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Output {
    Send { to: Dest, msg: Message },
    /// One-shot timer for (view, round); stale fires are ignored.
    Timer { view: u64, round: u64, delay: u64 },
    Commit(CommitRecord),
}

#[derive(Default, Debug)]
pub struct Outbox {
    pub items: Vec<Output>,
}

impl Outbox {
    pub fn send(&mut self, to: Dest, msg: Message) {
        self.items.push(Output::Send { to, msg });
    }

    pub fn multicast(&mut self, msg: Message) {
        self.items.push(Output::Send {
            to: Dest::All,
            msg,
        });
    }

    pub fn timer(&mut self, view: u64, round: u64, delay: u64) {
        self.items.push(Output::Timer { view, round, delay });
    }
}

/// One committed log slot.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LogEntry {
    pub position: u64,
    pub block_id: Digest,
    pub round: u64,
    pub view: u64,
    pub fallback: Option<FallbackTag>,
    pub payload_digest: Digest,
    pub payload_len: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ReplicaStatus {
    pub r_cur: u64,
    pub v_cur: u64,
    pub fallback: bool,
}

pub trait Replica: Send {
    fn id(&self) -> ReplicaId;
    /// Enter round 1 at simulation start.
    fn bootstrap(&mut self, out: &mut Outbox);
    fn on_message(&mut self, from: ReplicaId, msg: Message, out: &mut Outbox);
    fn on_timer(&mut self, view: u64, round: u64, out: &mut Outbox);
    /// Mempool intake; one batch is drained per proposal.
    fn offer_payload(&mut self, payload: Payload);
    fn log(&self) -> &[LogEntry];
    /// Equivocations observed from peers.
    fn equivocations(&self) -> u64;
    fn status(&self) -> ReplicaStatus;
}

/// Protocol configuration shared by all replica state machines.
#[derive(Clone, Debug)]
pub struct ProtocolConfig {
    pub n: u64,
    pub f: u64,
    /// Timeout in simulated ticks; 0 means time out immediately (VABA mode).
    pub tau: u64,
    /// Disable the steady-state proposer entirely (2-chain VABA).
    pub vaba: bool,
    /// Consecutive-fallback multiplier for the exponential backoff.
    pub backoff_factor: u64,
}

impl ProtocolConfig {
    pub fn quorum(&self) -> usize {
        (2 * self.f + 1) as usize
    }

    pub fn coin_quorum(&self) -> usize {
        (self.f + 1) as usize
    }
}

/// State and plumbing common to the three protocol state machines.
pub struct ProtocolCore {
    pub id: ReplicaId,
    pub key: KeyMaterial,
    pub scheme: Arc<dyn ThresholdScheme>,
    pub cfg: ProtocolConfig,
    pub tree: BlockTree,
    pub log: Vec<LogEntry>,
    pub committed: BTreeSet<Digest>,
    pub mempool: VecDeque<Payload>,
    pub slots: SlotIndex,
    /// Blocks we asked for, with attempt counters for responder rotation.
    pub fetching: BTreeMap<Digest, u64>,
    /// Commit candidates stalled on missing ancestors.
    pub deferred: Vec<(Digest, Vec<EvidenceCert>)>,
}

impl ProtocolCore {
    pub fn new(key: KeyMaterial, scheme: Arc<dyn ThresholdScheme>, cfg: ProtocolConfig) -> Self {
        ProtocolCore {
            id: key.replica_id,
            key,
            scheme,
            cfg,
            tree: BlockTree::new(),
            log: Vec::new(),
            committed: BTreeSet::new(),
            mempool: VecDeque::new(),
            slots: SlotIndex::default(),
            fetching: BTreeMap::new(),
            deferred: Vec::new(),
        }
    }

    pub fn next_payload(&mut self) -> Payload {
        self.mempool.pop_front().unwrap_or_default()
    }

    /// Commit `candidate` and all its uncommitted ancestors, oldest first.
    /// If the chain has unresolved blocks, the candidate is parked and a
    /// fetch goes out instead.
    pub fn commit_chain(
        &mut self,
        candidate: Digest,
        evidence: Vec<EvidenceCert>,
        out: &mut Outbox,
    ) {
        if self.committed.contains(&candidate) {
            return;
        }
        let chain = match self.tree.ancestors(&candidate) {
            Ok(chain) => chain,
            Err(TreeError::MissingAncestor(missing)) => {
                self.request_block(missing, out);
                self.deferred.push((candidate, evidence));
                return;
            }
        };
        for id in chain {
            let block = self.tree.get(&id).expect("ancestors returned known ids");
            if block.is_genesis() || self.committed.contains(&id) {
                continue;
            }
            self.committed.insert(id);
            let position = self.log.len() as u64;
            let entry = LogEntry {
                position,
                block_id: id,
                round: block.round,
                view: block.view,
                fallback: block.fallback,
                payload_digest: block.payload.digest(),
                payload_len: block.payload.len() as u64,
            };
            out.items.push(Output::Commit(CommitRecord {
                block_id: id,
                round: block.round,
                view: block.view,
                fallback: block.fallback,
                payload_digest: entry.payload_digest,
                payload_len: entry.payload_len,
                log_position: position,
                direct: id == candidate,
                evidence: evidence.clone(),
            }));
            self.log.push(entry);
        }
    }

    /// Retry commits that were stalled on block sync.
    pub fn retry_deferred(&mut self, out: &mut Outbox) {
        if self.deferred.is_empty() {
            return;
        }
        let deferred = std::mem::take(&mut self.deferred);
        for (candidate, evidence) in deferred {
            self.commit_chain(candidate, evidence, out);
        }
    }

    /// Record a missing block without fetching yet. Blocks travel by
    /// multicast, so content referenced by a certificate is normally already
    /// in flight; the timer-driven fetch nudge picks this up only if the gap
    /// persists.
    pub fn note_missing(&mut self, missing: Digest) {
        self.fetching.entry(missing).or_insert(0);
    }

    /// Ask a rotating peer for a missing block. The ideal threshold scheme
    /// keeps no signer sets, so rotation runs over all peers instead of the
    /// certificate signers.
    pub fn request_block(&mut self, missing: Digest, out: &mut Outbox) {
        let attempt = self.fetching.entry(missing).or_insert(0);
        let n = self.cfg.n;
        let mut target = (missing.prefix_u64().wrapping_add(*attempt)) % n;
        if target == self.id {
            target = (target + 1) % n;
        }
        *attempt += 1;
        out.send(
            Dest::One(target),
            Message::FetchReq(FetchReq {
                requester: self.id,
                block_id: missing,
            }),
        );
    }

    /// Re-issue fetches that have not resolved yet; invoked from timers so a
    /// request to a crashed peer eventually rotates to a live one.
    pub fn nudge_fetches(&mut self, out: &mut Outbox) {
        let missing: Vec<Digest> = self
            .fetching
            .keys()
            .filter(|id| !self.tree.contains(id))
            .cloned()
            .collect();
        for id in missing {
            self.request_block(id, out);
        }
    }

    pub fn on_fetch_req(&mut self, req: &FetchReq, out: &mut Outbox) {
        if !self.tree.contains(&req.block_id) {
            return;
        }
        // Send the resolvable ancestor prefix ending at the request.
        let mut chain = Vec::new();
        let mut cur = req.block_id;
        loop {
            match self.tree.get(&cur) {
                Some(b) if !b.is_genesis() => {
                    chain.push(b.clone());
                    cur = b.parent.block_id();
                }
                _ => break,
            }
            if chain.len() >= 4096 {
                break;
            }
        }
        chain.reverse();
        out.send(
            Dest::One(req.requester),
            Message::FetchResp(FetchResp { blocks: chain }),
        );
    }

    /// Insert fetched blocks; returns the ids that were new.
    pub fn accept_fetched(&mut self, resp: &FetchResp) -> Vec<Digest> {
        let mut fresh = Vec::new();
        for block in &resp.blocks {
            if !block.id_consistent() || block.is_genesis() {
                continue;
            }
            if !self.tree.contains(&block.id) {
                fresh.push(block.id);
                self.tree.insert(block.clone());
            }
            self.fetching.remove(&block.id);
        }
        fresh
    }

    /// Validate and store a parent certificate; true when structurally and
    /// cryptographically valid.
    pub fn admit_cert(&mut self, cert: &ParentCert) -> bool {
        if !cert.verify(self.scheme.as_ref()) {
            return false;
        }
        self.tree.record_cert(cert.clone());
        true
    }

    pub fn insert_block(&mut self, block: Block) {
        self.fetching.remove(&block.id);
        self.tree.insert(block);
    }
}
