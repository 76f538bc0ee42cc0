//! Baseline 3-chain DiemBFT replica: steady state with a 2-chain lock rule
//! and 3-chain commit rule, plus the round-timeout pacemaker. The view
//! number is carried but stays 0 throughout.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::collect::{ShareCollector, SlotKey};
use crate::crypto::{Digest, KeyMaterial, ReplicaId, ThresholdScheme};
use crate::messages::{Message, Timeout, TimeoutDomain, Vote};
use crate::replica::{
    Dest, EvidenceCert, LogEntry, Outbox, ProtocolConfig, ProtocolCore, Replica, ReplicaStatus,
};
use crate::types::{genesis_qc, leader_of, Block, ParentCert, Payload, Qc, Tc};

pub struct DiemBft {
    core: ProtocolCore,
    r_vote: u64,
    r_lock: u64,
    r_cur: u64,
    hqc: Qc,
    /// Vote accumulators keyed by the signed vote digest.
    votes: BTreeMap<Digest, VoteSlot>,
    /// Timeout accumulators per round, with the reported high QCs.
    timeouts: BTreeMap<u64, TimeoutSlot>,
    /// Formed or received TCs, kept for forwarding to new leaders.
    tcs: BTreeMap<u64, Tc>,
    /// Rounds for which this replica already multicast a timeout.
    timed_out: BTreeMap<u64, ()>,
    /// QCs whose 2-chain lock is waiting on the certified block's content.
    relock: Vec<Qc>,
    /// Commit tips waiting on block sync.
    recheck: Vec<ParentCert>,
}

struct VoteSlot {
    block_id: Digest,
    round: u64,
    collector: ShareCollector,
}

struct TimeoutSlot {
    collector: ShareCollector,
    high_qcs: Vec<Qc>,
}

impl DiemBft {
    pub fn new(key: KeyMaterial, scheme: Arc<dyn ThresholdScheme>, cfg: ProtocolConfig) -> Self {
        DiemBft {
            core: ProtocolCore::new(key, scheme, cfg),
            r_vote: 0,
            r_lock: 0,
            r_cur: 0,
            hqc: genesis_qc(),
            votes: BTreeMap::new(),
            timeouts: BTreeMap::new(),
            tcs: BTreeMap::new(),
            timed_out: BTreeMap::new(),
            relock: Vec::new(),
            recheck: Vec::new(),
        }
    }

    fn scheme(&self) -> &dyn ThresholdScheme {
        self.core.scheme.as_ref()
    }

    fn enter_round(&mut self, r: u64, out: &mut Outbox) {
        if r <= self.r_cur {
            return;
        }
        self.r_cur = r;
        out.timer(0, r, self.core.cfg.tau);
        if let Some(tc) = self.tcs.get(&(r - 1)) {
            let leader = leader_of(r, self.core.cfg.n);
            if leader != self.core.id {
                out.send(Dest::One(leader), Message::TcMsg(tc.clone()));
            }
        }
        if leader_of(r, self.core.cfg.n) == self.core.id {
            self.propose(out);
        }
        self.prune();
    }

    fn propose(&mut self, out: &mut Outbox) {
        let payload = self.core.next_payload();
        let block = Block::new(
            ParentCert::Quorum(self.hqc.clone()),
            None,
            None,
            self.r_cur,
            0,
            payload,
        );
        self.core.insert_block(block.clone());
        out.multicast(Message::Proposal(block));
    }

    /// Lock, Commit, then Advance Round for one observed QC. The lock runs
    /// first so a leader entering the new round proposes on the fresh QC.
    fn observe_qc(&mut self, qc: Qc, out: &mut Outbox) {
        if qc.is_genesis() {
            return;
        }
        if !qc.verify(self.scheme()) {
            return;
        }
        self.core.tree.record_cert(ParentCert::Quorum(qc.clone()));
        // 1-of-2-chain part of the lock: highest QC.
        if qc.round > self.hqc.round {
            self.hqc = qc.clone();
        }
        // 2-chain lock rule: r_lock follows the parent of the certified
        // block, which requires its content.
        match self.core.tree.get(&qc.block_id) {
            Some(certified) => {
                let parent_round = certified.parent.round();
                if parent_round > self.r_lock {
                    self.r_lock = parent_round;
                }
            }
            None => {
                self.core.note_missing(qc.block_id);
                self.relock.push(qc.clone());
            }
        }
        self.try_commit(ParentCert::Quorum(qc.clone()), out);
        if qc.round + 1 > self.r_cur {
            self.enter_round(qc.round + 1, out);
        }
    }

    /// 3-chain commit rule.
    fn try_commit(&mut self, tip: ParentCert, out: &mut Outbox) {
        let head_id = tip.block_id();
        let head = match self.core.tree.get(&head_id) {
            Some(b) => b,
            None => {
                self.core.note_missing(head_id);
                self.recheck.push(tip);
                return;
            }
        };
        let mid_cert = head.parent.clone();
        if tip.round() != mid_cert.round() + 1 {
            return;
        }
        let mid = match self.core.tree.get(&mid_cert.block_id()) {
            Some(b) => b,
            None => {
                self.core.note_missing(mid_cert.block_id());
                self.recheck.push(tip);
                return;
            }
        };
        let low_cert = mid.parent.clone();
        if mid_cert.round() != low_cert.round() + 1 {
            return;
        }
        let candidate = low_cert.block_id();
        if candidate == crate::types::genesis_id() {
            return;
        }
        let evidence = vec![
            EvidenceCert::Qc(candidate),
            EvidenceCert::Qc(mid_cert.block_id()),
            EvidenceCert::Qc(head_id),
        ];
        self.core.commit_chain(candidate, evidence, out);
    }

    fn observe_tc(&mut self, tc: Tc, out: &mut Outbox) {
        if !tc.validate(self.scheme()) {
            return;
        }
        let round = tc.round;
        let high_qcs = tc.high_qcs.clone();
        self.tcs.entry(round).or_insert(tc);
        for qc in high_qcs {
            self.observe_qc(qc, out);
        }
        if round + 1 > self.r_cur {
            self.enter_round(round + 1, out);
        }
    }

    fn on_proposal(&mut self, from: ReplicaId, block: Block, out: &mut Outbox) {
        if block.round == 0
            || block.view != 0
            || block.fallback.is_some()
            || block.tc.is_some()
            || block.coin_qc.is_some()
            || !block.id_consistent()
            || from != leader_of(block.round, self.core.cfg.n)
        {
            return;
        }
        let qc = match block.parent.as_quorum() {
            Some(qc) if qc.verify(self.scheme()) => qc.clone(),
            _ => return,
        };
        let slot = SlotKey::Proposal {
            view: 0,
            round: block.round,
        };
        if !self.core.slots.admit(slot, from, block.id) {
            return;
        }
        self.core.insert_block(block.clone());
        self.observe_qc(qc.clone(), out);
        self.after_block_arrival(out);
        if block.round == self.r_cur && block.round > self.r_vote && qc.round >= self.r_lock {
            let msg = Qc::signed_message(&block.id, block.round, 0);
            let share = self.scheme().sign_share(&self.core.key, &msg);
            let next = leader_of(block.round + 1, self.core.cfg.n);
            out.send(
                Dest::One(next),
                Message::Vote(Vote {
                    voter: self.core.id,
                    block_id: block.id,
                    round: block.round,
                    view: 0,
                    share,
                }),
            );
            self.r_vote = block.round;
        }
    }

    fn on_vote(&mut self, from: ReplicaId, vote: Vote, out: &mut Outbox) {
        if vote.voter != from || vote.view != 0 {
            return;
        }
        let msg = Qc::signed_message(&vote.block_id, vote.round, vote.view);
        if vote.share.message_digest != crate::crypto::hash(&msg)
            || !self.scheme().verify_share(&vote.share, &msg)
        {
            return;
        }
        let slot = SlotKey::Vote {
            view: 0,
            round: vote.round,
        };
        if !self.core.slots.admit(slot, vote.voter, vote.block_id) {
            return;
        }
        let quorum = self.core.cfg.quorum();
        let entry = self
            .votes
            .entry(vote.share.message_digest)
            .or_insert_with(|| VoteSlot {
                block_id: vote.block_id,
                round: vote.round,
                collector: ShareCollector::new(quorum),
            });
        if let Some(shares) = entry.collector.add(vote.share.clone()) {
            let sig = self
                .core
                .scheme
                .aggregate(shares, quorum as u64)
                .expect("collector only admits verified shares");
            let qc = Qc {
                block_id: entry.block_id,
                round: entry.round,
                view: 0,
                sig,
            };
            self.observe_qc(qc, out);
        }
    }

    fn on_timeout_msg(&mut self, from: ReplicaId, t: Timeout, out: &mut Outbox) {
        let round = match t.domain {
            TimeoutDomain::Round(r) => r,
            TimeoutDomain::View(_) => return,
        };
        if t.sender != from {
            return;
        }
        let msg = Tc::signed_message(round);
        if !self.scheme().verify_share(&t.share, &msg) {
            return;
        }
        let high_qc = match t.high_qc.as_quorum() {
            Some(qc) if qc.round < round && qc.verify(self.scheme()) => qc.clone(),
            _ => return,
        };
        let slot = SlotKey::Timeout {
            view: 0,
            round,
        };
        if !self
            .core
            .slots
            .admit(slot, from, crate::crypto::hash(&crate::wire::Wire::encoded(&t)))
        {
            return;
        }
        self.observe_qc(high_qc.clone(), out);
        if self.tcs.contains_key(&round) {
            return;
        }
        let quorum = self.core.cfg.quorum();
        let entry = self.timeouts.entry(round).or_insert_with(|| TimeoutSlot {
            collector: ShareCollector::new(quorum),
            high_qcs: Vec::new(),
        });
        if entry.collector.contains(from) {
            return;
        }
        entry.high_qcs.push(high_qc);
        if let Some(shares) = entry.collector.add(t.share.clone()) {
            let sig = self
                .core
                .scheme
                .aggregate(shares, quorum as u64)
                .expect("collector only admits verified shares");
            let tc = Tc {
                round,
                sig,
                high_qcs: entry.high_qcs.clone(),
            };
            self.observe_tc(tc, out);
        }
    }

    fn after_block_arrival(&mut self, out: &mut Outbox) {
        let relock = std::mem::take(&mut self.relock);
        for qc in relock {
            match self.core.tree.get(&qc.block_id) {
                Some(certified) => {
                    let parent_round = certified.parent.round();
                    if parent_round > self.r_lock {
                        self.r_lock = parent_round;
                    }
                }
                None => self.relock.push(qc),
            }
        }
        let recheck = std::mem::take(&mut self.recheck);
        for tip in recheck {
            self.try_commit(tip, out);
        }
        self.core.retry_deferred(out);
    }

    fn prune(&mut self) {
        let horizon = self.r_cur.saturating_sub(64);
        self.votes.retain(|_, slot| slot.round + 64 >= self.r_cur);
        self.timeouts.retain(|r, _| *r >= horizon);
        self.tcs.retain(|r, _| *r >= horizon);
        self.timed_out.retain(|r, _| *r >= horizon);
    }
}

impl Replica for DiemBft {
    fn id(&self) -> ReplicaId {
        self.core.id
    }

    fn bootstrap(&mut self, out: &mut Outbox) {
        self.enter_round(1, out);
    }

    fn on_message(&mut self, from: ReplicaId, msg: Message, out: &mut Outbox) {
        match msg {
            Message::Proposal(b) => self.on_proposal(from, b, out),
            Message::Vote(v) => self.on_vote(from, v, out),
            Message::Timeout(t) => self.on_timeout_msg(from, t, out),
            Message::TcMsg(tc) => self.observe_tc(tc, out),
            Message::FetchReq(req) => self.core.on_fetch_req(&req, out),
            Message::FetchResp(resp) => {
                let fresh = self.core.accept_fetched(&resp);
                if !fresh.is_empty() {
                    self.after_block_arrival(out);
                }
            }
            // Fallback-path messages do not exist in DiemBFT.
            _ => {}
        }
    }

    fn on_timer(&mut self, view: u64, round: u64, out: &mut Outbox) {
        self.core.nudge_fetches(out);
        if view != 0 || round != self.r_cur || self.timed_out.contains_key(&round) {
            return;
        }
        self.timed_out.insert(round, ());
        // Stop voting for the timed-out round.
        if self.r_cur > self.r_vote {
            self.r_vote = self.r_cur;
        }
        let msg = Tc::signed_message(self.r_cur);
        let share = self.scheme().sign_share(&self.core.key, &msg);
        out.multicast(Message::Timeout(Timeout {
            sender: self.core.id,
            domain: TimeoutDomain::Round(self.r_cur),
            share,
            high_qc: ParentCert::Quorum(self.hqc.clone()),
            endorsement: None,
        }));
    }

    fn offer_payload(&mut self, payload: Payload) {
        self.core.mempool.push_back(payload);
    }

    fn log(&self) -> &[LogEntry] {
        &self.core.log
    }

    fn equivocations(&self) -> u64 {
        self.core.slots.equivocations()
    }

    fn status(&self) -> ReplicaStatus {
        ReplicaStatus {
            r_cur: self.r_cur,
            v_cur: 0,
            fallback: false,
        }
    }
}
