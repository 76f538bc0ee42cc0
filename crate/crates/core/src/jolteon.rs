//! 2-chain Jolteon replica. The steady state keeps DiemBFT's shape but locks
//! on the highest QC alone (1-chain lock) and commits on a 2-chain. After a
//! timed-out round the new leader justifies its proposal by attaching the
//! round TC and extending the highest QC reported inside it.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::collect::{ShareCollector, SlotKey};
use crate::crypto::{Digest, KeyMaterial, ReplicaId, ThresholdScheme};
use crate::messages::{Message, Timeout, TimeoutDomain, Vote};
use crate::replica::{
    Dest, EvidenceCert, LogEntry, Outbox, ProtocolConfig, ProtocolCore, Replica, ReplicaStatus,
};
use crate::types::{genesis_qc, leader_of, Block, ParentCert, Payload, Qc, Tc};

pub struct Jolteon {
    core: ProtocolCore,
    r_vote: u64,
    r_cur: u64,
    hqc: Qc,
    /// TC that caused the current round entry, if any; attached to our own
    /// proposal and retained until the next QC.
    entry_tc: Option<Tc>,
    votes: BTreeMap<Digest, VoteSlot>,
    timeouts: BTreeMap<u64, TimeoutSlot>,
    tcs: BTreeMap<u64, Tc>,
    timed_out: BTreeMap<u64, ()>,
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

impl Jolteon {
    pub fn new(key: KeyMaterial, scheme: Arc<dyn ThresholdScheme>, cfg: ProtocolConfig) -> Self {
        Jolteon {
            core: ProtocolCore::new(key, scheme, cfg),
            r_vote: 0,
            r_cur: 0,
            hqc: genesis_qc(),
            entry_tc: None,
            votes: BTreeMap::new(),
            timeouts: BTreeMap::new(),
            tcs: BTreeMap::new(),
            timed_out: BTreeMap::new(),
            recheck: Vec::new(),
        }
    }

    fn scheme(&self) -> &dyn ThresholdScheme {
        self.core.scheme.as_ref()
    }

    fn enter_round(&mut self, r: u64, cause_tc: Option<&Tc>, out: &mut Outbox) {
        if r <= self.r_cur {
            return;
        }
        self.r_cur = r;
        self.entry_tc = cause_tc.cloned();
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
            self.entry_tc.clone(),
            None,
            self.r_cur,
            0,
            payload,
        );
        self.core.insert_block(block.clone());
        out.multicast(Message::Proposal(block));
    }

    /// 1-chain lock, 2-chain commit, then Advance Round.
    fn observe_qc(&mut self, qc: Qc, out: &mut Outbox) {
        if qc.is_genesis() {
            return;
        }
        if !qc.verify(self.scheme()) {
            return;
        }
        self.core.tree.record_cert(ParentCert::Quorum(qc.clone()));
        if qc.round > self.hqc.round {
            self.hqc = qc.clone();
            // A fresh QC supersedes the TC that justified this round.
            if self.entry_tc.as_ref().map(|t| qc.round >= t.round) == Some(true) {
                self.entry_tc = None;
            }
        }
        self.try_commit(ParentCert::Quorum(qc.clone()), out);
        if qc.round + 1 > self.r_cur {
            self.enter_round(qc.round + 1, None, out);
        }
    }

    /// 2-chain commit rule.
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
        let candidate = mid_cert.block_id();
        if candidate == crate::types::genesis_id() {
            return;
        }
        let evidence = vec![EvidenceCert::Qc(candidate), EvidenceCert::Qc(head_id)];
        self.core.commit_chain(candidate, evidence, out);
    }

    fn observe_tc(&mut self, tc: Tc, out: &mut Outbox) {
        if !tc.validate(self.scheme()) {
            return;
        }
        let round = tc.round;
        let high_qcs = tc.high_qcs.clone();
        self.tcs.entry(round).or_insert_with(|| tc.clone());
        for qc in high_qcs {
            self.observe_qc(qc, out);
        }
        if round + 1 > self.r_cur {
            self.enter_round(round + 1, Some(&tc), out);
        }
    }

    fn on_proposal(&mut self, from: ReplicaId, block: Block, out: &mut Outbox) {
        if block.round == 0
            || block.view != 0
            || block.fallback.is_some()
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
        if let Some(tc) = &block.tc {
            if !tc.validate(self.scheme()) {
                return;
            }
        }
        let slot = SlotKey::Proposal {
            view: 0,
            round: block.round,
        };
        if !self.core.slots.admit(slot, from, block.id) {
            return;
        }
        self.core.insert_block(block.clone());
        if let Some(tc) = block.tc.clone() {
            self.observe_tc(tc, out);
        }
        self.observe_qc(qc.clone(), out);
        self.after_block_arrival(out);
        // Vote when the block either extends the previous round's QC or is
        // justified by the previous round's TC and extends at least its
        // highest reported QC.
        let justified = block.round == qc.round + 1
            || block
                .tc
                .as_ref()
                .map(|tc| block.round == tc.round + 1 && qc.round >= tc.max_high_qc_round())
                .unwrap_or(false);
        if block.round == self.r_cur && block.round > self.r_vote && justified {
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
        if !self.scheme().verify_share(&vote.share, &msg) {
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
        let slot = SlotKey::Timeout { view: 0, round };
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

impl Replica for Jolteon {
    fn id(&self) -> ReplicaId {
        self.core.id
    }

    fn bootstrap(&mut self, out: &mut Outbox) {
        self.enter_round(1, None, out);
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
            _ => {}
        }
    }

    fn on_timer(&mut self, view: u64, round: u64, out: &mut Outbox) {
        self.core.nudge_fetches(out);
        if view != 0 || round != self.r_cur || self.timed_out.contains_key(&round) {
            return;
        }
        self.timed_out.insert(round, ());
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
