//! Ditto replica: a Jolteon-style steady state whose pacemaker is replaced by
//! an asynchronous fallback. On timeout the replicas stop voting, exchange
//! view timeouts, and once 2f+1 form a fallback TC every replica grows a
//! two-block fallback chain, adopting the first certified height-1 block it
//! learns about. When 2f+1 chains are complete a common coin elects one
//! proposer; that proposer's fallback certificates become endorsed and are
//! handled as regular QCs from then on.
//!
//! Two configuration switches derive the other protocols of the family:
//! `vaba` disables the steady proposer and runs with a zero timeout (2-chain
//! VABA), and `backoff_factor` drives the consecutive-fallback backoff.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::collect::{ShareCollector, SlotKey};
use crate::crypto::{coin_message, Digest, KeyMaterial, ReplicaId, ThresholdScheme};
use crate::messages::{CoinShare, FallbackVote, Message, Timeout, TimeoutDomain, Vote};
use crate::replica::{
    Dest, EvidenceCert, LogEntry, Outbox, ProtocolConfig, ProtocolCore, Replica, ReplicaStatus,
};
use crate::types::{
    genesis_qc, leader_of, Block, CoinQc, FQc, Ftc, ParentCert, Payload, Qc, Rank,
};
use crate::wire::Wire;

const BACKOFF_CAP: u64 = 1 << 20;

pub struct Ditto {
    core: ProtocolCore,
    r_vote: u64,
    r_cur: u64,
    v_cur: u64,
    hqc: ParentCert,
    /// Rank floor for the voting gates. At least the rank of `hqc`, and can
    /// exceed it: a replica that voted for the elected height-2 f-block is
    /// locked on that chain from the moment the coin lands, even while the
    /// height-2 f-QC itself is still in flight.
    lock_rank: Rank,
    /// Fallback mode flag; true between timer expiry / fallback entry and
    /// the coin-QC exit.
    mode: bool,
    /// Coin QCs by view: the endorsement registry.
    coins: BTreeMap<u64, CoinQc>,
    /// View whose fallback this replica has entered, if any.
    fallback_entered: Option<u64>,
    f_voted_round: Vec<u64>,
    f_voted_height: Vec<u64>,
    /// All fallback QCs seen, keyed (view, proposer, height).
    fqcs: BTreeMap<(u64, ReplicaId, u64), FQc>,
    /// Complete chains (height-2 f-QCs by distinct proposer) for the current
    /// fallback.
    fqc2_by_proposer: BTreeMap<ReplicaId, FQc>,
    h1_seen: bool,
    h2_relayed: bool,
    my_h2_announced: bool,
    /// F-blocks this replica proposed, by id, with their view.
    my_fblocks: BTreeMap<Digest, u64>,
    /// Height-1 parent certificate of each height-2 f-block this replica
    /// voted for, keyed by (view, proposer); the lock floor rises from here
    /// when the coin elects that proposer.
    h2_parents: BTreeMap<(u64, ReplicaId), FQc>,
    timeouts_sent: BTreeSet<u64>,
    timeout_collectors: BTreeMap<u64, ShareCollector>,
    ftcs: BTreeMap<u64, Ftc>,
    coin_sent: BTreeSet<u64>,
    coin_mcast: BTreeSet<u64>,
    coin_collectors: BTreeMap<u64, ShareCollector>,
    votes: BTreeMap<Digest, VoteSlot>,
    fvotes: BTreeMap<Digest, FVoteSlot>,
    /// F-blocks for views not yet entered, replayed on entry.
    pending_fblocks: BTreeMap<u64, Vec<(ReplicaId, Block)>>,
    recheck: Vec<ParentCert>,
    backoff_x: u64,
    streak: u64,
    post_fallback_probe: bool,
}

struct VoteSlot {
    block_id: Digest,
    round: u64,
    view: u64,
    collector: ShareCollector,
}

struct FVoteSlot {
    block_id: Digest,
    round: u64,
    view: u64,
    height: u64,
    collector: ShareCollector,
}

impl Ditto {
    pub fn new(key: KeyMaterial, scheme: Arc<dyn ThresholdScheme>, cfg: ProtocolConfig) -> Self {
        let n = cfg.n as usize;
        Ditto {
            core: ProtocolCore::new(key, scheme, cfg),
            r_vote: 0,
            r_cur: 0,
            v_cur: 0,
            hqc: ParentCert::Quorum(genesis_qc()),
            lock_rank: Rank::new(0, 0),
            mode: false,
            coins: BTreeMap::new(),
            fallback_entered: None,
            f_voted_round: vec![0; n],
            f_voted_height: vec![0; n],
            fqcs: BTreeMap::new(),
            fqc2_by_proposer: BTreeMap::new(),
            h1_seen: false,
            h2_relayed: false,
            my_h2_announced: false,
            my_fblocks: BTreeMap::new(),
            h2_parents: BTreeMap::new(),
            timeouts_sent: BTreeSet::new(),
            timeout_collectors: BTreeMap::new(),
            ftcs: BTreeMap::new(),
            coin_sent: BTreeSet::new(),
            coin_mcast: BTreeSet::new(),
            coin_collectors: BTreeMap::new(),
            votes: BTreeMap::new(),
            fvotes: BTreeMap::new(),
            pending_fblocks: BTreeMap::new(),
            recheck: Vec::new(),
            backoff_x: 1,
            streak: 0,
            post_fallback_probe: false,
        }
    }

    fn scheme(&self) -> &dyn ThresholdScheme {
        self.core.scheme.as_ref()
    }

    fn hqc_rank(&self) -> Rank {
        self.hqc.rank(&self.coins)
    }

    fn enter_round(&mut self, r: u64, out: &mut Outbox) {
        if r <= self.r_cur {
            return;
        }
        self.r_cur = r;
        out.timer(self.v_cur, r, self.core.cfg.tau);
        if !self.mode && !self.core.cfg.vaba && leader_of(r, self.core.cfg.n) == self.core.id {
            self.steady_propose(out);
        }
    }

    fn steady_propose(&mut self, out: &mut Outbox) {
        // The first proposal of a view carries the coin QC that ended the
        // previous view's fallback.
        let coin = if self.v_cur > 0 && self.hqc.view() < self.v_cur {
            self.coins.get(&(self.v_cur - 1)).cloned()
        } else {
            None
        };
        let payload = self.core.next_payload();
        let block = Block::new(self.hqc.clone(), None, coin, self.r_cur, self.v_cur, payload);
        self.core.insert_block(block.clone());
        out.multicast(Message::Proposal(block));
    }

    /// Lock, Commit, Advance Round over a regular QC or an endorsed f-QC.
    /// Unendorsed fallback certificates only land in the tree.
    fn observe_cert(&mut self, cert: ParentCert, out: &mut Outbox) {
        if let ParentCert::Quorum(qc) = &cert {
            if qc.is_genesis() {
                return;
            }
        }
        if !cert.verify(self.scheme()) {
            return;
        }
        self.core.tree.record_cert(cert.clone());
        let rank = cert.rank(&self.coins);
        if matches!(cert, ParentCert::Fallback(_)) && !rank.endorsed {
            return;
        }
        if rank > self.hqc_rank() {
            self.hqc = cert.clone();
        }
        if rank > self.lock_rank {
            self.lock_rank = rank;
        }
        self.try_commit(cert.clone(), out);
        if cert.round() + 1 > self.r_cur {
            self.enter_round(cert.round() + 1, out);
        }
    }

    /// 2-chain commit: two adjacent blocks with consecutive rounds and one
    /// view number, each a certified regular block or an endorsed f-block.
    fn try_commit(&mut self, tip: ParentCert, out: &mut Outbox) {
        if !self.core.tree.contains(&tip.block_id()) {
            self.core.note_missing(tip.block_id());
            self.recheck.push(tip);
            return;
        }
        let chain = match self.core.tree.two_chain(&tip, true, &self.coins) {
            Some(c) => c,
            None => return,
        };
        let mut evidence = Vec::new();
        let mut coin_views = BTreeSet::new();
        for cert in [&chain.mid_cert, &chain.tip_cert] {
            match cert {
                ParentCert::Quorum(q) => evidence.push(EvidenceCert::Qc(q.block_id)),
                ParentCert::Fallback(f) => {
                    evidence.push(EvidenceCert::FQc(f.block_id));
                    coin_views.insert(f.view);
                }
            }
        }
        for v in coin_views {
            evidence.push(EvidenceCert::Coin(v));
        }
        self.core.commit_chain(chain.candidate, evidence, out);
    }

    fn send_timeout(&mut self, out: &mut Outbox) {
        if !self.timeouts_sent.insert(self.v_cur) {
            return;
        }
        self.mode = true;
        let msg = Ftc::signed_message(self.v_cur);
        let share = self.scheme().sign_share(&self.core.key, &msg);
        let endorsement = match &self.hqc {
            ParentCert::Fallback(f) => self.coins.get(&f.view).cloned(),
            ParentCert::Quorum(_) => None,
        };
        out.multicast(Message::Timeout(Timeout {
            sender: self.core.id,
            domain: TimeoutDomain::View(self.v_cur),
            share,
            high_qc: self.hqc.clone(),
            endorsement,
        }));
    }

    fn enter_fallback(&mut self, ftc: Ftc, out: &mut Outbox) {
        if !ftc.verify(self.scheme()) {
            return;
        }
        self.ftcs.entry(ftc.view).or_insert_with(|| ftc.clone());
        if ftc.view < self.v_cur || self.fallback_entered == Some(ftc.view) {
            return;
        }
        self.mode = true;
        self.v_cur = ftc.view;
        self.fallback_entered = Some(ftc.view);
        let n = self.core.cfg.n as usize;
        self.f_voted_round = vec![0; n];
        self.f_voted_height = vec![0; n];
        self.fqc2_by_proposer.clear();
        self.h1_seen = false;
        self.h2_relayed = false;
        self.my_h2_announced = false;
        out.timer(self.v_cur, self.r_cur, self.core.cfg.tau);
        out.multicast(Message::FtcMsg(ftc));
        // Height-1 f-block extending the highest QC.
        let payload = self.core.next_payload();
        let b1 = Block::new_fallback(
            self.hqc.clone(),
            self.hqc.round() + 1,
            self.v_cur,
            payload,
            1,
            self.core.id,
        );
        self.my_fblocks.insert(b1.id, self.v_cur);
        self.core.insert_block(b1.clone());
        out.multicast(Message::FallbackProposal(b1));
        self.replay_pending(out);
        self.prune();
    }

    /// Certification of a fallback block became known: drive adoption, chain
    /// completion announcements and the leader election trigger.
    fn note_fqc(&mut self, fqc: FQc, out: &mut Outbox) {
        if !fqc.verify(self.scheme()) {
            return;
        }
        let key = (fqc.view, fqc.proposer, fqc.height);
        self.fqcs.entry(key).or_insert_with(|| fqc.clone());
        self.core.tree.record_cert(ParentCert::Fallback(fqc.clone()));
        if fqc.view == self.v_cur && self.mode {
            self.fallback_cert_step(fqc.clone(), out);
        }
        // Already-elected proposers' certificates act as regular QCs.
        if let Some(coin) = self.coins.get(&fqc.view) {
            if coin.leader == fqc.proposer {
                self.observe_cert(ParentCert::Fallback(fqc), out);
            }
        }
    }

    fn fallback_cert_step(&mut self, fqc: FQc, out: &mut Outbox) {
        if fqc.height == 1 && !self.h1_seen {
            self.h1_seen = true;
            // Adopt the first certified height-1 chain, own or not.
            let payload = self.core.next_payload();
            let b2 = Block::new_fallback(
                ParentCert::Fallback(fqc.clone()),
                fqc.round + 1,
                self.v_cur,
                payload,
                2,
                self.core.id,
            );
            self.my_fblocks.insert(b2.id, self.v_cur);
            self.core.insert_block(b2.clone());
            out.multicast(Message::FallbackProposal(b2));
        }
        if fqc.height == 2 {
            if fqc.proposer == self.core.id && !self.my_h2_announced {
                // Own chain complete: announce it.
                self.my_h2_announced = true;
                out.multicast(Message::FallbackQcMsg(fqc.clone()));
            } else if !self.h2_relayed {
                self.h2_relayed = true;
                out.multicast(Message::FallbackQcMsg(fqc.clone()));
            }
            self.fqc2_by_proposer.insert(fqc.proposer, fqc);
            if self.fqc2_by_proposer.len() >= self.core.cfg.quorum()
                && self.coin_sent.insert(self.v_cur)
            {
                let msg = coin_message(self.v_cur);
                let share = self.scheme().sign_share(&self.core.key, &msg);
                out.multicast(Message::CoinShareMsg(CoinShare {
                    sender: self.core.id,
                    view: self.v_cur,
                    share,
                }));
            }
        }
    }

    fn handle_coin(&mut self, coin: CoinQc, out: &mut Outbox) {
        if !coin.verify(self.scheme()) {
            return;
        }
        let newly = !self.coins.contains_key(&coin.view);
        if newly {
            self.coins.insert(coin.view, coin.clone());
            // Having voted for the elected height-2 f-block locks this
            // replica on its chain whether or not the height-2 f-QC has
            // arrived: the chain's height-1 parent is endorsed by extension.
            if let Some(f1) = self.h2_parents.get(&(coin.view, coin.leader)) {
                let floor = Rank {
                    view: coin.view,
                    endorsed: true,
                    round: f1.round,
                };
                if floor > self.lock_rank {
                    self.lock_rank = floor;
                }
            }
        }
        let exiting = coin.view >= self.v_cur;
        let entered_this = self.fallback_entered == Some(coin.view);
        if exiting {
            if self.coin_mcast.insert(coin.view) {
                out.multicast(Message::CoinQcMsg(coin.clone()));
            }
            if self.mode && entered_this {
                self.r_vote = self.f_voted_round[coin.leader as usize];
            }
            self.mode = false;
            self.v_cur = coin.view + 1;
            if entered_this {
                self.streak += 1;
            }
        }
        if newly {
            // Advance Round, Lock, Commit handle the freshly endorsed
            // certificates as regular QCs, in height order.
            let lo = (coin.view, coin.leader, 0);
            let hi = (coin.view, coin.leader, u64::MAX);
            let endorsed: Vec<FQc> = self.fqcs.range(lo..=hi).map(|(_, f)| f.clone()).collect();
            for fqc in endorsed {
                self.observe_cert(ParentCert::Fallback(fqc), out);
            }
        }
        if exiting {
            let skip =
                !self.core.cfg.vaba && entered_this && self.streak < self.backoff_x;
            if skip {
                // Consecutive fallback: do not wait for the timer.
                self.send_timeout(out);
            } else {
                out.timer(self.v_cur, self.r_cur, self.core.cfg.tau);
                self.post_fallback_probe = !self.core.cfg.vaba && entered_this;
            }
            self.prune();
        }
    }

    fn on_proposal(&mut self, from: ReplicaId, block: Block, out: &mut Outbox) {
        if block.round == 0
            || block.fallback.is_some()
            || block.tc.is_some()
            || !block.id_consistent()
            || from != leader_of(block.round, self.core.cfg.n)
            || !block.parent.verify(self.scheme())
        {
            return;
        }
        if let Some(coin) = &block.coin_qc {
            if !coin.verify(self.scheme()) {
                return;
            }
        }
        let slot = SlotKey::Proposal {
            view: block.view,
            round: block.round,
        };
        if !self.core.slots.admit(slot, from, block.id) {
            return;
        }
        self.core.insert_block(block.clone());
        // Exit Fallback first when the block carries a coin QC.
        if let Some(coin) = block.coin_qc.clone() {
            self.handle_coin(coin, out);
        }
        self.observe_cert(block.parent.clone(), out);
        self.after_block_arrival(out);
        let rank_ok = block.parent.rank(&self.coins) >= self.lock_rank;
        if block.round == self.r_cur
            && block.view == self.v_cur
            && block.round > self.r_vote
            && block.round == block.parent.round() + 1
            && rank_ok
            && !self.mode
        {
            let msg = Qc::signed_message(&block.id, block.round, block.view);
            let share = self.scheme().sign_share(&self.core.key, &msg);
            let next = leader_of(block.round + 1, self.core.cfg.n);
            out.send(
                Dest::One(next),
                Message::Vote(Vote {
                    voter: self.core.id,
                    block_id: block.id,
                    round: block.round,
                    view: block.view,
                    share,
                }),
            );
            self.r_vote = block.round;
            // Steady progress resets the fallback backoff.
            self.backoff_x = 1;
            self.streak = 0;
            self.post_fallback_probe = false;
        }
    }

    fn on_vote(&mut self, from: ReplicaId, vote: Vote, out: &mut Outbox) {
        if vote.voter != from {
            return;
        }
        let msg = Qc::signed_message(&vote.block_id, vote.round, vote.view);
        if !self.scheme().verify_share(&vote.share, &msg) {
            return;
        }
        let slot = SlotKey::Vote {
            view: vote.view,
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
                view: vote.view,
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
                view: entry.view,
                sig,
            };
            self.observe_cert(ParentCert::Quorum(qc), out);
        }
    }

    fn on_fallback_proposal(&mut self, from: ReplicaId, block: Block, out: &mut Outbox) {
        let tag = match block.fallback {
            Some(t) => t,
            None => return,
        };
        if from != tag.proposer
            || tag.proposer >= self.core.cfg.n
            || !(1..=2).contains(&tag.height)
            || block.tc.is_some()
            || block.coin_qc.is_some()
            || !block.id_consistent()
            || !block.parent.verify(self.scheme())
        {
            return;
        }
        let slot = SlotKey::FallbackProposal {
            view: block.view,
            height: tag.height,
        };
        if !self.core.slots.admit(slot, tag.proposer, block.id) {
            return;
        }
        if block.view > self.v_cur || (block.view == self.v_cur && !self.mode) {
            // Not in this fallback yet; keep the block for replay on entry.
            self.pending_fblocks
                .entry(block.view)
                .or_default()
                .push((from, block.clone()));
        }
        self.core.insert_block(block.clone());
        if let ParentCert::Fallback(f1) = &block.parent {
            self.note_fqc(f1.clone(), out);
        } else if let ParentCert::Quorum(qc) = &block.parent {
            self.core.tree.record_cert(ParentCert::Quorum(qc.clone()));
        }
        self.after_block_arrival(out);
        self.fallback_vote(block, tag.height, tag.proposer, out);
    }

    fn fallback_vote(&mut self, block: Block, height: u64, proposer: ReplicaId, out: &mut Outbox) {
        let j = proposer as usize;
        if !self.mode || block.view != self.v_cur || height <= self.f_voted_height[j] {
            return;
        }
        let ok = match height {
            1 => {
                block.parent.rank(&self.coins) >= self.lock_rank
                    && block.round == block.parent.round() + 1
            }
            2 => match &block.parent {
                ParentCert::Fallback(f1) => {
                    f1.view == self.v_cur
                        && f1.height == 1
                        && block.round == f1.round + 1
                        && block.round > self.f_voted_round[j]
                }
                ParentCert::Quorum(_) => false,
            },
            _ => false,
        };
        if !ok {
            return;
        }
        if height == 2 {
            if let ParentCert::Fallback(f1) = &block.parent {
                self.h2_parents
                    .insert((block.view, proposer), f1.clone());
            }
        }
        self.f_voted_round[j] = block.round;
        self.f_voted_height[j] = height;
        let msg = FQc::signed_message(&block.id, block.round, block.view, height, proposer);
        let share = self.scheme().sign_share(&self.core.key, &msg);
        out.send(
            Dest::One(proposer),
            Message::FallbackVote(FallbackVote {
                voter: self.core.id,
                block_id: block.id,
                round: block.round,
                view: block.view,
                height,
                proposer,
                share,
            }),
        );
    }

    fn on_fallback_vote(&mut self, from: ReplicaId, vote: FallbackVote, out: &mut Outbox) {
        if vote.voter != from || vote.proposer != self.core.id {
            return;
        }
        if !self.my_fblocks.contains_key(&vote.block_id) {
            return;
        }
        // The claimed fields must match the block actually proposed.
        match self.core.tree.get(&vote.block_id) {
            Some(b)
                if b.round == vote.round
                    && b.view == vote.view
                    && b.fallback.map(|t| t.height) == Some(vote.height) => {}
            _ => return,
        }
        let msg = FQc::signed_message(
            &vote.block_id,
            vote.round,
            vote.view,
            vote.height,
            vote.proposer,
        );
        if !self.scheme().verify_share(&vote.share, &msg) {
            return;
        }
        let slot = SlotKey::FallbackVote {
            view: vote.view,
            height: vote.height,
            proposer: self.core.id,
        };
        if !self.core.slots.admit(slot, vote.voter, vote.block_id) {
            return;
        }
        let quorum = self.core.cfg.quorum();
        let entry = self
            .fvotes
            .entry(vote.share.message_digest)
            .or_insert_with(|| FVoteSlot {
                block_id: vote.block_id,
                round: vote.round,
                view: vote.view,
                height: vote.height,
                collector: ShareCollector::new(quorum),
            });
        if let Some(shares) = entry.collector.add(vote.share.clone()) {
            let sig = self
                .core
                .scheme
                .aggregate(shares, quorum as u64)
                .expect("collector only admits verified shares");
            let fqc = FQc {
                block_id: entry.block_id,
                round: entry.round,
                view: entry.view,
                height: entry.height,
                proposer: self.core.id,
                sig,
            };
            self.note_fqc(fqc, out);
        }
    }

    fn on_timeout_msg(&mut self, from: ReplicaId, t: Timeout, out: &mut Outbox) {
        let view = match t.domain {
            TimeoutDomain::View(v) => v,
            TimeoutDomain::Round(_) => return,
        };
        if t.sender != from {
            return;
        }
        let msg = Ftc::signed_message(view);
        if !self.scheme().verify_share(&t.share, &msg) {
            return;
        }
        if !t.high_qc.verify(self.scheme()) {
            return;
        }
        if let Some(coin) = t.endorsement.clone() {
            self.handle_coin(coin, out);
        }
        let slot = SlotKey::Timeout { view, round: 0 };
        if !self
            .core
            .slots
            .admit(slot, from, crate::crypto::hash(&t.encoded()))
        {
            return;
        }
        self.observe_cert(t.high_qc.clone(), out);
        if let ParentCert::Fallback(f) = &t.high_qc {
            self.note_fqc(f.clone(), out);
        }
        if self.ftcs.contains_key(&view) {
            return;
        }
        let quorum = self.core.cfg.quorum();
        let collector = self
            .timeout_collectors
            .entry(view)
            .or_insert_with(|| ShareCollector::new(quorum));
        if let Some(shares) = collector.add(t.share.clone()) {
            let sig = self
                .core
                .scheme
                .aggregate(shares, quorum as u64)
                .expect("collector only admits verified shares");
            let ftc = Ftc { view, sig };
            self.enter_fallback(ftc, out);
        }
    }

    fn on_coin_share(&mut self, from: ReplicaId, share: CoinShare, out: &mut Outbox) {
        if share.sender != from {
            return;
        }
        let msg = coin_message(share.view);
        if !self.scheme().verify_share(&share.share, &msg) {
            return;
        }
        let slot = SlotKey::CoinShare { view: share.view };
        if !self.core.slots.admit(slot, from, share.share.share) {
            return;
        }
        if self.coins.contains_key(&share.view) {
            return;
        }
        let threshold = self.core.cfg.coin_quorum();
        let collector = self
            .coin_collectors
            .entry(share.view)
            .or_insert_with(|| ShareCollector::new(threshold));
        if let Some(shares) = collector.add(share.share.clone()) {
            let sig = self
                .core
                .scheme
                .aggregate(shares, threshold as u64)
                .expect("collector only admits verified shares");
            let leader = self
                .core
                .scheme
                .coin_leader(&sig, share.view)
                .expect("aggregate of verified coin shares");
            let coin = CoinQc {
                view: share.view,
                sig,
                leader,
            };
            self.handle_coin(coin, out);
        }
    }

    fn replay_pending(&mut self, out: &mut Outbox) {
        if let Some(list) = self.pending_fblocks.remove(&self.v_cur) {
            for (_, block) in list {
                let tag = match block.fallback {
                    Some(t) => t,
                    None => continue,
                };
                if let ParentCert::Fallback(f1) = &block.parent {
                    self.note_fqc(f1.clone(), out);
                }
                self.fallback_vote(block, tag.height, tag.proposer, out);
            }
        }
        // Certifications observed before entry still count for this view.
        let lo = (self.v_cur, 0u64, 0u64);
        let hi = (self.v_cur, u64::MAX, u64::MAX);
        let seen: Vec<FQc> = self.fqcs.range(lo..=hi).map(|(_, f)| f.clone()).collect();
        for fqc in seen {
            if self.mode && fqc.view == self.v_cur {
                self.fallback_cert_step(fqc, out);
            }
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
        let keep = self.v_cur.saturating_sub(8);
        self.timeout_collectors.retain(|v, _| *v >= keep);
        self.coin_collectors.retain(|v, _| *v >= keep);
        self.ftcs.retain(|v, _| *v >= keep);
        self.coins.retain(|v, _| *v + 64 >= self.v_cur);
        self.fqcs.retain(|(v, _, _), _| *v >= keep);
        self.pending_fblocks.retain(|v, _| *v >= self.v_cur);
        self.my_fblocks.retain(|_, v| *v >= keep);
        self.h2_parents.retain(|(v, _), _| *v >= keep);
        self.votes.retain(|_, s| s.view >= keep);
        self.fvotes.retain(|_, s| s.view >= keep);
        self.timeouts_sent.retain(|v| *v >= keep);
        self.coin_sent.retain(|v| *v >= keep);
        self.coin_mcast.retain(|v| *v >= keep);
        self.core.slots.prune_below_view(self.v_cur);
    }
}

impl Replica for Ditto {
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
            Message::FtcMsg(ftc) => self.enter_fallback(ftc, out),
            Message::FallbackProposal(b) => self.on_fallback_proposal(from, b, out),
            Message::FallbackVote(v) => self.on_fallback_vote(from, v, out),
            Message::FallbackQcMsg(fqc) => self.note_fqc(fqc, out),
            Message::CoinShareMsg(s) => self.on_coin_share(from, s, out),
            Message::CoinQcMsg(c) => self.handle_coin(c, out),
            Message::TcMsg(_) => {}
            Message::FetchReq(req) => self.core.on_fetch_req(&req, out),
            Message::FetchResp(resp) => {
                let fresh = self.core.accept_fetched(&resp);
                if !fresh.is_empty() {
                    self.after_block_arrival(out);
                }
            }
        }
    }

    fn on_timer(&mut self, view: u64, round: u64, out: &mut Outbox) {
        self.core.nudge_fetches(out);
        if view != self.v_cur || round != self.r_cur {
            return;
        }
        if self.timeouts_sent.contains(&self.v_cur) {
            return;
        }
        if self.post_fallback_probe {
            // Missed the steady leader right after a fallback: back off.
            self.backoff_x = self
                .backoff_x
                .saturating_mul(self.core.cfg.backoff_factor.max(1))
                .min(BACKOFF_CAP);
            self.streak = 0;
            self.post_fallback_probe = false;
        }
        self.send_timeout(out);
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
            v_cur: self.v_cur,
            fallback: self.mode,
        }
    }
}
