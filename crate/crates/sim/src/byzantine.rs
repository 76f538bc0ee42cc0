//! Scripted Byzantine replica for safety testing: wraps a correct state
//! machine, splits every proposal it makes into two conflicting twins sent
//! to different halves of the network, and votes for every proposal it sees
//! regardless of the voting rules.

use std::sync::Arc;

use chainsmr_core::messages::{Message, Vote};
use chainsmr_core::types::{leader_of, Block, Payload, Qc};
use chainsmr_core::{
    Dest, KeyMaterial, LogEntry, Outbox, Output, Replica, ReplicaId, ReplicaStatus,
    ThresholdScheme,
};

pub struct Equivocator {
    id: ReplicaId,
    key: KeyMaterial,
    scheme: Arc<dyn ThresholdScheme>,
    n: u64,
    inner: Box<dyn Replica>,
}

impl Equivocator {
    pub fn new(
        key: KeyMaterial,
        scheme: Arc<dyn ThresholdScheme>,
        n: u64,
        inner: Box<dyn Replica>,
    ) -> Self {
        Equivocator {
            id: key.replica_id,
            key,
            scheme,
            n,
            inner,
        }
    }

    /// Replace each multicast proposal with two conflicting twins, one per
    /// half of the replica set, and vote for both so the double vote is
    /// observable.
    fn transform(&self, tmp: Outbox, out: &mut Outbox) {
        for item in tmp.items {
            match item {
                Output::Send {
                    to: Dest::All,
                    msg: Message::Proposal(b),
                } => {
                    let twin = Block::new(
                        b.parent.clone(),
                        b.tc.clone(),
                        b.coin_qc.clone(),
                        b.round,
                        b.view,
                        Payload(b"twin".to_vec()),
                    );
                    for t in 0..self.n {
                        let msg = if t < self.n / 2 {
                            Message::Proposal(b.clone())
                        } else {
                            Message::Proposal(twin.clone())
                        };
                        out.send(Dest::One(t), msg);
                    }
                    for conflicting in [&b, &twin] {
                        let m = Qc::signed_message(&conflicting.id, conflicting.round, conflicting.view);
                        let share = self.scheme.sign_share(&self.key, &m);
                        out.send(
                            Dest::One(leader_of(conflicting.round + 1, self.n)),
                            Message::Vote(Vote {
                                voter: self.id,
                                block_id: conflicting.id,
                                round: conflicting.round,
                                view: conflicting.view,
                                share,
                            }),
                        );
                    }
                }
                other => out.items.push(other),
            }
        }
    }
}

impl Replica for Equivocator {
    fn id(&self) -> ReplicaId {
        self.id
    }

    fn bootstrap(&mut self, out: &mut Outbox) {
        let mut tmp = Outbox::default();
        self.inner.bootstrap(&mut tmp);
        self.transform(tmp, out);
    }

    fn on_message(&mut self, from: ReplicaId, msg: Message, out: &mut Outbox) {
        // Vote for everything, ignoring round and lock discipline.
        if let Message::Proposal(b) = &msg {
            let m = Qc::signed_message(&b.id, b.round, b.view);
            let share = self.scheme.sign_share(&self.key, &m);
            out.send(
                Dest::One(leader_of(b.round + 1, self.n)),
                Message::Vote(Vote {
                    voter: self.id,
                    block_id: b.id,
                    round: b.round,
                    view: b.view,
                    share,
                }),
            );
        }
        let mut tmp = Outbox::default();
        self.inner.on_message(from, msg, &mut tmp);
        self.transform(tmp, out);
    }

    fn on_timer(&mut self, view: u64, round: u64, out: &mut Outbox) {
        let mut tmp = Outbox::default();
        self.inner.on_timer(view, round, &mut tmp);
        self.transform(tmp, out);
    }

    fn offer_payload(&mut self, payload: Payload) {
        self.inner.offer_payload(payload);
    }

    fn log(&self) -> &[LogEntry] {
        self.inner.log()
    }

    fn equivocations(&self) -> u64 {
        self.inner.equivocations()
    }

    fn status(&self) -> ReplicaStatus {
        self.inner.status()
    }
}
