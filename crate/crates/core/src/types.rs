//! Blocks, fallback blocks, every certificate kind and the rank order shared
//! by all protocols.

use std::collections::BTreeMap;

use crate::crypto::{hash, Digest, ReplicaId, ThresholdScheme, ThresholdSig};
use crate::wire::{Enc, Wire};

/// Total order on blocks and certificates: view first, then within one view
/// an endorsed item beats any regular one regardless of round, then round.
/// Field order carries the comparator.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub struct Rank {
    pub view: u64,
    pub endorsed: bool,
    pub round: u64,
}

impl Rank {
    pub fn new(view: u64, round: u64) -> Self {
        Rank {
            view,
            endorsed: false,
            round,
        }
    }

    pub fn endorsed(view: u64, round: u64) -> Self {
        Rank {
            view,
            endorsed: true,
            round,
        }
    }
}

/// Round-robin leader schedule.
pub fn leader_of(round: u64, n: u64) -> ReplicaId {
    round % n
}

/// Quorum certificate over one block at one (view, round).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Qc {
    pub block_id: Digest,
    pub round: u64,
    pub view: u64,
    pub sig: ThresholdSig,
}

impl Qc {
    pub fn signed_message(block_id: &Digest, round: u64, view: u64) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(b"vote");
        e.digest(block_id);
        e.u64(round);
        e.u64(view);
        e.finish()
    }

    pub fn verify(&self, scheme: &dyn ThresholdScheme) -> bool {
        if self.is_genesis() {
            return true;
        }
        self.sig.threshold == scheme.quorum()
            && scheme.verify_threshold(
                &self.sig,
                &Self::signed_message(&self.block_id, self.round, self.view),
            )
    }

    pub fn is_genesis(&self) -> bool {
        self.round == 0 && self.view == 0 && self.block_id == genesis_id()
    }
}

impl Wire for Qc {
    fn encode(&self, e: &mut Enc) {
        e.digest(&self.block_id);
        e.u64(self.round);
        e.u64(self.view);
        e.digest(&self.sig.agg);
    }
}

/// Fallback quorum certificate; signs (id, r, v, height, proposer).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FQc {
    pub block_id: Digest,
    pub round: u64,
    pub view: u64,
    pub height: u64,
    pub proposer: ReplicaId,
    pub sig: ThresholdSig,
}

impl FQc {
    pub fn signed_message(
        block_id: &Digest,
        round: u64,
        view: u64,
        height: u64,
        proposer: ReplicaId,
    ) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(b"fvote");
        e.digest(block_id);
        e.u64(round);
        e.u64(view);
        e.u64(height);
        e.u64(proposer);
        e.finish()
    }

    pub fn verify(&self, scheme: &dyn ThresholdScheme) -> bool {
        self.height >= 1
            && self.height <= 2
            && self.proposer < scheme.n()
            && self.sig.threshold == scheme.quorum()
            && scheme.verify_threshold(
                &self.sig,
                &Self::signed_message(
                    &self.block_id,
                    self.round,
                    self.view,
                    self.height,
                    self.proposer,
                ),
            )
    }
}

impl Wire for FQc {
    fn encode(&self, e: &mut Enc) {
        e.digest(&self.block_id);
        e.u64(self.round);
        e.u64(self.view);
        e.u64(self.height);
        e.u64(self.proposer);
        e.digest(&self.sig.agg);
    }
}

/// The certificate a block embeds for its parent. Steady blocks normally
/// carry a regular QC; the first blocks after a fallback extend an endorsed
/// fallback QC, and height-2 f-blocks extend a height-1 f-QC.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ParentCert {
    Quorum(Qc),
    Fallback(FQc),
}

impl ParentCert {
    pub fn block_id(&self) -> Digest {
        match self {
            ParentCert::Quorum(q) => q.block_id,
            ParentCert::Fallback(q) => q.block_id,
        }
    }

    pub fn round(&self) -> u64 {
        match self {
            ParentCert::Quorum(q) => q.round,
            ParentCert::Fallback(q) => q.round,
        }
    }

    pub fn view(&self) -> u64 {
        match self {
            ParentCert::Quorum(q) => q.view,
            ParentCert::Fallback(q) => q.view,
        }
    }

    pub fn verify(&self, scheme: &dyn ThresholdScheme) -> bool {
        match self {
            ParentCert::Quorum(q) => q.verify(scheme),
            ParentCert::Fallback(q) => q.verify(scheme),
        }
    }

    pub fn as_quorum(&self) -> Option<&Qc> {
        match self {
            ParentCert::Quorum(q) => Some(q),
            ParentCert::Fallback(_) => None,
        }
    }

    pub fn as_fallback(&self) -> Option<&FQc> {
        match self {
            ParentCert::Quorum(_) => None,
            ParentCert::Fallback(q) => Some(q),
        }
    }

    /// Rank under a set of known coin QCs. Endorsement keys off the elected
    /// chain's head: the height-2 certificate by the view's coin leader.
    /// Its height-1 parent is endorsed by extension, which only matters
    /// inside the commit rule where the chain linkage is at hand.
    pub fn rank(&self, coins: &BTreeMap<u64, CoinQc>) -> Rank {
        match self {
            ParentCert::Quorum(q) => Rank::new(q.view, q.round),
            ParentCert::Fallback(q) => {
                let endorsed = q.height == 2
                    && coins
                        .get(&q.view)
                        .map(|c| c.leader == q.proposer)
                        .unwrap_or(false);
                Rank {
                    view: q.view,
                    endorsed,
                    round: q.round,
                }
            }
        }
    }
}

impl Wire for ParentCert {
    fn encode(&self, e: &mut Enc) {
        match self {
            ParentCert::Quorum(q) => {
                e.u8(0);
                q.encode(e);
            }
            ParentCert::Fallback(q) => {
                e.u8(1);
                q.encode(e);
            }
        }
    }
}

/// Timeout certificate for a round: quorum threshold signature over the
/// round number plus the 2f+1 reported high QCs.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Tc {
    pub round: u64,
    pub sig: ThresholdSig,
    pub high_qcs: Vec<Qc>,
}

impl Tc {
    pub fn signed_message(round: u64) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(b"round");
        e.u64(round);
        e.finish()
    }

    pub fn max_high_qc_round(&self) -> u64 {
        self.high_qcs.iter().map(|q| q.round).max().unwrap_or(0)
    }

    /// A valid TC holds exactly 2f+1 high QCs, all for rounds below its own.
    pub fn validate(&self, scheme: &dyn ThresholdScheme) -> bool {
        self.high_qcs.len() as u64 == scheme.quorum()
            && self.high_qcs.iter().all(|q| q.round < self.round)
            && self.high_qcs.iter().all(|q| q.verify(scheme))
            && self.sig.threshold == scheme.quorum()
            && scheme.verify_threshold(&self.sig, &Self::signed_message(self.round))
    }
}

impl Wire for Tc {
    fn encode(&self, e: &mut Enc) {
        e.u64(self.round);
        e.digest(&self.sig.agg);
        e.list(&self.high_qcs);
    }
}

/// Fallback timeout certificate for a view.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Ftc {
    pub view: u64,
    pub sig: ThresholdSig,
}

impl Ftc {
    pub fn signed_message(view: u64) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(b"view");
        e.u64(view);
        e.finish()
    }

    pub fn verify(&self, scheme: &dyn ThresholdScheme) -> bool {
        self.sig.threshold == scheme.quorum()
            && scheme.verify_threshold(&self.sig, &Self::signed_message(self.view))
    }
}

impl Wire for Ftc {
    fn encode(&self, e: &mut Enc) {
        e.u64(self.view);
        e.digest(&self.sig.agg);
    }
}

/// Unique f+1 threshold signature on a view's hash; elects the fallback
/// leader for that view.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct CoinQc {
    pub view: u64,
    pub sig: ThresholdSig,
    pub leader: ReplicaId,
}

impl CoinQc {
    pub fn verify(&self, scheme: &dyn ThresholdScheme) -> bool {
        scheme.coin_leader(&self.sig, self.view) == Ok(self.leader)
    }
}

impl Wire for CoinQc {
    fn encode(&self, e: &mut Enc) {
        e.u64(self.view);
        e.digest(&self.sig.agg);
        e.u64(self.leader);
    }
}

/// Marks a block as the height-1 or height-2 element of one replica's
/// fallback chain.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct FallbackTag {
    pub height: u64,
    pub proposer: ReplicaId,
}

impl Wire for FallbackTag {
    fn encode(&self, e: &mut Enc) {
        e.u64(self.height);
        e.u64(self.proposer);
    }
}

/// Opaque transaction batch bytes.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Payload(pub Vec<u8>);

impl Payload {
    pub fn digest(&self) -> Digest {
        hash(&self.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A chained proposal. Regular blocks leave `fallback` unset; fallback
/// blocks set it and never carry `tc` or `coin_qc`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Block {
    pub id: Digest,
    pub parent: ParentCert,
    pub tc: Option<Tc>,
    pub coin_qc: Option<CoinQc>,
    pub round: u64,
    pub view: u64,
    pub payload: Payload,
    pub fallback: Option<FallbackTag>,
}

impl Block {
    /// id = H(qc, r, v, txn), with the fallback tag folded in for f-blocks so
    /// two replicas' f-blocks over identical content stay distinct.
    fn compute_id(
        parent: &ParentCert,
        round: u64,
        view: u64,
        payload: &Payload,
        fallback: Option<FallbackTag>,
    ) -> Digest {
        let mut e = Enc::new();
        parent.encode(&mut e);
        e.u64(round);
        e.u64(view);
        e.bytes(&payload.0);
        e.opt(&fallback);
        hash(&e.finish())
    }

    pub fn new(
        parent: ParentCert,
        tc: Option<Tc>,
        coin_qc: Option<CoinQc>,
        round: u64,
        view: u64,
        payload: Payload,
    ) -> Block {
        let id = Self::compute_id(&parent, round, view, &payload, None);
        Block {
            id,
            parent,
            tc,
            coin_qc,
            round,
            view,
            payload,
            fallback: None,
        }
    }

    pub fn new_fallback(
        parent: ParentCert,
        round: u64,
        view: u64,
        payload: Payload,
        height: u64,
        proposer: ReplicaId,
    ) -> Block {
        let tag = FallbackTag { height, proposer };
        let id = Self::compute_id(&parent, round, view, &payload, Some(tag));
        Block {
            id,
            parent,
            tc: None,
            coin_qc: None,
            round,
            view,
            payload,
            fallback: Some(tag),
        }
    }

    pub fn genesis() -> Block {
        Block {
            id: genesis_id(),
            parent: ParentCert::Quorum(Qc {
                block_id: Digest::ZERO,
                round: 0,
                view: 0,
                sig: ThresholdSig::genesis(),
            }),
            tc: None,
            coin_qc: None,
            round: 0,
            view: 0,
            payload: Payload::default(),
            fallback: None,
        }
    }

    pub fn is_genesis(&self) -> bool {
        self.id == genesis_id()
    }

    pub fn is_fallback(&self) -> bool {
        self.fallback.is_some()
    }

    /// Structural identity check: the id matches the content hash.
    pub fn id_consistent(&self) -> bool {
        self.is_genesis()
            || self.id
                == Self::compute_id(&self.parent, self.round, self.view, &self.payload, self.fallback)
    }
}

impl Wire for Block {
    fn encode(&self, e: &mut Enc) {
        e.digest(&self.id);
        self.parent.encode(e);
        e.opt(&self.tc);
        e.opt(&self.coin_qc);
        e.u64(self.round);
        e.u64(self.view);
        e.bytes(&self.payload.0);
        e.opt(&self.fallback);
    }
}

/// Round-0, view-0 block with an empty payload; every replica starts with it
/// and with its self-certified QC.
pub fn genesis_id() -> Digest {
    hash(b"chainsmr-genesis")
}

/// The QC of the genesis block, available to all replicas at start.
pub fn genesis_qc() -> Qc {
    Qc {
        block_id: genesis_id(),
        round: 0,
        view: 0,
        sig: ThresholdSig::genesis(),
    }
}

/// Rank of certificates and blocks without any endorsement context.
pub fn rank_of_qc(qc: &Qc) -> Rank {
    Rank::new(qc.view, qc.round)
}
