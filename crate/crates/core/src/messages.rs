//! Messages exchanged between replicas. The canonical encoding is the wire
//! format the simulator charges for message sizes.

use crate::crypto::{Digest, ReplicaId, SigShare};
use crate::types::{Block, CoinQc, FQc, Ftc, ParentCert, Tc};
use crate::wire::{Enc, Wire};

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Message {
    /// Steady-state block from the round leader.
    Proposal(Block),
    /// Threshold share over (id, r, v), sent to the next leader.
    Vote(Vote),
    /// Timeout share over a round (DiemBFT, Jolteon) or a view (Ditto),
    /// carrying the sender's high QC.
    Timeout(Timeout),
    /// Formed round timeout certificate, forwarded to the new leader.
    TcMsg(Tc),
    /// Fallback timeout certificate, multicast on fallback entry.
    FtcMsg(Ftc),
    /// Height-1 or height-2 fallback block.
    FallbackProposal(Block),
    /// Threshold share over (id, r, v, h, proposer), sent to the proposer.
    FallbackVote(FallbackVote),
    /// A height-2 fallback QC announcing one complete fallback chain.
    FallbackQcMsg(FQc),
    /// Coin share for the view's leader election.
    CoinShareMsg(CoinShare),
    /// Formed coin QC, multicast on fallback exit.
    CoinQcMsg(CoinQc),
    /// Block-sync request for a missing ancestor.
    FetchReq(FetchReq),
    /// Requested block plus its resolvable ancestor chain.
    FetchResp(FetchResp),
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Vote {
    pub voter: ReplicaId,
    pub block_id: Digest,
    pub round: u64,
    pub view: u64,
    pub share: SigShare,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TimeoutDomain {
    Round(u64),
    View(u64),
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Timeout {
    pub sender: ReplicaId,
    pub domain: TimeoutDomain,
    pub share: SigShare,
    pub high_qc: ParentCert,
    /// Endorsement evidence when the high QC is a fallback certificate.
    pub endorsement: Option<CoinQc>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FallbackVote {
    pub voter: ReplicaId,
    pub block_id: Digest,
    pub round: u64,
    pub view: u64,
    pub height: u64,
    pub proposer: ReplicaId,
    pub share: SigShare,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct CoinShare {
    pub sender: ReplicaId,
    pub view: u64,
    pub share: SigShare,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FetchReq {
    pub requester: ReplicaId,
    pub block_id: Digest,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FetchResp {
    /// Ancestor-first chain ending at the requested block.
    pub blocks: Vec<Block>,
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Proposal(_) => "proposal",
            Message::Vote(_) => "vote",
            Message::Timeout(_) => "timeout",
            Message::TcMsg(_) => "tc",
            Message::FtcMsg(_) => "ftc",
            Message::FallbackProposal(_) => "fproposal",
            Message::FallbackVote(_) => "fvote",
            Message::FallbackQcMsg(_) => "fqc",
            Message::CoinShareMsg(_) => "coin_share",
            Message::CoinQcMsg(_) => "coin_qc",
            Message::FetchReq(_) => "fetch_req",
            Message::FetchResp(_) => "fetch_resp",
        }
    }
}

impl Wire for SigShare {
    fn encode(&self, e: &mut Enc) {
        e.u64(self.signer);
        e.digest(&self.message_digest);
        e.digest(&self.share);
    }
}

impl Wire for Vote {
    fn encode(&self, e: &mut Enc) {
        e.u64(self.voter);
        e.digest(&self.block_id);
        e.u64(self.round);
        e.u64(self.view);
        self.share.encode(e);
    }
}

impl Wire for Timeout {
    fn encode(&self, e: &mut Enc) {
        e.u64(self.sender);
        match self.domain {
            TimeoutDomain::Round(r) => {
                e.u8(0);
                e.u64(r);
            }
            TimeoutDomain::View(v) => {
                e.u8(1);
                e.u64(v);
            }
        }
        self.share.encode(e);
        self.high_qc.encode(e);
        e.opt(&self.endorsement);
    }
}

impl Wire for FallbackVote {
    fn encode(&self, e: &mut Enc) {
        e.u64(self.voter);
        e.digest(&self.block_id);
        e.u64(self.round);
        e.u64(self.view);
        e.u64(self.height);
        e.u64(self.proposer);
        self.share.encode(e);
    }
}

impl Wire for CoinShare {
    fn encode(&self, e: &mut Enc) {
        e.u64(self.sender);
        e.u64(self.view);
        self.share.encode(e);
    }
}

impl Wire for FetchReq {
    fn encode(&self, e: &mut Enc) {
        e.u64(self.requester);
        e.digest(&self.block_id);
    }
}

impl Wire for FetchResp {
    fn encode(&self, e: &mut Enc) {
        e.list(&self.blocks);
    }
}

impl Wire for Message {
    fn encode(&self, e: &mut Enc) {
        match self {
            Message::Proposal(b) => {
                e.u8(0);
                b.encode(e);
            }
            Message::Vote(v) => {
                e.u8(1);
                v.encode(e);
            }
            Message::Timeout(t) => {
                e.u8(2);
                t.encode(e);
            }
            Message::TcMsg(t) => {
                e.u8(3);
                t.encode(e);
            }
            Message::FtcMsg(t) => {
                e.u8(4);
                t.encode(e);
            }
            Message::FallbackProposal(b) => {
                e.u8(5);
                b.encode(e);
            }
            Message::FallbackVote(v) => {
                e.u8(6);
                v.encode(e);
            }
            Message::FallbackQcMsg(q) => {
                e.u8(7);
                q.encode(e);
            }
            Message::CoinShareMsg(s) => {
                e.u8(8);
                s.encode(e);
            }
            Message::CoinQcMsg(c) => {
                e.u8(9);
                c.encode(e);
            }
            Message::FetchReq(r) => {
                e.u8(10);
                r.encode(e);
            }
            Message::FetchResp(r) => {
                e.u8(11);
                r.encode(e);
            }
        }
    }
}
