//! The block tree: chained blocks keyed by digest, the certified-by map, and
//! the chain predicates the commit rules are built on.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::crypto::Digest;
use crate::types::{genesis_id, Block, CoinQc, ParentCert};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("ancestor {0:?} not resolvable; block sync required")]
    MissingAncestor(Digest),
}

#[derive(Debug, Default)]
pub struct BlockTree {
    blocks: BTreeMap<Digest, Block>,
    /// Strongest certificate seen per block id.
    certs: BTreeMap<Digest, ParentCert>,
}

impl BlockTree {
    pub fn new() -> Self {
        let mut t = BlockTree {
            blocks: BTreeMap::new(),
            certs: BTreeMap::new(),
        };
        let g = Block::genesis();
        t.blocks.insert(g.id, g);
        t.certs
            .insert(genesis_id(), ParentCert::Quorum(crate::types::genesis_qc()));
        t
    }

    pub fn insert(&mut self, block: Block) {
        // A block's parent certificate certifies the parent.
        if !block.is_genesis() {
            self.record_cert(block.parent.clone());
        }
        self.blocks.entry(block.id).or_insert(block);
    }

    pub fn record_cert(&mut self, cert: ParentCert) {
        self.certs.entry(cert.block_id()).or_insert(cert);
    }

    pub fn get(&self, id: &Digest) -> Option<&Block> {
        self.blocks.get(id)
    }

    pub fn contains(&self, id: &Digest) -> bool {
        self.blocks.contains_key(id)
    }

    pub fn cert_of(&self, id: &Digest) -> Option<&ParentCert> {
        self.certs.get(id)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Genesis-first chain from genesis to (and including) `id`.
    pub fn ancestors(&self, id: &Digest) -> Result<Vec<Digest>, TreeError> {
        let mut chain = Vec::new();
        let mut cur = *id;
        loop {
            let block = self.blocks.get(&cur).ok_or(TreeError::MissingAncestor(cur))?;
            chain.push(cur);
            if block.is_genesis() {
                break;
            }
            cur = block.parent.block_id();
        }
        chain.reverse();
        Ok(chain)
    }

    /// Commit-grade for the chain head: a regular QC, or the height-2
    /// fallback QC of the view's coin-elected leader.
    fn head_commit_grade(cert: &ParentCert, coins: &BTreeMap<u64, CoinQc>) -> bool {
        match cert {
            ParentCert::Quorum(_) => true,
            ParentCert::Fallback(f) => {
                f.height == 2
                    && coins
                        .get(&f.view)
                        .map(|c| c.leader == f.proposer)
                        .unwrap_or(false)
            }
        }
    }

    /// Two adjacent certified blocks B <- B' with consecutive rounds, seen
    /// from the certificate of B'. Returns B, the commit candidate. With
    /// `same_view`, both must share one view number and each element may be
    /// a certified regular block or an endorsed fallback block; the parent
    /// inside an endorsed height-2 f-block is endorsed by extension, so the
    /// elected chain commits even when its height-1 block was adopted from
    /// another proposer.
    pub fn two_chain(
        &self,
        tip: &ParentCert,
        same_view: bool,
        coins: &BTreeMap<u64, CoinQc>,
    ) -> Option<TwoChain> {
        if same_view && !Self::head_commit_grade(tip, coins) {
            return None;
        }
        let head = self.blocks.get(&tip.block_id())?;
        let parent = &head.parent;
        if same_view {
            let parent_grade = match parent {
                ParentCert::Quorum(_) => true,
                // Endorsed by extension under the endorsed head.
                ParentCert::Fallback(_) => matches!(tip, ParentCert::Fallback(_)),
            };
            if !parent_grade {
                return None;
            }
        }
        if tip.round() != parent.round() + 1 {
            return None;
        }
        if same_view && tip.view() != parent.view() {
            return None;
        }
        if parent.block_id() == genesis_id() {
            return None;
        }
        Some(TwoChain {
            candidate: parent.block_id(),
            mid_cert: parent.clone(),
            tip_cert: tip.clone(),
        })
    }

    /// Three adjacent certified blocks B <- B' <- B'' with consecutive
    /// rounds; returns B.
    pub fn three_chain(&self, tip: &ParentCert) -> Option<ThreeChain> {
        let head = self.blocks.get(&tip.block_id())?;
        let mid_cert = head.parent.clone();
        if tip.round() != mid_cert.round() + 1 {
            return None;
        }
        let mid = self.blocks.get(&mid_cert.block_id())?;
        let low_cert = mid.parent.clone();
        if mid_cert.round() != low_cert.round() + 1 {
            return None;
        }
        if low_cert.block_id() == genesis_id() {
            return None;
        }
        Some(ThreeChain {
            candidate: low_cert.block_id(),
            low_cert,
            mid_cert,
            tip_cert: tip.clone(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct TwoChain {
    pub candidate: Digest,
    pub mid_cert: ParentCert,
    pub tip_cert: ParentCert,
}

#[derive(Clone, Debug)]
pub struct ThreeChain {
    pub candidate: Digest,
    pub low_cert: ParentCert,
    pub mid_cert: ParentCert,
    pub tip_cert: ParentCert,
}
