//! The hop clock: causal commit latency measured in message transmissions.
//!
//! Every block and certificate carries, per ancestor block, the number of
//! network hops its evidence has traveled since that ancestor was proposed.
//! Content learned over several paths keeps the shortest one; a certificate
//! formed from threshold shares is causally behind all of them, so its depth
//! is the maximum over the shares that formed it. A replica's commit hop for
//! a block is the deepest entry among the certificates that triggered the
//! commit, which in the steady state reproduces the proposal-vote-proposal
//! pipeline length exactly.

use std::collections::BTreeMap;

use chainsmr_core::messages::Message;
use chainsmr_core::types::{Block, ParentCert};
use chainsmr_core::{Digest, EvidenceCert, ReplicaId};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum ObjKey {
    Block(Digest),
    Qc(Digest),
    FQc(Digest),
    Tc(u64),
    FTc(u64),
    Coin(u64),
}

/// Pseudo-block marking the start of a view's fallback cycle: the timeout
/// exchange. Fallback blocks measure their commit latency from here, which
/// is how the 7-hop cycle (1 timeout + 4 f-block + 1 f-QC + 1 coin) counts.
pub fn view_anchor(view: u64) -> Digest {
    let mut bytes = b"view-anchor".to_vec();
    bytes.extend_from_slice(&view.to_le_bytes());
    chainsmr_core::hash(&bytes)
}

pub type DepthMap = BTreeMap<Digest, u32>;

#[derive(Clone, Debug, Default)]
pub struct Annotations {
    /// Carried objects with their evidence depth per tracked block.
    pub objects: Vec<(ObjKey, DepthMap)>,
    /// Threshold share contributions: (certificate key, signer, depth).
    pub shares: Vec<(ObjKey, ReplicaId, DepthMap)>,
}

#[derive(Default)]
struct ReplicaView {
    objs: BTreeMap<ObjKey, DepthMap>,
    pending: BTreeMap<ObjKey, Vec<(ReplicaId, DepthMap)>>,
    /// Height-2 fallback QCs seen, per view; feeds coin share depth.
    fqc2_seen: BTreeMap<u64, Vec<ObjKey>>,
}

pub struct HopTracker {
    views: Vec<ReplicaView>,
    quorum: usize,
    coin_quorum: usize,
    block_round: BTreeMap<Digest, u64>,
    anchor_view: BTreeMap<Digest, u64>,
}

fn bump(map: &DepthMap) -> DepthMap {
    map.iter().map(|(k, v)| (*k, v.saturating_add(1))).collect()
}

fn merge_min(into: &mut DepthMap, from: &DepthMap) {
    for (k, v) in from {
        into.entry(*k)
            .and_modify(|d| *d = (*d).min(*v))
            .or_insert(*v);
    }
}

impl HopTracker {
    pub fn new(n: u64, f: u64) -> Self {
        HopTracker {
            views: (0..n).map(|_| ReplicaView::default()).collect(),
            quorum: (2 * f + 1) as usize,
            coin_quorum: (f + 1) as usize,
            block_round: BTreeMap::new(),
            anchor_view: BTreeMap::new(),
        }
    }

    fn threshold_for(&self, key: &ObjKey) -> usize {
        match key {
            ObjKey::Coin(_) => self.coin_quorum,
            _ => self.quorum,
        }
    }

    fn cert_key(cert: &ParentCert) -> ObjKey {
        match cert {
            ParentCert::Quorum(q) => ObjKey::Qc(q.block_id),
            ParentCert::Fallback(f) => ObjKey::FQc(f.block_id),
        }
    }

    /// Depth map of a certificate at one replica, forming it from pending
    /// shares when the threshold has been reached locally.
    fn cert_map(&mut self, replica: usize, key: ObjKey) -> DepthMap {
        if let Some(m) = self.views[replica].objs.get(&key) {
            return m.clone();
        }
        let threshold = self.threshold_for(&key);
        let view = &mut self.views[replica];
        if let Some(shares) = view.pending.get(&key) {
            if shares.len() >= threshold {
                let mut formed = DepthMap::new();
                for (_, map) in shares.iter().take(threshold) {
                    for (b, d) in map {
                        // Causally behind every contributing share.
                        formed
                            .entry(*b)
                            .and_modify(|cur| *cur = (*cur).max(*d))
                            .or_insert(*d);
                    }
                }
                view.objs.insert(key, formed.clone());
                return formed;
            }
        }
        DepthMap::new()
    }

    /// Depth map of a block at one replica; a freshly created block inherits
    /// its parent certificate's map and starts itself at zero.
    fn block_map(&mut self, replica: usize, block: &Block) -> DepthMap {
        let key = ObjKey::Block(block.id);
        if let Some(m) = self.views[replica].objs.get(&key) {
            return m.clone();
        }
        self.block_round.insert(block.id, block.round);
        let mut map = self.cert_map(replica, Self::cert_key(&block.parent));
        if let Some(tag) = block.fallback {
            if tag.height == 1 {
                let ftc = self.cert_map(replica, ObjKey::FTc(block.view));
                merge_min(&mut map, &ftc);
            }
        }
        map.insert(block.id, 0);
        self.views[replica].objs.insert(key, map.clone());
        map
    }

    fn note_block(&mut self, block: &Block) {
        self.block_round.insert(block.id, block.round);
    }

    /// Compute the annotations a message carries when `from` sends it.
    pub fn annotate_send(&mut self, from: ReplicaId, msg: &Message) -> Annotations {
        let r = from as usize;
        let mut ann = Annotations::default();
        match msg {
            Message::Proposal(b) | Message::FallbackProposal(b) => {
                self.note_block(b);
                let bm = self.block_map(r, b);
                ann.objects.push((ObjKey::Block(b.id), bump(&bm)));
                let pk = Self::cert_key(&b.parent);
                let pm = self.cert_map(r, pk);
                ann.objects.push((pk, bump(&pm)));
                if let Some(tc) = &b.tc {
                    let tm = self.cert_map(r, ObjKey::Tc(tc.round));
                    ann.objects.push((ObjKey::Tc(tc.round), bump(&tm)));
                    for qc in &tc.high_qcs {
                        let qm = self.cert_map(r, ObjKey::Qc(qc.block_id));
                        ann.objects.push((ObjKey::Qc(qc.block_id), bump(&qm)));
                    }
                }
                if let Some(coin) = &b.coin_qc {
                    let cm = self.cert_map(r, ObjKey::Coin(coin.view));
                    ann.objects.push((ObjKey::Coin(coin.view), bump(&cm)));
                }
            }
            Message::Vote(v) => {
                let bm = self.views[r]
                    .objs
                    .get(&ObjKey::Block(v.block_id))
                    .cloned()
                    .unwrap_or_default();
                ann.shares.push((ObjKey::Qc(v.block_id), v.voter, bump(&bm)));
            }
            Message::FallbackVote(v) => {
                let bm = self.views[r]
                    .objs
                    .get(&ObjKey::Block(v.block_id))
                    .cloned()
                    .unwrap_or_default();
                ann.shares
                    .push((ObjKey::FQc(v.block_id), v.voter, bump(&bm)));
            }
            Message::Timeout(t) => {
                let hk = Self::cert_key(&t.high_qc);
                let hm = self.cert_map(r, hk);
                ann.objects.push((hk, bump(&hm)));
                let cert_key = match t.domain {
                    chainsmr_core::messages::TimeoutDomain::Round(round) => ObjKey::Tc(round),
                    chainsmr_core::messages::TimeoutDomain::View(view) => {
                        self.anchor_view.insert(view_anchor(view), view);
                        ObjKey::FTc(view)
                    }
                };
                let mut share_map = bump(&hm);
                if let chainsmr_core::messages::TimeoutDomain::View(view) = t.domain {
                    share_map.insert(view_anchor(view), 1);
                }
                ann.shares.push((cert_key, t.sender, share_map));
                if let Some(coin) = &t.endorsement {
                    let cm = self.cert_map(r, ObjKey::Coin(coin.view));
                    ann.objects.push((ObjKey::Coin(coin.view), bump(&cm)));
                }
            }
            Message::TcMsg(tc) => {
                let tm = self.cert_map(r, ObjKey::Tc(tc.round));
                ann.objects.push((ObjKey::Tc(tc.round), bump(&tm)));
                for qc in &tc.high_qcs {
                    let qm = self.cert_map(r, ObjKey::Qc(qc.block_id));
                    ann.objects.push((ObjKey::Qc(qc.block_id), bump(&qm)));
                }
            }
            Message::FtcMsg(ftc) => {
                let fm = self.cert_map(r, ObjKey::FTc(ftc.view));
                ann.objects.push((ObjKey::FTc(ftc.view), bump(&fm)));
            }
            Message::FallbackQcMsg(fqc) => {
                let key = ObjKey::FQc(fqc.block_id);
                let fm = self.cert_map(r, key);
                if fqc.height == 2 {
                    let seen = self.views[r].fqc2_seen.entry(fqc.view).or_default();
                    if !seen.contains(&key) {
                        seen.push(key);
                    }
                }
                ann.objects.push((key, bump(&fm)));
            }
            Message::CoinShareMsg(s) => {
                // A coin share follows every complete chain its sender saw.
                let keys: Vec<ObjKey> = self.views[r]
                    .fqc2_seen
                    .get(&s.view)
                    .cloned()
                    .unwrap_or_default();
                let mut map = DepthMap::new();
                for key in keys {
                    let m = self.cert_map(r, key);
                    merge_min(&mut map, &m);
                }
                ann.shares.push((ObjKey::Coin(s.view), s.sender, bump(&map)));
            }
            Message::CoinQcMsg(c) => {
                let cm = self.cert_map(r, ObjKey::Coin(c.view));
                ann.objects.push((ObjKey::Coin(c.view), bump(&cm)));
            }
            Message::FetchReq(_) => {}
            Message::FetchResp(resp) => {
                for b in &resp.blocks {
                    self.note_block(b);
                    let bm = self.block_map(r, b);
                    ann.objects.push((ObjKey::Block(b.id), bump(&bm)));
                    let pk = Self::cert_key(&b.parent);
                    let pm = self.cert_map(r, pk);
                    ann.objects.push((pk, bump(&pm)));
                }
            }
        }
        ann
    }

    pub fn on_deliver(&mut self, to: ReplicaId, msg: &Message, ann: &Annotations) {
        let view = &mut self.views[to as usize];
        for (key, map) in &ann.objects {
            merge_min(view.objs.entry(*key).or_default(), map);
        }
        for (key, signer, map) in &ann.shares {
            let pending = view.pending.entry(*key).or_default();
            if !pending.iter().any(|(s, _)| s == signer) {
                pending.push((*signer, map.clone()));
            }
        }
        if let Message::FallbackQcMsg(fqc) = msg {
            if fqc.height == 2 {
                let key = ObjKey::FQc(fqc.block_id);
                let seen = view.fqc2_seen.entry(fqc.view).or_default();
                if !seen.contains(&key) {
                    seen.push(key);
                }
            }
        }
    }

    /// Hop count for one commit: the deepest evidence entry for the block.
    pub fn commit_hops(&mut self, replica: ReplicaId, evidence: &[EvidenceCert], block: Digest) -> u32 {
        let r = replica as usize;
        let mut best = 0u32;
        for ev in evidence {
            let key = match ev {
                EvidenceCert::Qc(d) => ObjKey::Qc(*d),
                EvidenceCert::FQc(d) => ObjKey::FQc(*d),
                EvidenceCert::Coin(v) => ObjKey::Coin(*v),
            };
            let map = self.cert_map(r, key);
            if let Some(d) = map.get(&block) {
                best = best.max(*d);
            }
        }
        if best == 0 {
            if let Some(m) = self.views[r].objs.get(&ObjKey::Block(block)) {
                if let Some(d) = m.get(&block) {
                    best = *d;
                }
            }
        }
        best
    }

    /// Drop state for blocks below the horizon round and anchors below the
    /// horizon view.
    pub fn prune(&mut self, horizon_round: u64, horizon_view: u64) {
        let live: BTreeMap<Digest, u64> = self
            .block_round
            .iter()
            .filter(|(_, r)| **r + 64 >= horizon_round)
            .map(|(k, v)| (*k, *v))
            .collect();
        let anchors: BTreeMap<Digest, u64> = self
            .anchor_view
            .iter()
            .filter(|(_, v)| **v + 16 >= horizon_view)
            .map(|(k, v)| (*k, *v))
            .collect();
        let alive = |d: &Digest| live.contains_key(d) || anchors.contains_key(d);
        for view in &mut self.views {
            view.objs.retain(|key, _| match key {
                ObjKey::Block(d) | ObjKey::Qc(d) | ObjKey::FQc(d) => alive(d),
                _ => true,
            });
            for map in view.objs.values_mut() {
                map.retain(|d, _| alive(d));
            }
            view.pending.retain(|key, _| match key {
                ObjKey::Block(d) | ObjKey::Qc(d) | ObjKey::FQc(d) => alive(d),
                _ => true,
            });
            for shares in view.pending.values_mut() {
                for (_, map) in shares.iter_mut() {
                    map.retain(|d, _| alive(d));
                }
            }
        }
        self.block_round = live;
        self.anchor_view = anchors;
    }
}
