//! Signatures, threshold signatures and the common coin.
//!
//! The protocol modules only see the [`ThresholdScheme`] trait, so a real
//! pairing-based scheme can be substituted. The in-tree [`TestScheme`] is a
//! deterministic ideal-crypto stand-in: shares are keyed MACs derived from a
//! dealer seed, and an aggregate is a function of (digest, threshold, seed)
//! alone, independent of which share subset produced it. That subset
//! independence is what makes the coin unique per view and lets whole
//! simulation runs replay bit-exactly from a seed.

use std::fmt;
use std::sync::Arc;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub const DIGEST_LEN: usize = 32;

/// Replica index in `[0, n)`.
pub type ReplicaId = u64;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub fn hex(&self) -> String {
        let mut s = String::with_capacity(DIGEST_LEN * 2);
        for b in self.0 {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    /// First eight bytes interpreted little-endian, for seeding and modulo.
    pub fn prefix_u64(&self) -> u64 {
        let mut b = [0u8; 8];
        b.copy_from_slice(&self.0[..8]);
        u64::from_le_bytes(b)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &self.hex()[..12])
    }
}

/// Collision-resistant hash over arbitrary bytes.
pub fn hash(bytes: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update(bytes);
    Digest(h.finalize().into())
}

fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    Digest(h.finalize().into())
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("fewer than threshold distinct valid signers ({got} < {need})")]
    InsufficientShares { got: usize, need: usize },
    #[error("shares cover different message digests")]
    MixedMessages,
    #[error("coin signature failed verification")]
    InvalidCoin,
}

/// Per-replica signing material handed out by the trusted dealer.
#[derive(Clone)]
pub struct KeyMaterial {
    pub replica_id: ReplicaId,
    secret: [u8; DIGEST_LEN],
}

/// One replica's threshold signature share over a message digest.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SigShare {
    pub signer: ReplicaId,
    pub message_digest: Digest,
    pub share: Digest,
}

/// Aggregate of `threshold` distinct shares. Constant size regardless of the
/// message, and identical for every qualifying subset of shares.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ThresholdSig {
    pub message_digest: Digest,
    pub threshold: u64,
    pub agg: Digest,
}

impl ThresholdSig {
    /// Placeholder aggregate used by the self-certified genesis QC.
    pub fn genesis() -> Self {
        ThresholdSig {
            message_digest: Digest::ZERO,
            threshold: 0,
            agg: Digest::ZERO,
        }
    }
}

/// Signature interface the protocols are written against.
pub trait ThresholdScheme: Send + Sync + fmt::Debug {
    fn n(&self) -> u64;
    fn f(&self) -> u64;

    /// Quorum threshold `2f+1`.
    fn quorum(&self) -> u64 {
        2 * self.f() + 1
    }

    /// Coin threshold `f+1`.
    fn coin_threshold(&self) -> u64 {
        self.f() + 1
    }

    fn sign_share(&self, key: &KeyMaterial, message: &[u8]) -> SigShare;

    fn verify_share(&self, share: &SigShare, message: &[u8]) -> bool;

    /// Combine shares into a threshold signature. Duplicate signers count
    /// once; mixed digests are rejected.
    fn aggregate(&self, shares: &[SigShare], threshold: u64) -> Result<ThresholdSig, CryptoError>;

    fn verify_threshold(&self, sig: &ThresholdSig, message: &[u8]) -> bool;

    /// Elect a replica from a valid `f+1` coin signature over the view's coin
    /// message. Deterministic in the aggregate, uniform across views.
    fn coin_leader(&self, sig: &ThresholdSig, view: u64) -> Result<ReplicaId, CryptoError>;
}

/// Message a coin share signs for a view: the hash of the view number under a
/// coin domain tag. Coin shares and timeout shares live in distinct domains
/// so shares cannot be replayed across roles.
pub fn coin_message(view: u64) -> Vec<u8> {
    let inner = hash_parts(&[b"view-hash", &view.to_le_bytes()]);
    let mut m = b"coin".to_vec();
    m.extend_from_slice(&inner.0);
    m
}

/// Deterministic dealer-seeded test scheme.
#[derive(Debug, Clone)]
pub struct TestScheme {
    seed: u64,
    n: u64,
    f: u64,
}

impl TestScheme {
    /// Deal keys for `n = 3f+1` replicas from a 64-bit seed.
    pub fn deal(seed: u64, f: u64) -> (Vec<KeyMaterial>, Arc<TestScheme>) {
        let n = 3 * f + 1;
        let scheme = Arc::new(TestScheme { seed, n, f });
        let keys = (0..n)
            .map(|i| KeyMaterial {
                replica_id: i,
                secret: scheme.secret_of(i).0,
            })
            .collect();
        (keys, scheme)
    }

    fn secret_of(&self, id: ReplicaId) -> Digest {
        hash_parts(&[b"key", &self.seed.to_le_bytes(), &id.to_le_bytes()])
    }

    fn mac(secret: &[u8; DIGEST_LEN], digest: &Digest) -> Digest {
        hash_parts(&[b"share", secret, &digest.0])
    }

    fn share_of(&self, id: ReplicaId, digest: &Digest) -> Digest {
        Self::mac(&self.secret_of(id).0, digest)
    }

    fn agg_of(&self, digest: &Digest, threshold: u64) -> Digest {
        hash_parts(&[
            b"agg",
            &self.seed.to_le_bytes(),
            &digest.0,
            &threshold.to_le_bytes(),
        ])
    }
}

impl ThresholdScheme for TestScheme {
    fn n(&self) -> u64 {
        self.n
    }

    fn f(&self) -> u64 {
        self.f
    }

    fn sign_share(&self, key: &KeyMaterial, message: &[u8]) -> SigShare {
        let digest = hash(message);
        SigShare {
            signer: key.replica_id,
            message_digest: digest,
            share: Self::mac(&key.secret, &digest),
        }
    }

    fn verify_share(&self, share: &SigShare, message: &[u8]) -> bool {
        if share.signer >= self.n {
            return false;
        }
        let digest = hash(message);
        digest == share.message_digest && share.share == self.share_of(share.signer, &digest)
    }

    fn aggregate(&self, shares: &[SigShare], threshold: u64) -> Result<ThresholdSig, CryptoError> {
        let digest = match shares.first() {
            Some(s) => s.message_digest,
            None => {
                return Err(CryptoError::InsufficientShares {
                    got: 0,
                    need: threshold as usize,
                })
            }
        };
        if shares.iter().any(|s| s.message_digest != digest) {
            return Err(CryptoError::MixedMessages);
        }
        let mut signers: Vec<ReplicaId> = shares
            .iter()
            .filter(|s| s.signer < self.n && s.share == self.share_of(s.signer, &digest))
            .map(|s| s.signer)
            .collect();
        signers.sort_unstable();
        signers.dedup();
        if (signers.len() as u64) < threshold {
            return Err(CryptoError::InsufficientShares {
                got: signers.len(),
                need: threshold as usize,
            });
        }
        Ok(ThresholdSig {
            message_digest: digest,
            threshold,
            agg: self.agg_of(&digest, threshold),
        })
    }

    fn verify_threshold(&self, sig: &ThresholdSig, message: &[u8]) -> bool {
        let digest = hash(message);
        digest == sig.message_digest && sig.agg == self.agg_of(&digest, sig.threshold)
    }

    fn coin_leader(&self, sig: &ThresholdSig, view: u64) -> Result<ReplicaId, CryptoError> {
        if sig.threshold != self.coin_threshold() || !self.verify_threshold(sig, &coin_message(view))
        {
            return Err(CryptoError::InvalidCoin);
        }
        let r = hash_parts(&[b"leader", &sig.agg.0]);
        Ok(r.prefix_u64() % self.n)
    }
}
