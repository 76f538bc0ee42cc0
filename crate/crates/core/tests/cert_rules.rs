//! Certificate-level rules: TC validation, quorum arithmetic, coin
//! uniqueness across share subsets.

use chainsmr_core::types::{genesis_qc, Block, ParentCert, Payload, Qc, Tc};
use chainsmr_core::{TestScheme, ThresholdScheme};

fn qc_for(scheme: &TestScheme, keys: &[chainsmr_core::KeyMaterial], block: &Block) -> Qc {
    let msg = Qc::signed_message(&block.id, block.round, block.view);
    let shares: Vec<_> = keys
        .iter()
        .take(scheme.quorum() as usize)
        .map(|k| scheme.sign_share(k, &msg))
        .collect();
    Qc {
        block_id: block.id,
        round: block.round,
        view: block.view,
        sig: scheme.aggregate(&shares, scheme.quorum()).unwrap(),
    }
}

#[test]
fn tc_validation_round_bounds() {
    let (keys, scheme) = TestScheme::deal(5, 1);
    let msg = Tc::signed_message(5);
    let shares: Vec<_> = keys[..3].iter().map(|k| scheme.sign_share(k, &msg)).collect();
    let sig = scheme.aggregate(&shares, 3).unwrap();

    let b5 = Block::new(
        ParentCert::Quorum(genesis_qc()),
        None,
        None,
        5,
        0,
        Payload(b"r5".to_vec()),
    );
    let q5 = qc_for(&scheme, &keys, &b5);
    let b4 = Block::new(
        ParentCert::Quorum(genesis_qc()),
        None,
        None,
        4,
        0,
        Payload(b"r4".to_vec()),
    );
    let q4 = qc_for(&scheme, &keys, &b4);

    // A round-5 high QC inside TC(5) invalidates it.
    let bad = Tc {
        round: 5,
        sig: sig.clone(),
        high_qcs: vec![genesis_qc(), q4.clone(), q5],
    };
    assert!(!bad.validate(scheme.as_ref()));

    // Only 2f high QCs: wrong quorum size.
    let short = Tc {
        round: 5,
        sig: sig.clone(),
        high_qcs: vec![genesis_qc(), q4.clone()],
    };
    assert!(!short.validate(scheme.as_ref()));

    // 2f+1 high QCs, all below round 5, valid signature.
    let good = Tc {
        round: 5,
        sig,
        high_qcs: vec![genesis_qc(), q4.clone(), q4],
    };
    assert!(good.validate(scheme.as_ref()));
}

#[test]
fn quorum_intersection_exhaustive() {
    // Any two quorums of 2f+1 out of 3f+1 share at least f+1 members.
    for f in [1u64, 2] {
        let n = 3 * f + 1;
        let q = (2 * f + 1) as u32;
        let sets: Vec<Vec<u64>> = (0u64..(1 << n))
            .filter(|mask| mask.count_ones() == q)
            .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
            .collect();
        for a in &sets {
            for b in &sets {
                let inter = a.iter().filter(|x| b.contains(x)).count() as u64;
                assert!(
                    inter >= f + 1,
                    "f={f}: quorums {a:?} and {b:?} intersect in {inter}"
                );
            }
        }
    }
}

#[test]
fn coin_unique_across_all_subsets_at_n4() {
    // Every f+1 subset of 2f+1 coin shares yields the same leader.
    let (keys, scheme) = TestScheme::deal(99, 1);
    for view in 0..50u64 {
        let msg = chainsmr_core::crypto::coin_message(view);
        let shares: Vec<_> = keys[..3].iter().map(|k| scheme.sign_share(k, &msg)).collect();
        let mut leaders = std::collections::BTreeSet::new();
        for i in 0..3 {
            for j in (i + 1)..3 {
                let sig = scheme
                    .aggregate(&[shares[i].clone(), shares[j].clone()], 2)
                    .unwrap();
                leaders.insert(scheme.coin_leader(&sig, view).unwrap());
            }
        }
        assert_eq!(leaders.len(), 1, "view {view} elected {leaders:?}");
    }
}
