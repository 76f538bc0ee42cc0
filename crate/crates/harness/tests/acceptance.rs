//! Acceptance suite: every criterion runs at its stated tolerance and
//! prints one PASS/FAIL line (visible with `cargo test -- --nocapture`, or
//! on failure). Criteria 8 and 9 share one fuzz corpus, computed once.

use std::collections::BTreeSet;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use chainsmr_harness::checks::{check_chain_shape, check_safety, check_unique_certification};
use chainsmr_harness::report::{fallback_made_progress, metrics, per_block_hops};
use chainsmr_sim::byzantine::Equivocator;
use chainsmr_sim::{
    run, run_with, AdversaryKind, Duration, ProtocolKind, Scenario, Trace,
};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha12Rng;

const DELTA: u64 = 10;
const TAU: u64 = 40;

// One criterion at a time: the stated runtime budgets are per criterion and
// meaningless under parallel contention.
static GATE: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

fn scenario(protocol: ProtocolKind, n: u64, seed: u64, duration: Duration) -> Scenario {
    let f = (n - 1) / 3;
    Scenario {
        n,
        f,
        protocol,
        adversary: AdversaryKind::Synchronous,
        delta: DELTA,
        tau: if protocol == ProtocolKind::Vaba2 { 0 } else { TAU },
        gst: None,
        seed,
        duration,
        load_rate: 0,
        batch_size: 0,
        ddos_delay: 0,
        crash_set: vec![],
        backoff_factor: 5,
    }
}

fn verdict_line(id: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {:02} {:<32} {} ({})",
        id,
        name,
        if pass { "PASS" } else { "FAIL" },
        detail
    );
    assert!(pass, "criterion {id} {name}: {detail}");
}

fn lsq_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    num / den
}

#[test]
fn criterion_01_jolteon_happy_path_latency() {
    let _gate = serial();
    let start = Instant::now();
    let mut checked = 0usize;
    for n in [4u64, 7] {
        let trace = run(&scenario(ProtocolKind::Jolteon, n, 101, Duration::Commits(200))).unwrap();
        let hops = per_block_hops(&trace);
        assert!(hops.len() >= 200, "n={n}: only {} blocks", hops.len());
        for (id, h) in &hops {
            assert_eq!(*h, 5, "n={n}: block {id:?} committed at {h} hops");
        }
        checked += hops.len();
    }
    let elapsed = start.elapsed();
    verdict_line(
        1,
        "jolteon happy-path latency",
        elapsed.as_secs_f64() < 5.0,
        &format!("{checked} blocks all at exactly 5 hops, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_02_diembft_happy_path_latency() {
    let _gate = serial();
    let start = Instant::now();
    let mut checked = 0usize;
    for n in [4u64, 7] {
        let trace =
            run(&scenario(ProtocolKind::Diembft3, n, 102, Duration::Commits(200))).unwrap();
        let hops = per_block_hops(&trace);
        assert!(hops.len() >= 200, "n={n}: only {} blocks", hops.len());
        for (id, h) in &hops {
            assert_eq!(*h, 7, "n={n}: block {id:?} committed at {h} hops");
        }
        checked += hops.len();
    }
    let elapsed = start.elapsed();
    verdict_line(
        2,
        "diembft3 happy-path latency",
        elapsed.as_secs_f64() < 5.0,
        &format!("{checked} blocks all at exactly 7 hops, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_03_happy_path_message_complexity_linear() {
    let _gate = serial();
    let start = Instant::now();
    let mut points = Vec::new();
    let mut raw = Vec::new();
    for n in [4u64, 7, 10] {
        let trace = run(&scenario(ProtocolKind::Jolteon, n, 103, Duration::Commits(150))).unwrap();
        let report = metrics(&trace, 10 * TAU);
        points.push(((n as f64).ln(), report.messages_per_commit.ln()));
        raw.push(format!("n={n}:{:.1}", report.messages_per_commit));
    }
    let slope = lsq_slope(&points);
    let elapsed = start.elapsed();
    verdict_line(
        3,
        "steady message complexity O(n)",
        (slope - 1.0).abs() <= 0.15 && elapsed.as_secs_f64() < 30.0,
        &format!("fit exponent {slope:.3} over [{}], {elapsed:.2?}", raw.join(", ")),
    );
}

#[test]
fn criterion_04_fallback_message_complexity_quadratic() {
    let _gate = serial();
    let start = Instant::now();
    let mut points = Vec::new();
    let mut raw = Vec::new();
    for n in [4u64, 7, 10] {
        let trace = run(&scenario(ProtocolKind::Vaba2, n, 104, Duration::Commits(80))).unwrap();
        let report = metrics(&trace, 10 * TAU);
        points.push(((n as f64).ln(), report.messages_per_view.ln()));
        raw.push(format!("n={n}:{:.0}", report.messages_per_view));
    }
    let slope = lsq_slope(&points);
    let elapsed = start.elapsed();
    verdict_line(
        4,
        "fallback message complexity O(n^2)",
        (slope - 2.0).abs() <= 0.2 && elapsed.as_secs_f64() < 60.0,
        &format!("fit exponent {slope:.3} over [{}], {elapsed:.2?}", raw.join(", ")),
    );
}

#[test]
fn criterion_05_fallback_progress_probability() {
    let _gate = serial();
    let start = Instant::now();
    let total = 1000u64;
    let mut fallbacks = 0u64;
    let mut progressed = 0u64;
    for seed in 0..total {
        let mut s = scenario(ProtocolKind::Ditto, 4, 2000 + seed, Duration::Time(2500));
        s.adversary = AdversaryKind::Asynchronous;
        let trace = run(&s).unwrap();
        if let Some(&v0) = trace.timeout_views.iter().next() {
            fallbacks += 1;
            if fallback_made_progress(&trace, v0) {
                progressed += 1;
            }
        }
    }
    let fraction = progressed as f64 / fallbacks.max(1) as f64;
    let elapsed = start.elapsed();
    verdict_line(
        5,
        "fallback progress probability",
        fallbacks >= 950 && fraction >= 0.60 && elapsed.as_secs_f64() < 120.0,
        &format!("{progressed}/{fallbacks} fallbacks committed fresh blocks ({fraction:.3}), {elapsed:.2?}"),
    );
}

#[test]
fn criterion_06_vaba_expected_latency() {
    let _gate = serial();
    let start = Instant::now();
    // The paper's model: f replicas crashed, so exactly 2f+1 fallback
    // chains complete and the coin elects a complete one with probability
    // (2f+1)/n; at n=7 the expectation sits at the claimed 3/2 views per
    // decision.
    let mut s = scenario(ProtocolKind::Vaba2, 7, 106, Duration::Commits(1000));
    s.adversary = AdversaryKind::Asynchronous;
    s.crash_set = vec![5, 6];
    let trace = run(&s).unwrap();
    let report = metrics(&trace, 10 * TAU);
    let vpd = report.views_per_decision;
    let hops = report.hops.as_ref().map(|h| h.mean).unwrap_or(f64::NAN);
    let elapsed = start.elapsed();
    verdict_line(
        6,
        "vaba2 expected latency",
        (vpd - 1.5).abs() <= 0.15
            && (hops - 10.5).abs() <= 1.0
            && report.commits_total >= 1000
            && elapsed.as_secs_f64() < 120.0,
        &format!(
            "views/decision {vpd:.3} (target 1.5+/-0.15), hops mean {hops:.2} (target 10.5+/-1.0), {} blocks, {elapsed:.2?}",
            report.commits_total
        ),
    );
}

#[test]
fn criterion_07_liveness_contrast_under_leader_ddos() {
    let _gate = serial();
    let start = Instant::now();
    let horizon = Duration::Time(8_000);
    let mut blocked = Vec::new();
    let mut robust = Vec::new();
    for protocol in [
        ProtocolKind::Jolteon,
        ProtocolKind::Diembft3,
        ProtocolKind::Ditto,
        ProtocolKind::Vaba2,
    ] {
        let mut s = scenario(protocol, 4, 107, horizon);
        s.adversary = AdversaryKind::LeaderDdos;
        s.ddos_delay = 2 * TAU;
        let trace = run(&s).unwrap();
        let commits = trace.committed_everywhere();
        match protocol {
            ProtocolKind::Jolteon | ProtocolKind::Diembft3 => {
                blocked.push((protocol, commits));
            }
            ProtocolKind::Ditto | ProtocolKind::Vaba2 => robust.push((protocol, commits)),
        }
    }
    let pass = blocked.iter().all(|(_, c)| *c == 0) && robust.iter().all(|(_, c)| *c >= 50);
    let elapsed = start.elapsed();
    verdict_line(
        7,
        "leader-DDoS liveness contrast",
        pass && elapsed.as_secs_f64() < 60.0,
        &format!("blocked {blocked:?}, robust {robust:?}, {elapsed:.2?}"),
    );
}

struct FuzzSummary {
    runs: usize,
    safety_failures: Vec<String>,
    unique_cert_failures: Vec<String>,
    shape_failures: Vec<String>,
    elapsed_secs: f64,
}

fn fuzz_corpus() -> &'static FuzzSummary {
    static CORPUS: OnceLock<FuzzSummary> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let start = Instant::now();
        let mut rng = ChaCha12Rng::seed_from_u64(0xfa11bacc);
        let mut safety_failures = Vec::new();
        let mut unique_cert_failures = Vec::new();
        let mut shape_failures = Vec::new();
        let mut runs = 0usize;

        fn check_into(
            label: String,
            trace: &Trace,
            runs: &mut usize,
            safety: &mut Vec<String>,
            unique: &mut Vec<String>,
            shape: &mut Vec<String>,
        ) {
            *runs += 1;
            let s = check_safety(trace);
            if !s.passed() {
                safety.push(format!("{label}: {}", s.label()));
            }
            let u = check_unique_certification(trace);
            if !u.passed() {
                unique.push(format!("{label}: {}", u.label()));
            }
            let c = check_chain_shape(trace);
            if !c.passed() {
                shape.push(format!("{label}: {}", c.label()));
            }
        }

        let protocols = [
            ProtocolKind::Diembft3,
            ProtocolKind::Jolteon,
            ProtocolKind::Ditto,
            ProtocolKind::Vaba2,
        ];
        let adversaries = [
            AdversaryKind::Synchronous,
            AdversaryKind::PartialSynchrony,
            AdversaryKind::Asynchronous,
            AdversaryKind::LeaderDdos,
            AdversaryKind::Crash,
            AdversaryKind::Composite,
        ];
        for i in 0..500u64 {
            let protocol = protocols[rng.gen_range(0..protocols.len())];
            let adversary = adversaries[rng.gen_range(0..adversaries.len())];
            let f = rng.gen_range(1..=2u64);
            let n = 3 * f + 1;
            let crashes = rng.gen_range(0..=f);
            let mut crash_set: Vec<u64> = Vec::new();
            while (crash_set.len() as u64) < crashes {
                let c = rng.gen_range(0..n);
                if !crash_set.contains(&c) {
                    crash_set.push(c);
                }
            }
            crash_set.sort_unstable();
            let with_load = rng.gen_bool(0.3);
            let mut s = scenario(protocol, n, 50_000 + i, Duration::Time(rng.gen_range(3000..8000)));
            s.adversary = adversary;
            s.crash_set = crash_set;
            s.ddos_delay = if matches!(adversary, AdversaryKind::LeaderDdos | AdversaryKind::Composite)
            {
                2 * TAU
            } else {
                0
            };
            if matches!(
                adversary,
                AdversaryKind::PartialSynchrony | AdversaryKind::Composite
            ) {
                s.gst = Some(rng.gen_range(500..2500));
            }
            if with_load {
                s.load_rate = 1;
                s.batch_size = rng.gen_range(200..600);
            }
            let label = format!(
                "fuzz#{i} {}/{:?} n={n} crash={:?}",
                s.protocol.name(),
                adversary,
                s.crash_set
            );
            match run(&s) {
                Ok(trace) => check_into(
                    label,
                    &trace,
                    &mut runs,
                    &mut safety_failures,
                    &mut unique_cert_failures,
                    &mut shape_failures,
                ),
                Err(e) => safety_failures.push(format!("{label}: invalid scenario {e}")),
            }
        }

        // Active equivocation at f=1: a Byzantine leader splits conflicting
        // proposals and double-votes.
        for (protocol, count) in [(ProtocolKind::Jolteon, 15u64), (ProtocolKind::Ditto, 15u64)] {
            for k in 0..count {
                let mut s = scenario(protocol, 4, 90_000 + k, Duration::Time(4000));
                s.adversary = if k % 2 == 0 {
                    AdversaryKind::Synchronous
                } else {
                    AdversaryKind::Asynchronous
                };
                let byz: BTreeSet<u64> = [3u64].into_iter().collect();
                let trace = run_with(&s, &byz, &|id, key, scheme, cfg| {
                    let inner =
                        chainsmr_sim::standard_replica(protocol, key.clone(), scheme.clone(), cfg);
                    if id == 3 {
                        Box::new(Equivocator::new(key, scheme, 4, inner))
                    } else {
                        inner
                    }
                })
                .unwrap();
                check_into(
                    format!("equivocation#{k} {}", protocol.name()),
                    &trace,
                    &mut runs,
                    &mut safety_failures,
                    &mut unique_cert_failures,
                    &mut shape_failures,
                );
            }
        }

        FuzzSummary {
            runs,
            safety_failures,
            unique_cert_failures,
            shape_failures,
            elapsed_secs: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_08_safety_fuzz() {
    let corpus = {
        let _gate = serial();
        fuzz_corpus()
    };
    let pass = corpus.safety_failures.is_empty()
        && corpus.unique_cert_failures.is_empty()
        && corpus.elapsed_secs < 600.0;
    verdict_line(
        8,
        "safety fuzz",
        pass,
        &format!(
            "{} traces, safety failures {:?}, unique-certification failures {:?}, corpus built in {:.1}s",
            corpus.runs, corpus.safety_failures, corpus.unique_cert_failures, corpus.elapsed_secs
        ),
    );
}

#[test]
fn criterion_09_structural_invariants_on_fuzz() {
    let corpus = {
        let _gate = serial();
        fuzz_corpus()
    };
    verdict_line(
        9,
        "chain-shape invariants",
        corpus.shape_failures.is_empty(),
        &format!(
            "{} traces, violations {:?}",
            corpus.runs, corpus.shape_failures
        ),
    );
}

#[test]
fn criterion_10_determinism() {
    let _gate = serial();
    let start = Instant::now();
    let mut checked = 0;
    let combos = [
        (ProtocolKind::Diembft3, AdversaryKind::Synchronous),
        (ProtocolKind::Jolteon, AdversaryKind::Synchronous),
        (ProtocolKind::Jolteon, AdversaryKind::LeaderDdos),
        (ProtocolKind::Ditto, AdversaryKind::Asynchronous),
        (ProtocolKind::Ditto, AdversaryKind::PartialSynchrony),
        (ProtocolKind::Ditto, AdversaryKind::Crash),
        (ProtocolKind::Vaba2, AdversaryKind::Asynchronous),
        (ProtocolKind::Vaba2, AdversaryKind::Crash),
        (ProtocolKind::Ditto, AdversaryKind::Composite),
        (ProtocolKind::Jolteon, AdversaryKind::Crash),
    ];
    for (i, (protocol, adversary)) in combos.iter().enumerate() {
        for rep in 0..2u64 {
            let mut s = scenario(*protocol, 4, 7000 + i as u64 * 10 + rep, Duration::Time(4000));
            s.adversary = *adversary;
            if matches!(
                adversary,
                AdversaryKind::PartialSynchrony | AdversaryKind::Composite
            ) {
                s.gst = Some(1500);
            }
            if matches!(
                adversary,
                AdversaryKind::LeaderDdos | AdversaryKind::Composite
            ) {
                s.ddos_delay = 2 * TAU;
            }
            if matches!(adversary, AdversaryKind::Crash | AdversaryKind::Composite) {
                s.crash_set = vec![1];
            }
            s.load_rate = 1;
            s.batch_size = 400;
            let a = run(&s).unwrap();
            let b = run(&s).unwrap();
            assert_eq!(
                a.canonical_bytes(),
                b.canonical_bytes(),
                "{protocol:?}/{adversary:?} rep {rep}: trace bytes differ"
            );
            let ra = serde_json::to_string(&metrics(&a, 10 * TAU)).unwrap();
            let rb = serde_json::to_string(&metrics(&b, 10 * TAU)).unwrap();
            assert_eq!(ra, rb, "report bytes differ");
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict_line(
        10,
        "determinism",
        checked == 20,
        &format!("{checked} scenarios byte-identical across replays, {elapsed:.2?}"),
    );
}
