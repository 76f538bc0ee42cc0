//! Deterministic discrete-event loop hosting the replica state machines.
//! Identical (scenario, seed) inputs produce byte-identical traces: the
//! event queue orders by (time, insertion sequence), all collections iterate
//! deterministically, and every random draw comes from one seeded stream.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::sync::Arc;

use chainsmr_core::messages::Message;
use chainsmr_core::types::Payload;
use chainsmr_core::wire::{Enc, Wire};
use chainsmr_core::{
    leader_of, Dest, Digest, KeyMaterial, Output, ProtocolConfig, Replica, ReplicaId, TestScheme,
    ThresholdScheme,
};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::adversary::Adversary;
use crate::hops::{Annotations, HopTracker};
use crate::scenario::{Duration, InvalidScenario, ProtocolKind, Scenario};
use crate::trace::{CommitEvent, ReplicaSummary, SendRecord, Trace};

/// Hard ceiling on simulated time, a guard against livelocked scenarios.
const HARD_TIME_CAP: u64 = 50_000_000;

enum EventKind {
    Deliver {
        to: ReplicaId,
        from: ReplicaId,
        msg: Message,
        ann: Annotations,
        send_idx: usize,
    },
    TimerFire {
        replica: ReplicaId,
        view: u64,
        round: u64,
    },
    InjectBatch,
    ReofferSweep,
}

struct Event {
    time: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want the earliest event.
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

struct PendingBatch {
    payload: Payload,
    committed: bool,
    offers: u64,
    offered_at: u64,
}

struct LoadGen {
    rate: u64,
    batch_size: u64,
    interval: u64,
    next_id: u64,
    pending: BTreeMap<u64, PendingBatch>,
    by_digest: BTreeMap<Digest, u64>,
}

impl LoadGen {
    fn new(scenario: &Scenario) -> Self {
        let interval = if scenario.load_rate > 0 {
            (scenario.batch_size / scenario.load_rate).max(1)
        } else {
            0
        };
        LoadGen {
            rate: scenario.load_rate,
            batch_size: scenario.batch_size,
            interval,
            next_id: 0,
            pending: BTreeMap::new(),
            by_digest: BTreeMap::new(),
        }
    }

    fn make_batch(&mut self) -> (u64, Payload) {
        let id = self.next_id;
        self.next_id += 1;
        let mut e = Enc::new();
        e.u64(id);
        e.u64(self.batch_size);
        let payload = Payload(e.finish());
        self.pending.insert(
            id,
            PendingBatch {
                payload: payload.clone(),
                committed: false,
                offers: 0,
                offered_at: 0,
            },
        );
        self.by_digest.insert(payload.digest(), id);
        (id, payload)
    }
}

/// Build a stock replica for the scenario's protocol.
pub fn standard_replica(
    protocol: ProtocolKind,
    key: KeyMaterial,
    scheme: Arc<dyn ThresholdScheme>,
    cfg: ProtocolConfig,
) -> Box<dyn Replica> {
    match protocol {
        ProtocolKind::Diembft3 => Box::new(chainsmr_core::DiemBft::new(key, scheme, cfg)),
        ProtocolKind::Jolteon => Box::new(chainsmr_core::Jolteon::new(key, scheme, cfg)),
        ProtocolKind::Ditto | ProtocolKind::Vaba2 => {
            Box::new(chainsmr_core::Ditto::new(key, scheme, cfg))
        }
    }
}

pub type ReplicaFactory<'a> =
    dyn Fn(ReplicaId, KeyMaterial, Arc<dyn ThresholdScheme>, ProtocolConfig) -> Box<dyn Replica>
        + 'a;

/// Run a scenario with stock replicas.
pub fn run(scenario: &Scenario) -> Result<Trace, InvalidScenario> {
    let protocol = scenario.protocol;
    run_with(scenario, &BTreeSet::new(), &move |_, key, scheme, cfg| {
        standard_replica(protocol, key, scheme, cfg)
    })
}

/// Run with custom replicas (Byzantine test drivers); ids in `byzantine` are
/// excluded from the honest set in the trace.
pub fn run_with(
    scenario: &Scenario,
    byzantine: &BTreeSet<ReplicaId>,
    factory: &ReplicaFactory,
) -> Result<Trace, InvalidScenario> {
    scenario.validate()?;
    let n = scenario.n;
    let cfg = ProtocolConfig {
        n,
        f: scenario.f,
        tau: scenario.tau,
        vaba: scenario.protocol == ProtocolKind::Vaba2,
        backoff_factor: scenario.backoff_factor,
    };
    let (keys, scheme) = TestScheme::deal(scenario.seed, scenario.f);
    let scheme: Arc<dyn ThresholdScheme> = scheme;
    let adversary = Adversary::new(scenario);
    let mut rng = ChaCha12Rng::seed_from_u64(scenario.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut tracker = HopTracker::new(n, scenario.f);
    let mut load = LoadGen::new(scenario);

    let mut replicas: Vec<Box<dyn Replica>> = keys
        .into_iter()
        .enumerate()
        .map(|(i, key)| factory(i as u64, key, scheme.clone(), cfg.clone()))
        .collect();

    let mut trace = Trace {
        scenario: scenario.clone(),
        end_time: 0,
        truncated: false,
        sends: Vec::new(),
        commits: Vec::new(),
        blocks: BTreeMap::new(),
        certs: BTreeSet::new(),
        coins: BTreeMap::new(),
        votes: BTreeMap::new(),
        fallback_votes: BTreeMap::new(),
        batches: BTreeMap::new(),
        replicas: Vec::new(),
        timeout_views: BTreeSet::new(),
    };

    let mut queue: BinaryHeap<Event> = BinaryHeap::new();
    let mut seq = 0u64;
    let push = |queue: &mut BinaryHeap<Event>, seq: &mut u64, time: u64, kind: EventKind| {
        *seq += 1;
        queue.push(Event {
            time,
            seq: *seq,
            kind,
        });
    };

    let time_limit = match scenario.duration {
        Duration::Time(t) => t,
        Duration::Commits(_) => HARD_TIME_CAP,
    };
    let commit_target = match scenario.duration {
        Duration::Commits(c) => Some(c),
        Duration::Time(_) => None,
    };

    // Outputs from one handler invocation become queue events.
    macro_rules! process_outputs {
        ($from:expr, $out:expr, $now:expr) => {{
            let from: ReplicaId = $from;
            let now: u64 = $now;
            let status = replicas[from as usize].status();
            for item in $out.items.drain(..) {
                match item {
                    Output::Send { to, msg } => {
                        trace.register_message(&msg);
                        let ann = tracker.annotate_send(from, &msg);
                        let size = msg.encoded_len() as u64;
                        let kind = msg.kind();
                        if let Message::Timeout(t) = &msg {
                            if let chainsmr_core::messages::TimeoutDomain::View(v) = t.domain {
                                trace.timeout_views.insert(v);
                            }
                        }
                        let targets: Vec<ReplicaId> = match to {
                            Dest::All => (0..n).collect(),
                            Dest::One(t) => vec![t],
                        };
                        for t in targets {
                            let delay = adversary.delay(from, t, &msg, status, now, &mut rng);
                            let idx = trace.sends.len();
                            trace.sends.push(SendRecord {
                                time: now,
                                from,
                                to: t,
                                kind,
                                size,
                                delivered: None,
                            });
                            if let Some(d) = delay {
                                push(
                                    &mut queue,
                                    &mut seq,
                                    now + d,
                                    EventKind::Deliver {
                                        to: t,
                                        from,
                                        msg: msg.clone(),
                                        ann: ann.clone(),
                                        send_idx: idx,
                                    },
                                );
                            }
                        }
                    }
                    Output::Timer { view, round, delay } => {
                        push(
                            &mut queue,
                            &mut seq,
                            now + delay,
                            EventKind::TimerFire {
                                replica: from,
                                view,
                                round,
                            },
                        );
                    }
                    Output::Commit(rec) => {
                        let hop_key = if rec.fallback.is_some() {
                            crate::hops::view_anchor(rec.view)
                        } else {
                            rec.block_id
                        };
                        let hops = tracker.commit_hops(from, &rec.evidence, hop_key);
                        let batch = load.by_digest.get(&rec.payload_digest).copied();
                        if let Some(b) = batch {
                            if let Some(p) = load.pending.get_mut(&b) {
                                p.committed = true;
                            }
                        }
                        trace.commits.push(CommitEvent {
                            time: now,
                            replica: from,
                            block_id: rec.block_id,
                            round: rec.round,
                            view: rec.view,
                            fallback: rec.fallback,
                            position: rec.log_position,
                            payload_digest: rec.payload_digest,
                            payload_len: rec.payload_len,
                            hops,
                            direct: rec.direct,
                            batch,
                        });
                    }
                }
            }
        }};
    }

    // Bootstrap honest-and-byzantine replicas; crashed ones never start.
    for id in 0..n {
        if adversary.is_crashed(id) {
            continue;
        }
        let mut out = chainsmr_core::Outbox::default();
        replicas[id as usize].bootstrap(&mut out);
        process_outputs!(id, out, 0);
    }
    if load.rate > 0 {
        push(&mut queue, &mut seq, load.interval, EventKind::InjectBatch);
        push(
            &mut queue,
            &mut seq,
            scenario.tau.max(4 * scenario.delta),
            EventKind::ReofferSweep,
        );
    }

    let mut now = 0u64;
    let mut events_processed = 0u64;
    let mut hit_time_limit = false;
    while let Some(ev) = queue.pop() {
        if ev.time > time_limit {
            hit_time_limit = true;
            break;
        }
        now = ev.time;
        events_processed += 1;
        match ev.kind {
            EventKind::Deliver {
                to,
                from,
                msg,
                ann,
                send_idx,
            } => {
                trace.sends[send_idx].delivered = Some(now);
                tracker.on_deliver(to, &msg, &ann);
                let mut out = chainsmr_core::Outbox::default();
                replicas[to as usize].on_message(from, msg, &mut out);
                process_outputs!(to, out, now);
            }
            EventKind::TimerFire {
                replica,
                view,
                round,
            } => {
                let mut out = chainsmr_core::Outbox::default();
                replicas[replica as usize].on_timer(view, round, &mut out);
                process_outputs!(replica, out, now);
            }
            EventKind::InjectBatch => {
                let (id, payload) = load.make_batch();
                trace.batches.insert(payload.digest(), id);
                let target = next_proposer(&replicas, &adversary, n, 0);
                {
                    let p = load.pending.get_mut(&id).unwrap();
                    p.offers = 1;
                    p.offered_at = now;
                }
                replicas[target as usize].offer_payload(payload);
                push(
                    &mut queue,
                    &mut seq,
                    now + load.interval,
                    EventKind::InjectBatch,
                );
            }
            EventKind::ReofferSweep => {
                // Batches that stayed uncommitted past the grace period get
                // offered to another prospective proposer; clients repeat
                // until the batch shows up in a committed block.
                let grace = 4 * scenario.tau.max(4 * scenario.delta);
                let stale: Vec<u64> = load
                    .pending
                    .iter()
                    .filter(|(_, p)| !p.committed && now.saturating_sub(p.offered_at) >= grace)
                    .map(|(id, _)| *id)
                    .collect();
                for id in stale {
                    let p = load.pending.get_mut(&id).unwrap();
                    let offers = p.offers;
                    let payload = p.payload.clone();
                    p.offers += 1;
                    p.offered_at = now;
                    if offers >= 2 {
                        // Stubborn batch: hand a copy to every live replica,
                        // as clients would.
                        for t in 0..n {
                            if !adversary.is_crashed(t) {
                                replicas[t as usize].offer_payload(payload.clone());
                            }
                        }
                    } else {
                        let target = next_proposer(&replicas, &adversary, n, offers);
                        replicas[target as usize].offer_payload(payload);
                    }
                }
                push(
                    &mut queue,
                    &mut seq,
                    now + scenario.tau.max(4 * scenario.delta),
                    EventKind::ReofferSweep,
                );
            }
        }
        if let Some(target) = commit_target {
            let done = (0..n)
                .filter(|i| !adversary.is_crashed(*i) && !byzantine.contains(i))
                .map(|i| replicas[i as usize].log().len() as u64)
                .min()
                .unwrap_or(0);
            if done >= target {
                break;
            }
        }
        if events_processed % 4096 == 0 {
            let horizon = (0..n)
                .filter(|i| !adversary.is_crashed(*i) && !byzantine.contains(i))
                .map(|i| {
                    replicas[i as usize]
                        .log()
                        .last()
                        .map(|e| e.round)
                        .unwrap_or(0)
                })
                .min()
                .unwrap_or(0);
            let view_horizon = (0..n)
                .filter(|i| !adversary.is_crashed(*i) && !byzantine.contains(i))
                .map(|i| replicas[i as usize].status().v_cur)
                .min()
                .unwrap_or(0);
            tracker.prune(horizon, view_horizon);
        }
    }

    trace.end_time = now;
    // Delays are finite and honest-to-honest messages are never dropped, so
    // eventual delivery holds by construction; the boundary tail at a time
    // bound is absorbed by the liveness window. A trace is truncated only
    // when a commit-bounded run hit the hard time cap instead of its target:
    // that run did not reach its duration bound and carries no liveness
    // claim.
    trace.truncated = hit_time_limit && commit_target.is_some();

    for id in 0..n {
        let r = &replicas[id as usize];
        let st = r.status();
        trace.replicas.push(ReplicaSummary {
            id,
            honest: !adversary.is_crashed(id) && !byzantine.contains(&id),
            crashed: adversary.is_crashed(id),
            log: r.log().to_vec(),
            equivocations: r.equivocations(),
            final_round: st.r_cur,
            final_view: st.v_cur,
        });
    }
    Ok(trace)
}

/// The replica most likely to propose next: leader of the highest current
/// round among live replicas, rotated by `offset` for re-offers, skipping
/// crashed replicas.
fn next_proposer(
    replicas: &[Box<dyn Replica>],
    adversary: &Adversary,
    n: u64,
    offset: u64,
) -> ReplicaId {
    let max_round = (0..n)
        .filter(|i| !adversary.is_crashed(*i))
        .map(|i| replicas[i as usize].status().r_cur)
        .max()
        .unwrap_or(1);
    let mut target = leader_of(max_round + 1 + offset, n);
    for _ in 0..n {
        if !adversary.is_crashed(target) {
            return target;
        }
        target = (target + 1) % n;
    }
    target
}
