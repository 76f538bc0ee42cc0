//! Exponential backoff: after missing the steady leader right after a
//! fallback, a replica runs 5 consecutive fallbacks without waiting for the
//! timer, then 25, and a successful steady round resets the budget.

use std::collections::VecDeque;
use std::sync::Arc;

use chainsmr_core::messages::Message;
use chainsmr_core::types::Payload;
use chainsmr_core::{
    Dest, Ditto, KeyMaterial, Outbox, Output, ProtocolConfig, Replica, TestScheme,
};

struct Cluster {
    replicas: Vec<Ditto>,
    queue: VecDeque<(u64, u64, Message)>,
    timers: Vec<Vec<(u64, u64)>>,
}

impl Cluster {
    fn new(keys: Vec<KeyMaterial>, scheme: Arc<TestScheme>) -> Self {
        let cfg = ProtocolConfig {
            n: 4,
            f: 1,
            tau: 40,
            vaba: false,
            backoff_factor: 5,
        };
        let mut replicas: Vec<Ditto> = keys
            .into_iter()
            .map(|k| Ditto::new(k, scheme.clone(), cfg.clone()))
            .collect();
        let mut c = Cluster {
            queue: VecDeque::new(),
            timers: vec![Vec::new(); 4],
            replicas: Vec::new(),
        };
        for (i, r) in replicas.iter_mut().enumerate() {
            let mut out = Outbox::default();
            r.bootstrap(&mut out);
            c.collect(i as u64, out);
        }
        c.replicas = replicas;
        c
    }

    fn collect(&mut self, from: u64, out: Outbox) {
        for item in out.items {
            match item {
                Output::Send { to, msg } => match to {
                    Dest::All => {
                        for t in 0..4u64 {
                            self.queue.push_back((from, t, msg.clone()));
                        }
                    }
                    Dest::One(t) => self.queue.push_back((from, t, msg)),
                },
                Output::Timer { view, round, .. } => self.timers[from as usize].push((view, round)),
                Output::Commit(_) => {}
            }
        }
    }

    /// Deliver queued messages, dropping steady proposals (the "leader under
    /// attack" condition), until quiescent.
    fn drain_without_steady(&mut self) {
        let mut guard = 0;
        while let Some((from, to, msg)) = self.queue.pop_front() {
            guard += 1;
            assert!(guard < 100_000, "no quiescence");
            if matches!(msg, Message::Proposal(_)) {
                continue;
            }
            let mut out = Outbox::default();
            self.replicas[to as usize].on_message(from, msg, &mut out);
            self.collect(to, out);
        }
    }

    /// Fire every armed timer once.
    fn fire_timers(&mut self) {
        for i in 0..4usize {
            let pending = std::mem::take(&mut self.timers[i]);
            for (view, round) in pending {
                let mut out = Outbox::default();
                self.replicas[i].on_timer(view, round, &mut out);
                self.collect(i as u64, out);
            }
        }
    }

    fn view(&self) -> u64 {
        self.replicas[0].status().v_cur
    }

    fn in_fallback(&self) -> bool {
        self.replicas[0].status().fallback
    }
}

#[test]
fn consecutive_fallbacks_follow_one_five_twentyfive() {
    let (keys, scheme) = TestScheme::deal(11, 1);
    let mut c = Cluster::new(keys, scheme);

    // Burst 1: the first fallback needs its timer to expire.
    c.fire_timers();
    c.drain_without_steady();
    assert_eq!(c.view(), 1, "first fallback completed");
    assert!(!c.in_fallback());

    // After exiting, replicas probe the steady leader; its proposals are
    // suppressed, so the probe times out and the budget multiplies to 5:
    // the next five fallbacks run back to back without timer help.
    c.fire_timers();
    c.drain_without_steady();
    let after_second_burst = c.view();
    assert_eq!(
        after_second_burst, 6,
        "5 consecutive fallbacks after the first miss"
    );
    assert!(!c.in_fallback());

    // Next miss: budget 25.
    c.fire_timers();
    c.drain_without_steady();
    assert_eq!(c.view(), 31, "25 consecutive fallbacks after the second miss");

    // Now let the steady path work: deliver everything including proposals.
    c.fire_timers();
    let mut guard = 0;
    while let Some((from, to, msg)) = c.queue.pop_front() {
        guard += 1;
        assert!(guard < 200_000);
        let mut out = Outbox::default();
        c.replicas[to as usize].on_message(from, msg, &mut out);
        c.collect(to, out);
    }
    // Steady progress resets the budget: the next miss yields 5 again, not
    // 125. One timer fire starts one fallback (plus its probe).
    let v = c.view();
    c.fire_timers();
    c.drain_without_steady();
    let burst = c.view() - v;
    assert!(
        burst <= 6,
        "budget was reset by steady progress; burst of {burst} views"
    );
}

#[test]
fn offered_payloads_flow_into_fallback_blocks() {
    let (keys, scheme) = TestScheme::deal(12, 1);
    let mut c = Cluster::new(keys, scheme);
    for r in &mut c.replicas {
        r.offer_payload(Payload(b"batch".to_vec()));
    }
    c.fire_timers();
    c.drain_without_steady();
    assert_eq!(c.view(), 1);
    let log = c.replicas[0].log();
    assert!(!log.is_empty());
    // The committed fallback block carries one replica's offered batch.
    assert!(log.iter().any(|e| e.payload_len > 0));
}
