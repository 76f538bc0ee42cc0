//! Seed sweeps: the same scenario across many seeds, aggregated as
//! mean +/- standard deviation, one CSV row per run.

use std::sync::mpsc;
use std::thread;

use anyhow::{bail, Result};
use chainsmr_sim::Scenario;

use crate::report::{metrics, Report};

/// Parse "100" as seeds 0..100 or "5..20" as that range.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: u64 = lo.trim().parse()?;
        let hi: u64 = hi.trim().parse()?;
        if hi <= lo {
            bail!("empty seed range {spec}");
        }
        return Ok((lo..hi).collect());
    }
    let k: u64 = spec.trim().parse()?;
    if k == 0 {
        bail!("need at least one seed");
    }
    Ok((0..k).collect())
}

pub struct SweepOutcome {
    pub reports: Vec<(u64, Report)>,
    pub csv: String,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
    (mean, var.sqrt())
}

/// Run each seed on a worker pool; aggregation stays single-threaded.
pub fn sweep(scenario: &Scenario, seeds: &[u64], liveness_window: u64) -> Result<SweepOutcome> {
    let workers = thread::available_parallelism()
        .map(|p| p.get())
        .unwrap_or(4)
        .min(seeds.len().max(1));
    let (tx, rx) = mpsc::channel();
    thread::scope(|scope| {
        for chunk in seeds.chunks(seeds.len().div_ceil(workers)) {
            let tx = tx.clone();
            let scenario = scenario.clone();
            scope.spawn(move || {
                for &seed in chunk {
                    let mut s = scenario.clone();
                    s.seed = seed;
                    let result = chainsmr_sim::run(&s)
                        .map(|trace| metrics(&trace, liveness_window))
                        .map_err(|e| e.to_string());
                    let _ = tx.send((seed, result));
                }
            });
        }
    });
    drop(tx);
    let mut reports: Vec<(u64, Report)> = Vec::new();
    for (seed, result) in rx {
        match result {
            Ok(r) => reports.push((seed, r)),
            Err(e) => bail!("seed {seed}: {e}"),
        }
    }
    reports.sort_by_key(|(seed, _)| *seed);

    let mut csv = String::from(
        "seed,commits,decisions,views,hops_mean,messages_per_commit,throughput,safety,liveness\n",
    );
    for (seed, r) in &reports {
        csv.push_str(&format!(
            "{},{},{},{},{:.3},{:.3},{:.5},{},{}\n",
            seed,
            r.commits_total,
            r.decisions,
            r.views_executed,
            r.hops.as_ref().map(|h| h.mean).unwrap_or(f64::NAN),
            r.messages_per_commit,
            r.throughput,
            r.safety_verdict.split(':').next().unwrap_or(""),
            r.liveness_verdict.split(':').next().unwrap_or(""),
        ));
    }
    let commits: Vec<f64> = reports.iter().map(|(_, r)| r.commits_total as f64).collect();
    let hops: Vec<f64> = reports
        .iter()
        .filter_map(|(_, r)| r.hops.as_ref().map(|h| h.mean))
        .collect();
    let mpc: Vec<f64> = reports
        .iter()
        .map(|(_, r)| r.messages_per_commit)
        .filter(|x| x.is_finite())
        .collect();
    let (cm, cs) = mean_std(&commits);
    let (hm, hs) = mean_std(&hops);
    let (mm, ms) = mean_std(&mpc);
    csv.push_str(&format!(
        "# aggregate commits {cm:.2}+/-{cs:.2} hops {hm:.3}+/-{hs:.3} messages_per_commit {mm:.3}+/-{ms:.3} runs {}\n",
        reports.len()
    ));
    Ok(SweepOutcome { reports, csv })
}
