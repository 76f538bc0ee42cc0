//! Commit-log persistence: one append-only text file per replica, with
//! hex-encoded digests, byte-stable across reruns of the same scenario.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use chainsmr_sim::Trace;

/// One parsed record: (position, block id hex, payload digest hex, commit
/// time).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub position: u64,
    pub block_id: String,
    pub payload_digest: String,
    pub commit_time: u64,
}

pub fn write_logs(trace: &Trace, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    // Commit times, keyed per (replica, position).
    let mut times: BTreeMap<(u64, u64), u64> = BTreeMap::new();
    for c in &trace.commits {
        times.insert((c.replica, c.position), c.time);
    }
    for r in &trace.replicas {
        let mut body = String::new();
        for entry in &r.log {
            let t = times.get(&(r.id, entry.position)).copied().unwrap_or(0);
            body.push_str(&format!(
                "{},{},{},{}\n",
                entry.position,
                entry.block_id.hex(),
                entry.payload_digest.hex(),
                t
            ));
        }
        fs::write(dir.join(format!("replica_{}.log", r.id)), body)?;
    }
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let body = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, line) in body.lines().enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            bail!("{}:{}: malformed record", path.display(), lineno + 1);
        }
        let position: u64 = parts[0].parse()?;
        if position != out.len() as u64 {
            bail!(
                "{}:{}: position {} out of order",
                path.display(),
                lineno + 1,
                position
            );
        }
        for hex in [parts[1], parts[2]] {
            if hex.len() != 64 || !hex.chars().all(|c| c.is_ascii_hexdigit()) {
                bail!("{}:{}: bad digest", path.display(), lineno + 1);
            }
        }
        out.push(LogRecord {
            position,
            block_id: parts[1].to_string(),
            payload_digest: parts[2].to_string(),
            commit_time: parts[3].parse()?,
        });
    }
    Ok(out)
}

/// Re-validate a directory of persisted logs: well-formed records and
/// pairwise prefix consistency.
pub fn check_logs(dir: &Path) -> Result<usize> {
    let mut logs: Vec<(String, Vec<LogRecord>)> = Vec::new();
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("replica_") && n.ends_with(".log"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no replica logs under {}", dir.display());
    }
    for p in &paths {
        logs.push((p.display().to_string(), read_log(p)?));
    }
    for (i, (na, la)) in logs.iter().enumerate() {
        for (nb, lb) in logs.iter().skip(i + 1) {
            let common = la.len().min(lb.len());
            for pos in 0..common {
                if la[pos].block_id != lb[pos].block_id
                    || la[pos].payload_digest != lb[pos].payload_digest
                {
                    bail!("{na} and {nb} diverge at position {pos}");
                }
            }
        }
    }
    Ok(logs.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tampered_log_detected() {
        let dir = std::env::temp_dir().join(format!("chainsmr-persist-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let a = "0,".to_string() + &"ab".repeat(32) + "," + &"cd".repeat(32) + ",10\n";
        let b = "0,".to_string() + &"ef".repeat(32) + "," + &"cd".repeat(32) + ",10\n";
        fs::write(dir.join("replica_0.log"), &a).unwrap();
        fs::write(dir.join("replica_1.log"), &b).unwrap();
        assert!(check_logs(&dir).is_err());
        fs::write(dir.join("replica_1.log"), &a).unwrap();
        assert_eq!(check_logs(&dir).unwrap(), 2);
        fs::remove_dir_all(&dir).unwrap();
    }
}
