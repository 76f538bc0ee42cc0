//! Scenario files: the single input that fully determines a simulation run.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InvalidScenario {
    #[error("n must equal 3f+1 (got n={n}, f={f})")]
    BadQuorumArithmetic { n: u64, f: u64 },
    #[error("tau must be positive unless protocol is vaba2")]
    BadTimeout,
    #[error("vaba2 runs with tau = 0")]
    VabaTimeout,
    #[error("crash_set has {got} replicas; at most f={f} may crash")]
    TooManyCrashes { got: usize, f: u64 },
    #[error("crash_set contains out-of-range replica {0}")]
    BadCrashId(u64),
    #[error("delta must be positive")]
    BadDelta,
    #[error("partial_synchrony requires gst")]
    MissingGst,
    #[error("duration must be positive")]
    BadDuration,
    #[error("load batch_size must be positive when load_rate > 0")]
    BadBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Diembft3,
    Jolteon,
    Ditto,
    Vaba2,
}

impl ProtocolKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolKind::Diembft3 => "diembft3",
            ProtocolKind::Jolteon => "jolteon",
            ProtocolKind::Ditto => "ditto",
            ProtocolKind::Vaba2 => "vaba2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryKind {
    Synchronous,
    PartialSynchrony,
    Asynchronous,
    LeaderDdos,
    Crash,
    Composite,
}

/// Run length: either simulated ticks or a number of blocks committed by
/// every honest replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Duration {
    Time(u64),
    Commits(u64),
}

fn default_backoff() -> u64 {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub n: u64,
    pub f: u64,
    pub protocol: ProtocolKind,
    pub adversary: AdversaryKind,
    /// Post-GST (and synchronous) message delay bound, in ticks.
    pub delta: u64,
    /// Round/view timeout, in ticks. 0 only for vaba2.
    pub tau: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gst: Option<u64>,
    pub seed: u64,
    pub duration: Duration,
    #[serde(default)]
    pub load_rate: u64,
    #[serde(default)]
    pub batch_size: u64,
    #[serde(default)]
    pub ddos_delay: u64,
    #[serde(default)]
    pub crash_set: Vec<u64>,
    #[serde(default = "default_backoff")]
    pub backoff_factor: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), InvalidScenario> {
        if self.n != 3 * self.f + 1 {
            return Err(InvalidScenario::BadQuorumArithmetic {
                n: self.n,
                f: self.f,
            });
        }
        match self.protocol {
            ProtocolKind::Vaba2 => {
                if self.tau != 0 {
                    return Err(InvalidScenario::VabaTimeout);
                }
            }
            _ => {
                if self.tau == 0 {
                    return Err(InvalidScenario::BadTimeout);
                }
            }
        }
        if self.delta == 0 {
            return Err(InvalidScenario::BadDelta);
        }
        if self.crash_set.len() as u64 > self.f {
            return Err(InvalidScenario::TooManyCrashes {
                got: self.crash_set.len(),
                f: self.f,
            });
        }
        if let Some(&bad) = self.crash_set.iter().find(|&&c| c >= self.n) {
            return Err(InvalidScenario::BadCrashId(bad));
        }
        if self.adversary == AdversaryKind::PartialSynchrony && self.gst.is_none() {
            return Err(InvalidScenario::MissingGst);
        }
        match self.duration {
            Duration::Time(0) | Duration::Commits(0) => return Err(InvalidScenario::BadDuration),
            _ => {}
        }
        if self.load_rate > 0 && self.batch_size == 0 {
            return Err(InvalidScenario::BadBatch);
        }
        Ok(())
    }

    pub fn quorum(&self) -> u64 {
        2 * self.f + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Scenario {
        Scenario {
            n: 4,
            f: 1,
            protocol: ProtocolKind::Jolteon,
            adversary: AdversaryKind::Synchronous,
            delta: 10,
            tau: 40,
            gst: None,
            seed: 1,
            duration: Duration::Commits(10),
            load_rate: 0,
            batch_size: 0,
            ddos_delay: 0,
            crash_set: vec![],
            backoff_factor: 5,
        }
    }

    #[test]
    fn accepts_valid() {
        assert_eq!(base().validate(), Ok(()));
    }

    #[test]
    fn rejects_bad_quorum() {
        let mut s = base();
        s.n = 5;
        assert!(matches!(
            s.validate(),
            Err(InvalidScenario::BadQuorumArithmetic { .. })
        ));
    }

    #[test]
    fn vaba_needs_zero_tau() {
        let mut s = base();
        s.protocol = ProtocolKind::Vaba2;
        assert_eq!(s.validate(), Err(InvalidScenario::VabaTimeout));
        s.tau = 0;
        assert_eq!(s.validate(), Ok(()));
    }

    #[test]
    fn crash_set_bounded_by_f() {
        let mut s = base();
        s.crash_set = vec![0, 1];
        assert!(matches!(
            s.validate(),
            Err(InvalidScenario::TooManyCrashes { .. })
        ));
    }

    #[test]
    fn json_field_names_match_interface() {
        let s = base();
        let v: serde_json::Value =
            serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        for key in [
            "n",
            "f",
            "protocol",
            "adversary",
            "delta",
            "tau",
            "seed",
            "duration",
            "load_rate",
            "batch_size",
            "ddos_delay",
            "crash_set",
            "backoff_factor",
        ] {
            assert!(v.get(key).is_some(), "missing key {key}");
        }
    }
}
