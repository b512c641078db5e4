use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smr::{CommandKind, Operation, Value};

/// Command mix as percentages per kind. Fractional percentages are allowed
/// so that small dependent shares can still be split between inserts and
/// deletes.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Mix {
    pub read: f64,
    pub update: f64,
    pub insert: f64,
    pub delete: f64,
}

impl Mix {
    pub fn new(read: f64, update: f64, insert: f64, delete: f64) -> Result<Self> {
        let mix = Mix {
            read,
            update,
            insert,
            delete,
        };
        mix.validate()?;
        Ok(mix)
    }

    pub fn reads_only() -> Self {
        Mix {
            read: 100.0,
            update: 0.0,
            insert: 0.0,
            delete: 0.0,
        }
    }

    /// Inserts and deletes only, split evenly.
    pub fn dependent_only() -> Self {
        Mix {
            read: 0.0,
            update: 0.0,
            insert: 50.0,
            delete: 50.0,
        }
    }

    pub fn inserts_only() -> Self {
        Mix {
            read: 0.0,
            update: 0.0,
            insert: 100.0,
            delete: 0.0,
        }
    }

    /// `pct` percent inserts and deletes, split evenly, the rest reads.
    pub fn with_dependent(pct: f64) -> Result<Self> {
        Mix::new(100.0 - pct, 0.0, pct / 2.0, pct / 2.0)
    }

    pub fn dependent_pct(&self) -> f64 {
        self.insert + self.delete
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.read, self.update, self.insert, self.delete];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config(format!("mix {self} has a negative share")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 100.0).abs() > 1e-6 {
            return Err(Error::Config(format!("mix {self} sums to {sum}, not 100")));
        }
        Ok(())
    }

    fn weight(&self, kind: CommandKind) -> f64 {
        match kind {
            CommandKind::Read => self.read,
            CommandKind::Update => self.update,
            CommandKind::Insert => self.insert,
            CommandKind::Delete => self.delete,
        }
    }

    /// Compact tag for file names, e.g. `r50-i25-d25`.
    pub fn tag(&self) -> String {
        CommandKind::ALL
            .iter()
            .filter(|&&k| self.weight(k) > 0.0)
            .map(|&k| format!("{}{}", &k.to_string()[..1], self.weight(k)))
            .collect::<Vec<_>>()
            .join("-")
    }

    fn pick(&self, roll: f64) -> CommandKind {
        let mut acc = 0.0;
        for kind in CommandKind::ALL {
            acc += self.weight(kind);
            if roll < acc && self.weight(kind) > 0.0 {
                return kind;
            }
        }
        *CommandKind::ALL
            .iter()
            .rev()
            .find(|&&k| self.weight(k) > 0.0)
            .expect("validated mix")
    }
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = CommandKind::ALL
            .iter()
            .filter(|&&k| self.weight(k) > 0.0)
            .map(|&k| format!("{k}={}", self.weight(k)))
            .collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for Mix {
    type Err = Error;

    /// `insert=50,delete=50`; omitted kinds are 0.
    fn from_str(s: &str) -> Result<Self> {
        let mut mix = Mix {
            read: 0.0,
            update: 0.0,
            insert: 0.0,
            delete: 0.0,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (kind, pct) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("mix entry {part:?} is not kind=pct")))?;
            let kind: CommandKind = kind
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("unknown kind {kind:?}")))?;
            let pct: f64 = pct
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("mix share {pct:?}: {e}")))?;
            match kind {
                CommandKind::Read => mix.read = pct,
                CommandKind::Update => mix.update = pct,
                CommandKind::Insert => mix.insert = pct,
                CommandKind::Delete => mix.delete = pct,
            }
        }
        mix.validate()?;
        Ok(mix)
    }
}

impl TryFrom<String> for Mix {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Mix> for String {
    fn from(m: Mix) -> String {
        m.to_string()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub mix: Mix,
    pub clients: usize,
    pub duration: Duration,
    /// Discarded at both ends of the run.
    pub discard: Duration,
    pub seed: u64,
    /// Stop each client after this many commands instead of at `duration`.
    pub ops_per_client: Option<u64>,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        self.mix.validate()?;
        if self.clients == 0 {
            return Err(Error::Config("at least one client is required".into()));
        }
        if self.ops_per_client.is_none() && self.duration <= self.discard * 2 {
            return Err(Error::Config(format!(
                "duration {:?} must exceed twice the discard {:?}",
                self.duration, self.discard
            )));
        }
        Ok(())
    }
}

/// Deterministic per-client command sequence: uniform keys over `[0, M]`.
pub struct CommandStream {
    rng: ChaCha8Rng,
    mix: Mix,
    max_key: u64,
}

impl CommandStream {
    pub fn new(seed: u64, client: u64, mix: Mix, max_key: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&client.to_le_bytes());
        CommandStream {
            rng: ChaCha8Rng::from_seed(key),
            mix,
            max_key,
        }
    }
}

impl Iterator for CommandStream {
    type Item = Operation;

    fn next(&mut self) -> Option<Operation> {
        let kind = self.mix.pick(self.rng.gen_range(0.0..100.0));
        let key = self.rng.gen_range(0..=self.max_key);
        let value = Value::from_u64(self.rng.gen());
        Some(Operation {
            kind,
            key,
            value: kind.takes_value().then_some(value),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_parsing() {
        let m: Mix = "insert=50,delete=50".parse().unwrap();
        assert_eq!(m, Mix::dependent_only());
        assert_eq!(m.tag(), "i50-d50");
        assert_eq!(m.to_string().parse::<Mix>().unwrap(), m);
        assert!("insert=50".parse::<Mix>().is_err());
        assert!("insert=150,delete=-50".parse::<Mix>().is_err());
        assert!("scan=100".parse::<Mix>().is_err());
        assert_eq!(Mix::with_dependent(1.0).unwrap().tag(), "r99-i0.5-d0.5");
    }

    #[test]
    fn reads_only_stream() {
        let ops: Vec<Operation> = CommandStream::new(1, 0, Mix::reads_only(), 10)
            .take(100)
            .collect();
        assert!(ops
            .iter()
            .all(|o| o.kind == CommandKind::Read && o.key <= 10));
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mix = Mix::new(40.0, 10.0, 25.0, 25.0).unwrap();
        let a: Vec<_> = CommandStream::new(7, 3, mix, 1000).take(500).collect();
        let b: Vec<_> = CommandStream::new(7, 3, mix, 1000).take(500).collect();
        let c: Vec<_> = CommandStream::new(7, 4, mix, 1000).take(500).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for kind in CommandKind::ALL {
            let share = a.iter().filter(|o| o.kind == kind).count() as f64 / 5.0;
            assert!((share - mix.weight(kind)).abs() < 8.0, "{kind}: {share}%");
        }
        assert!(a.iter().all(|o| o.validate().is_ok()));
    }

    #[test]
    fn workload_validation() {
        let mut w = WorkloadSpec {
            mix: Mix::reads_only(),
            clients: 1,
            duration: Duration::from_secs(10),
            discard: Duration::from_secs(5),
            seed: 0,
            ops_per_client: None,
        };
        assert!(w.validate().is_err());
        w.ops_per_client = Some(10);
        assert!(w.validate().is_ok());
        w.clients = 0;
        assert!(w.validate().is_err());
    }
}
