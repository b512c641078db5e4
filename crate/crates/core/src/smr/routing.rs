//! Command-to-group mappings used by client proxies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multicast::GroupSet;

use super::command::CommandKind;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingConfig {
    /// Worker threads per replica, `K`.
    pub threads: usize,
    /// Largest key in the key space, `M`.
    pub max_key: u64,
    /// Replica count, `n`.
    pub replicas: usize,
    /// Tolerated crashes, `f`.
    pub faults: usize,
}

impl RoutingConfig {
    /// `n = f + 1` replicas.
    pub fn new(threads: usize, max_key: u64, faults: usize) -> Result<Self> {
        let cfg = RoutingConfig {
            threads,
            max_key,
            replicas: faults + 1,
            faults,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if self.max_key == 0 {
            return Err(Error::Config("M must be at least 1".into()));
        }
        if self.replicas != self.faults + 1 {
            return Err(Error::Config(format!(
                "replica count must be f + 1 (n = {}, f = {})",
                self.replicas, self.faults
            )));
        }
        Ok(())
    }

    pub fn group_of_key(&self, key: u64) -> Result<usize> {
        group_of_key(key, self.threads, self.max_key)
    }

    pub fn cc_g(&self, kind: CommandKind, key: u64) -> Result<GroupSet> {
        cc_g(kind, key, self)
    }

    pub fn oc_g(&self, kind: CommandKind, key: u64) -> Result<GroupSet> {
        oc_g(kind, key, self)
    }
}

/// Range partitioning of `[0, M]` over `K` groups, 0-based and clamped so that
/// `key = M` lands in the last group.
pub fn group_of_key(key: u64, threads: usize, max_key: u64) -> Result<usize> {
    if key > max_key {
        return Err(Error::KeyOutOfRange { key, max_key });
    }
    let g = (key as u128 * threads as u128 / max_key as u128) as usize;
    Ok(g.min(threads - 1))
}

/// Conservative mapping: reads and updates go to the key's group, inserts and
/// deletes to every group.
pub fn cc_g(kind: CommandKind, key: u64, cfg: &RoutingConfig) -> Result<GroupSet> {
    match kind {
        CommandKind::Read | CommandKind::Update => Ok(GroupSet::Single(group_of_key(
            key,
            cfg.threads,
            cfg.max_key,
        )?)),
        CommandKind::Insert | CommandKind::Delete => {
            // the key is still validated
            group_of_key(key, cfg.threads, cfg.max_key)?;
            Ok(GroupSet::All)
        }
    }
}

/// Optimistic mapping: every command goes to the key's group.
pub fn oc_g(_kind: CommandKind, key: u64, cfg: &RoutingConfig) -> Result<GroupSet> {
    Ok(GroupSet::Single(group_of_key(
        key,
        cfg.threads,
        cfg.max_key,
    )?))
}
