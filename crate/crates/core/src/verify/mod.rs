//! Offline correctness oracles: linearizability of recorded histories,
//! replica convergence, and the two-command case suite for opt-PSMR.

mod cases;
mod history;
mod linearizability;

pub use cases::{interleaving_cases, CaseOutcome};
pub use history::{EventKind, History, HistoryEvent, HistoryOp, HistoryRecorder, InitialState};
pub use linearizability::{
    check_linearizable, check_operations, LinearizationWitness, MapSpec, OpRef, Verdict,
    ViolationEvidence, DEFAULT_BUDGET,
};

use crate::btree::Digest;
use crate::error::{Error, Result};

/// True iff every live replica (`Some` digest) holds the same state.
pub fn check_convergence(digests: &[Option<Digest>]) -> Result<bool> {
    let mut live = digests.iter().flatten();
    let first = live.next().ok_or(Error::NoLiveReplicas)?;
    Ok(live.all(|d| d == first))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convergence_over_live_replicas() {
        let a = Digest([1; 32]);
        let b = Digest([2; 32]);
        assert!(check_convergence(&[Some(a), Some(a)]).unwrap());
        assert!(!check_convergence(&[Some(a), Some(b)]).unwrap());
        assert!(check_convergence(&[Some(a), None]).unwrap());
        assert!(matches!(
            check_convergence(&[None, None]),
            Err(Error::NoLiveReplicas)
        ));
        assert!(check_convergence(&[]).is_err());
    }
}
