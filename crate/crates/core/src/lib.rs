//! Replicated state machines with parallel execution on multicore replicas.
//!
//! Three engines share one atomic multicast kernel:
//!
//! * sequential SMR, where every replica runs one thread over a totally
//!   ordered command stream;
//! * P-SMR, where clients route commands to per-thread groups and commands
//!   that may conflict go to every group, forcing a synchronous step;
//! * opt-PSMR, where clients route inserts and deletes optimistically to a
//!   single group and replicas fall back to the conservative route when a
//!   deterministic safety check fails.
//!
//! The replicated service is an in-memory B+-tree ([`btree`]). Offline
//! checkers live in [`verify`] and the closed-loop benchmark in [`bench`].

pub mod bench;
pub mod btree;
pub mod cli;
pub mod error;
pub mod multicast;
pub mod smr;
pub mod verify;

pub use error::{Error, Result};
