//! Replication engines: sequential SMR, P-SMR, and opt-PSMR.

mod client;
mod command;
mod engine;
mod routing;
mod service;
pub mod timing;

pub use client::{ClientProxy, Invocation};
pub use command::{Command, CommandId, CommandKind, Mode, Operation, Outcome, Value};
pub use engine::{
    Engine, EngineConfig, EngineMode, FailedPath, ReplicaStats, Reply, ReplyKind, Response,
    TraceAction, TraceEvent,
};
pub use routing::{cc_g, group_of_key, oc_g, RoutingConfig};
pub use service::Service;
