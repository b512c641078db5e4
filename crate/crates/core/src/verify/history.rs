//! Invocation/response history log.
//!
//! One event per line: `event,wallclock_ns,client_id,client_seq,command,key,outcome`
//! where `command` is `read`, `delete`, `update:<hex>` or `insert:<hex>` and
//! `outcome` is `-` on invoke events. Lines starting with `#` are comments,
//! except `# initial preload=<n> max_key=<m>`, which describes the tree the
//! run started from.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use parking_lot::Mutex;

use crate::error::{Error, Result};
use crate::smr::{Command, Operation, Outcome};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    Invoke,
    Respond,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct HistoryEvent {
    pub kind: EventKind,
    pub wallclock_ns: u64,
    pub client_id: u64,
    pub client_seq: u64,
    pub op: Operation,
    pub outcome: Option<Outcome>,
}

impl HistoryEvent {
    pub fn invoke(wallclock_ns: u64, cmd: &Command) -> Self {
        HistoryEvent {
            kind: EventKind::Invoke,
            wallclock_ns,
            client_id: cmd.id.client,
            client_seq: cmd.id.seq,
            op: cmd.op,
            outcome: None,
        }
    }

    pub fn respond(wallclock_ns: u64, cmd: &Command, outcome: Outcome) -> Self {
        HistoryEvent {
            kind: EventKind::Respond,
            wallclock_ns,
            client_id: cmd.id.client,
            client_seq: cmd.id.seq,
            op: cmd.op,
            outcome: Some(outcome),
        }
    }
}

impl fmt::Display for HistoryEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            EventKind::Invoke => "invoke",
            EventKind::Respond => "respond",
        };
        write!(
            f,
            "{kind},{},{},{},{},{},",
            self.wallclock_ns,
            self.client_id,
            self.client_seq,
            self.op.describe(),
            self.op.key
        )?;
        match self.outcome {
            Some(o) => write!(f, "{o}"),
            None => f.write_str("-"),
        }
    }
}

impl FromStr for HistoryEvent {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Decode(format!(
                "expected 7 fields, got {}",
                fields.len()
            )));
        }
        let num = |i: usize, name: &str| {
            fields[i]
                .parse::<u64>()
                .map_err(|e| Error::Decode(format!("{name} {:?}: {e}", fields[i])))
        };
        let kind = match fields[0] {
            "invoke" => EventKind::Invoke,
            "respond" => EventKind::Respond,
            other => return Err(Error::Decode(format!("unknown event {other:?}"))),
        };
        let key = num(5, "key")?;
        let op = Operation::parse_description(fields[4], key)?;
        let outcome = match (kind, fields[6]) {
            (EventKind::Invoke, "-") => None,
            (EventKind::Invoke, o) => {
                return Err(Error::Decode(format!("invoke carries outcome {o:?}")))
            }
            (EventKind::Respond, o) => Some(o.parse()?),
        };
        Ok(HistoryEvent {
            kind,
            wallclock_ns: num(1, "wallclock_ns")?,
            client_id: num(2, "client_id")?,
            client_seq: num(3, "client_seq")?,
            op,
            outcome,
        })
    }
}

/// The tree a history starts from: `preload` evenly spaced keys mapped to
/// themselves.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct InitialState {
    pub preload: u64,
    pub max_key: u64,
}

impl InitialState {
    pub fn empty() -> Self {
        InitialState::default()
    }

    fn to_line(self) -> String {
        format!(
            "# initial preload={} max_key={}",
            self.preload, self.max_key
        )
    }

    fn parse_line(line: &str) -> Option<Result<Self>> {
        let rest = line.strip_prefix("# initial")?;
        let mut state = InitialState::default();
        for field in rest.split_whitespace() {
            let parsed = match field.split_once('=') {
                Some(("preload", v)) => v.parse().map(|v| state.preload = v),
                Some(("max_key", v)) => v.parse().map(|v| state.max_key = v),
                _ => {
                    return Some(Err(Error::Decode(format!(
                        "bad initial-state field {field:?}"
                    ))))
                }
            };
            if let Err(e) = parsed {
                return Some(Err(Error::Decode(format!("{field:?}: {e}"))));
            }
        }
        Some(Ok(state))
    }
}

/// A parsed history file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct History {
    pub initial: InitialState,
    pub events: Vec<HistoryEvent>,
}

impl History {
    pub fn new(initial: InitialState, mut events: Vec<HistoryEvent>) -> Self {
        // per-client timestamps are monotone, so a stable sort keeps each
        // client's invoke ahead of its response
        events.sort_by_key(|e| e.wallclock_ns);
        History { initial, events }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# event,wallclock_ns,client_id,client_seq,command,key,outcome"
        )?;
        if self.initial.preload > 0 {
            writeln!(out, "{}", self.initial.to_line())?;
        }
        for e in &self.events {
            writeln!(out, "{e}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut initial = InitialState::default();
        let mut events = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let at = |e: Error| Error::History {
                line: i + 1,
                msg: e.to_string(),
            };
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if trimmed.starts_with('#') {
                if let Some(state) = InitialState::parse_line(trimmed) {
                    initial = state.map_err(at)?;
                }
                continue;
            }
            events.push(trimmed.parse().map_err(at)?);
        }
        Ok(History { initial, events })
    }

    /// Pairs invocations with responses, checking well-formedness.
    pub fn operations(&self) -> Result<Vec<HistoryOp>> {
        let mut ops: Vec<HistoryOp> = Vec::new();
        let mut index: HashMap<(u64, u64), usize> = HashMap::new();
        let mut last_seq: HashMap<u64, u64> = HashMap::new();
        for (i, e) in self.events.iter().enumerate() {
            let bad = |msg: String| Error::History { line: i + 1, msg };
            match e.kind {
                EventKind::Invoke => {
                    if let Some(&prev) = last_seq.get(&e.client_id) {
                        if e.client_seq <= prev {
                            return Err(bad(format!(
                                "client {} sequence {} does not follow {prev}",
                                e.client_id, e.client_seq
                            )));
                        }
                    }
                    last_seq.insert(e.client_id, e.client_seq);
                    index.insert((e.client_id, e.client_seq), ops.len());
                    ops.push(HistoryOp {
                        client_id: e.client_id,
                        client_seq: e.client_seq,
                        op: e.op,
                        invoked_ns: e.wallclock_ns,
                        response: None,
                    });
                }
                EventKind::Respond => {
                    let Some(&j) = index.get(&(e.client_id, e.client_seq)) else {
                        return Err(bad(format!(
                            "response to {}:{} without invocation",
                            e.client_id, e.client_seq
                        )));
                    };
                    let op = &mut ops[j];
                    if op.response.is_some() {
                        return Err(bad(format!(
                            "second response to {}:{}",
                            e.client_id, e.client_seq
                        )));
                    }
                    if op.op != e.op {
                        return Err(bad(format!(
                            "response command {} does not match invocation {}",
                            e.op, op.op
                        )));
                    }
                    if e.wallclock_ns < op.invoked_ns {
                        return Err(bad("response precedes its invocation".into()));
                    }
                    op.response = Some((
                        e.wallclock_ns,
                        e.outcome.expect("respond events carry an outcome"),
                    ));
                }
            }
        }
        Ok(ops)
    }
}

/// One invocation with its response, if any.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct HistoryOp {
    pub client_id: u64,
    pub client_seq: u64,
    pub op: Operation,
    pub invoked_ns: u64,
    pub response: Option<(u64, Outcome)>,
}

impl HistoryOp {
    pub fn is_pending(&self) -> bool {
        self.response.is_none()
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.response.map(|(_, o)| o)
    }

    /// Real-time precedence: `self` responded before `other` was invoked.
    pub fn precedes(&self, other: &HistoryOp) -> bool {
        self.response.is_some_and(|(t, _)| t < other.invoked_ns)
    }
}

impl fmt::Display for HistoryOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{} {}", self.client_id, self.client_seq, self.op)?;
        match self.outcome() {
            Some(o) => write!(f, " -> {o}"),
            None => f.write_str(" -> pending"),
        }
    }
}

/// Concurrent sink for history events.
#[derive(Debug, Default)]
pub struct HistoryRecorder {
    events: Mutex<Vec<HistoryEvent>>,
}

impl HistoryRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, event: HistoryEvent) {
        self.events.lock().push(event);
    }

    pub fn len(&self) -> usize {
        self.events.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn history(&self, initial: InitialState) -> History {
        History::new(initial, self.events.lock().clone())
    }
}
