use std::fmt;
use std::str::FromStr;

use bytes::{BufMut, Bytes, BytesMut};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multicast::{GroupSet, MsgId};

/// Fixed-size value stored in the tree.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Value(pub [u8; 8]);

impl Value {
    pub fn from_u64(v: u64) -> Self {
        Value(v.to_be_bytes())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for Value {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut out = [0u8; 8];
        hex::decode_to_slice(s, &mut out)
            .map_err(|e| Error::Decode(format!("value {s:?}: {e}")))?;
        Ok(Value(out))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Read,
    Update,
    Insert,
    Delete,
}

impl CommandKind {
    pub const ALL: [CommandKind; 4] = [
        CommandKind::Read,
        CommandKind::Update,
        CommandKind::Insert,
        CommandKind::Delete,
    ];

    pub fn takes_value(self) -> bool {
        matches!(self, CommandKind::Update | CommandKind::Insert)
    }

    /// Inserts and deletes may restructure the tree.
    pub fn is_structural(self) -> bool {
        matches!(self, CommandKind::Insert | CommandKind::Delete)
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Result<Self> {
        CommandKind::ALL
            .get(c as usize)
            .copied()
            .ok_or_else(|| Error::Decode(format!("command kind {c}")))
    }
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CommandKind::Read => "read",
            CommandKind::Update => "update",
            CommandKind::Insert => "insert",
            CommandKind::Delete => "delete",
        })
    }
}

impl FromStr for CommandKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "read" => Ok(CommandKind::Read),
            "update" => Ok(CommandKind::Update),
            "insert" => Ok(CommandKind::Insert),
            "delete" => Ok(CommandKind::Delete),
            _ => Err(Error::Decode(format!("unknown command {s:?}"))),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Optimistic,
    Conservative,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CommandId {
    pub client: u64,
    pub seq: u64,
}

impl fmt::Display for CommandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.client, self.seq)
    }
}

/// A service operation: what the client asked for, without routing.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Operation {
    pub kind: CommandKind,
    pub key: u64,
    pub value: Option<Value>,
}

impl Operation {
    pub fn read(key: u64) -> Self {
        Operation {
            kind: CommandKind::Read,
            key,
            value: None,
        }
    }

    pub fn update(key: u64, value: Value) -> Self {
        Operation {
            kind: CommandKind::Update,
            key,
            value: Some(value),
        }
    }

    pub fn insert(key: u64, value: Value) -> Self {
        Operation {
            kind: CommandKind::Insert,
            key,
            value: Some(value),
        }
    }

    pub fn delete(key: u64) -> Self {
        Operation {
            kind: CommandKind::Delete,
            key,
            value: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.takes_value() != self.value.is_some() {
            return Err(Error::Contract(format!(
                "{} must {}carry a value",
                self.kind,
                if self.kind.takes_value() { "" } else { "not " }
            )));
        }
        Ok(())
    }

    /// Value carried by an update or insert.
    pub fn payload_value(&self) -> Value {
        self.value.expect("update and insert always carry a value")
    }

    /// `insert:<hex>`, `update:<hex>`, `read`, `delete`.
    pub fn describe(&self) -> String {
        match self.value {
            Some(v) => format!("{}:{v}", self.kind),
            None => self.kind.to_string(),
        }
    }

    pub fn parse_description(desc: &str, key: u64) -> Result<Self> {
        let (kind, value) = match desc.split_once(':') {
            Some((k, v)) => (k.parse::<CommandKind>()?, Some(v.parse::<Value>()?)),
            None => (desc.parse::<CommandKind>()?, None),
        };
        let op = Operation { kind, key, value };
        op.validate()?;
        Ok(op)
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value {
            Some(v) => write!(f, "{}({}, {v})", self.kind, self.key),
            None => write!(f, "{}({})", self.kind, self.key),
        }
    }
}

/// Result of executing an operation against the service.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Value(Value),
    Absent,
    Ok,
    NotFound,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Value(v) => write!(f, "value:{v}"),
            Outcome::Absent => f.write_str("absent"),
            Outcome::Ok => f.write_str("ok"),
            Outcome::NotFound => f.write_str("not_found"),
        }
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absent" => Ok(Outcome::Absent),
            "ok" => Ok(Outcome::Ok),
            "not_found" => Ok(Outcome::NotFound),
            _ => match s.strip_prefix("value:") {
                Some(v) => Ok(Outcome::Value(v.parse()?)),
                None => Err(Error::Decode(format!("unknown outcome {s:?}"))),
            },
        }
    }
}

/// A routed client request as it travels through the multicast kernel.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Command {
    pub id: CommandId,
    pub op: Operation,
    pub mode: Mode,
    pub dest: GroupSet,
}

const ENCODED_LEN: usize = 8 + 8 + 1 + 1 + 1 + 4 + 8 + 1 + 8;

impl Command {
    /// Message identity: the optimistic and the conservative copy of a
    /// command are distinct messages, and every replica derives the same id
    /// for the conservative copy so the kernel sequences it once.
    pub fn msg_id(&self) -> MsgId {
        let bit = match self.mode {
            Mode::Optimistic => 0,
            Mode::Conservative => 1,
        };
        MsgId {
            origin: self.id.client,
            seq: self.id.seq * 2 + bit,
        }
    }

    pub fn encode(&self) -> Bytes {
        let mut buf = BytesMut::with_capacity(ENCODED_LEN);
        buf.put_u64_le(self.id.client);
        buf.put_u64_le(self.id.seq);
        buf.put_u8(self.op.kind.code());
        buf.put_u8(matches!(self.mode, Mode::Conservative) as u8);
        match self.dest {
            GroupSet::Single(g) => {
                buf.put_u8(0);
                buf.put_u32_le(g as u32);
            }
            GroupSet::All => {
                buf.put_u8(1);
                buf.put_u32_le(0);
            }
        }
        buf.put_u64_le(self.op.key);
        match self.op.value {
            Some(v) => {
                buf.put_u8(1);
                buf.put_slice(&v.0);
            }
            None => {
                buf.put_u8(0);
                buf.put_slice(&[0; 8]);
            }
        }
        buf.freeze()
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        if buf.len() != ENCODED_LEN {
            return Err(Error::Decode(format!(
                "expected {ENCODED_LEN} bytes, got {}",
                buf.len()
            )));
        }
        let u64_at = |i: usize| u64::from_le_bytes(buf[i..i + 8].try_into().unwrap());
        let client = u64_at(0);
        let seq = u64_at(8);
        let kind = CommandKind::from_code(buf[16])?;
        let mode = match buf[17] {
            0 => Mode::Optimistic,
            1 => Mode::Conservative,
            m => return Err(Error::Decode(format!("mode {m}"))),
        };
        let group = u32::from_le_bytes(buf[19..23].try_into().unwrap()) as usize;
        let dest = match buf[18] {
            0 => GroupSet::Single(group),
            1 => GroupSet::All,
            d => return Err(Error::Decode(format!("dest tag {d}"))),
        };
        let key = u64_at(23);
        let value = match buf[31] {
            0 => None,
            1 => Some(Value(buf[32..40].try_into().unwrap())),
            v => return Err(Error::Decode(format!("value tag {v}"))),
        };
        let op = Operation { kind, key, value };
        op.validate().map_err(|e| Error::Decode(e.to_string()))?;
        Ok(Command {
            id: CommandId { client, seq },
            op,
            mode,
            dest,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_command() -> impl Strategy<Value = Command> {
        (
            any::<u64>(),
            any::<u64>(),
            0usize..4,
            any::<bool>(),
            prop_oneof![Just(GroupSet::All), (0usize..64).prop_map(GroupSet::Single)],
            any::<u64>(),
            any::<[u8; 8]>(),
        )
            .prop_map(|(client, seq, kind, opt, dest, key, v)| {
                let kind = CommandKind::ALL[kind];
                Command {
                    id: CommandId { client, seq },
                    op: Operation {
                        kind,
                        key,
                        value: kind.takes_value().then_some(Value(v)),
                    },
                    mode: if opt {
                        Mode::Optimistic
                    } else {
                        Mode::Conservative
                    },
                    dest,
                }
            })
    }

    proptest! {
        #[test]
        fn encode_decode(cmd in arb_command()) {
            prop_assert_eq!(Command::decode(&cmd.encode()).unwrap(), cmd);
        }

        #[test]
        fn description_parses_back(cmd in arb_command()) {
            let op = cmd.op;
            prop_assert_eq!(Operation::parse_description(&op.describe(), op.key).unwrap(), op);
        }
    }

    #[test]
    fn msg_ids_differ_by_mode() {
        let mut cmd = Command {
            id: CommandId { client: 3, seq: 10 },
            op: Operation::delete(4),
            mode: Mode::Optimistic,
            dest: GroupSet::Single(0),
        };
        let opt = cmd.msg_id();
        cmd.mode = Mode::Conservative;
        assert_ne!(opt, cmd.msg_id());
        assert_eq!(cmd.msg_id().origin, 3);
    }

    #[test]
    fn value_presence_is_checked() {
        assert!(Operation {
            kind: CommandKind::Read,
            key: 1,
            value: Some(Value::default())
        }
        .validate()
        .is_err());
        assert!(Operation {
            kind: CommandKind::Insert,
            key: 1,
            value: None
        }
        .validate()
        .is_err());
        assert!(Command::decode(&[0u8; 3]).is_err());
    }

    #[test]
    fn outcome_text() {
        for o in [
            Outcome::Absent,
            Outcome::Ok,
            Outcome::NotFound,
            Outcome::Value(Value::from_u64(7)),
        ] {
            assert_eq!(o.to_string().parse::<Outcome>().unwrap(), o);
        }
        assert_eq!(
            Outcome::Value(Value::from_u64(1)).to_string(),
            "value:0000000000000001"
        );
    }
}
