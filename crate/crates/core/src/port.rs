use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use crate::clock::VirtualTime;
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    In,
    Out,
}

/// A named endpoint on a module.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortId {
    pub module: String,
    pub port: String,
    pub direction: Direction,
}

impl PortId {
    pub fn new(module: impl Into<String>, port: impl Into<String>, direction: Direction) -> Self {
        PortId {
            module: module.into(),
            port: port.into(),
            direction,
        }
    }

    pub fn input(module: impl Into<String>, port: impl Into<String>) -> Self {
        PortId::new(module, port, Direction::In)
    }

    pub fn output(module: impl Into<String>, port: impl Into<String>) -> Self {
        PortId::new(module, port, Direction::Out)
    }
}

impl fmt::Display for PortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.module, self.port)
    }
}

/// Connection handle. Identity is the creation index; the label (e.g. `C1`)
/// is carried along for traces.
#[derive(Debug, Clone)]
pub struct ConnectionId {
    index: u32,
    label: Arc<str>,
}

impl ConnectionId {
    pub fn new(index: u32, label: impl Into<Arc<str>>) -> Self {
        ConnectionId {
            index,
            label: label.into(),
        }
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl PartialEq for ConnectionId {
    fn eq(&self, other: &Self) -> bool {
        self.index == other.index
    }
}

impl Eq for ConnectionId {}

impl PartialOrd for ConnectionId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ConnectionId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.index.cmp(&other.index)
    }
}

impl Hash for ConnectionId {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.index.hash(state);
    }
}

impl fmt::Display for ConnectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

/// A payload in flight on one connection.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub payload: Value,
    pub source: ConnectionId,
    pub stamp: VirtualTime,
}
