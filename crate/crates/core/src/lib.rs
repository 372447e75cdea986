//! Runtime for monitored, arbitrated message connections between robot
//! software modules.
//!
//! Modules exchange [`Value`]s over a [`Bus`]. Each connection may carry a
//! [`Monitor`] plug-in that filters and transforms data and publishes
//! symbolic events into the destination port's [`EventContainer`]. Boolean
//! rules over those events decide which connection may deliver.

pub mod arbitrator;
pub mod bus;
pub mod clock;
pub mod constraint;
pub mod dsl;
pub mod events;
pub mod monitor;
pub mod port;
pub mod trace;
pub mod value;

pub use arbitrator::{Arbitrator, Arrival, ArrivalOutcome, Stage};
pub use bus::{Bus, BusError, DeliveryReport};
pub use clock::{Clock, ClockError, ClockMode, Span, VirtualTime};
pub use constraint::{check_consistency, parse_constraint, ConstraintError, ConstraintExpr, ConstraintTable, Violation};
pub use dsl::{compile, load_monitor, parse_monitor_spec, CompiledMonitor, DslError, MonitorRegistry, MonitorSpec};
pub use events::{EventContainer, EventError, EventRecord};
pub use monitor::{CallbackFault, HostApi, HostError, Monitor, MonitorError, MonitorState};
pub use port::{ConnectionId, Direction, Message, PortId};
pub use trace::{diff_logs, ActionLog, Divergence, EventKind, LogEntry, TraceError};
pub use value::{decode_value, encode_value, Path, Value, ValueError};
