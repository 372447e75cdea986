//! Input-port arbitration: per-connection monitors sharing one event
//! container, gated by per-connection selection rules.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::clock::VirtualTime;
use crate::constraint::{check_consistency, parse_constraint, ConstraintError, ConstraintExpr, ConstraintTable, Violation};
use crate::events::{EventContainer, EventRecord};
use crate::monitor::{HostApi, HostError, Monitor, MonitorError, MonitorHandle};
use crate::port::{ConnectionId, Message, PortId};
use crate::trace::{ActionLog, EventKind};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArbitrationError {
    #[error("connection {0} is not registered on this port")]
    UnknownConnection(String),
}

/// Where an arrival ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    RejectedByMonitor,
    RejectedByConstraint,
    /// A callback raised; the message was dropped.
    Faulted,
    Delivered,
}

impl Stage {
    fn label(self) -> &'static str {
        match self {
            Stage::RejectedByMonitor => "monitor",
            Stage::RejectedByConstraint => "constraint",
            Stage::Faulted => "fault",
            Stage::Delivered => "delivered",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalOutcome {
    pub connection: ConnectionId,
    pub stage: Stage,
    /// The event snapshot the rule was evaluated against, if it was.
    pub constraint_snapshot: Option<BTreeSet<String>>,
    pub fault: Option<String>,
}

impl ArrivalOutcome {
    pub fn is_delivered(&self) -> bool {
        self.stage == Stage::Delivered
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arrival {
    pub outcome: ArrivalOutcome,
    pub delivered: Option<Message>,
}

/// Host API handed to callbacks of monitors on an arbitrated port.
pub(crate) struct PortHost<'a> {
    pub now: VirtualTime,
    pub conn: &'a ConnectionId,
    pub container: &'a mut EventContainer,
    pub table: &'a mut ConstraintTable,
    pub log: &'a mut ActionLog,
    /// During an arrival, rule changes wait until the arrival completes.
    pub defer_constraint: bool,
    pub pending: Option<ConstraintExpr>,
}

impl HostApi for PortHost<'_> {
    fn now(&self) -> VirtualTime {
        self.now
    }

    fn connection(&self) -> &ConnectionId {
        self.conn
    }

    fn set_event(&mut self, name: &str, lifetime: Option<f64>) -> Result<(), HostError> {
        let out = self.container.set_event(name, self.conn, lifetime, self.now)?;
        if out.replaced_expired {
            self.log
                .push(self.now, EventKind::EventExpire, self.conn.label(), name.to_owned());
        }
        if out.inserted {
            let life = lifetime.map_or_else(|| "inf".to_owned(), |l| format!("{l:.3}"));
            self.log.push(
                self.now,
                EventKind::EventSet,
                self.conn.label(),
                format!("{name} {life}"),
            );
        }
        Ok(())
    }

    fn unset_event(&mut self, name: &str) -> bool {
        let removed = self.container.unset_event(name, self.conn, self.now);
        if removed {
            self.log
                .push(self.now, EventKind::EventUnset, self.conn.label(), name.to_owned());
        }
        removed
    }

    fn set_constraint(&mut self, rule: &str) -> Result<(), HostError> {
        let expr = parse_constraint(rule)?;
        if self.defer_constraint {
            self.pending = Some(expr);
        } else {
            self.table.set(self.conn, expr);
        }
        Ok(())
    }
}

pub(crate) fn log_expired(log: &mut ActionLog, now: VirtualTime, expired: Vec<EventRecord>) {
    for r in expired {
        log.push(now, EventKind::EventExpire, r.owner.label(), r.name);
    }
}

pub(crate) fn log_fault(log: &mut ActionLog, now: VirtualTime, conn: &ConnectionId, callback: &str, msg: &str) {
    let detail = Value::list([Value::str("fault"), Value::str(callback), Value::str(msg)]);
    log.push(now, EventKind::Action, conn.label(), detail.to_string());
}

fn format_snapshot(s: &BTreeSet<String>) -> String {
    let names: Vec<&str> = s.iter().map(String::as_str).collect();
    format!("[{}]", names.join(" "))
}

/// Arbitration state of one input port.
#[derive(Debug)]
pub struct Arbitrator {
    port: PortId,
    container: EventContainer,
    constraints: ConstraintTable,
    monitors: BTreeMap<ConnectionId, MonitorHandle>,
}

impl Arbitrator {
    pub fn new(port: PortId) -> Self {
        Arbitrator {
            port,
            container: EventContainer::new(),
            constraints: ConstraintTable::new(),
            monitors: BTreeMap::new(),
        }
    }

    pub fn port(&self) -> &PortId {
        &self.port
    }

    pub fn container(&self) -> &EventContainer {
        &self.container
    }

    pub fn constraints(&self) -> &ConstraintTable {
        &self.constraints
    }

    pub fn monitor(&self, conn: &ConnectionId) -> Option<&MonitorHandle> {
        self.monitors.get(conn)
    }

    pub fn is_registered(&self, conn: &ConnectionId) -> bool {
        self.constraints.iter().any(|(c, _)| c == conn)
    }

    /// Adds a connection with the default `true` rule.
    pub fn register(&mut self, conn: &ConnectionId) {
        self.constraints.register(conn);
    }

    fn host<'a>(
        &'a mut self,
        conn: &'a ConnectionId,
        now: VirtualTime,
        log: &'a mut ActionLog,
        defer_constraint: bool,
    ) -> PortHost<'a> {
        PortHost {
            now,
            conn,
            container: &mut self.container,
            table: &mut self.constraints,
            log,
            defer_constraint,
            pending: None,
        }
    }

    /// Runs the plug-in's `create` and keeps it on success.
    pub fn attach(
        &mut self,
        conn: &ConnectionId,
        plugin: Box<dyn Monitor>,
        now: VirtualTime,
        log: &mut ActionLog,
    ) -> Result<(), MonitorError> {
        if self.monitors.contains_key(conn) {
            return Err(MonitorError::AlreadyAttached(conn.to_string()));
        }
        let mut host = PortHost {
            now,
            conn,
            container: &mut self.container,
            table: &mut self.constraints,
            log,
            defer_constraint: false,
            pending: None,
        };
        let handle = MonitorHandle::attach(conn.clone(), plugin, &mut host)?;
        self.monitors.insert(conn.clone(), handle);
        Ok(())
    }

    /// Destroys the connection's monitor and drops its rule. Events the
    /// monitor set stay in the container.
    pub fn disconnect(&mut self, conn: &ConnectionId, now: VirtualTime, log: &mut ActionLog) {
        if let Some(mut handle) = self.monitors.remove(conn) {
            let mut host = self.host(conn, now, log, false);
            handle.detach(&mut host);
        }
        self.constraints.remove(conn);
    }

    /// Replaces one connection's rule. Malformed text leaves it unchanged.
    pub fn set_constraint_for(&mut self, conn: &ConnectionId, text: &str) -> Result<(), ConstraintError> {
        let expr = parse_constraint(text)?;
        self.constraints.set(conn, expr);
        Ok(())
    }

    /// Purges expired events, logging each one.
    pub fn expire(&mut self, now: VirtualTime, log: &mut ActionLog) {
        let expired = self.container.purge(now);
        log_expired(log, now, expired);
    }

    /// Handles one arrival: purge, `accept`, rule check against the
    /// post-accept snapshot, then `update` and delivery.
    pub fn arbitrate(
        &mut self,
        conn: &ConnectionId,
        msg: Message,
        now: VirtualTime,
        log: &mut ActionLog,
    ) -> Result<Arrival, ArbitrationError> {
        if !self.is_registered(conn) {
            return Err(ArbitrationError::UnknownConnection(conn.to_string()));
        }
        self.expire(now, log);

        let mut monitor = self.monitors.remove(conn);
        let mut pending = None;
        let result = self.run_arrival(conn, msg, now, log, monitor.as_mut(), &mut pending);
        if let Some(m) = monitor {
            self.monitors.insert(conn.clone(), m);
        }
        if let Some(rule) = pending {
            self.constraints.set(conn, rule);
        }
        Ok(result)
    }

    fn run_arrival(
        &mut self,
        conn: &ConnectionId,
        msg: Message,
        now: VirtualTime,
        log: &mut ActionLog,
        mut monitor: Option<&mut MonitorHandle>,
        pending: &mut Option<ConstraintExpr>,
    ) -> Arrival {
        let label = conn.label();
        let outcome = |stage, snapshot, fault| ArrivalOutcome {
            connection: conn.clone(),
            stage,
            constraint_snapshot: snapshot,
            fault,
        };

        if let Some(m) = monitor.as_deref_mut() {
            let mut host = self.host(conn, now, log, true);
            let accepted = m.begin(&msg.payload, &mut host);
            *pending = host.pending.take();
            match accepted {
                Ok(true) => {}
                Ok(false) => {
                    log.push(now, EventKind::Discard, label, format!("monitor - {}", msg.payload));
                    return Arrival {
                        outcome: outcome(Stage::RejectedByMonitor, None, None),
                        delivered: None,
                    };
                }
                Err(e) => {
                    let fault = e.to_string();
                    log.push(now, EventKind::Discard, label, format!("fault - {}", msg.payload));
                    log_fault(log, now, conn, "accept", &fault);
                    return Arrival {
                        outcome: outcome(Stage::Faulted, None, Some(fault)),
                        delivered: None,
                    };
                }
            }
        }

        let (snapshot, expired) = self.container.snapshot(now);
        log_expired(log, now, expired);
        let snap_text = format_snapshot(&snapshot);
        if !self.constraints.get(conn).evaluate(&snapshot) {
            if let Some(m) = monitor {
                m.abandon();
            }
            log.push(
                now,
                EventKind::Discard,
                label,
                format!("constraint {snap_text} {}", msg.payload),
            );
            return Arrival {
                outcome: outcome(Stage::RejectedByConstraint, Some(snapshot), None),
                delivered: None,
            };
        }

        let payload = match monitor {
            None => msg.payload,
            Some(m) => {
                let original = msg.payload.clone();
                let mut host = self.host(conn, now, log, true);
                let updated = m.finish_accepted(msg.payload, &mut host);
                if let Some(p) = host.pending.take() {
                    *pending = Some(p);
                }
                match updated {
                    Ok(v) => v,
                    Err(e) => {
                        let fault = e.to_string();
                        log.push(
                            now,
                            EventKind::Discard,
                            label,
                            format!("fault {snap_text} {original}"),
                        );
                        log_fault(log, now, conn, "update", &fault);
                        return Arrival {
                            outcome: outcome(Stage::Faulted, Some(snapshot), Some(fault)),
                            delivered: None,
                        };
                    }
                }
            }
        };

        log.push(now, EventKind::Deliver, label, format!("{snap_text} {payload}"));
        Arrival {
            outcome: outcome(Stage::Delivered, Some(snapshot), None),
            delivered: Some(Message {
                payload,
                source: msg.source,
                stamp: msg.stamp,
            }),
        }
    }

    /// Earliest pending trig deadline on this port, ties by connection.
    pub fn next_trig(&self) -> Option<(VirtualTime, ConnectionId)> {
        self.monitors
            .iter()
            .filter_map(|(c, m)| m.next_trig().map(|t| (t, c.clone())))
            .min()
    }

    /// Fires one trig on `conn`'s monitor. Rule changes apply immediately.
    pub fn fire_trig(&mut self, conn: &ConnectionId, now: VirtualTime, log: &mut ActionLog) {
        let Some(mut handle) = self.monitors.remove(conn) else {
            return;
        };
        let result = {
            let mut host = self.host(conn, now, log, false);
            handle.on_trig(&mut host)
        };
        if let Err(e) = result {
            log_fault(log, now, conn, "trig", &e.to_string());
        }
        self.monitors.insert(conn.clone(), handle);
    }

    /// Pairwise exclusivity check over the current rule table.
    pub fn audit(&self) -> Result<Vec<Violation>, ConstraintError> {
        check_consistency(&self.constraints)
    }
}
