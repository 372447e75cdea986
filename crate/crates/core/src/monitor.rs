//! Connection monitors and their lifecycle.
//!
//! ```text
//!  create ──true──▶ Waiting ──data──▶ Accepting ──false──▶ Waiting
//!                   │   ▲                 │
//!                   │   │                 └──true──▶ Updating ──▶ Waiting
//!                   │   └──── Trigged ◀── timer
//!                   └──disconnect──▶ Destroyed
//! ```

use std::fmt;

use thiserror::Error;

use crate::clock::{Span, VirtualTime};
use crate::constraint::ConstraintError;
use crate::events::EventError;
use crate::port::ConnectionId;
use crate::value::Value;

/// An error raised inside a plug-in callback.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct CallbackFault(pub String);

impl CallbackFault {
    pub fn new(msg: impl Into<String>) -> Self {
        CallbackFault(msg.into())
    }
}

impl From<HostError> for CallbackFault {
    fn from(e: HostError) -> Self {
        CallbackFault(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HostError {
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
}

/// What a plug-in may do from inside its callbacks. Every call is scoped
/// to the connection the monitor is attached to.
pub trait HostApi {
    fn now(&self) -> VirtualTime;
    fn connection(&self) -> &ConnectionId;
    /// `lifetime` in seconds; `None` keeps the event until unset.
    fn set_event(&mut self, name: &str, lifetime: Option<f64>) -> Result<(), HostError>;
    fn unset_event(&mut self, name: &str) -> bool;
    fn set_constraint(&mut self, rule: &str) -> Result<(), HostError>;
}

/// A port plug-in. Every callback has a pass-through default, so an empty
/// implementation forwards all data unchanged.
///
/// `accept` only gets a shared borrow of the payload; `update` is the one
/// place that may replace it.
pub trait Monitor: Send {
    fn create(&mut self, _host: &mut dyn HostApi) -> Result<bool, CallbackFault> {
        Ok(true)
    }

    fn accept(&mut self, _data: &Value, _host: &mut dyn HostApi) -> Result<bool, CallbackFault> {
        Ok(true)
    }

    fn update(&mut self, data: Value, _host: &mut dyn HostApi) -> Result<Value, CallbackFault> {
        Ok(data)
    }

    fn trig(&mut self, _host: &mut dyn HostApi) -> Result<(), CallbackFault> {
        Ok(())
    }

    fn destroy(&mut self, _host: &mut dyn HostApi) {}

    /// Seconds between `trig` calls; `None` never schedules it.
    fn trig_period(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonitorState {
    Created,
    Waiting,
    Accepting,
    Updating,
    Trigged,
    Destroyed,
}

impl fmt::Display for MonitorState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonitorError {
    #[error("monitor on {0} refused to start")]
    InitFailed(String),
    #[error("connection {0} already has a monitor")]
    AlreadyAttached(String),
    #[error("trig period must be positive, got {0}")]
    InvalidTrigPeriod(f64),
    #[error("callback `{callback}` called in state {state}")]
    IllegalState {
        callback: &'static str,
        state: MonitorState,
    },
    #[error("monitor fault: {0}")]
    Fault(#[from] CallbackFault),
}

/// A plug-in bound to one connection, tracking its lifecycle state and
/// trig schedule.
pub struct MonitorHandle {
    connection: ConnectionId,
    state: MonitorState,
    plugin: Box<dyn Monitor>,
    trig_period: Option<Span>,
    next_trig: Option<VirtualTime>,
}

impl fmt::Debug for MonitorHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MonitorHandle")
            .field("connection", &self.connection)
            .field("state", &self.state)
            .field("next_trig", &self.next_trig)
            .finish()
    }
}

impl MonitorHandle {
    /// Runs `create`. A `false` result or a fault aborts the attach.
    pub fn attach(
        connection: ConnectionId,
        mut plugin: Box<dyn Monitor>,
        host: &mut dyn HostApi,
    ) -> Result<MonitorHandle, MonitorError> {
        let trig_period = match plugin.trig_period() {
            None => None,
            Some(p) if p > 0.0 && p.is_finite() => Some(Span::from_secs(p)),
            Some(p) => return Err(MonitorError::InvalidTrigPeriod(p)),
        };
        match plugin.create(host) {
            Ok(true) => {}
            Ok(false) => return Err(MonitorError::InitFailed(connection.to_string())),
            Err(fault) => {
                return Err(MonitorError::InitFailed(format!("{connection}: {fault}")))
            }
        }
        let now = host.now();
        Ok(MonitorHandle {
            connection,
            state: MonitorState::Waiting,
            plugin,
            trig_period,
            next_trig: trig_period.map(|p| now + p),
        })
    }

    pub fn connection(&self) -> &ConnectionId {
        &self.connection
    }

    pub fn state(&self) -> MonitorState {
        self.state
    }

    pub fn next_trig(&self) -> Option<VirtualTime> {
        if self.state == MonitorState::Destroyed {
            None
        } else {
            self.next_trig
        }
    }

    fn expect_waiting(&self, callback: &'static str) -> Result<(), MonitorError> {
        if self.state == MonitorState::Waiting {
            Ok(())
        } else {
            Err(MonitorError::IllegalState {
                callback,
                state: self.state,
            })
        }
    }

    /// First half of an arrival: runs `accept`. On `Ok(true)` the handle
    /// stays in `Accepting` until [`finish_accepted`](Self::finish_accepted)
    /// or [`abandon`](Self::abandon) is called.
    pub fn begin(&mut self, data: &Value, host: &mut dyn HostApi) -> Result<bool, MonitorError> {
        self.expect_waiting("accept")?;
        self.state = MonitorState::Accepting;
        match self.plugin.accept(data, host) {
            Ok(true) => Ok(true),
            Ok(false) => {
                self.state = MonitorState::Waiting;
                Ok(false)
            }
            Err(fault) => {
                self.state = MonitorState::Waiting;
                Err(fault.into())
            }
        }
    }

    /// Runs `update` after a successful `accept`.
    pub fn finish_accepted(
        &mut self,
        data: Value,
        host: &mut dyn HostApi,
    ) -> Result<Value, MonitorError> {
        if self.state != MonitorState::Accepting {
            return Err(MonitorError::IllegalState {
                callback: "update",
                state: self.state,
            });
        }
        self.state = MonitorState::Updating;
        let out = self.plugin.update(data, host);
        self.state = MonitorState::Waiting;
        Ok(out?)
    }

    /// Drops an accepted arrival without running `update`.
    pub fn abandon(&mut self) {
        if self.state == MonitorState::Accepting {
            self.state = MonitorState::Waiting;
        }
    }

    /// Full arrival: `accept`, then `update` if accepted. `None` means the
    /// message was discarded.
    pub fn on_data(
        &mut self,
        data: Value,
        host: &mut dyn HostApi,
    ) -> Result<Option<Value>, MonitorError> {
        if self.begin(&data, host)? {
            self.finish_accepted(data, host).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Runs `trig` once and schedules the next deadline one period later.
    pub fn on_trig(&mut self, host: &mut dyn HostApi) -> Result<(), MonitorError> {
        self.expect_waiting("trig")?;
        let Some(period) = self.trig_period else {
            return Err(MonitorError::IllegalState {
                callback: "trig",
                state: self.state,
            });
        };
        self.next_trig = self.next_trig.map(|t| t + period);
        self.state = MonitorState::Trigged;
        let out = self.plugin.trig(host);
        self.state = MonitorState::Waiting;
        Ok(out?)
    }

    /// Runs `destroy` once; later calls do nothing.
    pub fn detach(&mut self, host: &mut dyn HostApi) {
        if self.state == MonitorState::Destroyed {
            return;
        }
        self.plugin.destroy(host);
        self.state = MonitorState::Destroyed;
        self.next_trig = None;
    }
}
