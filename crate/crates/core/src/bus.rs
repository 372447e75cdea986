//! Single-process message bus: ports, connections, synchronous fan-out and
//! the clock that drives trig callbacks and event expiry.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::arbitrator::{ArbitrationError, Arbitrator, ArrivalOutcome};
use crate::clock::{Clock, ClockError, Span, VirtualTime};
use crate::constraint::{ConstraintError, Violation};
use crate::monitor::{Monitor, MonitorError};
use crate::port::{ConnectionId, Direction, Message, PortId};
use crate::trace::{ActionLog, EventKind};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BusError {
    #[error("unknown port {0}")]
    UnknownPort(String),
    #[error("port {0} is already registered")]
    DuplicatePort(String),
    #[error("cannot connect {src} to {dst}: source must be an output and destination an input")]
    DirectionMismatch { src: String, dst: String },
    #[error("connection label {0} is already in use")]
    DuplicateLabel(String),
    #[error("unknown connection {0}")]
    UnknownConnection(String),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Clock(#[from] ClockError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Arbitration(#[from] ArbitrationError),
}

#[derive(Debug, Clone)]
struct Connection {
    id: ConnectionId,
    src: PortId,
    dst: PortId,
}

/// Per-connection results of one [`Bus::write`], in connection order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeliveryReport {
    pub outcomes: Vec<ArrivalOutcome>,
}

impl DeliveryReport {
    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn delivered(&self) -> impl Iterator<Item = &ConnectionId> {
        self.outcomes
            .iter()
            .filter(|o| o.is_delivered())
            .map(|o| &o.connection)
    }
}

/// The bus. Every input port carries an [`Arbitrator`]; with a single
/// unconstrained connection it simply forwards.
#[derive(Debug)]
pub struct Bus {
    clock: Clock,
    ports: BTreeSet<PortId>,
    connections: Vec<Connection>,
    arbitrators: BTreeMap<PortId, Arbitrator>,
    deliveries: VecDeque<(PortId, Message)>,
    log: ActionLog,
    next_index: u32,
}

impl Default for Bus {
    fn default() -> Self {
        Bus::new(Clock::new_virtual())
    }
}

impl Bus {
    pub fn new(clock: Clock) -> Self {
        Bus {
            clock,
            ports: BTreeSet::new(),
            connections: Vec::new(),
            arbitrators: BTreeMap::new(),
            deliveries: VecDeque::new(),
            log: ActionLog::new(),
            next_index: 1,
        }
    }

    pub fn now(&self) -> VirtualTime {
        self.clock.now()
    }

    pub fn add_port(&mut self, port: PortId) -> Result<(), BusError> {
        let known = self
            .ports
            .iter()
            .any(|p| p.module == port.module && p.port == port.port);
        if known {
            return Err(BusError::DuplicatePort(port.to_string()));
        }
        if port.direction == Direction::In {
            self.arbitrators
                .insert(port.clone(), Arbitrator::new(port.clone()));
        }
        self.ports.insert(port);
        Ok(())
    }

    pub fn has_port(&self, port: &PortId) -> bool {
        self.ports.contains(port)
    }

    fn check_endpoint(&self, port: &PortId) -> Result<(), BusError> {
        let exists = self
            .ports
            .iter()
            .any(|p| p.module == port.module && p.port == port.port);
        if exists {
            Ok(())
        } else {
            Err(BusError::UnknownPort(port.to_string()))
        }
    }

    /// Connects with an automatic `C<n>` label.
    pub fn connect(
        &mut self,
        src: &PortId,
        dst: &PortId,
        monitor: Option<Box<dyn Monitor>>,
    ) -> Result<ConnectionId, BusError> {
        let label = format!("C{}", self.next_index);
        self.connect_labeled(&label, src, dst, monitor)
    }

    /// Registers a connection and runs the monitor's `create`. If `create`
    /// fails nothing is registered.
    pub fn connect_labeled(
        &mut self,
        label: &str,
        src: &PortId,
        dst: &PortId,
        monitor: Option<Box<dyn Monitor>>,
    ) -> Result<ConnectionId, BusError> {
        self.check_endpoint(src)?;
        self.check_endpoint(dst)?;
        if !self.ports.contains(src)
            || !self.ports.contains(dst)
            || src.direction != Direction::Out
            || dst.direction != Direction::In
        {
            return Err(BusError::DirectionMismatch {
                src: src.to_string(),
                dst: dst.to_string(),
            });
        }
        if self.connections.iter().any(|c| c.id.label() == label) {
            return Err(BusError::DuplicateLabel(label.to_owned()));
        }
        let id = ConnectionId::new(self.next_index, label);
        let now = self.now();
        let arb = self
            .arbitrators
            .get_mut(dst)
            .ok_or_else(|| BusError::UnknownPort(dst.to_string()))?;
        arb.register(&id);
        if let Some(plugin) = monitor {
            if let Err(e) = arb.attach(&id, plugin, now, &mut self.log) {
                arb.disconnect(&id, now, &mut self.log);
                return Err(e.into());
            }
        }
        self.next_index += 1;
        self.connections.push(Connection {
            id: id.clone(),
            src: src.clone(),
            dst: dst.clone(),
        });
        Ok(id)
    }

    fn find(&self, conn: &ConnectionId) -> Result<&Connection, BusError> {
        self.connections
            .iter()
            .find(|c| &c.id == conn)
            .ok_or_else(|| BusError::UnknownConnection(conn.to_string()))
    }

    pub fn connection_by_label(&self, label: &str) -> Option<&ConnectionId> {
        self.connections
            .iter()
            .map(|c| &c.id)
            .find(|c| c.label() == label)
    }

    pub fn connections(&self) -> impl Iterator<Item = (&ConnectionId, &PortId, &PortId)> {
        self.connections.iter().map(|c| (&c.id, &c.src, &c.dst))
    }

    /// Attaches a monitor to an existing connection.
    pub fn attach_monitor(&mut self, conn: &ConnectionId, plugin: Box<dyn Monitor>) -> Result<(), BusError> {
        let dst = self.find(conn)?.dst.clone();
        let now = self.now();
        let arb = self.arbitrators.get_mut(&dst).expect("input ports carry an arbitrator");
        arb.attach(conn, plugin, now, &mut self.log)?;
        Ok(())
    }

    /// Detaches the monitor (running `destroy`) and removes the connection.
    pub fn disconnect(&mut self, conn: &ConnectionId) -> Result<(), BusError> {
        let dst = self.find(conn)?.dst.clone();
        let now = self.now();
        if let Some(arb) = self.arbitrators.get_mut(&dst) {
            arb.disconnect(conn, now, &mut self.log);
        }
        self.connections.retain(|c| &c.id != conn);
        Ok(())
    }

    pub fn set_constraint(&mut self, conn: &ConnectionId, rule: &str) -> Result<(), BusError> {
        let dst = self.find(conn)?.dst.clone();
        let arb = self.arbitrators.get_mut(&dst).expect("input ports carry an arbitrator");
        arb.set_constraint_for(conn, rule)?;
        Ok(())
    }

    /// Fans `value` out over every connection from `src`, in creation order.
    /// Delivered messages queue up for [`Bus::next_delivery`].
    pub fn write(&mut self, src: &PortId, value: Value) -> Result<DeliveryReport, BusError> {
        if !self.ports.contains(src) || src.direction != Direction::Out {
            return Err(BusError::UnknownPort(src.to_string()));
        }
        let now = self.now();
        let targets: Vec<(ConnectionId, PortId)> = self
            .connections
            .iter()
            .filter(|c| &c.src == src)
            .map(|c| (c.id.clone(), c.dst.clone()))
            .collect();
        let mut report = DeliveryReport::default();
        for (conn, dst) in targets {
            let msg = Message {
                payload: value.clone(),
                source: conn.clone(),
                stamp: now,
            };
            let arb = self.arbitrators.get_mut(&dst).expect("input ports carry an arbitrator");
            let arrival = arb.arbitrate(&conn, msg, now, &mut self.log)?;
            if let Some(m) = arrival.delivered {
                self.deliveries.push_back((dst, m));
            }
            report.outcomes.push(arrival.outcome);
        }
        Ok(report)
    }

    /// Oldest undelivered message, with the input port it arrived on.
    pub fn next_delivery(&mut self) -> Option<(PortId, Message)> {
        self.deliveries.pop_front()
    }

    /// Removes and returns every queued message for `port`.
    pub fn take_inbox(&mut self, port: &PortId) -> Vec<Message> {
        let mut out = Vec::new();
        self.deliveries.retain(|(p, m)| {
            if p == port {
                out.push(m.clone());
                false
            } else {
                true
            }
        });
        out
    }

    /// Advances the clock by `dt` seconds. Trig deadlines inside the step
    /// fire in time order (ties by connection), each at its own instant;
    /// expired events are purged at every visited instant.
    pub fn advance(&mut self, dt: f64) -> Result<VirtualTime, BusError> {
        if dt.is_nan() || dt < 0.0 {
            return Err(ClockError::NegativeStep(dt).into());
        }
        let target = self.now() + Span::from_secs(dt);
        self.advance_to(target);
        Ok(self.now())
    }

    /// Like [`Bus::advance`] with an absolute target; earlier targets only
    /// purge.
    pub fn advance_to(&mut self, target: VirtualTime) {
        loop {
            let next = self
                .arbitrators
                .iter()
                .filter_map(|(port, a)| a.next_trig().map(|(t, c)| (t, c, port.clone())))
                .filter(|(t, _, _)| *t <= target)
                .min();
            let Some((deadline, conn, port)) = next else {
                break;
            };
            self.clock.set(deadline);
            self.expire_all();
            let now = self.now();
            if let Some(arb) = self.arbitrators.get_mut(&port) {
                arb.fire_trig(&conn, now, &mut self.log);
            }
        }
        self.clock.set(target);
        self.expire_all();
    }

    fn expire_all(&mut self) {
        let now = self.now();
        for arb in self.arbitrators.values_mut() {
            arb.expire(now, &mut self.log);
        }
    }

    pub fn arbitrator(&self, port: &PortId) -> Option<&Arbitrator> {
        self.arbitrators.get(port)
    }

    pub fn arbitrators(&self) -> impl Iterator<Item = &Arbitrator> {
        self.arbitrators.values()
    }

    /// Consistency report for every input port with at least two
    /// connections.
    pub fn audit(&self) -> Result<Vec<(PortId, Vec<Violation>)>, BusError> {
        let mut out = Vec::new();
        for (port, arb) in &self.arbitrators {
            if arb.constraints().len() >= 2 {
                out.push((port.clone(), arb.audit()?));
            }
        }
        Ok(out)
    }

    /// Appends an `ACTION` line on behalf of a module.
    pub fn log_action(&mut self, module: &str, action: &Value) {
        let now = self.now();
        self.log.push(now, EventKind::Action, module, action.to_string());
    }

    pub fn log(&self) -> &ActionLog {
        &self.log
    }

    pub fn take_log(&mut self) -> ActionLog {
        std::mem::take(&mut self.log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monitor::{CallbackFault, HostApi};
    use std::sync::{Arc, Mutex};

    fn face_out() -> PortId {
        PortId::output("FaceDetector", "face")
    }

    fn head_in() -> PortId {
        PortId::input("HeadControl", "target")
    }

    fn bus() -> Bus {
        let mut b = Bus::default();
        b.add_port(face_out()).unwrap();
        b.add_port(head_in()).unwrap();
        b
    }

    struct Refuse;

    impl Monitor for Refuse {
        fn create(&mut self, _: &mut dyn HostApi) -> Result<bool, CallbackFault> {
            Ok(false)
        }
    }

    struct Ticker {
        period: f64,
        count: Arc<Mutex<Vec<VirtualTime>>>,
    }

    impl Monitor for Ticker {
        fn trig(&mut self, host: &mut dyn HostApi) -> Result<(), CallbackFault> {
            self.count.lock().unwrap().push(host.now());
            Ok(())
        }
        fn trig_period(&self) -> Option<f64> {
            Some(self.period)
        }
    }

    #[test]
    fn plain_connection_passes_everything() {
        let mut b = bus();
        let c = b.connect(&face_out(), &head_in(), None).unwrap();
        assert_eq!(c.label(), "C1");
        let report = b.write(&face_out(), Value::pos3(0.0, 0.1, 0.2)).unwrap();
        assert_eq!(report.delivered().count(), 1);
        let (port, m) = b.next_delivery().unwrap();
        assert_eq!(port, head_in());
        assert_eq!(m.payload, Value::pos3(0.0, 0.1, 0.2));
        assert_eq!(m.source, c);
    }

    #[test]
    fn failed_create_registers_nothing() {
        let mut b = bus();
        let err = b.connect(&face_out(), &head_in(), Some(Box::new(Refuse))).unwrap_err();
        assert!(matches!(err, BusError::Monitor(MonitorError::InitFailed(_))));
        assert_eq!(b.connections().count(), 0);
        assert!(b.arbitrator(&head_in()).unwrap().constraints().is_empty());
        assert!(b.write(&face_out(), Value::Int(1)).unwrap().is_empty());
    }

    #[test]
    fn direction_is_checked() {
        let mut b = bus();
        b.add_port(PortId::output("LookAround", "target")).unwrap();
        assert!(matches!(
            b.connect(&face_out(), &PortId::output("LookAround", "target"), None),
            Err(BusError::DirectionMismatch { .. })
        ));
        assert!(matches!(
            b.connect(&PortId::output("Nope", "x"), &head_in(), None),
            Err(BusError::UnknownPort(_))
        ));
        assert!(matches!(
            b.connect(&PortId::output("HeadControl", "target"), &head_in(), None),
            Err(BusError::DirectionMismatch { .. })
        ));
    }

    #[test]
    fn write_without_connections_is_empty() {
        let mut b = bus();
        assert!(b.write(&face_out(), Value::Int(1)).unwrap().is_empty());
        assert!(matches!(
            b.write(&head_in(), Value::Int(1)),
            Err(BusError::UnknownPort(_))
        ));
    }

    #[test]
    fn trig_counts_follow_periods() {
        let mut b = bus();
        b.add_port(PortId::input("Other", "in")).unwrap();
        let fast = Arc::new(Mutex::new(Vec::new()));
        let slow = Arc::new(Mutex::new(Vec::new()));
        b.connect(&face_out(), &head_in(), Some(Box::new(Ticker { period: 0.5, count: fast.clone() })))
            .unwrap();
        b.connect(
            &face_out(),
            &PortId::input("Other", "in"),
            Some(Box::new(Ticker { period: 1.0, count: slow.clone() })),
        )
        .unwrap();
        b.advance(0.0).unwrap();
        assert!(fast.lock().unwrap().is_empty());
        b.advance(1.0).unwrap();
        assert_eq!(
            *fast.lock().unwrap(),
            [VirtualTime::from_secs(0.5), VirtualTime::from_secs(1.0)]
        );
        assert_eq!(*slow.lock().unwrap(), [VirtualTime::from_secs(1.0)]);
        assert_eq!(b.now(), VirtualTime::from_secs(1.0));
    }

    #[test]
    fn disconnect_destroys_then_removes() {
        struct Tracked(Arc<Mutex<u32>>);
        impl Monitor for Tracked {
            fn destroy(&mut self, _: &mut dyn HostApi) {
                *self.0.lock().unwrap() += 1;
            }
        }
        let mut b = bus();
        let destroyed = Arc::new(Mutex::new(0));
        let c = b
            .connect(&face_out(), &head_in(), Some(Box::new(Tracked(destroyed.clone()))))
            .unwrap();
        b.disconnect(&c).unwrap();
        assert_eq!(*destroyed.lock().unwrap(), 1);
        assert!(b.disconnect(&c).is_err());
        assert_eq!(*destroyed.lock().unwrap(), 1);
        assert!(b.write(&face_out(), Value::Int(1)).unwrap().is_empty());
    }

    #[test]
    fn already_attached_is_rejected() {
        let mut b = bus();
        let c = b.connect(&face_out(), &head_in(), None).unwrap();
        b.attach_monitor(&c, Box::new(Ticker { period: 1.0, count: Default::default() }))
            .unwrap();
        assert!(matches!(
            b.attach_monitor(&c, Box::new(Ticker { period: 1.0, count: Default::default() })),
            Err(BusError::Monitor(MonitorError::AlreadyAttached(_)))
        ));
    }

    #[test]
    fn bus_can_move_between_threads() {
        fn assert_send<T: Send>() {}
        assert_send::<Bus>();
        let shared = Arc::new(Mutex::new(bus()));
        let c = shared.lock().unwrap().connect(&face_out(), &head_in(), None).unwrap();
        let worker = {
            let shared = shared.clone();
            std::thread::spawn(move || shared.lock().unwrap().write(&face_out(), Value::Int(3)).unwrap())
        };
        assert_eq!(worker.join().unwrap().delivered().next(), Some(&c));
    }

    #[test]
    fn negative_advance_fails() {
        let mut b = bus();
        assert!(matches!(b.advance(-1.0), Err(BusError::Clock(_))));
    }

    #[test]
    fn duplicate_labels_and_ports() {
        let mut b = bus();
        b.connect_labeled("C7", &face_out(), &head_in(), None).unwrap();
        assert!(matches!(
            b.connect_labeled("C7", &face_out(), &head_in(), None),
            Err(BusError::DuplicateLabel(_))
        ));
        assert!(matches!(b.add_port(face_out()), Err(BusError::DuplicatePort(_))));
    }
}
