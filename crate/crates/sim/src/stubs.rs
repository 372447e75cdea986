//! Scripted stand-ins for the robot modules: detectors read the world
//! model directly, controllers log what they would execute.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use portkit::{Bus, BusError, Direction, PortId, Span, Value, VirtualTime};

use crate::world::WorldModel;

/// What a stub sees while it runs.
pub struct StubCtx<'a> {
    pub bus: &'a mut Bus,
    pub world: &'a mut WorldModel,
    pub module: &'a str,
}

impl StubCtx<'_> {
    pub fn now(&self) -> VirtualTime {
        self.bus.now()
    }

    pub fn write(&mut self, port: &str, value: Value) -> Result<(), BusError> {
        self.bus
            .write(&PortId::output(self.module, port), value)
            .map(drop)
    }

    pub fn action(&mut self, value: Value) {
        self.bus.log_action(self.module, &value);
    }
}

pub trait Stub: Send {
    fn kind(&self) -> &'static str;

    fn ports(&self) -> Vec<(&'static str, Direction)>;

    /// Called once per scheduler tick.
    fn on_tick(&mut self, ctx: &mut StubCtx<'_>) -> Result<(), BusError>;

    /// Called for each message delivered to one of the stub's inputs.
    fn on_message(&mut self, _port: &str, _payload: &Value, _ctx: &mut StubCtx<'_>) -> Result<(), BusError> {
        Ok(())
    }
}

/// Fires at `phase`, `phase + period`, ... on the first tick at or past
/// each instant.
#[derive(Debug, Clone)]
struct Every {
    next: VirtualTime,
    period: Span,
}

impl Every {
    fn new(period: f64, phase: f64) -> Every {
        Every {
            next: VirtualTime::from_secs(phase),
            period: Span::from_secs(period),
        }
    }

    fn due(&mut self, now: VirtualTime) -> bool {
        if now < self.next {
            return false;
        }
        while self.next <= now {
            self.next = self.next + self.period;
        }
        true
    }
}

/// `key=value` options from a manifest `module` line.
#[derive(Debug, Clone, Default)]
pub struct StubOptions(BTreeMap<String, String>);

impl StubOptions {
    pub fn new(map: BTreeMap<String, String>) -> Self {
        StubOptions(map)
    }

    fn number(&mut self, key: &str, default: f64) -> Result<f64, String> {
        match self.0.remove(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| format!("option {key}={v} is not a number")),
        }
    }

    fn positive(&mut self, key: &str, default: f64) -> Result<f64, String> {
        let x = self.number(key, default)?;
        if x > 0.0 {
            Ok(x)
        } else {
            Err(format!("option {key} must be positive"))
        }
    }

    fn finish(self) -> Result<(), String> {
        match self.0.keys().next() {
            Some(k) => Err(format!("unknown option `{k}`")),
            None => Ok(()),
        }
    }
}

fn pos_of(v: &[f64; 3]) -> Value {
    Value::pos3(v[0], v[1], v[2])
}

/// Builds a stub of `kind`; `seed` drives any randomness.
pub fn build_stub(kind: &str, mut opts: StubOptions, seed: u64) -> Result<Box<dyn Stub>, String> {
    let stub: Box<dyn Stub> = match kind {
        "face_detector" => Box::new(FaceDetector {
            every: Every::new(opts.positive("period", 0.1)?, opts.number("phase", 0.0)?),
            certainty: opts.number("certainty", 0.95)?,
            pos: [opts.number("x", 1.0)?, opts.number("y", 0.0)?, opts.number("z", 0.6)?],
        }),
        "object_detector" => Box::new(ObjectDetector {
            every: Every::new(opts.positive("period", 1.0)?, opts.number("phase", 0.0)?),
        }),
        "bucket_detector" => Box::new(BucketDetector {
            every: Every::new(opts.positive("period", 1.0)?, opts.number("phase", 0.5)?),
        }),
        "look_around" => Box::new(LookAround {
            every: Every::new(opts.positive("period", 0.5)?, opts.number("phase", 0.0)?),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }),
        "head_control" => Box::new(HeadControl),
        "speak" => Box::new(Speak),
        "pick_and_place" => Box::new(PickAndPlace {
            status: Every::new(opts.positive("status_period", 0.1)?, 0.0),
            take: Span::from_secs(opts.positive("take", 1.5)?),
            put: Span::from_secs(opts.positive("put", 1.5)?),
            state: ArmState::Idle,
        }),
        "pull_object" => Box::new(PullObject {
            status: Every::new(opts.positive("status_period", 0.1)?, 0.0),
            step: Span::from_secs(opts.positive("step", 1.0)?),
            pull_to: opts.number("pull_to", 0.3)?,
            state: PullState::Idle,
        }),
        other => return Err(format!("unknown module kind `{other}`")),
    };
    opts.finish()?;
    Ok(stub)
}

struct FaceDetector {
    every: Every,
    certainty: f64,
    pos: [f64; 3],
}

impl Stub for FaceDetector {
    fn kind(&self) -> &'static str {
        "face_detector"
    }

    fn ports(&self) -> Vec<(&'static str, Direction)> {
        vec![("face", Direction::Out)]
    }

    fn on_tick(&mut self, ctx: &mut StubCtx<'_>) -> Result<(), BusError> {
        if self.every.due(ctx.now()) && ctx.world.human_present {
            let face = Value::record([
                ("pos", pos_of(&self.pos)),
                ("certainty", Value::Float(self.certainty)),
            ]);
            ctx.write("face", face)?;
        }
        Ok(())
    }
}

struct ObjectDetector {
    every: Every,
}

impl Stub for ObjectDetector {
    fn kind(&self) -> &'static str {
        "object_detector"
    }

    fn ports(&self) -> Vec<(&'static str, Direction)> {
        vec![("objects", Direction::Out)]
    }

    fn on_tick(&mut self, ctx: &mut StubCtx<'_>) -> Result<(), BusError> {
        if self.every.due(ctx.now()) {
            let list = Value::list(ctx.world.objects.iter().map(|o| o.to_value()));
            ctx.write("objects", list)?;
        }
        Ok(())
    }
}

struct BucketDetector {
    every: Every,
}

impl Stub for BucketDetector {
    fn kind(&self) -> &'static str {
        "bucket_detector"
    }

    fn ports(&self) -> Vec<(&'static str, Direction)> {
        vec![("bucket", Direction::Out)]
    }

    fn on_tick(&mut self, ctx: &mut StubCtx<'_>) -> Result<(), BusError> {
        if self.every.due(ctx.now()) {
            let pos = pos_of(&ctx.world.bucket);
            ctx.write("bucket", pos)?;
        }
        Ok(())
    }
}

struct LookAround {
    every: Every,
    rng: ChaCha8Rng,
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

impl Stub for LookAround {
    fn kind(&self) -> &'static str {
        "look_around"
    }

    fn ports(&self) -> Vec<(&'static str, Direction)> {
        vec![("target", Direction::Out)]
    }

    fn on_tick(&mut self, ctx: &mut StubCtx<'_>) -> Result<(), BusError> {
        if self.every.due(ctx.now()) {
            let x = round3(self.rng.random_range(0.5..1.5));
            let y = round3(self.rng.random_range(-0.5..0.5));
            let z = round3(self.rng.random_range(0.0..0.5));
            ctx.write("target", Value::pos3(x, y, z))?;
        }
        Ok(())
    }
}

struct HeadControl;

impl Stub for HeadControl {
    fn kind(&self) -> &'static str {
        "head_control"
    }

    fn ports(&self) -> Vec<(&'static str, Direction)> {
        vec![("target", Direction::In)]
    }

    fn on_tick(&mut self, _: &mut StubCtx<'_>) -> Result<(), BusError> {
        Ok(())
    }

    fn on_message(&mut self, _port: &str, payload: &Value, ctx: &mut StubCtx<'_>) -> Result<(), BusError> {
        match payload.as_pos3() {
            Some(p) => ctx.action(Value::command("gaze", Some(pos_of(&p)))),
            None => ctx.action(Value::command("ignored", Some(payload.clone()))),
        }
        Ok(())
    }
}

struct Speak;

impl Stub for Speak {
    fn kind(&self) -> &'static str {
        "speak"
    }

    fn ports(&self) -> Vec<(&'static str, Direction)> {
        vec![("text", Direction::In)]
    }

    fn on_tick(&mut self, _: &mut StubCtx<'_>) -> Result<(), BusError> {
        Ok(())
    }

    fn on_message(&mut self, _port: &str, payload: &Value, ctx: &mut StubCtx<'_>) -> Result<(), BusError> {
        ctx.action(Value::command("say", Some(payload.clone())));
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ArmState {
    Idle,
    Taking { id: i64, until: VirtualTime },
    Holding,
    Putting { until: VirtualTime },
}

struct PickAndPlace {
    status: Every,
    take: Span,
    put: Span,
    state: ArmState,
}

fn verb(v: &Value) -> Option<&str> {
    v.as_list()?.first()?.as_str()
}

fn argument_pos(v: &Value) -> Option<[f64; 3]> {
    v.as_list()?.get(1)?.as_pos3()
}

impl PickAndPlace {
    fn progress(&mut self, ctx: &mut StubCtx<'_>) {
        let now = ctx.now();
        match self.state {
            ArmState::Taking { id, until } if now >= until => match ctx.world.pick(id) {
                Ok(()) => {
                    ctx.action(Value::command("taken", Some(Value::Int(id))));
                    self.state = ArmState::Holding;
                }
                Err(_) => {
                    ctx.action(Value::command("missed", Some(Value::Int(id))));
                    self.state = ArmState::Idle;
                }
            },
            ArmState::Putting { .. } if ctx.world.held.is_none() => {
                ctx.action(Value::command("dropped", None));
                self.state = ArmState::Idle;
            }
            ArmState::Putting { until } if now >= until => {
                if let Ok(id) = ctx.world.place() {
                    ctx.action(Value::command("placed", Some(Value::Int(id))));
                }
                self.state = ArmState::Idle;
            }
            _ => {}
        }
    }
}

impl Stub for PickAndPlace {
    fn kind(&self) -> &'static str {
        "pick_and_place"
    }

    fn ports(&self) -> Vec<(&'static str, Direction)> {
        vec![("cmd", Direction::In), ("status", Direction::Out)]
    }

    fn on_tick(&mut self, ctx: &mut StubCtx<'_>) -> Result<(), BusError> {
        self.progress(ctx);
        if self.status.due(ctx.now()) {
            let symbols: &[&str] = match self.state {
                ArmState::Idle => &["e_arm_idle"],
                ArmState::Holding => &["e_arm_idle", "e_taken"],
                ArmState::Putting { .. } => &["e_taken"],
                ArmState::Taking { .. } => &[],
            };
            for s in symbols {
                ctx.write("status", Value::str(*s))?;
            }
        }
        Ok(())
    }

    fn on_message(&mut self, _port: &str, payload: &Value, ctx: &mut StubCtx<'_>) -> Result<(), BusError> {
        let now = ctx.now();
        match (verb(payload), self.state) {
            (Some("take"), ArmState::Idle) => {
                let target = argument_pos(payload).and_then(|p| ctx.world.nearest(p)).map(|o| o.id);
                match target {
                    Some(id) => {
                        ctx.action(payload.clone());
                        self.state = ArmState::Taking { id, until: now + self.take };
                    }
                    None => ctx.action(Value::command("ignored", Some(payload.clone()))),
                }
            }
            (Some("put"), ArmState::Holding) => {
                ctx.action(payload.clone());
                self.state = ArmState::Putting { until: now + self.put };
            }
            _ => ctx.action(Value::command("ignored", Some(payload.clone()))),
        }
        Ok(())
    }
}

const PULL_STEPS: [&str; 4] = ["take_tool", "reach", "pull", "return_tool"];

#[derive(Debug, Clone, Copy, PartialEq)]
enum PullState {
    Idle,
    Pulling { id: i64, step: usize, until: VirtualTime },
}

struct PullObject {
    status: Every,
    step: Span,
    pull_to: f64,
    state: PullState,
}

impl PullObject {
    fn progress(&mut self, ctx: &mut StubCtx<'_>) {
        let now = ctx.now();
        while let PullState::Pulling { id, step, until } = self.state {
            if now < until {
                break;
            }
            self.state = if step + 1 == PULL_STEPS.len() {
                let pull_to = self.pull_to;
                let pulled = ctx.world.objects.iter_mut().find(|o| o.id == id).map(|obj| {
                    obj.dist = obj.dist.min(pull_to);
                    obj.dist
                });
                let mut report = vec![Value::str("pulled"), Value::Int(id)];
                report.extend(pulled.map(Value::Float));
                ctx.action(Value::list(report));
                PullState::Idle
            } else {
                ctx.action(Value::command("step", Some(Value::str(PULL_STEPS[step + 1]))));
                PullState::Pulling { id, step: step + 1, until: until + self.step }
            };
        }
    }
}

impl Stub for PullObject {
    fn kind(&self) -> &'static str {
        "pull_object"
    }

    fn ports(&self) -> Vec<(&'static str, Direction)> {
        vec![("cmd", Direction::In), ("status", Direction::Out)]
    }

    fn on_tick(&mut self, ctx: &mut StubCtx<'_>) -> Result<(), BusError> {
        self.progress(ctx);
        if self.status.due(ctx.now()) && self.state == PullState::Idle {
            ctx.write("status", Value::str("e_pull_idle"))?;
        }
        Ok(())
    }

    fn on_message(&mut self, _port: &str, payload: &Value, ctx: &mut StubCtx<'_>) -> Result<(), BusError> {
        let now = ctx.now();
        match (verb(payload), self.state) {
            (Some("pull"), PullState::Idle) => {
                let target = argument_pos(payload).and_then(|p| ctx.world.nearest(p)).map(|o| o.id);
                match target {
                    Some(id) => {
                        ctx.action(payload.clone());
                        ctx.action(Value::command("step", Some(Value::str(PULL_STEPS[0]))));
                        self.state = PullState::Pulling { id, step: 0, until: now + self.step };
                    }
                    None => ctx.action(Value::command("ignored", Some(payload.clone()))),
                }
            }
            (Some("cancel"), PullState::Pulling { .. }) => {
                ctx.action(payload.clone());
                self.state = PullState::Idle;
            }
            _ => ctx.action(Value::command("ignored", Some(payload.clone()))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{step_world, WorldEvent};
    use portkit::EventKind;

    fn setup(kind: &str, module: &str) -> (Bus, WorldModel, Box<dyn Stub>) {
        let stub = build_stub(kind, StubOptions::default(), 7).unwrap();
        let mut bus = Bus::default();
        for (port, dir) in stub.ports() {
            bus.add_port(PortId::new(module, port, dir)).unwrap();
        }
        (bus, WorldModel::new(0.4, 0.8).unwrap(), stub)
    }

    fn actions(bus: &Bus) -> Vec<String> {
        bus.log()
            .entries()
            .iter()
            .filter(|e| e.kind == EventKind::Action)
            .map(|e| format!("{} {}", e.time, e.detail))
            .collect()
    }

    #[test]
    fn every_fires_on_period_multiples() {
        let mut e = Every::new(0.5, 0.0);
        let fired: Vec<u64> = (0..=20)
            .filter(|k| e.due(VirtualTime::from_nanos(k * 50_000_000)))
            .collect();
        assert_eq!(fired, [0, 10, 20]);
    }

    #[test]
    fn unknown_kind_and_options_are_refused() {
        assert!(build_stub("juggler", StubOptions::default(), 0).is_err());
        let opts = StubOptions::new([("speed".to_string(), "2".to_string())].into());
        assert!(build_stub("head_control", opts, 0).is_err());
        let opts = StubOptions::new([("period".to_string(), "-1".to_string())].into());
        assert!(build_stub("face_detector", opts, 0).is_err());
    }

    #[test]
    fn pick_and_place_cycle() {
        let (mut bus, mut world, mut arm) = setup("pick_and_place", "PickAndPlace");
        world = step_world(&world, &WorldEvent::Add { id: 1, dist: 0.3, y: 0.0 }).unwrap();
        let take = Value::command("take", Some(Value::pos3(0.3, 0.0, 0.0)));
        let put = Value::command("put", Some(Value::pos3(0.3, -0.3, 0.0)));
        let mut ctx = StubCtx { bus: &mut bus, world: &mut world, module: "PickAndPlace" };
        arm.on_message("cmd", &put, &mut ctx).unwrap();
        arm.on_message("cmd", &take, &mut ctx).unwrap();
        arm.on_message("cmd", &take, &mut ctx).unwrap();
        ctx.bus.advance(1.5).unwrap();
        arm.on_tick(&mut ctx).unwrap();
        assert!(ctx.world.objects.is_empty());
        arm.on_message("cmd", &put, &mut ctx).unwrap();
        ctx.bus.advance(1.5).unwrap();
        arm.on_tick(&mut ctx).unwrap();
        assert!(world.is_clear());
        assert_eq!(world.binned, [1]);
        assert_eq!(
            actions(&bus),
            [
                "0.000 (\"ignored\" (\"put\" (0.3 -0.3 0.0)))",
                "0.000 (\"take\" (0.3 0.0 0.0))",
                "0.000 (\"ignored\" (\"take\" (0.3 0.0 0.0)))",
                "1.500 (\"taken\" 1)",
                "1.500 (\"put\" (0.3 -0.3 0.0))",
                "3.000 (\"placed\" 1)",
            ]
        );
    }

    #[test]
    fn drop_during_put_returns_to_idle() {
        let (mut bus, mut world, mut arm) = setup("pick_and_place", "PickAndPlace");
        world = step_world(&world, &WorldEvent::Add { id: 1, dist: 0.3, y: 0.0 }).unwrap();
        let mut ctx = StubCtx { bus: &mut bus, world: &mut world, module: "PickAndPlace" };
        arm.on_message("cmd", &Value::command("take", Some(Value::pos3(0.3, 0.0, 0.0))), &mut ctx).unwrap();
        ctx.bus.advance(1.5).unwrap();
        arm.on_tick(&mut ctx).unwrap();
        arm.on_message("cmd", &Value::command("put", Some(Value::pos3(0.3, -0.3, 0.0))), &mut ctx).unwrap();
        ctx.bus.advance(0.5).unwrap();
        *ctx.world = step_world(ctx.world, &WorldEvent::Drop { dist: 0.25 }).unwrap();
        arm.on_tick(&mut ctx).unwrap();
        assert_eq!(ctx.world.object(1).unwrap().dist, 0.25);
        assert!(actions(&bus).last().unwrap().ends_with("(\"dropped\")"));
    }

    #[test]
    fn pull_moves_object_within_reach() {
        let (mut bus, mut world, mut pull) = setup("pull_object", "PullObject");
        world = step_world(&world, &WorldEvent::Add { id: 2, dist: 0.6, y: 0.0 }).unwrap();
        let mut ctx = StubCtx { bus: &mut bus, world: &mut world, module: "PullObject" };
        let cmd = Value::command("pull", Some(Value::pos3(0.6, 0.0, 0.0)));
        pull.on_message("cmd", &cmd, &mut ctx).unwrap();
        pull.on_message("cmd", &cmd, &mut ctx).unwrap();
        ctx.bus.advance(4.0).unwrap();
        pull.on_tick(&mut ctx).unwrap();
        assert_eq!(world.object(2).unwrap().dist, 0.3);
        let log = actions(&bus);
        assert_eq!(log[2], "0.000 (\"ignored\" (\"pull\" (0.6 0.0 0.0)))");
        assert_eq!(log.last().unwrap(), "4.000 (\"pulled\" 2 0.3)");
    }

    #[test]
    fn cancel_stops_pulling() {
        let (mut bus, mut world, mut pull) = setup("pull_object", "PullObject");
        world = step_world(&world, &WorldEvent::Add { id: 2, dist: 0.6, y: 0.0 }).unwrap();
        let mut ctx = StubCtx { bus: &mut bus, world: &mut world, module: "PullObject" };
        pull.on_message("cmd", &Value::command("pull", Some(Value::pos3(0.6, 0.0, 0.0))), &mut ctx).unwrap();
        ctx.bus.advance(1.2).unwrap();
        pull.on_tick(&mut ctx).unwrap();
        pull.on_message("cmd", &Value::command("cancel", None), &mut ctx).unwrap();
        ctx.bus.advance(5.0).unwrap();
        pull.on_tick(&mut ctx).unwrap();
        assert_eq!(world.object(2).unwrap().dist, 0.6);
    }

    #[test]
    fn look_around_is_seeded() {
        let run = |seed| {
            let mut stub = build_stub("look_around", StubOptions::default(), seed).unwrap();
            let mut bus = Bus::default();
            bus.add_port(PortId::output("LookAround", "target")).unwrap();
            bus.add_port(PortId::input("HeadControl", "target")).unwrap();
            bus.connect(&PortId::output("LookAround", "target"), &PortId::input("HeadControl", "target"), None)
                .unwrap();
            let mut world = WorldModel::new(0.4, 0.8).unwrap();
            let mut out = Vec::new();
            for _ in 0..5 {
                let mut ctx = StubCtx { bus: &mut bus, world: &mut world, module: "LookAround" };
                stub.on_tick(&mut ctx).unwrap();
                ctx.bus.advance(0.5).unwrap();
                out.extend(bus.next_delivery().map(|(_, m)| m.payload));
            }
            out
        };
        assert_eq!(run(1).len(), 5);
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }
}
