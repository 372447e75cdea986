//! Builds a bus, stubs and monitors from a manifest and runs it on a
//! fixed-tick virtual clock.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use portkit::{
    compile, load_monitor, ActionLog, Bus, BusError, DslError, Monitor, MonitorRegistry, PortId, Span,
    Violation, VirtualTime,
};

use crate::manifest::{Manifest, ManifestError, Mode, MonitorRef, WorldDecl};
use crate::stubs::{build_stub, Stub, StubCtx, StubOptions};
use crate::world::{step_world, WorldError, WorldModel};

pub const DEFAULT_TICK: f64 = 0.05;
pub const DEFAULT_DURATION: f64 = 60.0;
pub const DEFAULT_SEED: u64 = 0;

/// Parameter values used when a manifest does not set them.
pub fn default_params() -> BTreeMap<String, f64> {
    [
        ("HAND_REACHABLE", 0.4),
        ("TOOL_REACHABLE", 0.8),
        ("DESIRED_TIME", 5.0),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v))
    .collect()
}

/// Registry with the plug-ins every run can name via `monitor=native:`.
pub fn default_registry() -> MonitorRegistry {
    struct Pass;
    impl Monitor for Pass {}
    let mut reg = MonitorRegistry::new();
    reg.register("pass", || Box::new(Pass));
    reg
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{file}:{line}: module `{name}`: {reason}")]
    Module { file: String, line: usize, name: String, reason: String },
    #[error("{file}:{line}: {reason}")]
    Wiring { file: String, line: usize, reason: String },
    #[error("{file}: {source}")]
    Monitor { file: String, source: DslError },
    #[error("{file}:{line}: world event: {source}")]
    World { file: String, line: usize, source: WorldError },
    #[error("bus failure during run: {0}")]
    Runtime(BusError),
    #[error("strict mode: inconsistent rules\n{0}")]
    Inconsistent(AuditReport),
}

impl SimError {
    /// Configuration problems as opposed to failures while running.
    pub fn is_config_error(&self) -> bool {
        !matches!(self, SimError::Runtime(_) | SimError::Inconsistent(_) | SimError::World { .. })
    }
}

/// Pairs of connections into the same port that can both deliver.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuditReport {
    pub findings: Vec<(PortId, Violation)>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.findings.is_empty() {
            return writeln!(f, "consistency: OK");
        }
        for (port, v) in &self.findings {
            writeln!(f, "warning: {port}: {v}")?;
        }
        Ok(())
    }
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: ActionLog,
    pub world: WorldModel,
    pub audit: AuditReport,
}

pub struct Simulation {
    bus: Bus,
    world: WorldModel,
    stubs: Vec<(String, Box<dyn Stub>)>,
    index: BTreeMap<String, usize>,
    script: Vec<WorldDecl>,
    applied: usize,
    tick: Span,
    audit: AuditReport,
    source: String,
}

impl fmt::Debug for Simulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Simulation")
            .field("source", &self.source)
            .field("now", &self.bus.now())
            .field("modules", &self.index.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Simulation {
    /// Builds everything and, in strict mode, refuses inconsistent rules.
    pub fn build(manifest: &Manifest, seed: u64, registry: &MonitorRegistry) -> Result<Simulation, SimError> {
        let sim = Simulation::assemble(manifest, seed, registry)?;
        if manifest.mode == Mode::Strict && !sim.audit.is_clean() {
            return Err(SimError::Inconsistent(sim.audit));
        }
        Ok(sim)
    }

    /// Builds everything and records the consistency audit without acting
    /// on it.
    pub fn assemble(manifest: &Manifest, seed: u64, registry: &MonitorRegistry) -> Result<Simulation, SimError> {
        let file = manifest.source.clone();
        let mut params = default_params();
        params.extend(manifest.params.iter().map(|(k, v)| (k.clone(), *v)));
        let world = WorldModel::new(params["HAND_REACHABLE"], params["TOOL_REACHABLE"]).map_err(|e| {
            SimError::Wiring {
                file: file.clone(),
                line: 0,
                reason: e.to_string(),
            }
        })?;

        let mut bus = Bus::default();
        let mut stubs = Vec::new();
        let mut index = BTreeMap::new();
        for decl in &manifest.modules {
            let stub = build_stub(&decl.kind, StubOptions::new(decl.options.clone()), seed).map_err(|reason| {
                SimError::Module {
                    file: file.clone(),
                    line: decl.line,
                    name: decl.name.clone(),
                    reason,
                }
            })?;
            for (port, dir) in stub.ports() {
                bus.add_port(PortId::new(&decl.name, port, dir))
                    .expect("module names are unique");
            }
            index.insert(decl.name.clone(), stubs.len());
            stubs.push((decl.name.clone(), stub));
        }

        for c in &manifest.connections {
            let wiring = |reason: String| SimError::Wiring {
                file: file.clone(),
                line: c.line,
                reason,
            };
            for ep in [&c.src, &c.dst] {
                if !index.contains_key(&ep.module) {
                    return Err(wiring(format!("unknown module `{}`", ep.module)));
                }
            }
            let monitor: Option<Box<dyn Monitor>> = match &c.monitor {
                None => None,
                Some(MonitorRef::Native(name)) => Some(
                    registry
                        .create(name)
                        .ok_or_else(|| wiring(format!("no native monitor named `{name}`")))?,
                ),
                Some(MonitorRef::File(path)) => {
                    let to_err = |source| SimError::Monitor {
                        file: path.display().to_string(),
                        source,
                    };
                    let spec = load_monitor(path, &params).map_err(to_err)?;
                    Some(Box::new(compile(&spec).map_err(to_err)?))
                }
            };
            let src = PortId::output(&c.src.module, &c.src.port);
            let dst = PortId::input(&c.dst.module, &c.dst.port);
            let result = match &c.label {
                Some(label) => bus.connect_labeled(label, &src, &dst, monitor),
                None => bus.connect(&src, &dst, monitor),
            };
            result.map_err(|e| wiring(e.to_string()))?;
        }

        let findings = bus
            .audit()
            .map_err(|e| SimError::Wiring {
                file: file.clone(),
                line: 0,
                reason: e.to_string(),
            })?
            .into_iter()
            .flat_map(|(port, vs)| vs.into_iter().map(move |v| (port.clone(), v)))
            .collect();

        let mut script = manifest.world.clone();
        script.sort_by(|a, b| a.at.total_cmp(&b.at));

        Ok(Simulation {
            bus,
            world,
            stubs,
            index,
            script,
            applied: 0,
            tick: Span::from_secs(DEFAULT_TICK),
            audit: AuditReport { findings },
            source: file,
        })
    }

    pub fn audit(&self) -> &AuditReport {
        &self.audit
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn world(&self) -> &WorldModel {
        &self.world
    }

    pub fn set_tick(&mut self, tick: f64) {
        self.tick = Span::from_secs(tick);
    }

    /// One scheduler step at `t`: clock (expiry and trigs), due world
    /// events, stub ticks in manifest order, then deliveries until the
    /// queue is empty.
    pub fn step_to(&mut self, t: VirtualTime) -> Result<(), SimError> {
        self.bus.advance_to(t);
        while let Some(decl) = self.script.get(self.applied) {
            if VirtualTime::from_secs(decl.at) > t {
                break;
            }
            self.world = step_world(&self.world, &decl.event).map_err(|source| SimError::World {
                file: self.source.clone(),
                line: decl.line,
                source,
            })?;
            self.bus.log_action("world", &decl.event.to_value());
            self.applied += 1;
        }
        for (name, stub) in &mut self.stubs {
            let mut ctx = StubCtx {
                bus: &mut self.bus,
                world: &mut self.world,
                module: name,
            };
            stub.on_tick(&mut ctx).map_err(SimError::Runtime)?;
        }
        while let Some((port, msg)) = self.bus.next_delivery() {
            let Some(&i) = self.index.get(&port.module) else {
                continue;
            };
            let (name, stub) = &mut self.stubs[i];
            let mut ctx = StubCtx {
                bus: &mut self.bus,
                world: &mut self.world,
                module: name,
            };
            stub.on_message(&port.port, &msg.payload, &mut ctx)
                .map_err(SimError::Runtime)?;
        }
        Ok(())
    }

    /// Runs ticks at `0, tick, 2·tick, ...` up to and including `duration`.
    pub fn run(mut self, duration: f64) -> Result<RunOutcome, SimError> {
        let end = VirtualTime::from_secs(duration).as_nanos();
        let step = self.tick.as_nanos().max(1);
        for k in 0..=end / step {
            self.step_to(VirtualTime::from_nanos(k * step))?;
        }
        Ok(RunOutcome {
            log: self.bus.take_log(),
            world: self.world,
            audit: self.audit,
        })
    }
}

/// Loads a manifest and runs it. `duration` and `seed` fall back to the
/// manifest's values, then to the crate defaults.
pub fn run_scenario(path: &Path, duration: Option<f64>, seed: Option<u64>) -> Result<RunOutcome, SimError> {
    let manifest = Manifest::load(path)?;
    let duration = duration.or(manifest.duration).unwrap_or(DEFAULT_DURATION);
    let seed = seed.or(manifest.seed).unwrap_or(DEFAULT_SEED);
    Simulation::build(&manifest, seed, &default_registry())?.run(duration)
}
