//! Deterministic table-cleaning scenarios for the portkit runtime: a world
//! model, stub robot modules, a manifest format and a fixed-tick runner.

pub mod manifest;
pub mod scenario;
pub mod stubs;
pub mod world;

pub use manifest::{Manifest, ManifestError, Mode, MonitorRef};
pub use scenario::{
    default_params, default_registry, run_scenario, AuditReport, RunOutcome, SimError, Simulation,
    DEFAULT_DURATION, DEFAULT_SEED, DEFAULT_TICK,
};
pub use stubs::{build_stub, Stub, StubCtx, StubOptions};
pub use world::{step_world, Object, WorldError, WorldEvent, WorldModel};
