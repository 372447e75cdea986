use std::collections::BTreeMap;
use std::fmt;

use super::{DslError, MonitorSpec, Stage};
use crate::clock::{Span, VirtualTime};
use crate::monitor::{CallbackFault, HostApi, Monitor};
use crate::value::Value;

/// Checks the structural rules and builds a plug-in instance.
pub fn compile(spec: &MonitorSpec) -> Result<CompiledMonitor, DslError> {
    if spec.stages.is_empty() && spec.constraint.is_none() && spec.trig.is_none() {
        return Err(DslError::Compile("empty monitor".into()));
    }
    let mut seen_select = false;
    let mut seen_transform = false;
    for stage in &spec.stages {
        if stage.is_transform() {
            seen_transform = true;
        } else if seen_transform {
            return Err(DslError::Compile(format!(
                "`{}` cannot follow a transform stage",
                stage.name()
            )));
        }
        let uses_item = match stage {
            Stage::Transform(t) => t.uses_item(),
            Stage::TransformIf { then, otherwise, .. } => then.uses_item() || otherwise.uses_item(),
            _ => false,
        };
        if uses_item && !seen_select {
            return Err(DslError::Compile(format!(
                "`{stage}` refers to $item but no select_closest precedes it"
            )));
        }
        if matches!(stage, Stage::SelectClosest { .. }) {
            seen_select = true;
        }
    }
    if let Some(trig) = &spec.trig {
        if !(trig.period > 0.0 && trig.period.is_finite()) {
            return Err(DslError::Compile(format!("trig period {} is not positive", trig.period)));
        }
        if let Some(bad) = trig
            .stages
            .iter()
            .find(|s| !matches!(s, Stage::EmitEvent { .. } | Stage::RetractEvent { .. }))
        {
            return Err(DslError::Compile(format!(
                "`{}` is not allowed in a trig block",
                bad.name()
            )));
        }
    }
    let split = spec
        .stages
        .iter()
        .position(Stage::is_transform)
        .unwrap_or(spec.stages.len());
    Ok(CompiledMonitor {
        spec: spec.clone(),
        split,
        item: None,
        last_pass: vec![None; spec.stages.len()],
    })
}

/// Plug-in produced by [`compile`]. Stages before the first transform run
/// in `accept`, transforms run in `update`, the trig block in `trig`.
#[derive(Debug, Clone)]
pub struct CompiledMonitor {
    spec: MonitorSpec,
    split: usize,
    item: Option<Value>,
    last_pass: Vec<Option<VirtualTime>>,
}

impl CompiledMonitor {
    pub fn spec(&self) -> &MonitorSpec {
        &self.spec
    }
}

fn resolve_f64(path: &crate::value::Path, item: &Value) -> Option<f64> {
    path.resolve(item).and_then(Value::as_f64)
}

impl Monitor for CompiledMonitor {
    fn create(&mut self, host: &mut dyn HostApi) -> Result<bool, CallbackFault> {
        if let Some(rule) = &self.spec.constraint {
            host.set_constraint(&rule.to_string())?;
        }
        Ok(true)
    }

    fn accept(&mut self, data: &Value, host: &mut dyn HostApi) -> Result<bool, CallbackFault> {
        let mut item = data.clone();
        let mut outcome = true;
        for (i, stage) in self.spec.stages[..self.split].iter().enumerate() {
            let pass = match stage {
                Stage::Filter { path, cmp, value } => {
                    path.resolve(&item).is_some_and(|v| cmp.test(v, value))
                }
                Stage::SelectClosest { list, dist } => {
                    let closest = list.resolve(&item).and_then(Value::as_list).and_then(|xs| {
                        xs.iter()
                            .filter_map(|x| resolve_f64(dist, x).map(|d| (d, x)))
                            .fold(None, |best: Option<(f64, &Value)>, (d, x)| match best {
                                Some((bd, _)) if bd <= d => best,
                                _ => Some((d, x)),
                            })
                            .map(|(_, x)| x.clone())
                    });
                    match closest {
                        Some(x) => {
                            item = x;
                            true
                        }
                        None => false,
                    }
                }
                Stage::Range { path, lo, hi } => {
                    resolve_f64(path, &item).is_some_and(|v| *lo <= v && v < *hi)
                }
                Stage::EmitEvent { name, ttl } => {
                    host.set_event(name, *ttl)?;
                    true
                }
                Stage::RetractEvent { name } => {
                    host.unset_event(name);
                    true
                }
                Stage::EventIf { path, cmp, threshold, set, unset } => {
                    let hit = resolve_f64(path, &item)
                        .is_some_and(|v| cmp.test(&Value::Float(v), &Value::Float(*threshold)));
                    if hit {
                        host.set_event(set, None)?;
                    } else {
                        host.unset_event(unset);
                    }
                    true
                }
                Stage::ForwardStatus { ttl } => {
                    if let Some(status) = item.first_str() {
                        host.set_event(status, *ttl)?;
                    }
                    false
                }
                Stage::RateLimit { period } => {
                    let now = host.now();
                    let ready = self.last_pass[i]
                        .is_none_or(|last| now.saturating_sub(last) >= Span::from_secs(*period));
                    if ready {
                        self.last_pass[i] = Some(now);
                    }
                    ready
                }
                Stage::Accept => break,
                Stage::Reject => false,
                Stage::Transform(_) | Stage::TransformIf { .. } => unreachable!("split precedes transforms"),
            };
            if !pass {
                outcome = false;
                break;
            }
        }
        self.item = outcome.then_some(item);
        Ok(outcome)
    }

    fn update(&mut self, data: Value, _host: &mut dyn HostApi) -> Result<Value, CallbackFault> {
        let item = self.item.take().unwrap_or_else(|| data.clone());
        let mut payload = data;
        for stage in &self.spec.stages[self.split..] {
            let template = match stage {
                Stage::Transform(t) => t,
                Stage::TransformIf { path, cmp, threshold, then, otherwise } => {
                    let hit = resolve_f64(path, &item)
                        .is_some_and(|v| cmp.test(&Value::Float(v), &Value::Float(*threshold)));
                    if hit {
                        then
                    } else {
                        otherwise
                    }
                }
                _ => unreachable!("only transforms follow the split"),
            };
            payload = template
                .render(&item, &payload)
                .ok_or_else(|| CallbackFault::new(format!("template {template} does not apply")))?;
        }
        Ok(payload)
    }

    fn trig(&mut self, host: &mut dyn HostApi) -> Result<(), CallbackFault> {
        if let Some(trig) = &self.spec.trig {
            for stage in &trig.stages {
                match stage {
                    Stage::EmitEvent { name, ttl } => host.set_event(name, *ttl)?,
                    Stage::RetractEvent { name } => {
                        host.unset_event(name);
                    }
                    _ => unreachable!("checked by compile"),
                }
            }
        }
        Ok(())
    }

    fn trig_period(&self) -> Option<f64> {
        self.spec.trig.as_ref().map(|t| t.period)
    }
}

type Factory = Box<dyn Fn() -> Box<dyn Monitor> + Send + Sync>;

/// Hand-written plug-ins addressable by name.
#[derive(Default)]
pub struct MonitorRegistry {
    factories: BTreeMap<String, Factory>,
}

impl fmt::Debug for MonitorRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.factories.keys()).finish()
    }
}

impl MonitorRegistry {
    pub fn new() -> Self {
        MonitorRegistry::default()
    }

    /// Registers `factory` under `name`, replacing any earlier entry.
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn() -> Box<dyn Monitor> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_owned(), Box::new(factory));
    }

    pub fn create(&self, name: &str) -> Option<Box<dyn Monitor>> {
        self.factories.get(name).map(|f| f())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_monitor_spec;
    use crate::monitor::testing::RecordingHost;
    use proptest::prelude::*;

    fn build(text: &str) -> CompiledMonitor {
        compile(&parse_monitor_spec(text).unwrap()).unwrap()
    }

    fn object(id: i64, dist: f64) -> Value {
        Value::record([
            ("id", Value::Int(id)),
            ("dist", Value::Float(dist)),
            ("pos", Value::pos3(dist, 0.0, 0.0)),
        ])
    }

    /// Runs accept and, when it passes, update.
    fn run(m: &mut CompiledMonitor, host: &mut RecordingHost, data: Value) -> Option<Value> {
        if m.accept(&data, host).unwrap() {
            Some(m.update(data, host).unwrap())
        } else {
            None
        }
    }

    #[test]
    fn confidence_filter() {
        let mut m = build("filter .certainty >= 0.8\nemit_event e_face_detected ttl 1.0");
        let mut host = RecordingHost::new();
        let face = |c: f64| Value::record([("pos", Value::pos3(1.0, 0.0, 0.0)), ("certainty", Value::Float(c))]);
        assert_eq!(run(&mut m, &mut host, face(0.79)), None);
        assert!(host.events.is_empty());
        assert_eq!(run(&mut m, &mut host, face(0.8)), Some(face(0.8)));
        assert_eq!(host.events.get("e_face_detected"), Some(&Some(1.0)));
    }

    #[test]
    fn take_closest_reachable() {
        let mut m = build(
            "constraint: not e_taken and e_arm_idle\nselect_closest . .dist\nrange .dist 0 0.4\ntransform (\"take\" $item.pos)",
        );
        let mut host = RecordingHost::new();
        assert!(m.create(&mut host).unwrap());
        assert_eq!(host.constraint.as_deref(), Some("not e_taken and e_arm_idle"));
        let objs = Value::list([object(1, 0.6), object(2, 0.3), object(3, 0.3)]);
        assert_eq!(
            run(&mut m, &mut host, objs),
            Some(Value::command("take", Some(Value::pos3(0.3, 0.0, 0.0))))
        );
        assert_eq!(run(&mut m, &mut host, Value::list([object(1, 0.4)])), None);
        assert_eq!(run(&mut m, &mut host, Value::list([])), None);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let mut m = build("select_closest . .dist\ntransform $item.id");
        let mut host = RecordingHost::new();
        let objs = Value::list([object(7, 0.5), object(4, 0.2), object(9, 0.2)]);
        assert_eq!(run(&mut m, &mut host, objs), Some(Value::Int(4)));
    }

    #[test]
    fn pull_or_cancel() {
        let mut m = build(
            "select_closest . .dist\nfilter .dist <= 0.8\nevent_if .dist < 0.4 set e_object_near else unset e_object_near\ntransform_if .dist < 0.4 (\"cancel\") else (\"pull\" $item.pos)",
        );
        let mut host = RecordingHost::new();
        assert_eq!(
            run(&mut m, &mut host, Value::list([object(1, 0.6)])),
            Some(Value::command("pull", Some(Value::pos3(0.6, 0.0, 0.0))))
        );
        assert!(!host.events.contains_key("e_object_near"));
        assert_eq!(
            run(&mut m, &mut host, Value::list([object(1, 0.35)])),
            Some(Value::command("cancel", None))
        );
        assert_eq!(host.events.get("e_object_near"), Some(&None));
        assert_eq!(run(&mut m, &mut host, Value::list([object(1, 1.2)])), None);
    }

    #[test]
    fn unreachable_flag_never_delivers() {
        let mut m = build(
            "select_closest . .dist\nevent_if .dist >= 0.8 set e_unreachable else unset e_unreachable\nreject",
        );
        let mut host = RecordingHost::new();
        assert_eq!(run(&mut m, &mut host, Value::list([object(3, 1.2)])), None);
        assert_eq!(host.events.get("e_unreachable"), Some(&None));
        assert_eq!(run(&mut m, &mut host, Value::list([object(3, 0.35)])), None);
        assert!(!host.events.contains_key("e_unreachable"));
        assert_eq!(run(&mut m, &mut host, Value::list([])), None);
    }

    #[test]
    fn status_is_forwarded_then_dropped() {
        let mut m = build("forward_status ttl 0.5");
        let mut host = RecordingHost::new();
        assert_eq!(run(&mut m, &mut host, Value::str("e_arm_idle")), None);
        assert_eq!(host.events.get("e_arm_idle"), Some(&Some(0.5)));
        assert!(m.accept(&Value::str("bad symbol"), &mut host).is_err());
    }

    #[test]
    fn accept_short_circuits_remaining_checks() {
        let mut m = build("accept\nreject");
        let mut host = RecordingHost::new();
        assert_eq!(run(&mut m, &mut host, Value::Int(1)), Some(Value::Int(1)));
    }

    #[test]
    fn speech_template_replaces_payload() {
        let mut m = build("rate_limit 5.0\ntransform \"Please put the object closer!\"");
        let mut host = RecordingHost::new();
        assert_eq!(
            run(&mut m, &mut host, Value::Int(0)),
            Some(Value::str("Please put the object closer!"))
        );
        host.now = VirtualTime::from_secs(4.9);
        assert_eq!(run(&mut m, &mut host, Value::Int(0)), None);
        host.now = VirtualTime::from_secs(5.0);
        assert!(run(&mut m, &mut host, Value::Int(0)).is_some());
    }

    #[test]
    fn trig_block_runs_events() {
        let mut m = build("reject\ntrig 0.5:\n    emit_event e_alive ttl 1.0\n    retract_event e_stale");
        let mut host = RecordingHost::new();
        assert_eq!(m.trig_period(), Some(0.5));
        m.trig(&mut host).unwrap();
        assert_eq!(host.events.get("e_alive"), Some(&Some(1.0)));
    }

    #[test]
    fn compile_rejects_bad_shapes() {
        let bad = [
            "transform $item.pos",
            "transform 1\nfilter .x > 0",
            "reject\ntrig 1.0:\n    reject",
        ];
        for text in bad {
            let spec = parse_monitor_spec(text).unwrap();
            assert!(matches!(compile(&spec), Err(DslError::Compile(_))), "{text}");
        }
        assert!(compile(&MonitorSpec::default()).is_err());
    }

    #[test]
    fn stage_order_changes_the_tested_element() {
        let objs = Value::list([object(1, 0.9), object(2, 0.2)]);
        let mut host = RecordingHost::new();
        let mut filter_first = build("filter .0.dist < 0.5\nselect_closest . .dist");
        let mut select_first = build("select_closest . .dist\nfilter .dist < 0.5");
        assert_eq!(run(&mut filter_first, &mut host, objs.clone()), None);
        assert_eq!(run(&mut select_first, &mut host, objs.clone()), Some(objs));
    }

    #[test]
    fn registry_builds_named_plugins() {
        let mut reg = MonitorRegistry::new();
        reg.register("reject_all", || Box::new(build("reject")));
        assert!(reg.create("reject_all").is_some());
        assert!(reg.create("missing").is_none());
        assert_eq!(reg.names().collect::<Vec<_>>(), ["reject_all"]);
    }

    proptest! {
        #[test]
        fn rate_limited_passes_are_spaced(gaps in prop::collection::vec(0u64..3_000, 1..80), period_ms in 1u64..2_000) {
            let period = period_ms as f64 / 1000.0;
            let mut m = build(&format!("rate_limit {period:?}"));
            let mut host = RecordingHost::new();
            let mut passes = Vec::new();
            let mut t = 0u64;
            for g in gaps {
                t += g;
                host.now = VirtualTime::from_nanos(t * 1_000_000);
                if m.accept(&Value::Int(0), &mut host).unwrap() {
                    passes.push(t);
                }
            }
            prop_assert!(!passes.is_empty());
            for w in passes.windows(2) {
                prop_assert!(w[1] - w[0] >= period_ms);
            }
        }

        #[test]
        fn reprinted_spec_behaves_the_same(dists in prop::collection::vec(prop::collection::vec(0u32..150, 0..4), 1..20)) {
            let text = "constraint: not e_taken\nselect_closest . .dist\nevent_if .dist >= 0.8 set e_far else unset e_far\nrange .dist 0.0 1.0\ntransform_if .dist < 0.4 (\"cancel\") else (\"pull\" $item.pos $payload.0.id)";
            let spec = parse_monitor_spec(text).unwrap();
            let reparsed = parse_monitor_spec(&spec.to_string()).unwrap();
            let mut a = compile(&spec).unwrap();
            let mut b = compile(&reparsed).unwrap();
            let mut ha = RecordingHost::new();
            let mut hb = RecordingHost::new();
            for (k, batch) in dists.iter().enumerate() {
                let payload = Value::list(batch.iter().enumerate().map(|(i, d)| object(i as i64 + k as i64, *d as f64 / 100.0)));
                prop_assert_eq!(run(&mut a, &mut ha, payload.clone()), run(&mut b, &mut hb, payload));
                prop_assert_eq!(&ha.events, &hb.events);
            }
        }
    }
}
