//! Declarative monitor definitions loaded at run time.
//!
//! A definition is a list of stages, an optional rule and an optional trig
//! block:
//!
//! ```text
//! constraint: not e_taken and e_arm_idle
//! select_closest . .dist
//! range .dist 0 $HAND_REACHABLE
//! transform ("take" $item.pos)
//! ```
//!
//! [`parse_monitor_spec`] reads the text form, `Display` prints it back, and
//! [`compile`] turns a spec into a [`Monitor`](crate::monitor::Monitor).

mod compile;
mod parse;

use std::fmt;

use thiserror::Error;

use crate::constraint::{ConstraintError, ConstraintExpr};
use crate::value::{format_float, Path, Value};

pub use compile::{compile, CompiledMonitor, MonitorRegistry};
pub use parse::{load_monitor, parse_monitor_spec, substitute_params};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DslError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: unknown stage `{name}`")]
    UnknownStage { line: usize, name: String },
    #[error("line {line}: `{path}` is not a valid path")]
    BadPath { line: usize, path: String },
    #[error("line {line}: {source}")]
    Constraint { line: usize, source: ConstraintError },
    #[error("cannot compile monitor: {0}")]
    Compile(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parameter `${0}` has no value")]
    UnboundParameter(String),
}

/// Comparison operator used by predicate stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl Cmp {
    pub fn parse(text: &str) -> Option<Cmp> {
        Some(match text {
            "<" => Cmp::Lt,
            "<=" => Cmp::Le,
            ">" => Cmp::Gt,
            ">=" => Cmp::Ge,
            "==" => Cmp::Eq,
            "!=" => Cmp::Ne,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
            Cmp::Eq => "==",
            Cmp::Ne => "!=",
        }
    }

    fn holds<T: PartialOrd>(self, a: T, b: T) -> bool {
        match self {
            Cmp::Lt => a < b,
            Cmp::Le => a <= b,
            Cmp::Gt => a > b,
            Cmp::Ge => a >= b,
            Cmp::Eq => a == b,
            Cmp::Ne => a != b,
        }
    }

    /// Numbers compare numerically and strings lexically; anything else,
    /// including mixed kinds, does not satisfy the predicate.
    pub fn test(self, lhs: &Value, rhs: &Value) -> bool {
        match (lhs, rhs) {
            (Value::Str(a), Value::Str(b)) => self.holds(a, b),
            _ => match (lhs.as_f64(), rhs.as_f64()) {
                (Some(a), Some(b)) => self.holds(a, b),
                _ => false,
            },
        }
    }
}

impl fmt::Display for Cmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Value skeleton with placeholders for the bound item and the payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Template {
    Lit(Value),
    Item(Path),
    Payload(Path),
    List(Vec<Template>),
}

impl Template {
    pub fn uses_item(&self) -> bool {
        match self {
            Template::Item(_) => true,
            Template::List(items) => items.iter().any(Template::uses_item),
            _ => false,
        }
    }

    /// Fills in the placeholders. `None` when a placeholder path does not
    /// resolve.
    pub fn render(&self, item: &Value, payload: &Value) -> Option<Value> {
        match self {
            Template::Lit(v) => Some(v.clone()),
            Template::Item(p) => p.resolve(item).cloned(),
            Template::Payload(p) => p.resolve(payload).cloned(),
            Template::List(items) => items
                .iter()
                .map(|t| t.render(item, payload))
                .collect::<Option<Vec<_>>>()
                .map(Value::List),
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn placeholder(f: &mut fmt::Formatter<'_>, name: &str, p: &Path) -> fmt::Result {
            if p.0.is_empty() {
                write!(f, "${name}")
            } else {
                write!(f, "${name}{p}")
            }
        }
        match self {
            Template::Lit(v) => write!(f, "{v}"),
            Template::Item(p) => placeholder(f, "item", p),
            Template::Payload(p) => placeholder(f, "payload", p),
            Template::List(items) => {
                f.write_str("(")?;
                for (i, t) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{t}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// One pipeline step.
#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Filter { path: Path, cmp: Cmp, value: Value },
    SelectClosest { list: Path, dist: Path },
    /// Passes when `lo <= value < hi`.
    Range { path: Path, lo: f64, hi: f64 },
    EmitEvent { name: String, ttl: Option<f64> },
    RetractEvent { name: String },
    EventIf { path: Path, cmp: Cmp, threshold: f64, set: String, unset: String },
    ForwardStatus { ttl: Option<f64> },
    RateLimit { period: f64 },
    Transform(Template),
    TransformIf { path: Path, cmp: Cmp, threshold: f64, then: Template, otherwise: Template },
    Accept,
    Reject,
}

impl Stage {
    pub fn is_transform(&self) -> bool {
        matches!(self, Stage::Transform(_) | Stage::TransformIf { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Filter { .. } => "filter",
            Stage::SelectClosest { .. } => "select_closest",
            Stage::Range { .. } => "range",
            Stage::EmitEvent { .. } => "emit_event",
            Stage::RetractEvent { .. } => "retract_event",
            Stage::EventIf { .. } => "event_if",
            Stage::ForwardStatus { .. } => "forward_status",
            Stage::RateLimit { .. } => "rate_limit",
            Stage::Transform(_) => "transform",
            Stage::TransformIf { .. } => "transform_if",
            Stage::Accept => "accept",
            Stage::Reject => "reject",
        }
    }
}

fn write_ttl(f: &mut fmt::Formatter<'_>, ttl: Option<f64>) -> fmt::Result {
    match ttl {
        Some(t) => write!(f, " ttl {}", format_float(t)),
        None => Ok(()),
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())?;
        match self {
            Stage::Filter { path, cmp, value } => write!(f, " {path} {cmp} {value}"),
            Stage::SelectClosest { list, dist } => write!(f, " {list} {dist}"),
            Stage::Range { path, lo, hi } => {
                write!(f, " {path} {} {}", format_float(*lo), format_float(*hi))
            }
            Stage::EmitEvent { name, ttl } => {
                write!(f, " {name}")?;
                write_ttl(f, *ttl)
            }
            Stage::RetractEvent { name } => write!(f, " {name}"),
            Stage::EventIf { path, cmp, threshold, set, unset } => write!(
                f,
                " {path} {cmp} {} set {set} else unset {unset}",
                format_float(*threshold)
            ),
            Stage::ForwardStatus { ttl } => write_ttl(f, *ttl),
            Stage::RateLimit { period } => write!(f, " {}", format_float(*period)),
            Stage::Transform(t) => write!(f, " {t}"),
            Stage::TransformIf { path, cmp, threshold, then, otherwise } => write!(
                f,
                " {path} {cmp} {} {then} else {otherwise}",
                format_float(*threshold)
            ),
            Stage::Accept | Stage::Reject => Ok(()),
        }
    }
}

/// Stages run every `period` seconds by the trig callback.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigBlock {
    pub period: f64,
    pub stages: Vec<Stage>,
}

/// A parsed monitor definition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MonitorSpec {
    pub constraint: Option<ConstraintExpr>,
    pub stages: Vec<Stage>,
    pub trig: Option<TrigBlock>,
}

impl fmt::Display for MonitorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(c) = &self.constraint {
            writeln!(f, "constraint: {c}")?;
        }
        for s in &self.stages {
            writeln!(f, "{s}")?;
        }
        if let Some(t) = &self.trig {
            writeln!(f, "trig {}:", format_float(t.period))?;
            for s in &t.stages {
                writeln!(f, "    {s}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cmp_mixed_kinds_fail() {
        assert!(Cmp::Ge.test(&Value::Float(0.8), &Value::Float(0.8)));
        assert!(Cmp::Lt.test(&Value::Int(1), &Value::Float(1.5)));
        assert!(Cmp::Eq.test(&Value::str("a"), &Value::str("a")));
        assert!(!Cmp::Ne.test(&Value::str("a"), &Value::Int(1)));
        assert!(!Cmp::Eq.test(&Value::list([]), &Value::list([])));
    }

    #[test]
    fn template_renders_placeholders() {
        let t = Template::List(vec![
            Template::Lit(Value::str("take")),
            Template::Item(Path::parse(".pos").unwrap()),
        ]);
        let item = Value::record([("pos", Value::pos3(0.3, 0.0, 0.0))]);
        assert_eq!(
            t.render(&item, &Value::Int(0)),
            Some(Value::command("take", Some(Value::pos3(0.3, 0.0, 0.0))))
        );
        assert_eq!(t.render(&Value::Int(0), &Value::Int(0)), None);
        assert_eq!(t.to_string(), "(\"take\" $item.pos)");
        assert!(t.uses_item());
    }
}
