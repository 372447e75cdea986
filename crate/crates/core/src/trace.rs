//! Timestamped trace of bus activity.
//!
//! Line format: `<time:%.3f> <KIND> <label> <detail>`. The detail of
//! deliveries, discards and actions ends with a canonical [`Value`].

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::clock::VirtualTime;
use crate::value::{decode_value, encode_value, Value};

const TIME_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Deliver,
    Discard,
    EventSet,
    EventUnset,
    EventExpire,
    Action,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Deliver => "DELIVER",
            EventKind::Discard => "DISCARD",
            EventKind::EventSet => "EVENT_SET",
            EventKind::EventUnset => "EVENT_UNSET",
            EventKind::EventExpire => "EVENT_EXPIRE",
            EventKind::Action => "ACTION",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "DELIVER" => EventKind::Deliver,
            "DISCARD" => EventKind::Discard,
            "EVENT_SET" => EventKind::EventSet,
            "EVENT_UNSET" => EventKind::EventUnset,
            "EVENT_EXPIRE" => EventKind::EventExpire,
            "ACTION" => EventKind::Action,
            other => return Err(TraceError::UnknownKind(other.to_owned())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("unknown event kind `{0}`")]
    UnknownKind(String),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// One trace line.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub time: VirtualTime,
    pub kind: EventKind,
    pub label: String,
    pub detail: String,
}

impl LogEntry {
    /// The trailing payload of the detail, if there is one.
    pub fn payload(&self) -> Option<Value> {
        split_payload(&self.detail).1
    }

    /// The `[a b c]` snapshot on arbitrated delivery lines.
    pub fn snapshot(&self) -> Option<Vec<&str>> {
        let start = self.detail.find('[')?;
        let end = self.detail[start..].find(']')? + start;
        Some(self.detail[start + 1..end].split_whitespace().collect())
    }

    fn parse(line_no: usize, line: &str) -> Result<LogEntry, TraceError> {
        let malformed = |reason: &str| TraceError::Malformed {
            line: line_no,
            reason: reason.to_owned(),
        };
        let mut parts = line.splitn(4, ' ');
        let time: f64 = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| malformed("bad timestamp"))?;
        let kind = parts
            .next()
            .ok_or_else(|| malformed("missing kind"))?
            .parse()
            .map_err(|e: TraceError| malformed(&e.to_string()))?;
        let label = parts.next().ok_or_else(|| malformed("missing label"))?;
        Ok(LogEntry {
            time: VirtualTime::from_secs(time),
            kind,
            label: label.to_owned(),
            detail: parts.next().unwrap_or("").to_owned(),
        })
    }

    fn equivalent(&self, other: &LogEntry) -> bool {
        if (self.time.as_secs() - other.time.as_secs()).abs() > TIME_TOLERANCE
            || self.kind != other.kind
            || self.label != other.label
        {
            return false;
        }
        let (pa, va) = split_payload(&self.detail);
        let (pb, vb) = split_payload(&other.detail);
        let canon = |v: Option<Value>| v.map(|v| encode_value(&v).unwrap_or_default());
        pa.split_whitespace().eq(pb.split_whitespace()) && canon(va) == canon(vb)
    }
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.time, self.kind, self.label)?;
        if !self.detail.is_empty() {
            write!(f, " {}", self.detail)?;
        }
        Ok(())
    }
}

/// Splits a detail into its textual prefix and the value that ends it.
fn split_payload(detail: &str) -> (&str, Option<Value>) {
    let mut boundary = 0;
    loop {
        if let Ok(v) = decode_value(&detail[boundary..]) {
            return (&detail[..boundary], Some(v));
        }
        match detail[boundary..].find(' ') {
            Some(off) => boundary += off + 1,
            None => return (detail, None),
        }
    }
}

/// The ordered record of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActionLog {
    entries: Vec<LogEntry>,
}

impl ActionLog {
    pub fn new() -> Self {
        ActionLog::default()
    }

    pub fn push(&mut self, time: VirtualTime, kind: EventKind, label: &str, detail: String) {
        debug_assert!(self.entries.last().is_none_or(|e| e.time <= time));
        self.entries.push(LogEntry {
            time,
            kind,
            label: label.to_owned(),
            detail,
        });
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<ActionLog, TraceError> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| LogEntry::parse(i + 1, l))
            .collect::<Result<_, _>>()?;
        Ok(ActionLog { entries })
    }
}

impl FromIterator<LogEntry> for ActionLog {
    fn from_iter<T: IntoIterator<Item = LogEntry>>(iter: T) -> Self {
        ActionLog {
            entries: iter.into_iter().collect(),
        }
    }
}

/// A point where two logs disagree.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    /// 1-based entry number.
    pub line: usize,
    pub expected: Option<String>,
    pub actual: Option<String>,
    /// Up to two agreeing entries before the divergence.
    pub context: Vec<String>,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "divergence at line {}:", self.line)?;
        for c in &self.context {
            writeln!(f, "    {c}")?;
        }
        writeln!(f, "  - {}", self.expected.as_deref().unwrap_or("<end of log>"))?;
        write!(f, "  + {}", self.actual.as_deref().unwrap_or("<end of log>"))
    }
}

/// Compares logs entry by entry. Times match within 1e-6 s and payloads
/// after canonical re-encoding. A length mismatch adds one divergence at the
/// first unmatched entry.
pub fn diff_logs(expected: &ActionLog, actual: &ActionLog) -> Vec<Divergence> {
    let (e, a) = (&expected.entries, &actual.entries);
    let context = |i: usize| {
        e[i.saturating_sub(2)..i]
            .iter()
            .map(ToString::to_string)
            .collect()
    };
    let mut out: Vec<Divergence> = e
        .iter()
        .zip(a)
        .enumerate()
        .filter(|(_, (x, y))| !x.equivalent(y))
        .map(|(i, (x, y))| Divergence {
            line: i + 1,
            expected: Some(x.to_string()),
            actual: Some(y.to_string()),
            context: context(i),
        })
        .collect();
    let common = e.len().min(a.len());
    if e.len() != a.len() {
        out.push(Divergence {
            line: common + 1,
            expected: e.get(common).map(ToString::to_string),
            actual: a.get(common).map(ToString::to_string),
            context: context(common),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ActionLog {
        ActionLog::parse(
            "0.000 DELIVER C2 [] (0.1 0.2 0.3)\n\
             2.000 EVENT_SET C1 e_face_detected 1.000\n\
             2.000 DELIVER C1 [e_face_detected] ((\"pos\" (0.0 0.3 0.6)))\n\
             2.500 DISCARD C2 constraint [e_face_detected] (0.5 0.1 0.2)\n\
             2.500 ACTION HeadControl (\"gaze\" (0.0 0.3 0.6))\n",
        )
        .unwrap()
    }

    #[test]
    fn parse_and_print_roundtrip() {
        let log = sample();
        assert_eq!(log.len(), 5);
        assert_eq!(ActionLog::parse(&log.to_text()).unwrap(), log);
        assert_eq!(log.entries()[3].snapshot(), Some(vec!["e_face_detected"]));
        assert_eq!(log.entries()[0].snapshot(), Some(vec![]));
    }

    #[test]
    fn identical_logs_have_no_divergence() {
        assert!(diff_logs(&sample(), &sample()).is_empty());
    }

    #[test]
    fn flipped_outcome_is_single_divergence() {
        let text = sample().to_text().replace("2.500 DISCARD C2 constraint", "2.500 DELIVER C2");
        let d = diff_logs(&sample(), &ActionLog::parse(&text).unwrap());
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].line, 4);
        assert_eq!(d[0].context.len(), 2);
    }

    #[test]
    fn payloads_compare_canonically() {
        let a = ActionLog::parse("1.000 ACTION Arm (\"take\"   (0.10 2e0 3))").unwrap();
        let b = ActionLog::parse("1.0000001 ACTION Arm (\"take\" (0.1 2.0 3))").unwrap();
        assert!(diff_logs(&a, &b).is_empty());
        let c = ActionLog::parse("1.000 ACTION Arm (\"take\" (0.1 2.0 4))").unwrap();
        assert_eq!(diff_logs(&a, &c).len(), 1);
    }

    #[test]
    fn truncated_log_reports_tail() {
        let full = sample();
        let short: ActionLog = full.entries()[..3].iter().cloned().collect();
        let d = diff_logs(&full, &short);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].line, 4);
        assert!(d[0].actual.is_none());
    }

    #[test]
    fn malformed_lines_are_reported() {
        assert!(matches!(
            ActionLog::parse("abc DELIVER C1"),
            Err(TraceError::Malformed { line: 1, .. })
        ));
        assert!(ActionLog::parse("1.0 BOGUS C1").is_err());
    }
}
