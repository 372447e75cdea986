//! Structured message payloads and their canonical text encoding.
//!
//! A [`Value`] is either an atom (integer, float, string) or a list of
//! values. Record-like payloads use the property-list convention: a list of
//! `("key" value)` pairs, which [`Path`] lookups understand.

use std::fmt;

use thiserror::Error;

/// Default bound on list nesting accepted by the encoder and decoder.
pub const DEFAULT_MAX_DEPTH: usize = 32;

/// A message payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<Value>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValueError {
    #[error("list nesting depth {depth} exceeds limit {limit}")]
    DepthExceeded { depth: usize, limit: usize },
    #[error("parse error at offset {position}: expected {expected}")]
    Parse { position: usize, expected: String },
}

impl Value {
    pub fn str(s: impl Into<String>) -> Self {
        Value::Str(s.into())
    }

    pub fn list(items: impl IntoIterator<Item = Value>) -> Self {
        Value::List(items.into_iter().collect())
    }

    /// A `pos_3D` payload: a list of three floats.
    pub fn pos3(x: f64, y: f64, z: f64) -> Self {
        Value::List(vec![Value::Float(x), Value::Float(y), Value::Float(z)])
    }

    /// A `msg_cmd` payload: `(verb arg)`, or `(verb)` without an argument.
    pub fn command(verb: &str, arg: Option<Value>) -> Self {
        let mut items = vec![Value::str(verb)];
        items.extend(arg);
        Value::List(items)
    }

    /// A property list built from `(key, value)` pairs.
    pub fn record<'a>(fields: impl IntoIterator<Item = (&'a str, Value)>) -> Self {
        Value::List(
            fields
                .into_iter()
                .map(|(k, v)| Value::List(vec![Value::str(k), v]))
                .collect(),
        )
    }

    /// Nesting depth: atoms are 0, a list is one more than its deepest child.
    pub fn depth(&self) -> usize {
        match self {
            Value::List(items) => 1 + items.iter().map(Value::depth).max().unwrap_or(0),
            _ => 0,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(items) => Some(items),
            _ => None,
        }
    }

    /// Looks up `key` in a property list.
    pub fn field(&self, key: &str) -> Option<&Value> {
        self.as_list()?.iter().find_map(|entry| match entry.as_list() {
            Some([Value::Str(k), v]) if k == key => Some(v),
            _ => None,
        })
    }

    /// Depth-first first string atom.
    pub fn first_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            Value::List(items) => items.iter().find_map(Value::first_str),
            _ => None,
        }
    }

    /// Reads a `pos_3D`, either directly or from a record's `pos` field.
    pub fn as_pos3(&self) -> Option<[f64; 3]> {
        let target = match self.field("pos") {
            Some(p) => p,
            None => self,
        };
        match target.as_list()? {
            [x, y, z] => Some([x.as_f64()?, y.as_f64()?, z.as_f64()?]),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        write_value(self, &mut out);
        f.write_str(&out)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_owned())
    }
}

/// Encodes with the default depth limit.
pub fn encode_value(v: &Value) -> Result<String, ValueError> {
    encode_value_with_limit(v, DEFAULT_MAX_DEPTH)
}

pub fn encode_value_with_limit(v: &Value, limit: usize) -> Result<String, ValueError> {
    let depth = v.depth();
    if depth > limit {
        return Err(ValueError::DepthExceeded { depth, limit });
    }
    let mut out = String::new();
    write_value(v, &mut out);
    Ok(out)
}

fn write_value(v: &Value, out: &mut String) {
    match v {
        Value::Int(i) => out.push_str(&i.to_string()),
        Value::Float(x) => out.push_str(&format_float(*x)),
        Value::Str(s) => {
            out.push('"');
            for c in s.chars() {
                match c {
                    '"' => out.push_str("\\\""),
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    '\r' => out.push_str("\\r"),
                    '\t' => out.push_str("\\t"),
                    c => out.push(c),
                }
            }
            out.push('"');
        }
        Value::List(items) => {
            out.push('(');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write_value(item, out);
            }
            out.push(')');
        }
    }
}

/// Shortest round-trip form; always carries a `.`, an exponent, or a
/// special name so it never reads back as an integer.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_owned();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{x:?}")
}

/// Decodes with the default depth limit.
pub fn decode_value(text: &str) -> Result<Value, ValueError> {
    decode_value_with_limit(text, DEFAULT_MAX_DEPTH)
}

pub fn decode_value_with_limit(text: &str, limit: usize) -> Result<Value, ValueError> {
    let mut reader = Reader {
        src: text.as_bytes(),
        text,
        pos: 0,
        limit,
    };
    reader.skip_ws();
    let v = reader.value(0)?;
    reader.skip_ws();
    if reader.pos != reader.src.len() {
        return Err(reader.err("end of input"));
    }
    Ok(v)
}

/// Decodes one value from the front of `text`, returning the rest.
pub(crate) fn decode_prefix(text: &str) -> Result<(Value, &str), ValueError> {
    let mut reader = Reader {
        src: text.as_bytes(),
        text,
        pos: 0,
        limit: DEFAULT_MAX_DEPTH,
    };
    reader.skip_ws();
    let v = reader.value(0)?;
    Ok((v, &text[reader.pos..]))
}

struct Reader<'a> {
    src: &'a [u8],
    text: &'a str,
    pos: usize,
    limit: usize,
}

impl Reader<'_> {
    fn err(&self, expected: &str) -> ValueError {
        ValueError::Parse {
            position: self.pos,
            expected: expected.to_owned(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    fn value(&mut self, depth: usize) -> Result<Value, ValueError> {
        match self.peek() {
            None => Err(self.err("value")),
            Some(b'(') => {
                if depth + 1 > self.limit {
                    return Err(ValueError::DepthExceeded {
                        depth: depth + 1,
                        limit: self.limit,
                    });
                }
                self.pos += 1;
                let mut items = Vec::new();
                loop {
                    self.skip_ws();
                    match self.peek() {
                        Some(b')') => {
                            self.pos += 1;
                            return Ok(Value::List(items));
                        }
                        None => return Err(self.err("`)`")),
                        Some(_) => {
                            if !items.is_empty() && !self.preceded_by_ws() {
                                return Err(self.err("whitespace or `)`"));
                            }
                            items.push(self.value(depth + 1)?);
                        }
                    }
                }
            }
            Some(b'"') => self.string(),
            Some(_) => self.number(),
        }
    }

    fn preceded_by_ws(&self) -> bool {
        self.pos > 0 && matches!(self.src[self.pos - 1], b' ' | b'\t' | b'\n' | b'\r')
    }

    fn string(&mut self) -> Result<Value, ValueError> {
        self.pos += 1;
        let mut out = String::new();
        loop {
            let rest = &self.text[self.pos..];
            let mut chars = rest.chars();
            match chars.next() {
                None => return Err(self.err("closing `\"`")),
                Some('"') => {
                    self.pos += 1;
                    return Ok(Value::Str(out));
                }
                Some('\\') => {
                    let escaped = match chars.next() {
                        Some('"') => '"',
                        Some('\\') => '\\',
                        Some('n') => '\n',
                        Some('r') => '\r',
                        Some('t') => '\t',
                        _ => {
                            self.pos += 1;
                            return Err(self.err("escape sequence"));
                        }
                    };
                    out.push(escaped);
                    self.pos += 2;
                }
                Some(c) => {
                    out.push(c);
                    self.pos += c.len_utf8();
                }
            }
        }
    }

    fn number(&mut self) -> Result<Value, ValueError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if matches!(c, b' ' | b'\t' | b'\n' | b'\r' | b'(' | b')' | b'"') {
                break;
            }
            self.pos += 1;
        }
        let token = &self.text[start..self.pos];
        let fail = || ValueError::Parse {
            position: start,
            expected: "number or string".to_owned(),
        };
        match token {
            "" => Err(fail()),
            "nan" => Ok(Value::Float(f64::NAN)),
            "inf" => Ok(Value::Float(f64::INFINITY)),
            "-inf" => Ok(Value::Float(f64::NEG_INFINITY)),
            _ if token.bytes().all(|b| b.is_ascii_digit() || b == b'-' || b == b'+') => {
                token.parse().map(Value::Int).map_err(|_| fail())
            }
            _ if token
                .bytes()
                .all(|b| b.is_ascii_digit() || matches!(b, b'-' | b'+' | b'.' | b'e' | b'E')) =>
            {
                token.parse().map(Value::Float).map_err(|_| fail())
            }
            _ => Err(fail()),
        }
    }
}

/// One step of a structured-access path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathSegment {
    Index(usize),
    Key(String),
}

/// Dot/index chain such as `.`, `.dist`, `.objects.0.pos`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Path(pub Vec<PathSegment>);

impl Path {
    pub fn root() -> Self {
        Path(Vec::new())
    }

    /// Parses a path; it must start with `.`. A lone `.` is the root.
    pub fn parse(text: &str) -> Option<Path> {
        let rest = text.strip_prefix('.')?;
        if rest.is_empty() {
            return Some(Path::root());
        }
        let mut segments = Vec::new();
        for part in rest.split('.') {
            if part.is_empty() {
                return None;
            }
            if part.bytes().all(|b| b.is_ascii_digit()) {
                segments.push(PathSegment::Index(part.parse().ok()?));
            } else if is_identifier(part) {
                segments.push(PathSegment::Key(part.to_owned()));
            } else {
                return None;
            }
        }
        Some(Path(segments))
    }

    pub fn resolve<'v>(&self, value: &'v Value) -> Option<&'v Value> {
        self.0.iter().try_fold(value, |cur, seg| match seg {
            PathSegment::Index(i) => cur.as_list()?.get(*i),
            PathSegment::Key(k) => cur.field(k),
        })
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str(".");
        }
        for seg in &self.0 {
            match seg {
                PathSegment::Index(i) => write!(f, ".{i}")?,
                PathSegment::Key(k) => write!(f, ".{k}")?,
            }
        }
        Ok(())
    }
}

/// `[a-zA-Z_][a-zA-Z0-9_]*`
pub fn is_identifier(s: &str) -> bool {
    let mut bytes = s.bytes();
    matches!(bytes.next(), Some(b) if b.is_ascii_alphabetic() || b == b'_')
        && bytes.all(|b| b.is_ascii_alphanumeric() || b == b'_')
}
