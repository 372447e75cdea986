use std::collections::BTreeMap;

use super::{Cmp, DslError, MonitorSpec, Stage, Template, TrigBlock};
use crate::constraint::parse_constraint;
use crate::events::validate_symbol;
use crate::value::{decode_prefix, format_float, Path, Value};

const TEMPLATE_VARS: [&str; 2] = ["item", "payload"];

/// Drops a `#` comment, ignoring `#` inside string literals.
fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' if in_str => escaped = true,
            '"' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Replaces `$NAME` with the numeric value of `params[NAME]`. `$item` and
/// `$payload` are template placeholders and stay as they are; text inside
/// string literals is left alone.
pub fn substitute_params(text: &str, params: &BTreeMap<String, f64>) -> Result<String, DslError> {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.char_indices().peekable();
    let mut in_str = false;
    let mut escaped = false;
    while let Some((i, c)) = chars.next() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            out.push(c);
            continue;
        }
        match c {
            '"' => {
                in_str = true;
                out.push(c);
            }
            '$' => {
                let start = i + 1;
                let mut end = start;
                while let Some(&(j, d)) = chars.peek() {
                    if d.is_ascii_alphanumeric() || d == '_' {
                        end = j + d.len_utf8();
                        chars.next();
                    } else {
                        break;
                    }
                }
                let name = &text[start..end];
                if TEMPLATE_VARS.contains(&name) || name.is_empty() {
                    out.push('$');
                    out.push_str(name);
                } else {
                    let v = params
                        .get(name)
                        .ok_or_else(|| DslError::UnboundParameter(name.to_owned()))?;
                    out.push_str(&format_float(*v));
                }
            }
            _ => out.push(c),
        }
    }
    Ok(out)
}

/// Reads a monitor file, substitutes parameters and parses it.
pub fn load_monitor(
    path: &std::path::Path,
    params: &BTreeMap<String, f64>,
) -> Result<MonitorSpec, DslError> {
    let text = std::fs::read_to_string(path).map_err(|e| DslError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_monitor_spec(&substitute_params(&text, params)?)
}

struct Line<'a> {
    number: usize,
    rest: &'a str,
}

impl<'a> Line<'a> {
    fn err(&self, reason: impl Into<String>) -> DslError {
        DslError::Parse {
            line: self.number,
            reason: reason.into(),
        }
    }

    fn word(&mut self) -> Option<&'a str> {
        let trimmed = self.rest.trim_start();
        if trimmed.is_empty() {
            return None;
        }
        let end = trimmed.find(char::is_whitespace).unwrap_or(trimmed.len());
        self.rest = &trimmed[end..];
        Some(&trimmed[..end])
    }

    fn expect_word(&mut self, what: &str) -> Result<&'a str, DslError> {
        self.word().ok_or_else(|| self.err(format!("expected {what}")))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), DslError> {
        match self.word() {
            Some(w) if w == kw => Ok(()),
            Some(w) => Err(self.err(format!("expected `{kw}`, found `{w}`"))),
            None => Err(self.err(format!("expected `{kw}`"))),
        }
    }

    fn path(&mut self) -> Result<Path, DslError> {
        let w = self.expect_word("a path")?;
        Path::parse(w).ok_or_else(|| DslError::BadPath {
            line: self.number,
            path: w.to_owned(),
        })
    }

    fn cmp(&mut self) -> Result<Cmp, DslError> {
        let w = self.expect_word("a comparison operator")?;
        Cmp::parse(w).ok_or_else(|| self.err(format!("`{w}` is not a comparison operator")))
    }

    fn number(&mut self) -> Result<f64, DslError> {
        let w = self.expect_word("a number")?;
        if let Some(name) = w.strip_prefix('$') {
            return Err(DslError::UnboundParameter(name.to_owned()));
        }
        w.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| self.err(format!("`{w}` is not a number")))
    }

    fn positive(&mut self) -> Result<f64, DslError> {
        let x = self.number()?;
        if x > 0.0 {
            Ok(x)
        } else {
            Err(self.err(format!("expected a positive duration, found {x}")))
        }
    }

    fn symbol(&mut self) -> Result<String, DslError> {
        let w = self.expect_word("an event name")?;
        validate_symbol(w).map_err(|e| self.err(e.to_string()))?;
        Ok(w.to_owned())
    }

    fn literal(&mut self) -> Result<Value, DslError> {
        let text = self.rest.trim_start();
        let (v, rest) = decode_prefix(text).map_err(|e| self.err(e.to_string()))?;
        match v {
            Value::List(_) => Err(self.err("expected a number or string literal")),
            v => {
                self.rest = rest;
                Ok(v)
            }
        }
    }

    fn optional_ttl(&mut self) -> Result<Option<f64>, DslError> {
        match self.word() {
            None => Ok(None),
            Some("ttl") => Ok(Some(self.positive()?)),
            Some(w) => Err(self.err(format!("expected `ttl`, found `{w}`"))),
        }
    }

    fn template(&mut self) -> Result<Template, DslError> {
        let (t, rest) = template_prefix(self.rest.trim_start()).map_err(|r| self.err(r))?;
        self.rest = rest;
        Ok(t)
    }

    fn end(&self) -> Result<(), DslError> {
        let extra = self.rest.trim();
        if extra.is_empty() {
            Ok(())
        } else {
            Err(self.err(format!("unexpected `{extra}`")))
        }
    }
}

fn template_prefix(text: &str) -> Result<(Template, &str), String> {
    if let Some(mut rest) = text.strip_prefix('(') {
        let mut items = Vec::new();
        loop {
            rest = rest.trim_start();
            if let Some(r) = rest.strip_prefix(')') {
                return Ok((Template::List(items), r));
            }
            if rest.is_empty() {
                return Err("unterminated template list".into());
            }
            let (t, r) = template_prefix(rest)?;
            items.push(t);
            rest = r;
        }
    }
    if let Some(body) = text.strip_prefix('$') {
        let end = body
            .find(|c: char| c.is_whitespace() || c == '(' || c == ')')
            .unwrap_or(body.len());
        let token = &body[..end];
        let (name, path) = match token.find('.') {
            Some(dot) => (&token[..dot], &token[dot..]),
            None => (token, "."),
        };
        let path = Path::parse(path).ok_or_else(|| format!("`{path}` is not a valid path"))?;
        let t = match name {
            "item" => Template::Item(path),
            "payload" => Template::Payload(path),
            _ => return Err(format!("unknown placeholder `${name}`")),
        };
        return Ok((t, &body[end..]));
    }
    if text.is_empty() {
        return Err("expected a template".into());
    }
    let (v, rest) = decode_prefix(text).map_err(|e| e.to_string())?;
    Ok((Template::Lit(v), rest))
}

fn parse_stage(line: &mut Line<'_>) -> Result<Stage, DslError> {
    let name = line.expect_word("a stage")?;
    let stage = match name {
        "filter" => Stage::Filter {
            path: line.path()?,
            cmp: line.cmp()?,
            value: line.literal()?,
        },
        "select_closest" => Stage::SelectClosest {
            list: line.path()?,
            dist: line.path()?,
        },
        "range" => Stage::Range {
            path: line.path()?,
            lo: line.number()?,
            hi: line.number()?,
        },
        "emit_event" => Stage::EmitEvent {
            name: line.symbol()?,
            ttl: line.optional_ttl()?,
        },
        "retract_event" => Stage::RetractEvent { name: line.symbol()? },
        "event_if" => {
            let path = line.path()?;
            let cmp = line.cmp()?;
            let threshold = line.number()?;
            line.keyword("set")?;
            let set = line.symbol()?;
            line.keyword("else")?;
            line.keyword("unset")?;
            let unset = line.symbol()?;
            Stage::EventIf { path, cmp, threshold, set, unset }
        }
        "forward_status" => Stage::ForwardStatus { ttl: line.optional_ttl()? },
        "rate_limit" => Stage::RateLimit { period: line.positive()? },
        "transform" => Stage::Transform(line.template()?),
        "transform_if" => {
            let path = line.path()?;
            let cmp = line.cmp()?;
            let threshold = line.number()?;
            let then = line.template()?;
            line.keyword("else")?;
            let otherwise = line.template()?;
            Stage::TransformIf { path, cmp, threshold, then, otherwise }
        }
        "accept" => Stage::Accept,
        "reject" => Stage::Reject,
        other => {
            return Err(DslError::UnknownStage {
                line: line.number,
                name: other.to_owned(),
            })
        }
    };
    line.end()?;
    Ok(stage)
}

/// Parses the line-oriented text form of a monitor.
pub fn parse_monitor_spec(text: &str) -> Result<MonitorSpec, DslError> {
    let mut spec = MonitorSpec::default();
    let mut in_trig = false;
    for (idx, raw) in text.lines().enumerate() {
        let number = idx + 1;
        let content = strip_comment(raw);
        if content.trim().is_empty() {
            continue;
        }
        let indented = content.starts_with([' ', '\t']);
        let mut line = Line {
            number,
            rest: content.trim(),
        };
        if in_trig && indented {
            let stage = parse_stage(&mut line)?;
            spec.trig.as_mut().expect("inside a trig block").stages.push(stage);
            continue;
        }
        in_trig = false;
        if let Some(rule) = line.rest.strip_prefix("constraint:") {
            if spec.constraint.is_some() {
                return Err(line.err("duplicate `constraint:` header"));
            }
            let expr = parse_constraint(rule.trim())
                .map_err(|source| DslError::Constraint { line: number, source })?;
            spec.constraint = Some(expr);
            continue;
        }
        if let Some(header) = line.rest.strip_prefix("trig").filter(|h| h.ends_with(':')) {
            if spec.trig.is_some() {
                return Err(line.err("duplicate `trig` block"));
            }
            let mut h = Line {
                number,
                rest: header[..header.len() - 1].trim(),
            };
            let period = h.positive()?;
            h.end()?;
            spec.trig = Some(TrigBlock { period, stages: Vec::new() });
            in_trig = true;
            continue;
        }
        let stage = parse_stage(&mut line)?;
        spec.stages.push(stage);
    }
    if spec.stages.is_empty() && spec.constraint.is_none() && spec.trig.is_none() {
        return Err(DslError::Parse {
            line: 0,
            reason: "a monitor needs at least one stage, a constraint or a trig block".into(),
        });
    }
    Ok(spec)
}
