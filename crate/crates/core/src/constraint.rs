//! Propositional selection rules over event symbols.
//!
//! Grammar, lowest precedence first:
//!
//! ```text
//! expr   := and ("or" and)*
//! and    := unary ("and" unary)*
//! unary  := "not" unary | atom
//! atom   := "true" | "false" | IDENT | "(" expr ")"
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::port::ConnectionId;
use crate::value::is_identifier;

/// Exhaustive consistency checks refuse tables with more free variables.
pub const MAX_CHECK_VARIABLES: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ConstraintExpr {
    True,
    False,
    Var(String),
    Not(Box<ConstraintExpr>),
    And(Box<ConstraintExpr>, Box<ConstraintExpr>),
    Or(Box<ConstraintExpr>, Box<ConstraintExpr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConstraintError {
    #[error("parse error at token {token} (offset {offset}): expected {expected}, found {found}")]
    Parse {
        /// 1-based token number.
        token: usize,
        offset: usize,
        expected: String,
        found: String,
    },
    #[error("reserved word `{word}` used as an event name at token {token}")]
    ReservedWordAsIdentifier { word: String, token: usize },
    #[error("unexpected character `{ch}` at offset {offset}")]
    BadCharacter { ch: char, offset: usize },
    #[error("{count} free variables exceed the exhaustive check limit of {limit}")]
    TooManyVariables { count: usize, limit: usize },
}

impl ConstraintExpr {
    pub fn var(name: impl Into<String>) -> Self {
        ConstraintExpr::Var(name.into())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(e: ConstraintExpr) -> Self {
        ConstraintExpr::Not(Box::new(e))
    }

    pub fn and(a: ConstraintExpr, b: ConstraintExpr) -> Self {
        ConstraintExpr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: ConstraintExpr, b: ConstraintExpr) -> Self {
        ConstraintExpr::Or(Box::new(a), Box::new(b))
    }

    /// Evaluates against a set of active symbols; absent symbols are false.
    pub fn evaluate(&self, active: &BTreeSet<String>) -> bool {
        self.evaluate_with(&|s| active.contains(s))
    }

    pub fn evaluate_with(&self, is_active: &dyn Fn(&str) -> bool) -> bool {
        match self {
            ConstraintExpr::True => true,
            ConstraintExpr::False => false,
            ConstraintExpr::Var(s) => is_active(s),
            ConstraintExpr::Not(e) => !e.evaluate_with(is_active),
            ConstraintExpr::And(a, b) => a.evaluate_with(is_active) && b.evaluate_with(is_active),
            ConstraintExpr::Or(a, b) => a.evaluate_with(is_active) || b.evaluate_with(is_active),
        }
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            ConstraintExpr::True | ConstraintExpr::False => {}
            ConstraintExpr::Var(s) => {
                out.insert(s.clone());
            }
            ConstraintExpr::Not(e) => e.collect_vars(out),
            ConstraintExpr::And(a, b) | ConstraintExpr::Or(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            ConstraintExpr::Or(..) => 1,
            ConstraintExpr::And(..) => 2,
            ConstraintExpr::Not(_) => 3,
            _ => 4,
        }
    }
}

impl fmt::Display for ConstraintExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Operators associate to the left, so a right operand of the same
        // precedence needs parentheses to read back identically.
        let child = |f: &mut fmt::Formatter<'_>, e: &ConstraintExpr, min: u8| {
            if e.precedence() < min {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        };
        match self {
            ConstraintExpr::True => f.write_str("true"),
            ConstraintExpr::False => f.write_str("false"),
            ConstraintExpr::Var(s) => f.write_str(s),
            ConstraintExpr::Not(e) => {
                f.write_str("not ")?;
                child(f, e, 3)
            }
            ConstraintExpr::And(a, b) => {
                child(f, a, 2)?;
                f.write_str(" and ")?;
                child(f, b, 3)
            }
            ConstraintExpr::Or(a, b) => {
                child(f, a, 1)?;
                f.write_str(" or ")?;
                child(f, b, 2)
            }
        }
    }
}

impl FromStr for ConstraintExpr {
    type Err = ConstraintError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_constraint(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    And,
    Or,
    Not,
    True,
    False,
    LParen,
    RParen,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::And => f.write_str("`and`"),
            Tok::Or => f.write_str("`or`"),
            Tok::Not => f.write_str("`not`"),
            Tok::True => f.write_str("`true`"),
            Tok::False => f.write_str("`false`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ConstraintError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b.is_ascii_whitespace() {
            i += 1;
        } else if b == b'(' {
            out.push((Tok::LParen, i));
            i += 1;
        } else if b == b')' {
            out.push((Tok::RParen, i));
            i += 1;
        } else if b.is_ascii_alphanumeric() || b == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &text[start..i];
            let tok = match word {
                "and" => Tok::And,
                "or" => Tok::Or,
                "not" => Tok::Not,
                "true" => Tok::True,
                "false" => Tok::False,
                _ if is_identifier(word) => Tok::Ident(word.to_owned()),
                _ => {
                    return Err(ConstraintError::BadCharacter {
                        ch: b as char,
                        offset: start,
                    })
                }
            };
            out.push((tok, start));
        } else {
            let ch = text[i..].chars().next().unwrap_or('?');
            return Err(ConstraintError::BadCharacter { ch, offset: i });
        }
    }
    out.push((Tok::Eof, text.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if t != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> ConstraintError {
        let (tok, offset) = &self.toks[self.pos];
        // A binary keyword sitting where an operand belongs and followed by
        // something that may only follow an operand reads as a misused name.
        if matches!(tok, Tok::And | Tok::Or) && expected == "expression" {
            let next = &self.toks[(self.pos + 1).min(self.toks.len() - 1)].0;
            if matches!(next, Tok::And | Tok::Or | Tok::RParen | Tok::Eof) && self.pos > 0 {
                return ConstraintError::ReservedWordAsIdentifier {
                    word: if *tok == Tok::And { "and" } else { "or" }.to_owned(),
                    token: self.pos + 1,
                };
            }
        }
        ConstraintError::Parse {
            token: self.pos + 1,
            offset: *offset,
            expected: expected.to_owned(),
            found: tok.to_string(),
        }
    }

    fn expr(&mut self) -> Result<ConstraintExpr, ConstraintError> {
        let mut lhs = self.and()?;
        while *self.peek() == Tok::Or {
            self.bump();
            lhs = ConstraintExpr::or(lhs, self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<ConstraintExpr, ConstraintError> {
        let mut lhs = self.unary()?;
        while *self.peek() == Tok::And {
            self.bump();
            lhs = ConstraintExpr::and(lhs, self.unary()?);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<ConstraintExpr, ConstraintError> {
        if *self.peek() == Tok::Not {
            self.bump();
            return Ok(ConstraintExpr::not(self.unary()?));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<ConstraintExpr, ConstraintError> {
        match self.peek().clone() {
            Tok::True => {
                self.bump();
                Ok(ConstraintExpr::True)
            }
            Tok::False => {
                self.bump();
                Ok(ConstraintExpr::False)
            }
            Tok::Ident(s) => {
                self.bump();
                Ok(ConstraintExpr::Var(s))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                if *self.peek() != Tok::RParen {
                    return Err(self.error("`)`"));
                }
                self.bump();
                Ok(inner)
            }
            _ => Err(self.error("expression")),
        }
    }
}

/// Parses a selection rule such as `not e_taken and e_arm_idle`.
pub fn parse_constraint(text: &str) -> Result<ConstraintExpr, ConstraintError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::Eof {
        return Err(p.error("`and`, `or` or end of input"));
    }
    Ok(e)
}

/// One rule per connection; connections without an entry select freely.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintTable {
    rules: BTreeMap<ConnectionId, ConstraintExpr>,
}

impl ConstraintTable {
    pub fn new() -> Self {
        ConstraintTable::default()
    }

    /// Registers a connection with the default `true` rule if it has none.
    pub fn register(&mut self, conn: &ConnectionId) {
        self.rules
            .entry(conn.clone())
            .or_insert(ConstraintExpr::True);
    }

    pub fn set(&mut self, conn: &ConnectionId, rule: ConstraintExpr) {
        self.rules.insert(conn.clone(), rule);
    }

    pub fn remove(&mut self, conn: &ConnectionId) {
        self.rules.remove(conn);
    }

    pub fn get(&self, conn: &ConnectionId) -> &ConstraintExpr {
        static TRUE: ConstraintExpr = ConstraintExpr::True;
        self.rules.get(conn).unwrap_or(&TRUE)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ConnectionId, &ConstraintExpr)> {
        self.rules.iter()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        self.rules.values().flat_map(|e| e.free_vars()).collect()
    }
}

impl FromIterator<(ConnectionId, ConstraintExpr)> for ConstraintTable {
    fn from_iter<T: IntoIterator<Item = (ConnectionId, ConstraintExpr)>>(iter: T) -> Self {
        ConstraintTable {
            rules: iter.into_iter().collect(),
        }
    }
}

/// Two connections whose rules can hold at the same time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub first: ConnectionId,
    pub second: ConnectionId,
    /// Assignment to the variables of both rules under which both hold.
    pub witness: BTreeMap<String, bool>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} and {} can both deliver when ", self.first, self.second)?;
        if self.witness.is_empty() {
            return f.write_str("(any assignment)");
        }
        let parts: Vec<String> = self
            .witness
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        f.write_str(&parts.join(" "))
    }
}

/// Finds every pair of connections whose rules are jointly satisfiable by
/// enumerating all assignments over the table's free variables. An empty
/// result means the rules are pairwise mutually exclusive.
pub fn check_consistency(table: &ConstraintTable) -> Result<Vec<Violation>, ConstraintError> {
    let vars: Vec<String> = table.free_vars().into_iter().collect();
    if vars.len() > MAX_CHECK_VARIABLES {
        return Err(ConstraintError::TooManyVariables {
            count: vars.len(),
            limit: MAX_CHECK_VARIABLES,
        });
    }
    let index: BTreeMap<&str, usize> = vars.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let rules: Vec<(&ConnectionId, &ConstraintExpr)> = table.iter().collect();
    let n = rules.len();
    let mut witness_mask: Vec<Option<u32>> = vec![None; n * n];
    let mut remaining = n * n.saturating_sub(1) / 2;

    for mask in 0u32..(1u32 << vars.len()) {
        if remaining == 0 {
            break;
        }
        let holds = |s: &str| index.get(s).is_some_and(|&i| mask & (1 << i) != 0);
        let sat: Vec<usize> = (0..n).filter(|&i| rules[i].1.evaluate_with(&holds)).collect();
        for (k, &i) in sat.iter().enumerate() {
            for &j in &sat[k + 1..] {
                let slot = &mut witness_mask[i * n + j];
                if slot.is_none() {
                    *slot = Some(mask);
                    remaining -= 1;
                }
            }
        }
    }

    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if let Some(mask) = witness_mask[i * n + j] {
                let pair_vars = rules[i].1.free_vars().into_iter().chain(rules[j].1.free_vars());
                let witness = pair_vars
                    .map(|v| {
                        let bit = index[v.as_str()];
                        (v, mask & (1 << bit) != 0)
                    })
                    .collect();
                out.push(Violation {
                    first: rules[i].0.clone(),
                    second: rules[j].0.clone(),
                    witness,
                });
            }
        }
    }
    Ok(out)
}
