//! Shared store of symbolic events for one arbitrated port.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::clock::{Span, VirtualTime};
use crate::port::ConnectionId;
use crate::value::is_identifier;

/// Words that the constraint language reserves.
pub const RESERVED_WORDS: [&str; 5] = ["true", "false", "and", "or", "not"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EventError {
    #[error("event lifetime must be positive, got {0}")]
    InvalidLifetime(f64),
    #[error("`{0}` is not a valid event symbol")]
    InvalidSymbol(String),
}

/// Checks that `name` can be used as an event symbol.
pub fn validate_symbol(name: &str) -> Result<(), EventError> {
    if is_identifier(name) && !RESERVED_WORDS.contains(&name) {
        Ok(())
    } else {
        Err(EventError::InvalidSymbol(name.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub name: String,
    pub owner: ConnectionId,
    /// Absolute expiry; `None` lives until unset.
    pub expiry: Option<VirtualTime>,
}

impl EventRecord {
    /// Active on `[set, expiry)`.
    pub fn is_live(&self, now: VirtualTime) -> bool {
        self.expiry.is_none_or(|e| now < e)
    }
}

/// What [`EventContainer::set_event`] changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SetOutcome {
    /// No live record for this `(name, owner)` existed before.
    pub inserted: bool,
    /// A record for this `(name, owner)` had already run out and was replaced.
    pub replaced_expired: bool,
}

/// Events keyed by `(name, owner)`. A name is active while any owner holds
/// a live record of it.
#[derive(Debug, Clone, Default)]
pub struct EventContainer {
    records: BTreeMap<(String, ConnectionId), Option<VirtualTime>>,
}

impl EventContainer {
    pub fn new() -> Self {
        EventContainer::default()
    }

    pub fn set_event(
        &mut self,
        name: &str,
        owner: &ConnectionId,
        lifetime: Option<f64>,
        now: VirtualTime,
    ) -> Result<SetOutcome, EventError> {
        validate_symbol(name)?;
        let expiry = match lifetime {
            None => None,
            Some(l) if l > 0.0 && l.is_finite() => Some(now + Span::from_secs(l)),
            Some(l) => return Err(EventError::InvalidLifetime(l)),
        };
        let previous = self
            .records
            .insert((name.to_owned(), owner.clone()), expiry);
        let was_live = previous.is_some_and(|e| e.is_none_or(|e| now < e));
        Ok(SetOutcome {
            inserted: !was_live,
            replaced_expired: previous.is_some() && !was_live,
        })
    }

    /// Removes the record `owner` holds for `name`; other owners keep theirs.
    /// Returns whether a live record was removed.
    pub fn unset_event(&mut self, name: &str, owner: &ConnectionId, now: VirtualTime) -> bool {
        self.records
            .remove(&(name.to_owned(), owner.clone()))
            .is_some_and(|e| e.is_none_or(|e| now < e))
    }

    /// Pure check against `now`; does not purge.
    pub fn is_active(&self, name: &str, now: VirtualTime) -> bool {
        self.records
            .range((name.to_owned(), ConnectionId::new(0, ""))..)
            .take_while(|((n, _), _)| n == name)
            .any(|(_, expiry)| expiry.is_none_or(|e| now < e))
    }

    /// Drops every record that has run out by `now` and returns them.
    pub fn purge(&mut self, now: VirtualTime) -> Vec<EventRecord> {
        let mut expired = Vec::new();
        self.records.retain(|(name, owner), expiry| {
            let live = expiry.is_none_or(|e| now < e);
            if !live {
                expired.push(EventRecord {
                    name: name.clone(),
                    owner: owner.clone(),
                    expiry: *expiry,
                });
            }
            live
        });
        expired
    }

    /// Active names at `now` together with the records purged to get there.
    pub fn snapshot(&mut self, now: VirtualTime) -> (BTreeSet<String>, Vec<EventRecord>) {
        let expired = self.purge(now);
        let active = self.records.keys().map(|(n, _)| n.clone()).collect();
        (active, expired)
    }

    /// Active names at `now` without purging.
    pub fn active_names(&self, now: VirtualTime) -> BTreeSet<String> {
        self.records
            .iter()
            .filter(|(_, e)| e.is_none_or(|e| now < e))
            .map(|((n, _), _)| n.clone())
            .collect()
    }

    pub fn records(&self) -> impl Iterator<Item = EventRecord> + '_ {
        self.records.iter().map(|((name, owner), expiry)| EventRecord {
            name: name.clone(),
            owner: owner.clone(),
            expiry: *expiry,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
