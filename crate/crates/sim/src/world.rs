//! Shared table-top world the stub modules observe and act on.

use thiserror::Error;

use portkit::Value;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("no object with id {0}")]
    UnknownObject(i64),
    #[error("object {0} already exists")]
    DuplicateObject(i64),
    #[error("nothing is held, so nothing can drop")]
    NothingHeld,
    #[error("distance {0} must be a nonnegative number")]
    BadDistance(f64),
    #[error("zone thresholds must satisfy 0 < hand ({hand}) < tool ({tool})")]
    BadZones { hand: f64, tool: f64 },
    #[error("unrecognized world event {0}")]
    BadEvent(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Object {
    pub id: i64,
    /// Distance from the robot in meters.
    pub dist: f64,
    /// Lateral offset in meters.
    pub y: f64,
}

impl Object {
    pub fn pos(&self) -> Value {
        Value::pos3(self.dist, self.y, 0.0)
    }

    /// Detector payload: `(("id" n) ("dist" d) ("pos" (d y 0.0)))`.
    pub fn to_value(&self) -> Value {
        Value::record([
            ("id", Value::Int(self.id)),
            ("dist", Value::Float(self.dist)),
            ("pos", self.pos()),
        ])
    }
}

/// A scripted change to the world.
#[derive(Debug, Clone, PartialEq)]
pub enum WorldEvent {
    Add { id: i64, dist: f64, y: f64 },
    Move { id: i64, dist: f64 },
    Remove { id: i64 },
    Human(bool),
    /// The held object falls back onto the table at `dist`.
    Drop { dist: f64 },
    Bucket([f64; 3]),
}

impl WorldEvent {
    /// Reads `("add" id dist [y])`, `("move" id dist)`, `("remove" id)`,
    /// `("human" 1|0)`, `("drop" dist)` or `("bucket" x y z)`.
    pub fn from_value(v: &Value) -> Result<WorldEvent, WorldError> {
        let bad = || WorldError::BadEvent(v.to_string());
        let items = v.as_list().ok_or_else(bad)?;
        let (verb, args) = items.split_first().ok_or_else(bad)?;
        let num = |i: usize| args.get(i).and_then(Value::as_f64).ok_or_else(bad);
        let id = |i: usize| match args.get(i) {
            Some(Value::Int(n)) => Ok(*n),
            _ => Err(bad()),
        };
        let event = match (verb.as_str().ok_or_else(bad)?, args.len()) {
            ("add", 2) => WorldEvent::Add { id: id(0)?, dist: num(1)?, y: 0.0 },
            ("add", 3) => WorldEvent::Add { id: id(0)?, dist: num(1)?, y: num(2)? },
            ("move", 2) => WorldEvent::Move { id: id(0)?, dist: num(1)? },
            ("remove", 1) => WorldEvent::Remove { id: id(0)? },
            ("human", 1) => WorldEvent::Human(num(0)? != 0.0),
            ("drop", 1) => WorldEvent::Drop { dist: num(0)? },
            ("bucket", 3) => WorldEvent::Bucket([num(0)?, num(1)?, num(2)?]),
            _ => return Err(bad()),
        };
        Ok(event)
    }

    pub fn to_value(&self) -> Value {
        match self {
            WorldEvent::Add { id, dist, y } => Value::list([
                Value::str("add"),
                Value::Int(*id),
                Value::Float(*dist),
                Value::Float(*y),
            ]),
            WorldEvent::Move { id, dist } => {
                Value::list([Value::str("move"), Value::Int(*id), Value::Float(*dist)])
            }
            WorldEvent::Remove { id } => Value::list([Value::str("remove"), Value::Int(*id)]),
            WorldEvent::Human(p) => Value::list([Value::str("human"), Value::Int(*p as i64)]),
            WorldEvent::Drop { dist } => Value::list([Value::str("drop"), Value::Float(*dist)]),
            WorldEvent::Bucket([x, y, z]) => Value::list([
                Value::str("bucket"),
                Value::Float(*x),
                Value::Float(*y),
                Value::Float(*z),
            ]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    pub objects: Vec<Object>,
    /// Object currently in the hand.
    pub held: Option<Object>,
    /// Ids of objects placed in the bucket, in order.
    pub binned: Vec<i64>,
    pub bucket: [f64; 3],
    pub human_present: bool,
    pub hand_reachable: f64,
    pub tool_reachable: f64,
}

impl WorldModel {
    pub fn new(hand_reachable: f64, tool_reachable: f64) -> Result<WorldModel, WorldError> {
        if !(0.0 < hand_reachable && hand_reachable < tool_reachable) {
            return Err(WorldError::BadZones {
                hand: hand_reachable,
                tool: tool_reachable,
            });
        }
        Ok(WorldModel {
            objects: Vec::new(),
            held: None,
            binned: Vec::new(),
            bucket: [0.3, -0.3, 0.0],
            human_present: false,
            hand_reachable,
            tool_reachable,
        })
    }

    pub fn object(&self, id: i64) -> Option<&Object> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Object on the table nearest to `pos`, ties to the earliest.
    pub fn nearest(&self, pos: [f64; 3]) -> Option<&Object> {
        let d2 = |o: &Object| (o.dist - pos[0]).powi(2) + (o.y - pos[1]).powi(2) + pos[2].powi(2);
        self.objects
            .iter()
            .fold(None, |best: Option<&Object>, o| match best {
                Some(b) if d2(b) <= d2(o) => Some(b),
                _ => Some(o),
            })
    }

    /// Lifts object `id` off the table into the hand.
    pub fn pick(&mut self, id: i64) -> Result<(), WorldError> {
        let idx = self
            .objects
            .iter()
            .position(|o| o.id == id)
            .ok_or(WorldError::UnknownObject(id))?;
        self.held = Some(self.objects.remove(idx));
        Ok(())
    }

    /// Drops the held object into the bucket.
    pub fn place(&mut self) -> Result<i64, WorldError> {
        let obj = self.held.take().ok_or(WorldError::NothingHeld)?;
        self.binned.push(obj.id);
        Ok(obj.id)
    }

    pub fn is_clear(&self) -> bool {
        self.objects.is_empty() && self.held.is_none()
    }
}

fn check_dist(dist: f64) -> Result<f64, WorldError> {
    if dist.is_finite() && dist >= 0.0 {
        Ok(dist)
    } else {
        Err(WorldError::BadDistance(dist))
    }
}

/// Applies one scripted event.
pub fn step_world(w: &WorldModel, event: &WorldEvent) -> Result<WorldModel, WorldError> {
    let mut next = w.clone();
    match event {
        WorldEvent::Add { id, dist, y } => {
            let known = w.object(*id).is_some() || w.held.as_ref().is_some_and(|h| h.id == *id);
            if known || w.binned.contains(id) {
                return Err(WorldError::DuplicateObject(*id));
            }
            next.objects.push(Object {
                id: *id,
                dist: check_dist(*dist)?,
                y: *y,
            });
        }
        WorldEvent::Move { id, dist } => {
            let dist = check_dist(*dist)?;
            let obj = next
                .objects
                .iter_mut()
                .find(|o| o.id == *id)
                .ok_or(WorldError::UnknownObject(*id))?;
            obj.dist = dist;
        }
        WorldEvent::Remove { id } => {
            let before = next.objects.len();
            next.objects.retain(|o| o.id != *id);
            if next.objects.len() == before {
                return Err(WorldError::UnknownObject(*id));
            }
        }
        WorldEvent::Human(present) => next.human_present = *present,
        WorldEvent::Drop { dist } => {
            let mut obj = next.held.take().ok_or(WorldError::NothingHeld)?;
            obj.dist = check_dist(*dist)?;
            next.objects.push(obj);
        }
        WorldEvent::Bucket(pos) => next.bucket = *pos,
    }
    Ok(next)
}
