//! Simulation time.
//!
//! Virtual time is kept as integer nanoseconds so that repeated fixed-tick
//! advances and TTL deadlines compare exactly.

use std::fmt;
use std::ops::{Add, Sub};
use std::time::{Duration, Instant};

use thiserror::Error;

const NANOS_PER_SEC: f64 = 1e9;

/// A point on the clock, in nanoseconds since the clock started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct VirtualTime(u64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0);

    pub const fn from_nanos(nanos: u64) -> Self {
        VirtualTime(nanos)
    }

    /// Rounds to the nearest nanosecond; negative input clamps to zero.
    pub fn from_secs(secs: f64) -> Self {
        VirtualTime(secs_to_nanos(secs))
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC
    }

    pub fn saturating_sub(self, other: VirtualTime) -> Span {
        Span(self.0.saturating_sub(other.0))
    }
}

impl fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}", self.as_secs())
    }
}

/// A non-negative duration on the virtual clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Span(u64);

impl Span {
    pub const ZERO: Span = Span(0);

    pub fn from_secs(secs: f64) -> Self {
        Span(secs_to_nanos(secs))
    }

    pub const fn from_nanos(nanos: u64) -> Self {
        Span(nanos)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl Add<Span> for VirtualTime {
    type Output = VirtualTime;

    fn add(self, rhs: Span) -> VirtualTime {
        VirtualTime(self.0.saturating_add(rhs.0))
    }
}

impl Sub<VirtualTime> for VirtualTime {
    type Output = Span;

    fn sub(self, rhs: VirtualTime) -> Span {
        self.saturating_sub(rhs)
    }
}

fn secs_to_nanos(secs: f64) -> u64 {
    if secs.is_nan() || secs <= 0.0 {
        0
    } else {
        (secs * NANOS_PER_SEC).round().min(u64::MAX as f64) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClockError {
    #[error("cannot advance the clock by a negative step ({0} s)")]
    NegativeStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    Virtual,
    Real,
}

/// Bus clock. Virtual clocks move only through [`Clock::advance`]; real
/// clocks follow a monotonic wall clock and `advance` sleeps.
#[derive(Debug, Clone)]
pub struct Clock {
    mode: ClockMode,
    now: VirtualTime,
    origin: Instant,
}

impl Default for Clock {
    fn default() -> Self {
        Clock::new_virtual()
    }
}

impl Clock {
    pub fn new_virtual() -> Self {
        Clock {
            mode: ClockMode::Virtual,
            now: VirtualTime::ZERO,
            origin: Instant::now(),
        }
    }

    pub fn new_real() -> Self {
        Clock {
            mode: ClockMode::Real,
            ..Clock::new_virtual()
        }
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn now(&self) -> VirtualTime {
        match self.mode {
            ClockMode::Virtual => self.now,
            ClockMode::Real => {
                let elapsed = self.origin.elapsed().as_nanos().min(u64::MAX as u128) as u64;
                VirtualTime(elapsed.max(self.now.0))
            }
        }
    }

    pub fn advance(&mut self, dt_secs: f64) -> Result<VirtualTime, ClockError> {
        if dt_secs.is_nan() || dt_secs < 0.0 {
            return Err(ClockError::NegativeStep(dt_secs));
        }
        let target = self.now() + Span::from_secs(dt_secs);
        self.set(target);
        Ok(self.now())
    }

    /// Moves the clock forward to `t`; earlier targets are ignored.
    pub(crate) fn set(&mut self, t: VirtualTime) {
        if self.mode == ClockMode::Real {
            let current = self.now();
            if t > current {
                std::thread::sleep(Duration::from_nanos((t - current).as_nanos()));
            }
        }
        if t > self.now {
            self.now = t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_ticks_are_exact() {
        let mut clock = Clock::new_virtual();
        for _ in 0..100 {
            clock.advance(0.05).unwrap();
        }
        assert_eq!(clock.now(), VirtualTime::from_secs(5.0));
    }

    #[test]
    fn zero_advance_is_identity() {
        let mut clock = Clock::new_virtual();
        clock.advance(1.25).unwrap();
        assert_eq!(clock.advance(0.0).unwrap(), VirtualTime::from_secs(1.25));
    }

    #[test]
    fn negative_step_is_rejected() {
        let mut clock = Clock::new_virtual();
        assert_eq!(clock.advance(-0.1), Err(ClockError::NegativeStep(-0.1)));
        assert_eq!(clock.now(), VirtualTime::ZERO);
    }

    #[test]
    fn real_clock_never_goes_backwards() {
        let mut clock = Clock::new_real();
        let a = clock.now();
        clock.advance(0.001).unwrap();
        assert!(clock.now() >= a + Span::from_secs(0.001));
    }

    #[test]
    fn display_uses_millisecond_precision() {
        assert_eq!(VirtualTime::from_secs(2.0).to_string(), "2.000");
        assert_eq!(VirtualTime::from_secs(0.05).to_string(), "0.050");
    }
}
