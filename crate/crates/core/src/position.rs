//! Static and dynamic coordinates over an execution trace.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A static point: a source line inside a function. May execute many times.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Location {
    pub function: String,
    pub line: u32,
}

impl Location {
    pub fn new(function: impl Into<String>, line: u32) -> Self {
        Self {
            function: function.into(),
            line,
        }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.function, self.line)
    }
}

/// A dynamic point: a location paired with the timestamp in effect there.
///
/// Within one deterministic run a position names at most one point, the
/// first instruction of `location` executed while `ts == timestamp`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Position {
    pub location: Location,
    pub ts: u64,
}

impl Position {
    pub fn new(function: impl Into<String>, line: u32, ts: u64) -> Self {
        Self {
            location: Location::new(function, line),
            ts,
        }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.location, self.ts)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("expected `function:line` or `function:line@ts`, found `{0}`")]
pub struct ParseLocationError(String);

impl FromStr for Location {
    type Err = ParseLocationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseLocationError(s.to_string());
        let (function, line) = s.trim().rsplit_once(':').ok_or_else(err)?;
        let line: u32 = line.parse().map_err(|_| err())?;
        if function.is_empty() || line == 0 {
            return Err(err());
        }
        Ok(Location::new(function, line))
    }
}

impl FromStr for Position {
    type Err = ParseLocationError;

    /// Parses `function:line@ts`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (loc, ts) = s
            .trim()
            .rsplit_once('@')
            .ok_or_else(|| ParseLocationError(s.to_string()))?;
        Ok(Position {
            location: loc.parse()?,
            ts: ts.parse().map_err(|_| ParseLocationError(s.to_string()))?,
        })
    }
}
