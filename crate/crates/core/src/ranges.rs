//! Score ranges, candidate labels, and total score parsing.
//!
//! A [`ScoreRange`] is a contiguous integer window such as 2-6. Judged scores
//! always carry the range they were produced under plus a [`Provenance`] tag
//! recording how the raw model output became a bounded integer. Parsing never
//! fails: text with no integer falls back to the range minimum, and integers
//! outside the window clamp to the nearest bound.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RangeError {
    #[error("score range requires max > min, got {min}..{max}")]
    InvalidBounds { min: i32, max: i32 },
    #[error("range syntax must be MIN-MAX, got {0:?}")]
    InvalidSyntax(String),
}

/// Inclusive integer score window, e.g. 0-4 or 2-6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreRange {
    min: i32,
    max: i32,
}

impl ScoreRange {
    pub fn new(min: i32, max: i32) -> Result<Self, RangeError> {
        if max > min {
            Ok(Self { min, max })
        } else {
            Err(RangeError::InvalidBounds { min, max })
        }
    }

    pub fn min(&self) -> i32 {
        self.min
    }

    pub fn max(&self) -> i32 {
        self.max
    }

    /// Number of admissible scores (`max - min + 1`).
    pub fn width(&self) -> usize {
        (self.max - self.min + 1) as usize
    }

    /// Integer values the range admits, ascending.
    pub fn values(&self) -> impl Iterator<Item = i32> + '_ {
        self.min..=self.max
    }

    /// Decimal string labels for every admissible score, ascending.
    pub fn candidate_labels(&self) -> Vec<String> {
        self.values().map(|v| v.to_string()).collect()
    }

    pub fn contains(&self, value: i32) -> bool {
        value >= self.min && value <= self.max
    }

    /// Position of `value` within the range (0-based), if admissible.
    pub fn position_of(&self, value: i32) -> Option<usize> {
        self.contains(value).then(|| (value - self.min) as usize)
    }
}

impl fmt::Display for ScoreRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.min, self.max)
    }
}

impl FromStr for ScoreRange {
    type Err = RangeError;

    /// Parses `MIN-MAX`, tolerating negative bounds such as `-2-2`.
    fn from_str(s: &str) -> Result<Self, RangeError> {
        let raw = s.trim();
        for (idx, ch) in raw.char_indices().skip(1) {
            if ch != '-' {
                continue;
            }
            let (left, right) = (&raw[..idx], &raw[idx + 1..]);
            if let (Ok(min), Ok(max)) = (left.parse::<i32>(), right.parse::<i32>()) {
                return ScoreRange::new(min, max)
                    .map_err(|_| RangeError::InvalidSyntax(s.to_string()));
            }
        }
        Err(RangeError::InvalidSyntax(s.to_string()))
    }
}

/// How a judged score was obtained from raw model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// An in-range integer was read directly from the output.
    Parsed,
    /// The output integer exceeded the range maximum and was clamped down.
    ClampedHigh,
    /// The output integer fell below the range minimum and was clamped up.
    ClampedLow,
    /// No integer could be read; the range minimum was substituted.
    FallbackMin,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Provenance::Parsed => "parsed",
            Provenance::ClampedHigh => "clamped_high",
            Provenance::ClampedLow => "clamped_low",
            Provenance::FallbackMin => "fallback_min",
        };
        f.write_str(name)
    }
}

/// Bounded integer score with the range it was judged under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeScore {
    pub value: i32,
    pub range: ScoreRange,
    pub provenance: Provenance,
}

impl JudgeScore {
    pub fn in_range(value: i32, range: ScoreRange) -> Option<Self> {
        range.contains(value).then_some(Self {
            value,
            range,
            provenance: Provenance::Parsed,
        })
    }
}

impl fmt::Display for JudgeScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

/// First integer token in `text`: the first decimal digit run, with a minus
/// sign included when directly attached. Runs too long for `i64` saturate
/// toward the nearest bound.
fn first_integer_token(text: &str) -> Option<i64> {
    let bytes = text.as_bytes();
    let start = bytes.iter().position(|b| b.is_ascii_digit())?;
    let end = bytes[start..]
        .iter()
        .position(|b| !b.is_ascii_digit())
        .map_or(bytes.len(), |off| start + off);
    let negative = start > 0 && bytes[start - 1] == b'-';
    let digits = &text[start..end];
    match digits.parse::<i64>() {
        Ok(v) if negative => Some(-v),
        Ok(v) => Some(v),
        Err(_) if negative => Some(i64::MIN),
        Err(_) => Some(i64::MAX),
    }
}

/// Total parse of model output into a bounded score. Never fails: missing
/// integers fall back to `range.min`, out-of-window integers clamp.
pub fn parse_score(text: &str, range: ScoreRange) -> JudgeScore {
    let (value, provenance) = match first_integer_token(text) {
        None => (range.min(), Provenance::FallbackMin),
        Some(v) if v > i64::from(range.max()) => (range.max(), Provenance::ClampedHigh),
        Some(v) if v < i64::from(range.min()) => (range.min(), Provenance::ClampedLow),
        Some(v) => (v as i32, Provenance::Parsed),
    };
    JudgeScore {
        value,
        range,
        provenance,
    }
}
