//! Calendar periods at monthly or annual frequency.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Monthly,
    Annual,
}

/// A calendar year and month. Annual periods always carry `month == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CalendarDate {
    pub year: i32,
    pub month: u8,
}

impl CalendarDate {
    pub fn new(year: i32, month: u8) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::InvalidPeriod(format!("month {month} outside 1..=12")));
        }
        Ok(Self { year, month })
    }
}

/// A period expressed as an offset from a calendar origin.
///
/// Equality, hashing and ordering follow the calendar position, so two
/// indices with different origins that land on the same month compare equal.
#[derive(Debug, Clone, Copy)]
pub struct PeriodIndex {
    pub frequency: Frequency,
    pub origin: CalendarDate,
    pub offset: u32,
}

impl PeriodIndex {
    pub fn new(frequency: Frequency, origin: CalendarDate, offset: u32) -> Result<Self> {
        if frequency == Frequency::Annual && origin.month != 1 {
            return Err(Error::InvalidPeriod("annual origin must use month 1".into()));
        }
        CalendarDate::new(origin.year, origin.month)?;
        Ok(Self { frequency, origin, offset })
    }

    pub fn monthly(year: i32, month: u8) -> Result<Self> {
        Self::new(Frequency::Monthly, CalendarDate::new(year, month)?, 0)
    }

    pub fn annual(year: i32) -> Result<Self> {
        Self::new(Frequency::Annual, CalendarDate { year, month: 1 }, 0)
    }

    /// Absolute position on the frequency's time line.
    pub fn ordinal(&self) -> i64 {
        let base = match self.frequency {
            Frequency::Monthly => self.origin.year as i64 * 12 + (self.origin.month as i64 - 1),
            Frequency::Annual => self.origin.year as i64,
        };
        base + self.offset as i64
    }

    pub fn date(&self) -> CalendarDate {
        let ord = self.ordinal();
        match self.frequency {
            Frequency::Monthly => CalendarDate {
                year: ord.div_euclid(12) as i32,
                month: (ord.rem_euclid(12) + 1) as u8,
            },
            Frequency::Annual => CalendarDate { year: ord as i32, month: 1 },
        }
    }

    /// Same calendar position re-expressed with zero offset.
    pub fn normalized(&self) -> Self {
        Self { frequency: self.frequency, origin: self.date(), offset: 0 }
    }

    /// Signed number of periods from `self` to `later`.
    pub fn distance_to(&self, later: &PeriodIndex) -> Result<i64> {
        if self.frequency != later.frequency {
            return Err(Error::InvalidPeriod("cannot compare monthly and annual periods".into()));
        }
        Ok(later.ordinal() - self.ordinal())
    }

    /// Shifts by `n` periods (negative allowed as long as the result exists).
    pub fn shifted(&self, n: i64) -> Self {
        let d = self.normalized();
        let ord = d.ordinal() + n;
        let origin = match self.frequency {
            Frequency::Monthly => CalendarDate {
                year: ord.div_euclid(12) as i32,
                month: (ord.rem_euclid(12) + 1) as u8,
            },
            Frequency::Annual => CalendarDate { year: ord as i32, month: 1 },
        };
        Self { frequency: self.frequency, origin, offset: 0 }
    }
}

impl PartialEq for PeriodIndex {
    fn eq(&self, other: &Self) -> bool {
        self.frequency == other.frequency && self.ordinal() == other.ordinal()
    }
}

impl Eq for PeriodIndex {}

impl Hash for PeriodIndex {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.frequency.hash(state);
        self.ordinal().hash(state);
    }
}

impl Ord for PeriodIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.frequency, self.ordinal()).cmp(&(other.frequency, other.ordinal()))
    }
}

impl PartialOrd for PeriodIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for PeriodIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.date();
        match self.frequency {
            Frequency::Monthly => write!(f, "{:04}-{:02}", d.year, d.month),
            Frequency::Annual => write!(f, "{:04}", d.year),
        }
    }
}

impl FromStr for PeriodIndex {
    type Err = Error;

    /// Accepts `YYYY-MM` (monthly) or `YYYY` (annual).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidPeriod(format!("`{s}` is not YYYY-MM or YYYY"));
        let digits = |part: &str| !part.is_empty() && part.bytes().all(|b| b.is_ascii_digit());
        match s.split_once('-') {
            Some((y, m)) => {
                if y.len() != 4 || m.len() != 2 || !digits(y) || !digits(m) {
                    return Err(bad());
                }
                let year: i32 = y.parse().map_err(|_| bad())?;
                let month: u8 = m.parse().map_err(|_| bad())?;
                PeriodIndex::monthly(year, month)
            }
            None => {
                if s.len() != 4 || !digits(s) {
                    return Err(bad());
                }
                PeriodIndex::annual(s.parse().map_err(|_| bad())?)
            }
        }
    }
}

impl Serialize for PeriodIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PeriodIndex {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A contiguous run of periods; column `i` of a panel is `start + i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodRange {
    pub start: PeriodIndex,
    pub len: usize,
}

impl PeriodRange {
    pub fn new(start: PeriodIndex, len: usize) -> Self {
        Self { start: start.normalized(), len }
    }

    /// Inclusive range between two periods of the same frequency.
    pub fn inclusive(first: PeriodIndex, last: PeriodIndex) -> Result<Self> {
        let d = first.distance_to(&last)?;
        if d < 0 {
            return Err(Error::InvalidPeriod(format!("{last} precedes {first}")));
        }
        Ok(Self::new(first, d as usize + 1))
    }

    pub fn frequency(&self) -> Frequency {
        self.start.frequency
    }

    pub fn get(&self, i: usize) -> PeriodIndex {
        PeriodIndex { offset: i as u32, ..self.start }
    }

    pub fn last(&self) -> PeriodIndex {
        self.get(self.len.saturating_sub(1))
    }

    /// Column position of `p`, if inside the range.
    pub fn position(&self, p: &PeriodIndex) -> Option<usize> {
        let d = self.start.distance_to(p).ok()?;
        (d >= 0 && (d as usize) < self.len).then_some(d as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = PeriodIndex> + '_ {
        (0..self.len).map(|i| self.get(i))
    }
}
