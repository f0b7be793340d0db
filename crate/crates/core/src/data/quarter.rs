use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A calendar quarter. Ordering is chronological.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Quarter {
    pub year: i32,
    /// 1..=4
    pub q: u8,
}

impl Quarter {
    pub fn new(year: i32, q: u8) -> Result<Self> {
        if !(1..=4).contains(&q) {
            return Err(Error::Schema(format!("quarter index {q} not in 1..=4")));
        }
        Ok(Self { year, q })
    }

    pub fn from_date(date: NaiveDate) -> Self {
        Self {
            year: date.year(),
            q: (date.month0() / 3 + 1) as u8,
        }
    }

    /// Quarters since year 0 Q1; consecutive quarters differ by one.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 4 + (self.q as i64 - 1)
    }

    pub fn from_ordinal(n: i64) -> Self {
        Self {
            year: n.div_euclid(4) as i32,
            q: (n.rem_euclid(4) + 1) as u8,
        }
    }

    pub fn next(self) -> Self {
        Self::from_ordinal(self.ordinal() + 1)
    }

    pub fn offset(self, n: i64) -> Self {
        Self::from_ordinal(self.ordinal() + n)
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-Q{}", self.year, self.q)
    }
}

impl FromStr for Quarter {
    type Err = Error;

    /// Accepts `YYYY-Qn` or an ISO `YYYY-MM-DD` date.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Schema(format!("unrecognized date '{s}' (expected YYYY-Qn or YYYY-MM-DD)"));
        if let Some((y, q)) = s.split_once(['-', ' ']).filter(|(_, q)| q.starts_with(['Q', 'q'])) {
            let year: i32 = y.parse().map_err(|_| bad())?;
            let q: u8 = q[1..].parse().map_err(|_| bad())?;
            return Quarter::new(year, q).map_err(|_| bad());
        }
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map(Quarter::from_date)
            .map_err(|_| bad())
    }
}
