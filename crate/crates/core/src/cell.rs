//! Spatial and temporal keys.
//!
//! Both [`RegionLevel`] and [`TimeUnit`] are declared coarse to fine, so their
//! derived orderings sort grids the way reliability tables are laid out.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionLevel {
    Nation,
    CensusRegion,
    State,
    Msa,
    County,
    Township,
}

impl RegionLevel {
    pub const ALL: [RegionLevel; 6] = [
        RegionLevel::Nation,
        RegionLevel::CensusRegion,
        RegionLevel::State,
        RegionLevel::Msa,
        RegionLevel::County,
        RegionLevel::Township,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegionLevel::Nation => "nation",
            RegionLevel::CensusRegion => "census-region",
            RegionLevel::State => "state",
            RegionLevel::Msa => "msa",
            RegionLevel::County => "county",
            RegionLevel::Township => "township",
        }
    }
}

impl fmt::Display for RegionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegionLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "nation" | "national" => Ok(RegionLevel::Nation),
            "census-region" | "region" => Ok(RegionLevel::CensusRegion),
            "state" => Ok(RegionLevel::State),
            "msa" => Ok(RegionLevel::Msa),
            "county" => Ok(RegionLevel::County),
            "township" => Ok(RegionLevel::Township),
            other => Err(Error::InvalidRegion(format!("unknown region level '{other}'"))),
        }
    }
}

/// A region at some spatial level.
///
/// Counties are 5-digit FIPS codes, states are 2-letter postal codes and the
/// nation is always `US`. Other levels accept any non-empty code without
/// whitespace.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegionCode {
    level: RegionLevel,
    code: String,
}

impl RegionCode {
    pub fn new(level: RegionLevel, code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        let code = code.trim().to_string();
        let ok = match level {
            RegionLevel::County => code.len() == 5 && code.bytes().all(|b| b.is_ascii_digit()),
            RegionLevel::State => code.len() == 2 && code.bytes().all(|b| b.is_ascii_uppercase()),
            RegionLevel::Nation => code == "US",
            _ => !code.is_empty() && !code.chars().any(char::is_whitespace),
        };
        if !ok {
            return Err(Error::InvalidRegion(format!("'{code}' is not a valid {level} code")));
        }
        Ok(RegionCode { level, code })
    }

    pub fn county(fips: impl Into<String>) -> Result<Self> {
        Self::new(RegionLevel::County, fips)
    }

    pub fn state(postal: impl Into<String>) -> Result<Self> {
        Self::new(RegionLevel::State, postal)
    }

    pub fn nation() -> Self {
        RegionCode { level: RegionLevel::Nation, code: "US".to_string() }
    }

    pub fn level(&self) -> RegionLevel {
        self.level
    }

    pub fn code(&self) -> &str {
        &self.code
    }
}

impl fmt::Display for RegionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.level, self.code)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Year,
    Quarter,
    Month,
    Week,
    Day,
}

impl TimeUnit {
    pub const ALL: [TimeUnit; 5] =
        [TimeUnit::Year, TimeUnit::Quarter, TimeUnit::Month, TimeUnit::Week, TimeUnit::Day];

    pub fn as_str(self) -> &'static str {
        match self {
            TimeUnit::Year => "year",
            TimeUnit::Quarter => "quarter",
            TimeUnit::Month => "month",
            TimeUnit::Week => "week",
            TimeUnit::Day => "day",
        }
    }
}

impl fmt::Display for TimeUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TimeUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "year" => Ok(TimeUnit::Year),
            "quarter" => Ok(TimeUnit::Quarter),
            "month" => Ok(TimeUnit::Month),
            "week" => Ok(TimeUnit::Week),
            "day" => Ok(TimeUnit::Day),
            other => Err(Error::InvalidTimeCell(format!("unknown time unit '{other}'"))),
        }
    }
}

/// Number of ISO weeks (52 or 53) in an ISO week-numbering year.
pub fn iso_weeks_in_year(iso_year: i32) -> u32 {
    // Dec 28 always falls in the last ISO week of its year.
    NaiveDate::from_ymd_opt(iso_year, 12, 28).map(|d| d.iso_week().week()).unwrap_or(52)
}

fn days_in_year(year: i32) -> u32 {
    if NaiveDate::from_ymd_opt(year, 2, 29).is_some() {
        366
    } else {
        365
    }
}

/// A period of time at some granularity.
///
/// `iso_year` is the ISO week-numbering year for weeks and the calendar year
/// for every other unit. `index` is the ISO week (1-53), quarter (1-4), month
/// (1-12), ordinal day of year (1-366), or 0 for a whole year.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeCell {
    pub unit: TimeUnit,
    pub iso_year: i32,
    pub index: u32,
}

impl TimeCell {
    pub fn new(unit: TimeUnit, iso_year: i32, index: u32) -> Result<Self> {
        let max = match unit {
            TimeUnit::Year => 0,
            TimeUnit::Quarter => 4,
            TimeUnit::Month => 12,
            TimeUnit::Week => iso_weeks_in_year(iso_year),
            TimeUnit::Day => days_in_year(iso_year),
        };
        let min = if unit == TimeUnit::Year { 0 } else { 1 };
        if index < min || index > max {
            return Err(Error::InvalidTimeCell(format!(
                "{unit} index {index} out of range {min}..={max} for {iso_year}"
            )));
        }
        Ok(TimeCell { unit, iso_year, index })
    }

    pub fn week(iso_year: i32, week: u32) -> Result<Self> {
        Self::new(TimeUnit::Week, iso_year, week)
    }

    pub fn from_date(date: NaiveDate, unit: TimeUnit) -> Self {
        let (iso_year, index) = match unit {
            TimeUnit::Week => {
                let w = date.iso_week();
                (w.year(), w.week())
            }
            TimeUnit::Day => (date.year(), date.ordinal()),
            TimeUnit::Month => (date.year(), date.month()),
            TimeUnit::Quarter => (date.year(), (date.month() - 1) / 3 + 1),
            TimeUnit::Year => (date.year(), 0),
        };
        TimeCell { unit, iso_year, index }
    }

    /// First calendar day covered by the cell.
    pub fn first_day(&self) -> NaiveDate {
        let d = match self.unit {
            TimeUnit::Week => NaiveDate::from_isoywd_opt(self.iso_year, self.index, Weekday::Mon),
            TimeUnit::Day => NaiveDate::from_yo_opt(self.iso_year, self.index),
            TimeUnit::Month => NaiveDate::from_ymd_opt(self.iso_year, self.index, 1),
            TimeUnit::Quarter => NaiveDate::from_ymd_opt(self.iso_year, (self.index - 1) * 3 + 1, 1),
            TimeUnit::Year => NaiveDate::from_ymd_opt(self.iso_year, 1, 1),
        };
        d.expect("time cell validated on construction")
    }

    /// Consecutive integer position of the cell within its unit, so that
    /// adjacent cells differ by exactly one (also across year boundaries).
    pub fn ordinal(&self) -> i64 {
        match self.unit {
            // Mondays have num_days_from_ce = 1 (mod 7).
            TimeUnit::Week => (self.first_day().num_days_from_ce() as i64 - 1) / 7,
            TimeUnit::Day => self.first_day().num_days_from_ce() as i64,
            TimeUnit::Month => self.iso_year as i64 * 12 + (self.index as i64 - 1),
            TimeUnit::Quarter => self.iso_year as i64 * 4 + (self.index as i64 - 1),
            TimeUnit::Year => self.iso_year as i64,
        }
    }

    pub fn from_ordinal(unit: TimeUnit, ordinal: i64) -> Result<Self> {
        let bad = || Error::InvalidTimeCell(format!("{unit} ordinal {ordinal} out of range"));
        match unit {
            TimeUnit::Week => {
                let days = i32::try_from(ordinal * 7 + 1).map_err(|_| bad())?;
                let d = NaiveDate::from_num_days_from_ce_opt(days).ok_or_else(bad)?;
                Ok(TimeCell::from_date(d, unit))
            }
            TimeUnit::Day => {
                let days = i32::try_from(ordinal).map_err(|_| bad())?;
                let d = NaiveDate::from_num_days_from_ce_opt(days).ok_or_else(bad)?;
                Ok(TimeCell::from_date(d, unit))
            }
            TimeUnit::Month => {
                let y = i32::try_from(ordinal.div_euclid(12)).map_err(|_| bad())?;
                TimeCell::new(unit, y, ordinal.rem_euclid(12) as u32 + 1)
            }
            TimeUnit::Quarter => {
                let y = i32::try_from(ordinal.div_euclid(4)).map_err(|_| bad())?;
                TimeCell::new(unit, y, ordinal.rem_euclid(4) as u32 + 1)
            }
            TimeUnit::Year => TimeCell::new(unit, i32::try_from(ordinal).map_err(|_| bad())?, 0),
        }
    }

    /// The cell at a coarser (or equal) unit containing this one, when that
    /// containment is exact. ISO weeks straddle month and year boundaries, so
    /// weeks only coarsen to themselves.
    pub fn coarsen(&self, unit: TimeUnit) -> Option<TimeCell> {
        if unit == self.unit {
            return Some(*self);
        }
        match (self.unit, unit) {
            (TimeUnit::Day, _) => Some(TimeCell::from_date(self.first_day(), unit)),
            (TimeUnit::Month, TimeUnit::Quarter | TimeUnit::Year)
            | (TimeUnit::Quarter, TimeUnit::Year) => Some(TimeCell::from_date(self.first_day(), unit)),
            _ => None,
        }
    }
}

impl fmt::Display for TimeCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.unit {
            TimeUnit::Week => write!(f, "{}-W{:02}", self.iso_year, self.index),
            TimeUnit::Day => write!(f, "{}-D{:03}", self.iso_year, self.index),
            TimeUnit::Month => write!(f, "{}-M{:02}", self.iso_year, self.index),
            TimeUnit::Quarter => write!(f, "{}-Q{}", self.iso_year, self.index),
            TimeUnit::Year => write!(f, "{}", self.iso_year),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn county_codes_are_five_digits() {
        assert!(RegionCode::county("36061").is_ok());
        assert!(RegionCode::county("3606").is_err());
        assert!(RegionCode::county("3606a").is_err());
        assert!(RegionCode::state("NY").is_ok());
        assert!(RegionCode::state("36").is_err());
        assert!(RegionCode::new(RegionLevel::Nation, "CA").is_err());
    }

    #[test]
    fn iso_week_boundaries() {
        // 2020-01-01 is a Wednesday in week 1.
        assert_eq!(TimeCell::from_date(ymd(2020, 1, 1), TimeUnit::Week), TimeCell::week(2020, 1).unwrap());
        // 2019-12-30 is a Monday belonging to ISO year 2020.
        assert_eq!(TimeCell::from_date(ymd(2019, 12, 30), TimeUnit::Week), TimeCell::week(2020, 1).unwrap());
        assert_eq!(iso_weeks_in_year(2020), 53);
        assert_eq!(iso_weeks_in_year(2019), 52);
        assert!(TimeCell::week(2019, 53).is_err());
    }

    #[test]
    fn quarter_and_day() {
        let q = TimeCell::from_date(ymd(2020, 3, 15), TimeUnit::Quarter);
        assert_eq!((q.iso_year, q.index), (2020, 1));
        let d = TimeCell::from_date(ymd(2020, 12, 31), TimeUnit::Day);
        assert_eq!(d.index, 366);
    }

    #[test]
    fn coarsen_rules() {
        let day = TimeCell::from_date(ymd(2020, 5, 20), TimeUnit::Day);
        assert_eq!(day.coarsen(TimeUnit::Month).unwrap().index, 5);
        assert_eq!(day.coarsen(TimeUnit::Quarter).unwrap().index, 2);
        let week = TimeCell::week(2020, 10).unwrap();
        assert_eq!(week.coarsen(TimeUnit::Month), None);
        assert_eq!(week.coarsen(TimeUnit::Week), Some(week));
    }

    proptest! {
        #[test]
        fn consecutive_days_map_to_equal_or_adjacent_weeks(offset in 0i64..(131 * 365)) {
            let d = ymd(1970, 1, 1) + chrono::Duration::days(offset);
            let a = TimeCell::from_date(d, TimeUnit::Week);
            let b = TimeCell::from_date(d + chrono::Duration::days(1), TimeUnit::Week);
            let step = b.ordinal() - a.ordinal();
            prop_assert!(step == 0 || step == 1);
            prop_assert!(a.first_day() <= d && d < a.first_day() + chrono::Duration::days(7));
        }

        #[test]
        fn ordinal_round_trips(offset in 0i64..(131 * 365), unit_ix in 0usize..5) {
            let unit = TimeUnit::ALL[unit_ix];
            let d = ymd(1970, 1, 1) + chrono::Duration::days(offset);
            let cell = TimeCell::from_date(d, unit);
            prop_assert_eq!(TimeCell::from_ordinal(unit, cell.ordinal()).unwrap(), cell);
        }
    }
}
