//! Detection and classification of the seven time specifiers in query text,
//! plus evaluation of temporal constraints against fact intervals.
//!
//! Supported surface forms, in match-precedence order (two-point specifiers
//! first, then decade forms, then one-point forms):
//!
//! - `from [time1] to [time2]`
//! - `between [time1] and [time2]`
//! - `in early [decade]s`
//! - `in late [decade]s`
//! - `in [time]`
//! - `after [time]`
//! - `before [time]`
//!
//! A `[time]` is a year, optionally preceded by a month name ("May 1997").
//! Only explicit expressions are recognized; relative ("tomorrow") and
//! implicit ("Labor Day") forms yield no parse.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// One of the seven time-specifier surface patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Specifier {
    FromTo,
    In,
    Between,
    After,
    Before,
    InEarly,
    InLate,
}

impl Specifier {
    /// All seven variants, in the fixed order used for reports.
    pub const ALL: [Specifier; 7] = [
        Specifier::FromTo,
        Specifier::In,
        Specifier::Between,
        Specifier::After,
        Specifier::Before,
        Specifier::InEarly,
        Specifier::InLate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Specifier::FromTo => "from_to",
            Specifier::In => "in",
            Specifier::Between => "between",
            Specifier::After => "after",
            Specifier::Before => "before",
            Specifier::InEarly => "in_early",
            Specifier::InLate => "in_late",
        }
    }

    pub fn from_name(name: &str) -> Option<Specifier> {
        Specifier::ALL.iter().copied().find(|s| s.name() == name)
    }

    /// Whether the constraint carries a second time point.
    pub fn is_two_point(&self) -> bool {
        matches!(self, Specifier::FromTo | Specifier::Between)
    }
}

impl fmt::Display for Specifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A year, optionally refined to a month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimePoint {
    pub year: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub month: Option<u8>,
}

impl TimePoint {
    pub fn year(year: i32) -> TimePoint {
        TimePoint { year, month: None }
    }

    pub fn year_month(year: i32, month: u8) -> TimePoint {
        debug_assert!((1..=12).contains(&month));
        TimePoint { year, month: Some(month) }
    }

    /// Inclusive month-index span covered by this point. A bare year spans
    /// January through December of that year.
    pub fn month_span(&self) -> (i64, i64) {
        let base = self.year as i64 * 12;
        match self.month {
            Some(m) => (base + m as i64 - 1, base + m as i64 - 1),
            None => (base, base + 11),
        }
    }

    /// First covered month index.
    pub fn start_month(&self) -> i64 {
        self.month_span().0
    }

    /// Last covered month index.
    pub fn end_month(&self) -> i64 {
        self.month_span().1
    }
}

impl fmt::Display for TimePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.month {
            Some(m) => write!(f, "{} {}", MONTH_NAMES[m as usize - 1], self.year),
            None => write!(f, "{}", self.year),
        }
    }
}

/// A specifier together with its time point(s).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeConstraint {
    pub specifier: Specifier,
    pub t1: TimePoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2: Option<TimePoint>,
}

impl TimeConstraint {
    /// Builds a constraint, checking the structural invariants: `t2` is
    /// present iff the specifier is two-point, `t1 <= t2` chronologically,
    /// and decade forms carry a bare year that is a multiple of ten.
    pub fn new(specifier: Specifier, t1: TimePoint, t2: Option<TimePoint>) -> Option<TimeConstraint> {
        if specifier.is_two_point() != t2.is_some() {
            return None;
        }
        if let Some(t2) = t2 {
            if t1.start_month() > t2.start_month() {
                return None;
            }
        }
        if matches!(specifier, Specifier::InEarly | Specifier::InLate)
            && (t1.month.is_some() || t1.year.rem_euclid(10) != 0)
        {
            return None;
        }
        Some(TimeConstraint { specifier, t1, t2 })
    }

    /// Inclusive month-index interval the constraint refers to. For
    /// `After`/`Before` this is the reference point itself; satisfaction is
    /// directional rather than overlap-based for those two.
    pub fn month_span(&self) -> (i64, i64) {
        match self.specifier {
            Specifier::FromTo | Specifier::Between => {
                (self.t1.start_month(), self.t2.unwrap().end_month())
            }
            Specifier::InEarly => (self.t1.year as i64 * 12, (self.t1.year as i64 + 4) * 12 + 11),
            Specifier::InLate => {
                ((self.t1.year as i64 + 5) * 12, (self.t1.year as i64 + 9) * 12 + 11)
            }
            Specifier::In | Specifier::After | Specifier::Before => self.t1.month_span(),
        }
    }
}

const MONTH_NAMES: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September",
    "October", "November", "December",
];

fn month_number(token: &str) -> Option<u8> {
    let lower = token.to_ascii_lowercase();
    MONTH_NAMES
        .iter()
        .position(|m| {
            let m = m.to_ascii_lowercase();
            m == lower || (lower.len() == 3 && m.starts_with(&lower))
        })
        .map(|i| i as u8 + 1)
}

/// Parses a `[month]? year` token pair captured by the pattern regexes.
fn parse_time_token(month: Option<&str>, year: &str) -> Option<TimePoint> {
    let year: i32 = year.parse().ok()?;
    match month {
        Some(m) => Some(TimePoint::year_month(year, month_number(m)?)),
        None => Some(TimePoint::year(year)),
    }
}

const TIME: &str = r"(?:([A-Za-z]+)\s+)?(\d{3,4})";

static RE_FROM_TO: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"(?i)\bfrom\s+{TIME}\s+to\s+{TIME}")).unwrap()
});
static RE_BETWEEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"(?i)\bbetween\s+{TIME}\s+and\s+{TIME}")).unwrap()
});
static RE_IN_EARLY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bin\s+early\s+(\d{3,4})s\b").unwrap());
static RE_IN_LATE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bin\s+late\s+(\d{3,4})s\b").unwrap());
static RE_IN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"(?i)\bin\s+{TIME}\b")).unwrap());
static RE_AFTER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"(?i)\bafter\s+{TIME}\b")).unwrap());
static RE_BEFORE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"(?i)\bbefore\s+{TIME}\b")).unwrap());

fn try_two_point(re: &Regex, specifier: Specifier, text: &str) -> Option<TimeConstraint> {
    let caps = re.captures(text)?;
    let t1 = parse_time_token(caps.get(1).map(|m| m.as_str()), caps.get(2)?.as_str())?;
    let t2 = parse_time_token(caps.get(3).map(|m| m.as_str()), caps.get(4)?.as_str())?;
    TimeConstraint::new(specifier, t1, Some(t2))
}

fn try_decade(re: &Regex, specifier: Specifier, text: &str) -> Option<TimeConstraint> {
    let caps = re.captures(text)?;
    let decade: i32 = caps.get(1)?.as_str().parse().ok()?;
    TimeConstraint::new(specifier, TimePoint::year(decade), None)
}

fn try_one_point(re: &Regex, specifier: Specifier, text: &str) -> Option<TimeConstraint> {
    let caps = re.captures(text)?;
    // A captured "month" word that is not a month name means the pattern
    // grabbed ordinary prose ("in the 1990"); only the year survives if the
    // word slot was empty.
    let month = match caps.get(1) {
        Some(m) => Some(month_number(m.as_str())?),
        None => None,
    };
    let year: i32 = caps.get(2)?.as_str().parse().ok()?;
    let t1 = match month {
        Some(m) => TimePoint::year_month(year, m),
        None => TimePoint::year(year),
    };
    TimeConstraint::new(specifier, t1, None)
}

/// Detects a time specifier in `text` and returns it with its constraint,
/// or `None` for non-temporal text. Longest-pattern precedence: two-point
/// forms before decade forms before one-point forms, so "between 1990 and
/// 2000" is never misread as "in 1990".
pub fn parse_query(text: &str) -> Option<(Specifier, TimeConstraint)> {
    let c = try_two_point(&RE_FROM_TO, Specifier::FromTo, text)
        .or_else(|| try_two_point(&RE_BETWEEN, Specifier::Between, text))
        .or_else(|| try_decade(&RE_IN_EARLY, Specifier::InEarly, text))
        .or_else(|| try_decade(&RE_IN_LATE, Specifier::InLate, text))
        .or_else(|| try_one_point(&RE_IN, Specifier::In, text))
        .or_else(|| try_one_point(&RE_AFTER, Specifier::After, text))
        .or_else(|| try_one_point(&RE_BEFORE, Specifier::Before, text))?;
    Some((c.specifier, c))
}

/// Overlap semantics for gold labels. `In`/`FromTo`/`Between` (and the
/// decade forms over their five-year windows) require the query interval to
/// intersect the fact interval at month granularity; `After t` requires the
/// fact to extend strictly past `t`; `Before t` requires the fact to start
/// strictly before `t`.
pub fn constraint_satisfied(c: &TimeConstraint, fact: (TimePoint, TimePoint)) -> bool {
    let (fact_start, fact_end) = (fact.0.start_month(), fact.1.end_month());
    debug_assert!(fact_start <= fact_end, "fact start must not exceed fact end");
    match c.specifier {
        Specifier::After => fact_end > c.t1.end_month(),
        Specifier::Before => fact_start < c.t1.start_month(),
        _ => {
            let (qs, qe) = c.month_span();
            qs <= fact_end && fact_start <= qe
        }
    }
}

/// Renders the canonical query phrase for a constraint, e.g. "from May 1997
/// to May 2001" or "in early 1990s". Inverse of [`parse_query`] on
/// template-generated text.
pub fn render_constraint(c: &TimeConstraint) -> String {
    match c.specifier {
        Specifier::FromTo => format!("from {} to {}", c.t1, c.t2.unwrap()),
        Specifier::Between => format!("between {} and {}", c.t1, c.t2.unwrap()),
        Specifier::In => format!("in {}", c.t1),
        Specifier::After => format!("after {}", c.t1),
        Specifier::Before => format!("before {}", c.t1),
        Specifier::InEarly => format!("in early {}s", c.t1.year),
        Specifier::InLate => format!("in late {}s", c.t1.year),
    }
}
