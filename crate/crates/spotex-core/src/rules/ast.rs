//! Rule abstract syntax: the closed predicate vocabulary and the
//! boolean combinators over it.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::fingerprint::Mac;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid time `{0}`, expected HH:MM")]
pub struct InvalidTime(pub String);

/// Minute-resolution wall-clock time of day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TimeOfDay {
    minutes: u16,
}

impl TimeOfDay {
    pub fn new(hour: u8, minute: u8) -> Result<Self, InvalidTime> {
        if hour > 23 || minute > 59 {
            return Err(InvalidTime(format!("{hour}:{minute}")));
        }
        Ok(Self {
            minutes: u16::from(hour) * 60 + u16::from(minute),
        })
    }

    /// Time of day of an epoch-milliseconds instant, in UTC.
    pub fn from_epoch_ms(t: i64) -> Self {
        let day_secs = t.div_euclid(1000).rem_euclid(86_400);
        Self {
            minutes: (day_secs / 60) as u16,
        }
    }

    pub fn hour(self) -> u8 {
        (self.minutes / 60) as u8
    }

    pub fn minute(self) -> u8 {
        (self.minutes % 60) as u8
    }
}

impl FromStr for TimeOfDay {
    type Err = InvalidTime;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || InvalidTime(s.to_string());
        let (h, m) = s.split_once(':').ok_or_else(bad)?;
        if h.len() != 2 || m.len() != 2 {
            return Err(bad());
        }
        let hour: u8 = h.parse().map_err(|_| bad())?;
        let minute: u8 = m.parse().map_err(|_| bad())?;
        TimeOfDay::new(hour, minute).map_err(|_| bad())
    }
}

impl fmt::Display for TimeOfDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}:{:02}", self.hour(), self.minute())
    }
}

/// One atomic condition over the evaluation context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Predicate {
    /// Some observation in the scan has this SSID.
    IsVisible(String),
    /// Some observation in the scan has this access-point MAC.
    IsVisibleMac(Mac),
    /// Some observation with this SSID has `lo <= rssi <= hi`.
    RssiIn { ssid: String, lo: i32, hi: i32 },
    /// The context clock lies in `[from, to)`, wrapping past midnight
    /// when `from > to`.
    TimeBetween { from: TimeOfDay, to: TimeOfDay },
    /// The evaluating client has this MAC.
    ClientIs(Mac),
    /// The rule's antecedent has never previously held for this
    /// (client, rule) pair.
    FirstVisit,
    /// The client travelled in a group of at least `n` people for at
    /// least `t_secs` seconds.
    InGroupOf { n: u32, t_secs: u64 },
    /// The client attribute `key` exists and is at least `min`.
    AttrGe { key: String, min: i64 },
}

impl Predicate {
    pub fn name(&self) -> &'static str {
        match self {
            Predicate::IsVisible(_) => "IS_VISIBLE",
            Predicate::IsVisibleMac(_) => "IS_VISIBLE_MAC",
            Predicate::RssiIn { .. } => "RSSI_IN",
            Predicate::TimeBetween { .. } => "TIME_BETWEEN",
            Predicate::ClientIs(_) => "CLIENT_IS",
            Predicate::FirstVisit => "FIRST_VISIT",
            Predicate::InGroupOf { .. } => "IN_GROUP_OF",
            Predicate::AttrGe { .. } => "ATTR_GE",
        }
    }
}

/// Boolean condition tree. `AND` binds tighter than `OR`, `NOT` tightest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConditionNode {
    Predicate(Predicate),
    And(Box<ConditionNode>, Box<ConditionNode>),
    Or(Box<ConditionNode>, Box<ConditionNode>),
    Not(Box<ConditionNode>),
}

impl ConditionNode {
    pub fn and(left: ConditionNode, right: ConditionNode) -> Self {
        ConditionNode::And(Box::new(left), Box::new(right))
    }

    pub fn or(left: ConditionNode, right: ConditionNode) -> Self {
        ConditionNode::Or(Box::new(left), Box::new(right))
    }

    pub fn not(child: ConditionNode) -> Self {
        ConditionNode::Not(Box::new(child))
    }

    /// True when any predicate in the tree satisfies `test`.
    pub fn any_predicate(&self, test: &impl Fn(&Predicate) -> bool) -> bool {
        match self {
            ConditionNode::Predicate(p) => test(p),
            ConditionNode::And(l, r) | ConditionNode::Or(l, r) => {
                l.any_predicate(test) || r.any_predicate(test)
            }
            ConditionNode::Not(c) => c.any_predicate(test),
        }
    }

    pub fn uses_first_visit(&self) -> bool {
        self.any_predicate(&|p| matches!(p, Predicate::FirstVisit))
    }

    pub fn uses_in_group_of(&self) -> bool {
        self.any_predicate(&|p| matches!(p, Predicate::InGroupOf { .. }))
    }
}

impl From<Predicate> for ConditionNode {
    fn from(p: Predicate) -> Self {
        ConditionNode::Predicate(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_parses_strict_hh_mm() {
        assert_eq!("09:30".parse::<TimeOfDay>().unwrap(), TimeOfDay::new(9, 30).unwrap());
        assert_eq!("00:00".parse::<TimeOfDay>().unwrap().to_string(), "00:00");
        for bad in ["9:30", "09:3", "24:00", "12:60", "12-30", "", "ab:cd"] {
            assert!(bad.parse::<TimeOfDay>().is_err(), "{bad} should not parse");
        }
    }

    #[test]
    fn time_from_epoch_ms_is_utc_minutes() {
        // 1970-01-01 00:00:30.500
        assert_eq!(TimeOfDay::from_epoch_ms(30_500).to_string(), "00:00");
        // one full day plus 13:45
        let t = 86_400_000 + (13 * 3600 + 45 * 60) * 1000;
        assert_eq!(TimeOfDay::from_epoch_ms(t).to_string(), "13:45");
        // negative instants wrap backwards
        assert_eq!(TimeOfDay::from_epoch_ms(-60_000).to_string(), "23:59");
    }

    #[test]
    fn predicate_search_walks_the_tree() {
        let node = ConditionNode::or(
            ConditionNode::not(Predicate::FirstVisit.into()),
            ConditionNode::and(
                Predicate::IsVisible("x".into()).into(),
                Predicate::InGroupOf { n: 2, t_secs: 30 }.into(),
            ),
        );
        assert!(node.uses_first_visit());
        assert!(node.uses_in_group_of());
        let leaf: ConditionNode = Predicate::IsVisible("x".into()).into();
        assert!(!leaf.uses_first_visit());
    }
}
