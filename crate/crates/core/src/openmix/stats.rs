use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::{ClientContext, CountryCode, Metric, Timestamp};

/// Granularity at which measurements are aggregated, most specific first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scope", content = "key")]
pub enum Scope {
    Asn(u32),
    Country(CountryCode),
    Global,
}

impl Scope {
    /// The lookup order for a client: its AS, then its country, then everything.
    pub fn hierarchy(ctx: &ClientContext) -> [Scope; 3] {
        [Scope::Asn(ctx.asn), Scope::Country(ctx.country), Scope::Global]
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Asn(a) => write!(f, "asn:{a}"),
            Scope::Country(c) => write!(f, "country:{c}"),
            Scope::Global => f.write_str("global"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub value: f64,
    pub count: usize,
    /// Timestamp of the newest sample that went into `value`.
    pub newest: Timestamp,
}

/// Immutable snapshot of aggregated measurements, taken at a single instant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StatsView {
    as_of: Timestamp,
    entries: BTreeMap<(String, Scope, Metric), Aggregate>,
}

impl StatsView {
    pub fn new(as_of: Timestamp) -> Self {
        StatsView {
            as_of,
            entries: BTreeMap::new(),
        }
    }

    pub fn as_of(&self) -> Timestamp {
        self.as_of
    }

    pub fn insert(&mut self, platform: &str, scope: Scope, metric: Metric, agg: Aggregate) {
        self.entries.insert((platform.to_string(), scope, metric), agg);
    }

    pub fn get(&self, platform: &str, scope: Scope, metric: Metric) -> Option<&Aggregate> {
        self.entries.get(&(platform.to_string(), scope, metric))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, Scope, Metric), &Aggregate)> {
        self.entries.iter()
    }

    /// Value at exactly `scope`, unless it is older than `max_age` at `now`.
    pub fn usable(
        &self,
        platform: &str,
        scope: Scope,
        metric: Metric,
        now: Timestamp,
        max_age: Duration,
    ) -> Option<f64> {
        self.get(platform, scope, metric)
            .filter(|a| now.since(a.newest) <= max_age)
            .map(|a| a.value)
    }

    /// The most specific usable value for one platform.
    pub fn lookup(
        &self,
        platform: &str,
        metric: Metric,
        ctx: &ClientContext,
        now: Timestamp,
        max_age: Duration,
    ) -> Option<(Scope, f64)> {
        Scope::hierarchy(ctx)
            .into_iter()
            .find_map(|s| self.usable(platform, s, metric, now, max_age).map(|v| (s, v)))
    }
}
