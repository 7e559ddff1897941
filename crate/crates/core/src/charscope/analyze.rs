//! TTL, platform-choice and latency-inflation analyses over resolution logs.
//!
//! Every analyzer is a pure function of a set of observations; record order
//! does not matter.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::report::Table;
use super::resolve::DomainResolution;
use crate::dns::decode_portal_name;
use crate::netsim::SimLog;
use crate::numeric::quantile_sorted;

/// Empirical CDF: `(value, fraction of samples <= value)` for each distinct value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfTable {
    pub metric: String,
    pub points: Vec<(f64, f64)>,
}

impl CdfTable {
    /// Non-finite values are dropped.
    pub fn from_values(metric: impl Into<String>, values: impl IntoIterator<Item = f64>) -> CdfTable {
        let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mut points: Vec<(f64, f64)> = Vec::new();
        for (i, x) in v.iter().enumerate() {
            let frac = (i + 1) as f64 / n;
            match points.last_mut() {
                Some(last) if last.0 == *x => last.1 = frac,
                _ => points.push((*x, frac)),
            }
        }
        CdfTable {
            metric: metric.into(),
            points,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Fraction of samples <= `value`.
    pub fn fraction_at(&self, value: f64) -> f64 {
        self.points
            .iter()
            .take_while(|(x, _)| *x <= value)
            .last()
            .map_or(0.0, |(_, f)| *f)
    }

    pub fn to_table(&self, name: &str) -> Table {
        let mut t = Table::new(name, &[self.metric.as_str(), "fraction"]);
        for (x, f) in &self.points {
            t.push(vec![x.to_string(), f.to_string()]);
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub platform: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    fn of(platform: &str, values: &mut [f64]) -> Option<FiveNumber> {
        values.sort_by(f64::total_cmp);
        let q = |p| quantile_sorted(values, p);
        Some(FiveNumber {
            platform: platform.to_string(),
            n: values.len(),
            min: q(0.0)?,
            q1: q(0.25)?,
            median: q(0.5)?,
            q3: q(0.75)?,
            max: q(1.0)?,
        })
    }
}

/// The meta-CDN stage of one resolved domain.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct TtlObservation {
    pub domain: String,
    pub ttl_s: u32,
    /// Where the meta-CDN sent the query next, if known.
    pub platform: Option<String>,
}

impl TtlObservation {
    /// Domains that never pass through a portal name are skipped.
    pub fn from_resolutions(records: &[DomainResolution]) -> Vec<TtlObservation> {
        records
            .iter()
            .filter_map(|r| {
                let meta = r.meta()?;
                Some(TtlObservation {
                    domain: r.domain.clone(),
                    ttl_s: meta.ttl_s,
                    platform: r.routed_to().map(str::to_string),
                })
            })
            .collect()
    }

    /// One observation per resolution; the portal stage is found by name.
    pub fn from_simlog(log: &SimLog, zone: &str) -> Vec<TtlObservation> {
        log.resolutions()
            .filter_map(|r| {
                let meta = r.chain.iter().find(|s| decode_portal_name(&s.name, zone).is_ok())?;
                Some(TtlObservation {
                    domain: r.domain.clone(),
                    ttl_s: meta.ttl_s,
                    platform: r.platform.clone(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtlAnalysis {
    /// One sample per distinct (domain, TTL).
    pub cdf: CdfTable,
    /// One sample per distinct (domain, platform, TTL).
    pub platforms: Vec<FiveNumber>,
}

impl TtlAnalysis {
    pub fn platform_table(&self, name: &str) -> Table {
        let mut t = Table::new(name, &["platform", "n", "min", "q1", "median", "q3", "max"]);
        for p in &self.platforms {
            t.push(vec![
                p.platform.clone(),
                p.n.to_string(),
                p.min.to_string(),
                p.q1.to_string(),
                p.median.to_string(),
                p.q3.to_string(),
                p.max.to_string(),
            ]);
        }
        t
    }
}

pub fn analyze_ttl(observations: &[TtlObservation]) -> TtlAnalysis {
    let per_domain: BTreeSet<(&str, u32)> = observations.iter().map(|o| (o.domain.as_str(), o.ttl_s)).collect();
    let cdf = CdfTable::from_values("ttl_s", per_domain.iter().map(|(_, t)| f64::from(*t)));
    let distinct: BTreeSet<(&str, &str, u32)> = observations
        .iter()
        .filter_map(|o| Some((o.platform.as_deref()?, o.domain.as_str(), o.ttl_s)))
        .collect();
    let mut by_platform: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (p, _, ttl) in distinct {
        by_platform.entry(p).or_default().push(f64::from(ttl));
    }
    let platforms = by_platform
        .iter_mut()
        .filter_map(|(p, v)| FiveNumber::of(p, v))
        .collect();
    TtlAnalysis { cdf, platforms }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    Vantage,
    Country,
}

/// One resolution that ended on a known platform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChoiceObservation {
    pub vantage: String,
    pub country: String,
    pub domain: String,
    pub platform: String,
}

impl ChoiceObservation {
    pub fn from_simlog(log: &SimLog) -> Vec<ChoiceObservation> {
        log.resolutions()
            .filter_map(|r| {
                Some(ChoiceObservation {
                    vantage: r.client.clone(),
                    country: r.country.as_str().to_string(),
                    domain: r.domain.clone(),
                    platform: r.platform.clone()?,
                })
            })
            .collect()
    }

    /// Resolutions taken from a single vantage point. The platform is the
    /// meta-CDN's routing target.
    pub fn from_resolutions(records: &[DomainResolution], vantage: &str, country: &str) -> Vec<ChoiceObservation> {
        records
            .iter()
            .filter_map(|r| {
                Some(ChoiceObservation {
                    vantage: vantage.to_string(),
                    country: country.to_string(),
                    domain: r.domain.clone(),
                    platform: r.routed_to()?.to_string(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareRow {
    pub group: String,
    pub platform: String,
    pub count: u64,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceAnalysis {
    pub shares: Vec<ShareRow>,
    /// Number of distinct platforms seen per domain.
    pub per_domain: BTreeMap<String, usize>,
    /// `distinct platforms -> number of domains`.
    pub histogram: BTreeMap<usize, usize>,
}

impl ChoiceAnalysis {
    pub fn share(&self, group: &str, platform: &str) -> f64 {
        self.shares
            .iter()
            .find(|r| r.group == group && r.platform == platform)
            .map_or(0.0, |r| r.share)
    }

    pub fn share_table(&self, name: &str) -> Table {
        let mut t = Table::new(name, &["group", "platform", "count", "share"]);
        for r in &self.shares {
            t.push(vec![r.group.clone(), r.platform.clone(), r.count.to_string(), r.share.to_string()]);
        }
        t
    }

    pub fn histogram_table(&self, name: &str) -> Table {
        let mut t = Table::new(name, &["distinct_platforms", "domains"]);
        for (k, n) in &self.histogram {
            t.push(vec![k.to_string(), n.to_string()]);
        }
        t
    }
}

pub fn analyze_choices(observations: &[ChoiceObservation], grouping: Grouping) -> ChoiceAnalysis {
    let mut counts: BTreeMap<&str, BTreeMap<&str, u64>> = BTreeMap::new();
    let mut platforms: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for o in observations {
        let g = match grouping {
            Grouping::Vantage => o.vantage.as_str(),
            Grouping::Country => o.country.as_str(),
        };
        *counts.entry(g).or_default().entry(&o.platform).or_default() += 1;
        platforms.entry(&o.domain).or_default().insert(&o.platform);
    }
    let mut shares = Vec::new();
    for (g, per) in &counts {
        let total: u64 = per.values().sum();
        for (p, n) in per {
            shares.push(ShareRow {
                group: g.to_string(),
                platform: p.to_string(),
                count: *n,
                share: *n as f64 / total as f64,
            });
        }
    }
    let per_domain: BTreeMap<String, usize> = platforms.iter().map(|(d, s)| (d.to_string(), s.len())).collect();
    let mut histogram = BTreeMap::new();
    for n in per_domain.values() {
        *histogram.entry(*n).or_insert(0) += 1;
    }
    ChoiceAnalysis {
        shares,
        per_domain,
        histogram,
    }
}

/// Latency of every candidate right after one routing decision.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyObservation {
    pub chosen: String,
    /// Ground-truth fastest candidate; when absent the fastest observed sample is used.
    pub best: Option<String>,
    /// `None` is a lost sample.
    pub latency_ms: BTreeMap<String, Option<f64>>,
}

impl LatencyObservation {
    pub fn from_simlog(log: &SimLog) -> Vec<LatencyObservation> {
        log.samples()
            .map(|s| LatencyObservation {
                chosen: s.chosen.clone(),
                best: Some(s.ground_truth_best.clone()),
                latency_ms: s.latency_ms.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyAnalysis {
    /// `(chosen − best) / best`, suboptimal decisions only.
    pub relative: CdfTable,
    /// `chosen − best` in ms, suboptimal decisions only.
    pub absolute: CdfTable,
    /// Observations with usable samples.
    pub evaluated: usize,
    pub suboptimal: usize,
    /// Dropped because the chosen or best sample was lost.
    pub skipped: usize,
}

impl LatencyAnalysis {
    pub fn suboptimal_fraction(&self) -> f64 {
        if self.evaluated == 0 {
            0.0
        } else {
            self.suboptimal as f64 / self.evaluated as f64
        }
    }

    pub fn summary(&self) -> Vec<(String, String)> {
        vec![
            ("evaluated".into(), self.evaluated.to_string()),
            ("suboptimal".into(), self.suboptimal.to_string()),
            ("skipped".into(), self.skipped.to_string()),
            ("suboptimal_fraction".into(), self.suboptimal_fraction().to_string()),
        ]
    }
}

pub fn analyze_latency_diff(observations: &[LatencyObservation]) -> LatencyAnalysis {
    let mut rel = Vec::new();
    let mut abs = Vec::new();
    let (mut evaluated, mut skipped) = (0, 0);
    for o in observations {
        let Some(chosen) = o.latency_ms.get(&o.chosen).copied().flatten() else {
            skipped += 1;
            continue;
        };
        let best = match &o.best {
            Some(b) => o.latency_ms.get(b).copied().flatten().map(|v| (b.as_str(), v)),
            None => o
                .latency_ms
                .iter()
                .filter_map(|(k, v)| Some((k.as_str(), (*v)?)))
                .min_by(|a, b| a.1.total_cmp(&b.1)),
        };
        let Some((best_name, best)) = best else {
            skipped += 1;
            continue;
        };
        evaluated += 1;
        if best_name != o.chosen {
            abs.push(chosen - best);
            rel.push((chosen - best) / best);
        }
    }
    LatencyAnalysis {
        suboptimal: abs.len(),
        relative: CdfTable::from_values("relative_inflation", rel),
        absolute: CdfTable::from_values("absolute_inflation_ms", abs),
        evaluated,
        skipped,
    }
}

/// Every analysis of a simulator log as report tables, plus headline numbers.
pub fn simlog_report(log: &SimLog, zone: &str) -> (Vec<Table>, Vec<(String, String)>) {
    let ttl = analyze_ttl(&TtlObservation::from_simlog(log, zone));
    let choices = ChoiceObservation::from_simlog(log);
    let by_vantage = analyze_choices(&choices, Grouping::Vantage);
    let by_country = analyze_choices(&choices, Grouping::Country);
    let latency = analyze_latency_diff(&LatencyObservation::from_simlog(log));
    let tables = vec![
        ttl.cdf.to_table("ttl_cdf"),
        ttl.platform_table("ttl_by_platform"),
        by_vantage.share_table("choices_by_vantage"),
        by_country.share_table("choices_by_country"),
        by_vantage.histogram_table("distinct_platforms"),
        latency.relative.to_table("latency_relative"),
        latency.absolute.to_table("latency_absolute"),
    ];
    let mut summary = vec![
        ("domains".to_string(), by_vantage.per_domain.len().to_string()),
        ("resolutions".to_string(), choices.len().to_string()),
        ("ttl_at_most_20s".to_string(), ttl.cdf.fraction_at(20.0).to_string()),
    ];
    summary.extend(latency.summary());
    (tables, summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cdf_definition() {
        let c = CdfTable::from_values("ttl_s", [20.0, 300.0, 20.0]);
        assert_eq!(c.points, vec![(20.0, 2.0 / 3.0), (300.0, 1.0)]);
        assert_eq!(CdfTable::from_values("x", [7.0]).points, vec![(7.0, 1.0)]);
        assert!(CdfTable::from_values("x", []).is_empty());
        assert_eq!(c.fraction_at(19.0), 0.0);
        assert_eq!(c.fraction_at(100.0), 2.0 / 3.0);
    }

    proptest! {
        #[test]
        fn cdf_is_monotone_and_ends_at_one(v in proptest::collection::vec(-1e6f64..1e6, 1..200)) {
            let c = CdfTable::from_values("x", v);
            prop_assert!(c.points.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
            prop_assert_eq!(c.points.last().unwrap().1, 1.0);
        }

        #[test]
        fn shares_sum_to_one(obs in proptest::collection::vec((0u8..4, 0u8..3, 0u8..5), 1..300)) {
            let obs: Vec<ChoiceObservation> = obs
                .into_iter()
                .map(|(v, d, p)| ChoiceObservation {
                    vantage: format!("v{v}"),
                    country: "DE".into(),
                    domain: format!("d{d}"),
                    platform: format!("p{p}"),
                })
                .collect();
            let a = analyze_choices(&obs, Grouping::Vantage);
            let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
            for r in &a.shares {
                *sums.entry(&r.group).or_default() += r.share;
            }
            for s in sums.values() {
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
            let mut rev = obs.clone();
            rev.reverse();
            prop_assert_eq!(analyze_choices(&rev, Grouping::Vantage), a);
        }
    }

    fn ttl(domain: &str, ttl_s: u32, platform: &str) -> TtlObservation {
        TtlObservation {
            domain: domain.into(),
            ttl_s,
            platform: Some(platform.into()),
        }
    }

    #[test]
    fn ttl_per_domain_and_platform() {
        let obs = vec![
            ttl("a", 20, "cdnA"),
            ttl("a", 20, "cdnB"),
            ttl("a", 20, "cdnA"),
            ttl("b", 20, "cdnA"),
            ttl("c", 300, "cdnB"),
        ];
        let a = analyze_ttl(&obs);
        assert_eq!(a.cdf.points, vec![(20.0, 2.0 / 3.0), (300.0, 1.0)]);
        assert_eq!(a.platforms.len(), 2);
        assert_eq!(a.platforms[0].n, 2);
        assert_eq!(a.platforms[1].platform, "cdnB");
        assert_eq!((a.platforms[1].min, a.platforms[1].median, a.platforms[1].max), (20.0, 160.0, 300.0));
    }

    fn lat(chosen: &str, best: Option<&str>, pairs: &[(&str, Option<f64>)]) -> LatencyObservation {
        LatencyObservation {
            chosen: chosen.into(),
            best: best.map(str::to_string),
            latency_ms: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    #[test]
    fn latency_arithmetic() {
        let a = analyze_latency_diff(&[
            lat("b", Some("a"), &[("a", Some(20.0)), ("b", Some(30.0))]),
            lat("a", Some("a"), &[("a", Some(20.0)), ("b", Some(30.0))]),
            lat("b", Some("a"), &[("a", None), ("b", Some(30.0))]),
        ]);
        assert_eq!(a.relative.points, vec![(0.5, 1.0)]);
        assert_eq!(a.absolute.points, vec![(10.0, 1.0)]);
        assert_eq!((a.evaluated, a.suboptimal, a.skipped), (2, 1, 1));
        assert_eq!(a.suboptimal_fraction(), 0.5);
    }

    #[test]
    fn min_observed_fallback() {
        let a = analyze_latency_diff(&[
            lat("b", None, &[("a", Some(20.0)), ("b", Some(25.0)), ("c", None)]),
            lat("a", None, &[("a", Some(20.0)), ("b", Some(25.0))]),
        ]);
        assert_eq!(a.absolute.points, vec![(5.0, 1.0)]);
        assert_eq!(a.suboptimal, 1);
    }

    #[test]
    fn static_choice_is_a_single_share() {
        let obs: Vec<ChoiceObservation> = (0..10)
            .map(|i| ChoiceObservation {
                vantage: "v".into(),
                country: "US".into(),
                domain: format!("d{}", i % 2),
                platform: "origin".into(),
            })
            .collect();
        let a = analyze_choices(&obs, Grouping::Country);
        assert_eq!(a.share("US", "origin"), 1.0);
        assert_eq!(a.histogram, BTreeMap::from([(1, 2)]));
        assert_eq!(a.share_table("s").rows.len(), 1);
    }
}
