//! Network event detection over the probe-report stream.
//!
//! Each (platform, metric class, reporter AS) keeps a trailing history. Its
//! baseline is the median of that history over the baseline window, excluding
//! the current detection window. A reporter AS is *anomalous* for a platform
//! when the median (mean, for availability) of its current window deviates
//! from its baseline by at least the minor threshold of the metric's ladder.
//!
//! * A platform event exists while at least `min_reporters` distinct ASes are
//!   anomalous in the same direction.
//! * An AS event exists while at least `min_reporters` distinct platforms look
//!   anomalous from that AS.
//!
//! An event spans from its first to its last individually anomalous report.
//! It is confirmed once that span reaches `confirm_after` and the variance of
//! baseline-normalized measurements over the baseline window exceeds the
//! threshold for its (metric class, severity). Severity escalates in place.
//! Events close after `close_after` without an anomalous report.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::{Metric, PlatformKind, ProbeReport, Timestamp};
use crate::numeric::{median, variance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectKind {
    Cdn,
    Cloud,
    Asn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricClass {
    Availability,
    Rtt,
    Throughput,
}

impl From<Metric> for MetricClass {
    fn from(m: Metric) -> Self {
        match m {
            Metric::LatencyMs => MetricClass::Rtt,
            Metric::ThroughputKbps => MetricClass::Throughput,
            Metric::Availability => MetricClass::Availability,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Degradation,
    Improvement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Minor,
    Medium,
    Major,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Unconfirmed,
    Confirmed,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Minor => "minor",
            Severity::Medium => "medium",
            Severity::Major => "major",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub at: Timestamp,
    pub change: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEvent {
    pub id: u64,
    pub subject_kind: SubjectKind,
    pub subject: String,
    pub metric_class: MetricClass,
    pub direction: Direction,
    /// Relative change, e.g. 1.5 for +150 %.
    pub magnitude: f64,
    pub severity: Severity,
    pub status: Status,
    pub started_at: Timestamp,
    pub last_seen: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_at: Option<Timestamp>,
    /// Reporter ASes (platform events) or affected platforms (AS events).
    pub reporters: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transitions: Vec<Transition>,
}

impl NetworkEvent {
    pub fn duration(&self) -> Duration {
        self.last_seen.since(self.started_at)
    }

    pub fn is_open(&self) -> bool {
        self.closed_at.is_none()
    }
}

/// Lower bounds of the minor, medium and major bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    pub minor: f64,
    pub medium: f64,
    pub major: f64,
}

impl Ladder {
    pub fn classify(&self, magnitude: f64) -> Option<Severity> {
        if magnitude >= self.major {
            Some(Severity::Major)
        } else if magnitude >= self.medium {
            Some(Severity::Medium)
        } else if magnitude >= self.minor {
            Some(Severity::Minor)
        } else {
            None
        }
    }
}

/// Variance thresholds per severity for one metric class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceThresholds {
    pub minor: f64,
    pub medium: f64,
    pub major: f64,
}

impl VarianceThresholds {
    pub fn get(&self, s: Severity) -> f64 {
        match s {
            Severity::Minor => self.minor,
            Severity::Medium => self.medium,
            Severity::Major => self.major,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SentinelConfig {
    #[serde(with = "crate::openmix::secs")]
    pub baseline_window: Duration,
    #[serde(with = "crate::openmix::secs")]
    pub detect_window: Duration,
    #[serde(with = "crate::openmix::secs")]
    pub confirm_after: Duration,
    #[serde(with = "crate::openmix::secs")]
    pub close_after: Duration,
    #[serde(with = "crate::openmix::secs")]
    pub baseline_refresh: Duration,
    pub min_reporters: usize,
    pub min_baseline_samples: usize,
    /// Availability below this is a degradation candidate.
    pub availability_floor: f64,
    pub rtt: Ladder,
    pub throughput: Ladder,
    pub availability: Ladder,
    pub rtt_variance: VarianceThresholds,
    pub throughput_variance: VarianceThresholds,
    pub availability_variance: VarianceThresholds,
}

impl Default for SentinelConfig {
    fn default() -> Self {
        let relative = Ladder {
            minor: 1.0,
            medium: 2.0,
            major: 5.0,
        };
        let normalized = VarianceThresholds {
            minor: 0.02,
            medium: 0.1,
            major: 0.5,
        };
        SentinelConfig {
            baseline_window: Duration::from_secs(5 * 3600),
            detect_window: Duration::from_secs(120),
            confirm_after: Duration::from_secs(9 * 60),
            close_after: Duration::from_secs(15 * 60),
            baseline_refresh: Duration::from_secs(60),
            min_reporters: 5,
            min_baseline_samples: 5,
            availability_floor: 0.9,
            rtt: relative,
            throughput: relative,
            availability: Ladder {
                minor: 0.1,
                medium: 0.5,
                major: 0.9,
            },
            rtt_variance: normalized,
            throughput_variance: normalized,
            availability_variance: VarianceThresholds {
                minor: 0.002,
                medium: 0.01,
                major: 0.02,
            },
        }
    }
}

impl SentinelConfig {
    pub fn ladder(&self, class: MetricClass) -> &Ladder {
        match class {
            MetricClass::Rtt => &self.rtt,
            MetricClass::Throughput => &self.throughput,
            MetricClass::Availability => &self.availability,
        }
    }

    pub fn variance_threshold(&self, class: MetricClass, severity: Severity) -> f64 {
        match class {
            MetricClass::Rtt => self.rtt_variance.get(severity),
            MetricClass::Throughput => self.throughput_variance.get(severity),
            MetricClass::Availability => self.availability_variance.get(severity),
        }
    }
}

/// Severity for a relative change; `None` below the minor band.
pub fn classify_severity(
    config: &SentinelConfig,
    magnitude: f64,
    class: MetricClass,
    _subject: SubjectKind,
) -> Option<Severity> {
    config.ladder(class).classify(magnitude)
}

#[derive(Debug, Clone, Copy)]
struct Signal {
    direction: Direction,
    magnitude: f64,
    first: Timestamp,
    last: Timestamp,
    evaluated_at: Timestamp,
}

#[derive(Debug, Default)]
struct Series {
    samples: VecDeque<(Timestamp, f64)>,
    baseline: Option<f64>,
    baseline_at: Option<Timestamp>,
    signal: Option<Signal>,
}

type SeriesKey = (String, MetricClass, u32);
type EventKey = (SubjectKind, String, MetricClass, Direction);

/// Relative change of `value` against `baseline`, if it points in a direction.
fn deviation(class: MetricClass, value: f64, baseline: f64, floor: f64) -> Option<(Direction, f64)> {
    if baseline <= 0.0 {
        return None;
    }
    match class {
        MetricClass::Rtt => {
            if value >= baseline {
                Some((Direction::Degradation, value / baseline - 1.0))
            } else if value > 0.0 {
                Some((Direction::Improvement, baseline / value - 1.0))
            } else {
                None
            }
        }
        MetricClass::Throughput => {
            if value >= baseline {
                Some((Direction::Improvement, value / baseline - 1.0))
            } else if value > 0.0 {
                Some((Direction::Degradation, baseline / value - 1.0))
            } else {
                None
            }
        }
        MetricClass::Availability => {
            (value < floor && value < baseline).then(|| (Direction::Degradation, (baseline - value) / baseline))
        }
    }
}

pub struct Sentinel {
    config: SentinelConfig,
    kinds: BTreeMap<String, PlatformKind>,
    series: BTreeMap<SeriesKey, Series>,
    open: BTreeMap<EventKey, usize>,
    events: Vec<NetworkEvent>,
    last_variance_check: BTreeMap<u64, Timestamp>,
    next_id: u64,
}

impl Sentinel {
    pub fn new(config: SentinelConfig, kinds: impl IntoIterator<Item = (String, PlatformKind)>) -> Self {
        Sentinel {
            config,
            kinds: kinds.into_iter().collect(),
            series: BTreeMap::new(),
            open: BTreeMap::new(),
            events: Vec::new(),
            last_variance_check: BTreeMap::new(),
            next_id: 1,
        }
    }

    pub fn config(&self) -> &SentinelConfig {
        &self.config
    }

    fn subject_kind(&self, platform: &str) -> SubjectKind {
        match self.kinds.get(platform) {
            Some(PlatformKind::Cloud | PlatformKind::Origin) => SubjectKind::Cloud,
            _ => SubjectKind::Cdn,
        }
    }

    /// Applies one report. Reports are expected in timestamp order.
    pub fn update(&mut self, report: &ProbeReport, now: Timestamp) {
        let class = MetricClass::from(report.metric);
        let key = (report.platform.clone(), class, report.client.asn);
        let cfg = &self.config;
        let horizon = cfg.baseline_window + cfg.detect_window;
        let series = self.series.entry(key).or_default();
        let pos = series.samples.partition_point(|(t, _)| *t <= report.timestamp);
        series.samples.insert(pos, (report.timestamp, report.value));
        let cutoff = now.saturating_sub(horizon);
        while series.samples.front().is_some_and(|(t, _)| *t <= cutoff) {
            series.samples.pop_front();
        }
        refresh_baseline(series, cfg, now);
        series.signal = evaluate_signal(series, class, cfg, now);

        self.detect_platform(&report.platform, class, now);
        self.detect_asn(report.client.asn, class, now);
        self.tick(now);
    }

    /// Closes events that have been quiet for `close_after`.
    pub fn tick(&mut self, now: Timestamp) {
        let close_after = self.config.close_after;
        let events = &mut self.events;
        self.open.retain(|_, &mut idx| {
            let ev = &mut events[idx];
            if now.since(ev.last_seen) >= close_after {
                ev.closed_at = Some(now);
                ev.transitions.push(Transition {
                    at: now,
                    change: "closed".into(),
                });
                false
            } else {
                true
            }
        });
    }

    fn fresh_signals<'a>(
        &'a self,
        filter: impl Fn(&SeriesKey) -> bool + 'a,
        now: Timestamp,
    ) -> impl Iterator<Item = (&'a SeriesKey, Signal)> + 'a {
        let window = self.config.detect_window;
        self.series.iter().filter_map(move |(k, s)| {
            let sig = s.signal?;
            (filter(k) && now.since(sig.evaluated_at) < window).then_some((k, sig))
        })
    }

    fn detect_platform(&mut self, platform: &str, class: MetricClass, now: Timestamp) {
        for direction in [Direction::Degradation, Direction::Improvement] {
            let signals: Vec<(String, Signal)> = self
                .fresh_signals(|k| k.0 == platform && k.1 == class, now)
                .filter(|(_, s)| s.direction == direction)
                .map(|(k, s)| (k.2.to_string(), s))
                .collect();
            let kind = self.subject_kind(platform);
            self.apply(kind, platform.to_string(), class, direction, signals, now);
        }
    }

    fn detect_asn(&mut self, asn: u32, class: MetricClass, now: Timestamp) {
        for direction in [Direction::Degradation, Direction::Improvement] {
            let signals: Vec<(String, Signal)> = self
                .fresh_signals(|k| k.2 == asn && k.1 == class, now)
                .filter(|(_, s)| s.direction == direction)
                .map(|(k, s)| (k.0.clone(), s))
                .collect();
            self.apply(SubjectKind::Asn, asn.to_string(), class, direction, signals, now);
        }
    }

    /// Opens or extends the event for one subject given its corroborating signals.
    fn apply(
        &mut self,
        kind: SubjectKind,
        subject: String,
        class: MetricClass,
        direction: Direction,
        signals: Vec<(String, Signal)>,
        now: Timestamp,
    ) {
        if signals.len() < self.config.min_reporters {
            return;
        }
        let mut mags: Vec<f64> = signals.iter().map(|(_, s)| s.magnitude).collect();
        let magnitude = median(&mut mags).unwrap_or(0.0);
        let Some(severity) = classify_severity(&self.config, magnitude, class, kind) else {
            return;
        };
        let mut firsts: Vec<u64> = signals.iter().map(|(_, s)| s.first.as_millis()).collect();
        firsts.sort_unstable();
        let first = Timestamp(firsts[(firsts.len() - 1) / 2]);
        let last = signals.iter().map(|(_, s)| s.last).max().unwrap_or(now);
        let key = (kind, subject.clone(), class, direction);
        let idx = match self.open.get(&key) {
            Some(&idx) => {
                let ev = &mut self.events[idx];
                ev.last_seen = ev.last_seen.max(last);
                ev.reporters.extend(signals.into_iter().map(|(r, _)| r));
                if magnitude > ev.magnitude {
                    ev.magnitude = magnitude;
                    if severity > ev.severity {
                        ev.transitions.push(Transition {
                            at: now,
                            change: format!("severity {} -> {}", ev.severity, severity),
                        });
                        ev.severity = severity;
                    }
                }
                idx
            }
            None => {
                let ev = NetworkEvent {
                    id: self.next_id,
                    subject_kind: kind,
                    subject,
                    metric_class: class,
                    direction,
                    magnitude,
                    severity,
                    status: Status::Unconfirmed,
                    started_at: first.min(last),
                    last_seen: last,
                    closed_at: None,
                    reporters: signals.into_iter().map(|(r, _)| r).collect(),
                    transitions: vec![Transition {
                        at: now,
                        change: "opened".into(),
                    }],
                };
                self.next_id += 1;
                self.events.push(ev);
                let idx = self.events.len() - 1;
                self.open.insert(key, idx);
                idx
            }
        };
        self.try_confirm(idx, now);
    }

    fn try_confirm(&mut self, idx: usize, now: Timestamp) {
        let ev = &self.events[idx];
        if ev.status == Status::Confirmed || ev.duration() < self.config.confirm_after {
            return;
        }
        if let Some(at) = self.last_variance_check.get(&ev.id) {
            if now.since(*at) < self.config.baseline_refresh {
                return;
            }
        }
        self.last_variance_check.insert(ev.id, now);
        let var = self.normalized_variance(ev, now);
        let threshold = self.config.variance_threshold(ev.metric_class, ev.severity);
        if confirm(ev, var, threshold, &self.config) == Status::Confirmed {
            let ev = &mut self.events[idx];
            assert!(ev.duration() >= self.config.confirm_after);
            ev.status = Status::Confirmed;
            ev.transitions.push(Transition {
                at: now,
                change: "confirmed".into(),
            });
        }
    }

    /// Variance over the baseline window of measurements belonging to the
    /// event's subject, each divided by its own series baseline (availability
    /// is used raw).
    fn normalized_variance(&self, ev: &NetworkEvent, now: Timestamp) -> Option<f64> {
        let cutoff = now.saturating_sub(self.config.baseline_window);
        let mut values = Vec::new();
        for ((platform, class, asn), s) in &self.series {
            if *class != ev.metric_class {
                continue;
            }
            let belongs = match ev.subject_kind {
                SubjectKind::Asn => asn.to_string() == ev.subject,
                _ => *platform == ev.subject,
            };
            if !belongs {
                continue;
            }
            let scale = match (class, s.baseline) {
                (MetricClass::Availability, _) => 1.0,
                (_, Some(b)) if b > 0.0 => b,
                _ => continue,
            };
            values.extend(
                s.samples
                    .iter()
                    .filter(|(t, _)| *t > cutoff && *t <= now)
                    .map(|(_, v)| v / scale),
            );
        }
        variance(&values)
    }

    /// Events with `last_seen >= since`, ordered by start time.
    pub fn emit_feed(&self, since: Timestamp) -> Vec<NetworkEvent> {
        let mut out: Vec<NetworkEvent> = self
            .events
            .iter()
            .filter(|e| e.last_seen >= since)
            .cloned()
            .collect();
        out.sort_by_key(|e| (e.started_at, e.id));
        out
    }

    pub fn events(&self) -> &[NetworkEvent] {
        &self.events
    }

    /// Runs a whole report log through a fresh sentinel (stable-sorted by timestamp).
    pub fn replay(
        config: SentinelConfig,
        kinds: impl IntoIterator<Item = (String, PlatformKind)>,
        reports: &[ProbeReport],
    ) -> Sentinel {
        let mut ordered: Vec<&ProbeReport> = reports.iter().collect();
        ordered.sort_by_key(|r| r.timestamp);
        let mut s = Sentinel::new(config, kinds);
        for r in ordered {
            s.update(r, r.timestamp);
        }
        s
    }
}

/// The confirmation rule on its own: long enough and variable enough.
pub fn confirm(
    ev: &NetworkEvent,
    variance: Option<f64>,
    threshold: f64,
    config: &SentinelConfig,
) -> Status {
    let long_enough = ev.duration() >= config.confirm_after;
    match variance {
        Some(v) if long_enough && v > threshold => Status::Confirmed,
        _ => Status::Unconfirmed,
    }
}

fn refresh_baseline(series: &mut Series, cfg: &SentinelConfig, now: Timestamp) {
    if series
        .baseline_at
        .is_some_and(|at| now.since(at) < cfg.baseline_refresh)
    {
        return;
    }
    let end = now.saturating_sub(cfg.detect_window);
    let start = end.saturating_sub(cfg.baseline_window);
    let mut vals: Vec<f64> = series
        .samples
        .iter()
        .filter(|(t, _)| *t > start && *t <= end)
        .map(|(_, v)| *v)
        .collect();
    series.baseline = if vals.len() >= cfg.min_baseline_samples {
        median(&mut vals)
    } else {
        None
    };
    series.baseline_at = Some(now);
}

fn evaluate_signal(
    series: &Series,
    class: MetricClass,
    cfg: &SentinelConfig,
    now: Timestamp,
) -> Option<Signal> {
    let baseline = series.baseline?;
    let start = now.saturating_sub(cfg.detect_window);
    let current: Vec<(Timestamp, f64)> = series
        .samples
        .iter()
        .filter(|(t, _)| *t > start && *t <= now)
        .copied()
        .collect();
    if current.is_empty() {
        return None;
    }
    let mut vals: Vec<f64> = current.iter().map(|(_, v)| *v).collect();
    let level = match class {
        MetricClass::Availability => vals.iter().sum::<f64>() / vals.len() as f64,
        _ => median(&mut vals)?,
    };
    let floor = cfg.availability_floor;
    let minor = cfg.ladder(class).minor;
    let (direction, magnitude) = deviation(class, level, baseline, floor)?;
    if magnitude < minor {
        return None;
    }
    let anomalous: Vec<Timestamp> = current
        .iter()
        .filter(|(_, v)| {
            deviation(class, *v, baseline, floor)
                .is_some_and(|(d, m)| d == direction && m >= minor)
        })
        .map(|(t, _)| *t)
        .collect();
    Some(Signal {
        direction,
        magnitude,
        first: *anomalous.first()?,
        last: *anomalous.last()?,
        evaluated_at: now,
    })
}

/// Line-delimited JSON rendering of a feed.
pub fn feed_jsonl(events: &[NetworkEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("events serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClientContext;

    fn cfg() -> SentinelConfig {
        SentinelConfig::default()
    }

    #[test]
    fn severity_ladder() {
        let c = cfg();
        let s = |m| classify_severity(&c, m, MetricClass::Rtt, SubjectKind::Cdn);
        assert_eq!(s(1.5), Some(Severity::Minor));
        assert_eq!(s(3.0), Some(Severity::Medium));
        assert_eq!(s(0.5), None);
        assert_eq!(s(1.0), Some(Severity::Minor));
        assert_eq!(s(2.0), Some(Severity::Medium));
        assert_eq!(s(5.0), Some(Severity::Major));
        assert_eq!(s(4.999), Some(Severity::Medium));
    }

    fn event(duration_s: u64) -> NetworkEvent {
        NetworkEvent {
            id: 1,
            subject_kind: SubjectKind::Cdn,
            subject: "cdnA".into(),
            metric_class: MetricClass::Rtt,
            direction: Direction::Degradation,
            magnitude: 3.0,
            severity: Severity::Medium,
            status: Status::Unconfirmed,
            started_at: Timestamp::from_secs(1000),
            last_seen: Timestamp::from_secs(1000 + duration_s),
            closed_at: None,
            reporters: BTreeSet::new(),
            transitions: vec![],
        }
    }

    #[test]
    fn confirmation_rule() {
        let c = cfg();
        assert_eq!(confirm(&event(600), Some(1.0), 0.1, &c), Status::Confirmed);
        assert_eq!(confirm(&event(480), Some(1.0), 0.1, &c), Status::Unconfirmed);
        assert_eq!(confirm(&event(900), Some(0.01), 0.1, &c), Status::Unconfirmed);
        assert_eq!(confirm(&event(540), Some(1.0), 0.1, &c), Status::Confirmed);
        assert_eq!(confirm(&event(900), None, 0.1, &c), Status::Unconfirmed);
    }

    fn rep(platform: &str, asn: u32, at_s: u64, value: f64) -> ProbeReport {
        ProbeReport {
            platform: platform.into(),
            metric: Metric::LatencyMs,
            value,
            client: ClientContext {
                resolver_ip: "10.0.0.1".parse().unwrap(),
                ecs_subnet: None,
                asn,
                country: "DE".parse().unwrap(),
            },
            timestamp: Timestamp::from_secs(at_s),
        }
    }

    /// `n_as` ASes report every 20 s for an hour at 20 ms, then `step` for
    /// `anomaly_s` seconds from the first `anomalous_as` of them, then normal again.
    fn stream(n_as: u32, anomalous_as: u32, step: f64, anomaly_s: u64, tail_s: u64) -> Vec<ProbeReport> {
        let mut out = Vec::new();
        let t0 = 3600;
        for t in (0..t0 + anomaly_s + tail_s).step_by(20) {
            for asn in 0..n_as {
                let off = u64::from(asn);
                let anomalous = asn < anomalous_as && t >= t0 && t < t0 + anomaly_s;
                let v = if anomalous { 20.0 * (1.0 + step) } else { 20.0 };
                out.push(rep("cdnA", 64500 + asn, t + off, v));
            }
        }
        out
    }

    fn run(reports: &[ProbeReport]) -> Sentinel {
        Sentinel::replay(cfg(), [("cdnA".to_string(), PlatformKind::Cdn)], reports)
    }

    #[test]
    fn spike_from_one_as_is_ignored() {
        let mut r = stream(6, 0, 0.0, 0, 0);
        r.push(rep("cdnA", 64500, 3700, 500.0));
        assert!(run(&r).events().is_empty());
    }

    #[test]
    fn sustained_degradation_opens_and_closes() {
        let s = run(&stream(6, 6, 3.0, 600, 1200));
        let evs = s.events();
        assert_eq!(evs.len(), 1, "{evs:#?}");
        let e = &evs[0];
        assert_eq!(e.subject, "cdnA");
        assert_eq!(e.direction, Direction::Degradation);
        assert_eq!(e.severity, Severity::Medium);
        assert_eq!(e.status, Status::Confirmed);
        assert!(e.closed_at.is_some());
        assert_eq!(e.reporters.len(), 6);
    }

    #[test]
    fn corroboration_threshold() {
        assert!(run(&stream(6, 4, 3.0, 600, 0)).events().is_empty());
        assert_eq!(run(&stream(6, 5, 3.0, 600, 0)).events().len(), 1);
    }

    #[test]
    fn improvements_are_tracked() {
        let s = run(&stream(6, 6, -0.6, 600, 0));
        let e = &s.events()[0];
        assert_eq!(e.direction, Direction::Improvement);
        // 20 ms -> 8 ms is +150 % in the improvement sense
        assert!((e.magnitude - 1.5).abs() < 1e-9);
        assert_eq!(e.severity, Severity::Minor);
    }

    #[test]
    fn asn_events_need_five_platforms() {
        let platforms: Vec<String> = (0..6).map(|i| format!("p{i}")).collect();
        let mut reports = Vec::new();
        for t in (0..4200u64).step_by(20) {
            for (i, p) in platforms.iter().enumerate() {
                let bad = t >= 3600 && i < 5;
                let mut r = rep(p, 64999, t + i as u64, if bad { 100.0 } else { 20.0 });
                r.platform = p.clone();
                reports.push(r);
            }
        }
        let kinds = platforms.iter().map(|p| (p.clone(), PlatformKind::Cdn));
        let s = Sentinel::replay(cfg(), kinds, &reports);
        let asn: Vec<_> = s.events().iter().filter(|e| e.subject_kind == SubjectKind::Asn).collect();
        assert_eq!(asn.len(), 1);
        assert_eq!(asn[0].subject, "64999");
        assert_eq!(asn[0].reporters.len(), 5);
    }

    #[test]
    fn feed_filters_and_orders() {
        let s = run(&stream(6, 6, 3.0, 600, 0));
        assert_eq!(s.emit_feed(Timestamp::ZERO).len(), 1);
        assert!(s.emit_feed(Timestamp::from_secs(1_000_000)).is_empty());
        let text = feed_jsonl(&s.emit_feed(Timestamp::ZERO));
        assert!(text.contains("\"status\":\"confirmed\""));
        assert!(Sentinel::new(cfg(), []).emit_feed(Timestamp::ZERO).is_empty());
    }
}
