//! Real-user measurement collection.
//!
//! Visitors of a customer's site fetch probe instructions, download small
//! probe objects from each platform, and report what they measured. Reports
//! are validated, appended to a line-delimited log and folded into rolling
//! per-scope medians that the policy engine reads through [`StatsView`].

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CountryCode, CustomerId, Metric, ProbeReport, Timestamp};
use crate::numeric::median;
use crate::openmix::{Aggregate, Scope, StatsView};
use crate::sentinel::Sentinel;

/// Size of the latency probe object.
pub const LATENCY_OBJECT_BYTES: usize = 43;
/// Size of the throughput probe object (100 kB, decimal).
pub const THROUGHPUT_OBJECT_BYTES: usize = 100_000;
pub const DEFAULT_DELAY_MS: u64 = 2_000;

/// A 1x1 transparent GIF, which happens to be exactly 43 bytes.
const LATENCY_OBJECT: [u8; LATENCY_OBJECT_BYTES] = [
    0x47, 0x49, 0x46, 0x38, 0x39, 0x61, 0x01, 0x00, 0x01, 0x00, 0x80, 0x00, 0x00, 0x00, 0x00, 0x00,
    0xff, 0xff, 0xff, 0x21, 0xf9, 0x04, 0x01, 0x00, 0x00, 0x00, 0x00, 0x2c, 0x00, 0x00, 0x00, 0x00,
    0x01, 0x00, 0x01, 0x00, 0x00, 0x02, 0x02, 0x44, 0x01, 0x00, 0x3b,
];

#[derive(Debug, Error)]
pub enum RadarError {
    #[error("no such probe object {0:?}")]
    NotFound(String),
    #[error("rejected report: {0}")]
    Rejected(String),
    #[error("report log: {0}")]
    Log(#[from] io::Error),
    #[error("report log line {line}: {reason}")]
    LogParse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Latency,
    Throughput,
    Availability,
}

impl ProbeKind {
    fn object_path(self) -> &'static str {
        match self {
            ProbeKind::Throughput => "/probe/throughput",
            ProbeKind::Latency | ProbeKind::Availability => "/probe/latency",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeInstruction {
    pub platform: String,
    pub kind: ProbeKind,
    pub url: String,
    pub delay_ms: u64,
}

/// A platform measured by visitors. `owner: None` marks a community probe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeTarget {
    pub platform: String,
    pub kinds: Vec<ProbeKind>,
    #[serde(default)]
    pub owner: Option<CustomerId>,
    /// Base URL under which the platform hosts the probe objects.
    pub base_url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeConfig {
    #[serde(default = "default_delay")]
    pub delay_ms: u64,
    #[serde(default)]
    pub targets: Vec<ProbeTarget>,
    /// Customers that activated community probes.
    #[serde(default)]
    pub community: BTreeSet<CustomerId>,
}

fn default_delay() -> u64 {
    DEFAULT_DELAY_MS
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            delay_ms: DEFAULT_DELAY_MS,
            targets: Vec::new(),
            community: BTreeSet::new(),
        }
    }
}

/// The probe set a visitor of `customer`'s site should run: the customer's
/// own probes, plus community probes if the customer opted in.
pub fn issue_instructions(customer: CustomerId, config: &ProbeConfig) -> Vec<ProbeInstruction> {
    let community = config.community.contains(&customer);
    config
        .targets
        .iter()
        .filter(|t| match t.owner {
            Some(owner) => owner == customer,
            None => community,
        })
        .flat_map(|t| {
            t.kinds.iter().map(move |&kind| ProbeInstruction {
                platform: t.platform.clone(),
                kind,
                url: format!("{}{}", t.base_url.trim_end_matches('/'), kind.object_path()),
                delay_ms: config.delay_ms,
            })
        })
        .collect()
}

pub struct ProbeObject {
    pub body: Vec<u8>,
    pub content_type: &'static str,
    pub headers: &'static [(&'static str, &'static str)],
}

const NO_CACHE: &[(&str, &str)] = &[
    ("cache-control", "no-store, no-cache, must-revalidate, max-age=0"),
    ("pragma", "no-cache"),
    ("expires", "0"),
];

/// Body for `kind` (`"latency"` or `"throughput"`).
pub fn serve_probe_object(kind: &str) -> Result<ProbeObject, RadarError> {
    match kind {
        "latency" => Ok(ProbeObject {
            body: LATENCY_OBJECT.to_vec(),
            content_type: "image/gif",
            headers: NO_CACHE,
        }),
        "throughput" => Ok(ProbeObject {
            body: (0..THROUGHPUT_OBJECT_BYTES).map(|i| (i % 251) as u8).collect(),
            content_type: "application/octet-stream",
            headers: NO_CACHE,
        }),
        other => Err(RadarError::NotFound(other.to_string())),
    }
}

/// Throughput in kbit/s for `bytes` transferred in `transfer_ms`.
pub fn throughput_kbps(bytes: usize, transfer_ms: f64) -> f64 {
    (bytes as f64 * 8.0) / transfer_ms
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarConfig {
    #[serde(with = "crate::openmix::secs")]
    pub window: Duration,
    pub min_samples: usize,
}

impl Default for RadarConfig {
    fn default() -> Self {
        RadarConfig {
            window: Duration::from_secs(600),
            min_samples: 3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    at: Timestamp,
    value: f64,
    asn: u32,
    country: CountryCode,
}

impl Sample {
    fn in_scope(&self, scope: Scope) -> bool {
        match scope {
            Scope::Asn(a) => self.asn == a,
            Scope::Country(c) => self.country == c,
            Scope::Global => true,
        }
    }
}

#[derive(Debug, Default)]
struct State {
    /// Per (platform, metric), sorted by timestamp.
    samples: BTreeMap<(String, Metric), Vec<Sample>>,
    accepted: u64,
}

impl State {
    fn window(&self, platform: &str, metric: Metric, window: Duration, now: Timestamp) -> &[Sample] {
        let Some(v) = self.samples.get(&(platform.to_string(), metric)) else {
            return &[];
        };
        window_slice(v, window, now)
    }
}

/// Samples with `now - window < at <= now`.
fn window_slice(v: &[Sample], window: Duration, now: Timestamp) -> &[Sample] {
    let start = now.as_millis().checked_sub(window.as_millis() as u64);
    let lo = match start {
        Some(s) => v.partition_point(|x| x.at.as_millis() <= s),
        None => 0,
    };
    let hi = v.partition_point(|x| x.at <= now);
    &v[lo..hi.max(lo)]
}

fn aggregate_samples<'a>(
    samples: impl Iterator<Item = &'a Sample>,
    min_samples: usize,
) -> Option<Aggregate> {
    let mut values = Vec::new();
    let mut newest = Timestamp::ZERO;
    for s in samples {
        values.push(s.value);
        newest = newest.max(s.at);
    }
    if values.is_empty() || values.len() < min_samples {
        return None;
    }
    Some(Aggregate {
        value: median(&mut values)?,
        count: values.len(),
        newest,
    })
}

/// Append-only writer for the report log (one JSON object per line).
pub struct ReportLog {
    out: BufWriter<File>,
}

impl ReportLog {
    pub fn open(path: &Path) -> io::Result<ReportLog> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(ReportLog {
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, report: &ProbeReport) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, report)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }
}

pub fn read_log(path: &Path) -> Result<Vec<ProbeReport>, RadarError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| RadarError::LogParse {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Ingestion and aggregation of probe reports.
pub struct Radar {
    config: RadarConfig,
    platforms: BTreeSet<String>,
    state: RwLock<State>,
    log: Option<Mutex<ReportLog>>,
    sentinel: Option<Arc<Mutex<Sentinel>>>,
    cache: Mutex<Option<(Timestamp, u64, Arc<StatsView>)>>,
}

impl Radar {
    pub fn new(config: RadarConfig, platforms: impl IntoIterator<Item = String>) -> Radar {
        Radar {
            config,
            platforms: platforms.into_iter().collect(),
            state: RwLock::new(State::default()),
            log: None,
            sentinel: None,
            cache: Mutex::new(None),
        }
    }

    pub fn with_log(mut self, log: ReportLog) -> Radar {
        self.log = Some(Mutex::new(log));
        self
    }

    pub fn with_sentinel(mut self, sentinel: Arc<Mutex<Sentinel>>) -> Radar {
        self.sentinel = Some(sentinel);
        self
    }

    pub fn config(&self) -> &RadarConfig {
        &self.config
    }

    pub fn accepted(&self) -> u64 {
        self.state.read().expect("radar lock poisoned").accepted
    }

    /// Validates and stores a report, then forwards it to the sentinel if one is attached.
    pub fn ingest_report(&self, report: ProbeReport) -> Result<(), RadarError> {
        report
            .validate()
            .map_err(|e| RadarError::Rejected(e.to_string()))?;
        if !self.platforms.contains(&report.platform) {
            return Err(RadarError::Rejected(format!(
                "unknown platform {:?}",
                report.platform
            )));
        }
        if let Some(log) = &self.log {
            log.lock().expect("log lock poisoned").append(&report)?;
        }
        {
            let mut st = self.state.write().expect("radar lock poisoned");
            let v = st
                .samples
                .entry((report.platform.clone(), report.metric))
                .or_default();
            let sample = Sample {
                at: report.timestamp,
                value: report.value,
                asn: report.client.asn,
                country: report.client.country,
            };
            let pos = v.partition_point(|s| s.at <= sample.at);
            v.insert(pos, sample);
            st.accepted += 1;
        }
        if let Some(sentinel) = &self.sentinel {
            let now = report.timestamp;
            sentinel
                .lock()
                .expect("sentinel lock poisoned")
                .update(&report, now);
        }
        Ok(())
    }

    /// Rolling median over `(now - window, now]` at one scope.
    pub fn aggregate(
        &self,
        platform: &str,
        scope: Scope,
        metric: Metric,
        window: Duration,
        now: Timestamp,
    ) -> Option<Aggregate> {
        let st = self.state.read().expect("radar lock poisoned");
        let samples = st.window(platform, metric, window, now);
        aggregate_samples(
            samples.iter().filter(|s| s.in_scope(scope)),
            self.config.min_samples,
        )
    }

    /// Consistent snapshot of every (platform, scope, metric) aggregate at `now`.
    pub fn stats_view(&self, now: Timestamp) -> Arc<StatsView> {
        let st = self.state.read().expect("radar lock poisoned");
        let mut cache = self.cache.lock().expect("cache lock poisoned");
        if let Some((at, version, view)) = cache.as_ref() {
            if *at == now && *version == st.accepted {
                return view.clone();
            }
        }
        let mut view = StatsView::new(now);
        for ((platform, metric), all) in &st.samples {
            let samples = window_slice(all, self.config.window, now);
            if samples.is_empty() {
                continue;
            }
            let mut scopes: BTreeSet<Scope> = BTreeSet::new();
            for s in samples {
                scopes.insert(Scope::Asn(s.asn));
                scopes.insert(Scope::Country(s.country));
            }
            scopes.insert(Scope::Global);
            for scope in scopes {
                if let Some(agg) = aggregate_samples(
                    samples.iter().filter(|s| s.in_scope(scope)),
                    self.config.min_samples,
                ) {
                    view.insert(platform, scope, *metric, agg);
                }
            }
        }
        let view = Arc::new(view);
        *cache = Some((now, st.accepted, view.clone()));
        view
    }

    /// Feeds a recorded log back through ingestion. Returns how many reports were accepted.
    pub fn replay(&self, reports: impl IntoIterator<Item = ProbeReport>) -> usize {
        reports
            .into_iter()
            .filter(|r| self.ingest_report(r.clone()).is_ok())
            .count()
    }
}
