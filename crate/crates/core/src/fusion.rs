//! Operational statistics reported by the platforms themselves (traffic,
//! quotas, health), loaded from a line-delimited JSON feed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Timestamp;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("cannot read feed {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("feed line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FusionValue {
    Bool(bool),
    Number(f64),
}

impl FusionValue {
    /// Numeric reading; booleans map to 1 and 0.
    pub fn as_f64(self) -> f64 {
        match self {
            FusionValue::Bool(b) => f64::from(u8::from(b)),
            FusionValue::Number(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRecord {
    pub platform: String,
    pub metric: String,
    pub value: FusionValue,
    pub as_of: Timestamp,
}

impl FusionRecord {
    fn check(&self) -> Result<(), String> {
        if self.platform.is_empty() || self.metric.is_empty() {
            return Err("empty platform or metric".into());
        }
        match (self.metric.as_str(), self.value) {
            ("healthy", FusionValue::Bool(_)) => Ok(()),
            ("healthy", _) => Err("\"healthy\" must be a boolean".into()),
            (m, FusionValue::Number(n)) if is_quota_metric(m) && !(n >= 0.0 && n.is_finite()) => {
                Err(format!("{m:?} must be a non-negative number"))
            }
            (m, FusionValue::Bool(_)) if is_quota_metric(m) => {
                Err(format!("{m:?} must be a non-negative number"))
            }
            (_, FusionValue::Number(n)) if !n.is_finite() => Err("non-finite value".into()),
            _ => Ok(()),
        }
    }
}

fn is_quota_metric(metric: &str) -> bool {
    metric.ends_with("_bytes") || metric.starts_with("quota")
}

/// Parses a feed held in memory. Empty and blank lines are skipped.
pub fn parse_feed(text: &str) -> Result<Vec<FusionRecord>, FusionError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| FusionError::Parse {
            line: i + 1,
            reason,
        };
        let rec: FusionRecord =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        rec.check().map_err(parse_err)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_feed(path: &Path) -> Result<Vec<FusionRecord>, FusionError> {
    let text = fs::read_to_string(path).map_err(|source| FusionError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_feed(&text)
}

/// Latest value per (platform, metric).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FusionView {
    latest: BTreeMap<(String, String), FusionRecord>,
}

impl FusionView {
    /// Later `as_of` wins; on equal `as_of` the later record in the feed wins.
    pub fn from_records(records: impl IntoIterator<Item = FusionRecord>) -> FusionView {
        let mut latest: BTreeMap<(String, String), FusionRecord> = BTreeMap::new();
        for rec in records {
            let key = (rec.platform.clone(), rec.metric.clone());
            match latest.get(&key) {
                Some(prev) if prev.as_of > rec.as_of => {}
                _ => {
                    latest.insert(key, rec);
                }
            }
        }
        FusionView { latest }
    }

    pub fn get(&self, platform: &str, metric: &str) -> Option<FusionValue> {
        self.latest
            .get(&(platform.to_string(), metric.to_string()))
            .map(|r| r.value)
    }

    pub fn len(&self) -> usize {
        self.latest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latest.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &FusionRecord> {
        self.latest.values()
    }
}

/// Fraction of the monthly quota still available, in `[0, 1]`.
///
/// `None` when either `monthly_bytes` or `quota_bytes` is missing, or the quota is zero.
pub fn quota_headroom(platform: &str, view: &FusionView) -> Option<f64> {
    let used = view.get(platform, "monthly_bytes")?.as_f64();
    let quota = view.get(platform, "quota_bytes")?.as_f64();
    if quota <= 0.0 {
        return None;
    }
    Some((1.0 - used / quota).clamp(0.0, 1.0))
}

/// Holder for the current view; reloads swap the whole snapshot.
#[derive(Debug, Default)]
pub struct FusionStore {
    current: RwLock<Arc<FusionView>>,
}

impl FusionStore {
    pub fn new(view: FusionView) -> Self {
        FusionStore {
            current: RwLock::new(Arc::new(view)),
        }
    }

    pub fn snapshot(&self) -> Arc<FusionView> {
        self.current.read().expect("fusion lock poisoned").clone()
    }

    pub fn replace(&self, view: FusionView) {
        *self.current.write().expect("fusion lock poisoned") = Arc::new(view);
    }

    /// Loads `path` and swaps it in. On error the previous snapshot stays active.
    pub fn reload(&self, path: &Path) -> Result<usize, FusionError> {
        let view = FusionView::from_records(load_feed(path)?);
        let n = view.len();
        self.replace(view);
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(platform: &str, metric: &str, value: f64, as_of: u64) -> FusionRecord {
        FusionRecord {
            platform: platform.into(),
            metric: metric.into(),
            value: FusionValue::Number(value),
            as_of: Timestamp(as_of),
        }
    }

    #[test]
    fn last_write_wins() {
        let view = FusionView::from_records([
            rec("a", "monthly_bytes", 2.0, 20),
            rec("a", "monthly_bytes", 1.0, 10),
        ]);
        assert_eq!(view.get("a", "monthly_bytes"), Some(FusionValue::Number(2.0)));
        let view = FusionView::from_records([
            rec("a", "monthly_bytes", 1.0, 10),
            rec("a", "monthly_bytes", 3.0, 10),
        ]);
        assert_eq!(view.get("a", "monthly_bytes"), Some(FusionValue::Number(3.0)));
    }

    #[test]
    fn feed_parsing() {
        assert!(parse_feed("").unwrap().is_empty());
        let text = r#"{"platform":"a","metric":"quota_bytes","value":100,"as_of":1}
{"platform":"a","metric":"healthy","value":true,"as_of":1}
"#;
        assert_eq!(parse_feed(text).unwrap().len(), 2);
        let bad = r#"{"platform":"a","metric":"quota_bytes","value":100,"as_of":1}
{"platform":"a","metric":"quota_bytes","value":"lots","as_of":2}"#;
        match parse_feed(bad) {
            Err(FusionError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let negative = r#"{"platform":"a","metric":"monthly_bytes","value":-1,"as_of":1}"#;
        assert!(matches!(parse_feed(negative), Err(FusionError::Parse { line: 1, .. })));
        let healthy_num = r#"{"platform":"a","metric":"healthy","value":1,"as_of":1}"#;
        assert!(parse_feed(healthy_num).is_err());
    }

    #[test]
    fn headroom() {
        let view = FusionView::from_records([
            rec("a", "monthly_bytes", 75.0, 1),
            rec("a", "quota_bytes", 100.0, 1),
            rec("b", "monthly_bytes", 120.0, 1),
            rec("b", "quota_bytes", 100.0, 1),
            rec("c", "monthly_bytes", 1.0, 1),
            rec("d", "monthly_bytes", 1.0, 1),
            rec("d", "quota_bytes", 0.0, 1),
        ]);
        assert_eq!(quota_headroom("a", &view), Some(0.25));
        assert_eq!(quota_headroom("b", &view), Some(0.0));
        assert_eq!(quota_headroom("c", &view), None);
        assert_eq!(quota_headroom("d", &view), None);
    }

    #[test]
    fn failed_reload_keeps_previous_view() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feed.jsonl");
        fs::write(&path, r#"{"platform":"a","metric":"quota_bytes","value":5,"as_of":1}"#).unwrap();
        let store = FusionStore::default();
        assert_eq!(store.reload(&path).unwrap(), 1);
        fs::write(&path, "not json").unwrap();
        assert!(store.reload(&path).is_err());
        assert_eq!(store.snapshot().len(), 1);
    }

    proptest! {
        #[test]
        fn headroom_in_unit_interval(used in 0.0f64..1e12, quota in 0.0f64..1e12) {
            let view = FusionView::from_records([
                rec("p", "monthly_bytes", used, 1),
                rec("p", "quota_bytes", quota, 1),
            ]);
            if let Some(h) = quota_headroom("p", &view) {
                prop_assert!((0.0..=1.0).contains(&h));
            }
        }
    }
}
