//! The deployment config file read by `serve`.
//!
//! ```json
//! {
//!   "zone": "cdx.metacdn.test",
//!   "platforms": [{"alias": "cdnA", "kind": "cdn", "target": {"cname": "gw.cdna.test"}, "answer_ttl_s": 60}],
//!   "customers": {"446b": {"0004": {"policy": {"kind": "optimal_rtt"}, "candidates": ["cdnA"], "cname_ttl_s": 20}}},
//!   "geo_table": "geo.csv",
//!   "fusion_feed": "fusion.jsonl"
//! }
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dns::geo::{GeoError, GeoTable};
use crate::dns::EdgeConfig;
use crate::model::{AppConfig, AppId, CustomerId, ModelError, Platform, PolicySpec};
use crate::openmix::rules::RuleError;
use crate::openmix::OpenmixConfig;
use crate::radar::{ProbeConfig, RadarConfig};
use crate::sentinel::SentinelConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid zone {0:?}")]
    Zone(String),
    #[error("duplicate platform {0:?}")]
    DuplicatePlatform(String),
    #[error("duplicate app {0}")]
    DuplicateApp(String),
    #[error("app {app}: unknown candidate {alias:?}")]
    UnknownCandidate { app: String, alias: String },
    #[error("app {app}: {source}")]
    Rules {
        app: String,
        #[source]
        source: RuleError,
    },
    #[error("probe target for unknown platform {0:?}")]
    UnknownProbeTarget(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppEntry {
    pub policy: PolicySpec,
    pub candidates: Vec<String>,
    pub cname_ttl_s: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub zone: String,
    pub platforms: Vec<Platform>,
    pub customers: BTreeMap<CustomerId, BTreeMap<AppId, AppEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo_table: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion_feed: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_log: Option<PathBuf>,
    #[serde(default)]
    pub openmix: OpenmixConfig,
    #[serde(default)]
    pub radar: RadarConfig,
    #[serde(default)]
    pub sentinel: SentinelConfig,
    #[serde(default)]
    pub probes: ProbeConfig,
}

impl ServiceConfig {
    pub fn parse(text: &str, origin: &str) -> Result<ServiceConfig, ConfigError> {
        serde_json::from_str(text).map_err(|source| ConfigError::Json {
            path: origin.to_string(),
            source,
        })
    }

    /// Reads the file and makes its relative paths absolute.
    pub fn load(path: &Path) -> Result<ServiceConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = ServiceConfig::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.geo_table, &mut cfg.fusion_feed, &mut cfg.report_log]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn apps(&self) -> Vec<AppConfig> {
        self.customers
            .iter()
            .flat_map(|(c, apps)| {
                apps.iter().map(move |(a, e)| AppConfig {
                    customer: *c,
                    app: *a,
                    policy: e.policy.clone(),
                    candidates: e.candidates.clone(),
                    cname_ttl_s: e.cname_ttl_s,
                })
            })
            .collect()
    }

    /// Full validation, returning the routing part.
    pub fn edge_config(&self) -> Result<EdgeConfig, ConfigError> {
        let edge = EdgeConfig::new(&self.zone, self.platforms.clone(), self.apps())?;
        if let Some(t) = self
            .probes
            .targets
            .iter()
            .find(|t| !edge.platforms().contains_key(&t.platform))
        {
            return Err(ConfigError::UnknownProbeTarget(t.platform.clone()));
        }
        Ok(edge)
    }

    pub fn geo(&self) -> Result<GeoTable, ConfigError> {
        match &self.geo_table {
            Some(p) => Ok(GeoTable::load(p)?),
            None => Ok(GeoTable::default()),
        }
    }
}
