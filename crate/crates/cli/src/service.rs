//! The running deployment: edge, Radar, sentinel and Fusion wired from one config.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use metacdn::config::{ConfigError, ServiceConfig};
use metacdn::dns::DnsEdge;
use metacdn::fusion::{FusionError, FusionStore, FusionView};
use metacdn::model::Timestamp;
use metacdn::openmix::Openmix;
use metacdn::radar::{ProbeConfig, Radar, ReportLog};
use metacdn::sentinel::Sentinel;

pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

pub fn wall_clock() -> Clock {
    Arc::new(|| {
        let ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64);
        Timestamp::from_millis(ms)
    })
}

pub struct Service {
    pub edge: DnsEdge,
    pub radar: Arc<Radar>,
    pub sentinel: Arc<Mutex<Sentinel>>,
    pub fusion: Arc<FusionStore>,
    pub probes: ProbeConfig,
    pub fusion_feed: Option<PathBuf>,
    pub clock: Clock,
}

impl Service {
    pub fn build(cfg: &ServiceConfig, clock: Clock) -> Result<Service, ConfigError> {
        let edge_cfg = cfg.edge_config()?;
        let geo = cfg.geo()?;
        let kinds = cfg.platforms.iter().map(|p| (p.alias.clone(), p.kind));
        let sentinel = Arc::new(Mutex::new(Sentinel::new(cfg.sentinel.clone(), kinds)));
        let mut radar = Radar::new(cfg.radar, cfg.platforms.iter().map(|p| p.alias.clone()))
            .with_sentinel(sentinel.clone());
        if let Some(path) = &cfg.report_log {
            let log = ReportLog::open(path).map_err(|source| ConfigError::Io {
                path: path.display().to_string(),
                source,
            })?;
            radar = radar.with_log(log);
        }
        let radar = Arc::new(radar);
        let fusion = Arc::new(FusionStore::new(FusionView::default()));
        if let Some(path) = &cfg.fusion_feed {
            // a missing or broken feed only disables Fusion-based rules
            if let Err(e) = fusion.reload(path) {
                log::warn!("fusion feed {}: {e}", path.display());
            }
        }
        let edge = DnsEdge::new(edge_cfg, geo, Openmix::new(cfg.openmix), radar.clone(), fusion.clone());
        Ok(Service {
            edge,
            radar,
            sentinel,
            fusion,
            probes: cfg.probes.clone(),
            fusion_feed: cfg.fusion_feed.clone(),
            clock,
        })
    }

    pub fn now(&self) -> Timestamp {
        (self.clock)()
    }

    /// Reloads the configured feed, or `path` if given.
    pub fn reload_fusion(&self, path: Option<PathBuf>) -> Result<usize, FusionError> {
        match path.or_else(|| self.fusion_feed.clone()) {
            Some(p) => self.fusion.reload(&p),
            None => Ok(0),
        }
    }
}
