use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use metacdn::charscope::{
    analyze_choices, analyze_latency_diff, analyze_ttl, emit_report, enumerate_customers, merge_discoveries,
    read_domain_list, read_resolutions, resolve_domains, simlog_report, write_resolutions, ChoiceObservation,
    DomainResolution, EnumerateOptions, EnumerationPlan, Grouping, LatencyObservation, RateLimiter, Table,
    TtlObservation, UdpTransport, DEFAULT_QPS,
};
use metacdn::config::ServiceConfig;
use metacdn::fusion::{load_feed, FusionView};
use metacdn::model::PlatformKind;
use metacdn::netsim::{self, Scenario, SimLog};
use metacdn::radar::read_log;
use metacdn::sentinel::{feed_jsonl, Sentinel, SentinelConfig};
use metacdn_cli::service::{wall_clock, Service};

#[derive(Parser)]
#[command(name = "metacdn", version, about = "DNS-based multi-CDN routing, measurement and simulation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the authoritative DNS edge and the HTTP endpoints.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// UDP port for DNS.
        #[arg(long, default_value_t = 5353)]
        port: u16,
        #[arg(long, default_value_t = 8080)]
        http_port: u16,
        #[arg(long, default_value = "0.0.0.0")]
        bind: std::net::IpAddr,
        /// Seconds between Fusion feed reloads; 0 disables.
        #[arg(long, default_value_t = 60)]
        fusion_interval: u64,
    },
    Fusion {
        #[command(subcommand)]
        cmd: FusionCmd,
    },
    Sentinel {
        #[command(subcommand)]
        cmd: SentinelCmd,
    },
    Sim {
        #[command(subcommand)]
        cmd: SimCmd,
    },
    /// Query every portal name of a customer range.
    Enumerate(EnumerateArgs),
    /// Resolve a domain list and record each CNAME chain.
    Resolve(ResolveArgs),
    Analyze {
        #[command(subcommand)]
        cmd: AnalyzeCmd,
    },
    /// All analyses of a simulator log into one report directory.
    Report {
        #[arg(long)]
        simlog: PathBuf,
        #[arg(long)]
        zone: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum FusionCmd {
    /// Validate a feed; with --server, make a running instance load it.
    Reload {
        path: PathBuf,
        /// HTTP base URL of a running `serve`.
        #[arg(long)]
        server: Option<String>,
    },
}

#[derive(Subcommand)]
enum SentinelCmd {
    /// Run a report log through a fresh sentinel and write the event feed.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Service config supplying the sentinel settings and platform kinds.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SimCmd {
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// SimLog output.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Resolver {
    /// Name server to query, e.g. 127.0.0.1:5353.
    #[arg(long)]
    server: SocketAddr,
    /// Zone suffix of the portal names.
    #[arg(long)]
    zone: String,
    #[arg(long, default_value_t = DEFAULT_QPS)]
    qps: f64,
    #[arg(long, default_value_t = 2000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = 2)]
    attempts: u32,
}

impl Resolver {
    fn connect(&self) -> Result<(UdpTransport, RateLimiter)> {
        if !(self.qps.is_finite() && self.qps > 0.0) {
            bail!("--qps must be positive");
        }
        let t = UdpTransport::connect(self.server, Duration::from_millis(self.timeout_ms), self.attempts)?;
        Ok((t, RateLimiter::new(self.qps)))
    }
}

#[derive(Args)]
struct EnumerateArgs {
    #[command(flatten)]
    resolver: Resolver,
    /// Customer ids, `0000-ffff` or a single id.
    #[arg(long)]
    customers: String,
    #[arg(long, default_value_t = 256)]
    cap: u32,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Resolution log to merge in (from `resolve`).
    #[arg(long)]
    resolutions: Option<PathBuf>,
    /// DiscoveryRecords, one JSON object per line.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ResolveArgs {
    #[command(flatten)]
    resolver: Resolver,
    /// Plain-text domain list.
    #[arg(long)]
    domains: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Input {
    #[arg(long, conflicts_with = "resolutions", required_unless_present = "resolutions")]
    simlog: Option<PathBuf>,
    #[arg(long)]
    resolutions: Option<PathBuf>,
    #[arg(long)]
    zone: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupBy {
    Vantage,
    Country,
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    Ttl(Input),
    Choices {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum, default_value_t = GroupBy::Vantage)]
        group: GroupBy,
        /// Label for a resolution log taken from one vantage point.
        #[arg(long, default_value = "local")]
        vantage: String,
        #[arg(long, default_value = "ZZ")]
        country: String,
    },
    Latency {
        #[arg(long)]
        simlog: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Serve {
            config,
            port,
            http_port,
            bind,
            fusion_interval,
        } => serve(&config, SocketAddr::new(bind, port), SocketAddr::new(bind, http_port), fusion_interval),
        Cmd::Fusion {
            cmd: FusionCmd::Reload { path, server },
        } => fusion_reload(&path, server.as_deref()),
        Cmd::Sentinel {
            cmd: SentinelCmd::Replay { log, out, config },
        } => sentinel_replay(&log, &out, config.as_deref()),
        Cmd::Sim {
            cmd:
                SimCmd::Run {
                    scenario,
                    out,
                    events,
                    manifest,
                },
        } => sim_run(&scenario, &out, events.as_deref(), manifest.as_deref()),
        Cmd::Enumerate(args) => enumerate(args),
        Cmd::Resolve(args) => resolve(args),
        Cmd::Analyze { cmd } => analyze(cmd),
        Cmd::Report { simlog, zone, out } => {
            let log = SimLog::load(&simlog).with_context(|| simlog.display().to_string())?;
            let (tables, summary) = simlog_report(&log, &zone);
            write_report(&tables, &summary, &out)
        }
    }
}

fn serve(config: &Path, dns: SocketAddr, http: SocketAddr, fusion_interval: u64) -> Result<()> {
    let cfg = ServiceConfig::load(config)?;
    let service = Arc::new(Service::build(&cfg, wall_clock())?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let udp = tokio::net::UdpSocket::bind(dns).await.with_context(|| format!("bind {dns}"))?;
        let tcp = tokio::net::TcpListener::bind(http).await.with_context(|| format!("bind {http}"))?;
        log::info!("dns on udp/{dns}, http on {http}, zone {}", cfg.zone);
        if fusion_interval > 0 && service.fusion_feed.is_some() {
            let svc = service.clone();
            tokio::spawn(async move {
                let mut tick = tokio::time::interval(Duration::from_secs(fusion_interval));
                tick.tick().await;
                loop {
                    tick.tick().await;
                    match svc.reload_fusion(None) {
                        Ok(n) => log::debug!("fusion reloaded, {n} records"),
                        Err(e) => log::warn!("fusion reload kept previous snapshot: {e}"),
                    }
                }
            });
        }
        let dns_task = tokio::spawn(metacdn_cli::udp::serve(udp, service.clone()));
        let app = metacdn_cli::http::router(service);
        tokio::select! {
            r = axum::serve(tcp, app) => r.context("http server")?,
            r = dns_task => r?.context("dns listener")?,
            _ = tokio::signal::ctrl_c() => log::info!("shutting down"),
        }
        Ok(())
    })
}

fn fusion_reload(path: &Path, server: Option<&str>) -> Result<()> {
    let view = FusionView::from_records(load_feed(path)?);
    println!("{}: {} records", path.display(), view.len());
    if let Some(base) = server {
        let abs = std::fs::canonicalize(path)?;
        let body = serde_json::json!({ "path": abs }).to_string();
        let url = format!("{}/fusion/reload", base.trim_end_matches('/'));
        let rt = tokio::runtime::Runtime::new()?;
        let (status, text) = rt.block_on(async {
            let resp = reqwest::Client::new()
                .post(&url)
                .header("content-type", "application/json")
                .body(body)
                .send()
                .await?;
            let status = resp.status();
            Ok::<_, reqwest::Error>((status, resp.text().await?))
        })?;
        if !status.is_success() {
            bail!("{url}: {status}: {text}");
        }
        println!("{url}: {text}");
    }
    Ok(())
}

fn sentinel_replay(log: &Path, out: &Path, config: Option<&Path>) -> Result<()> {
    let reports = read_log(log)?;
    let (cfg, kinds): (SentinelConfig, Vec<(String, PlatformKind)>) = match config {
        Some(p) => {
            let c = ServiceConfig::load(p)?;
            let kinds = c.platforms.iter().map(|p| (p.alias.clone(), p.kind)).collect();
            (c.sentinel, kinds)
        }
        None => (SentinelConfig::default(), Vec::new()),
    };
    let sentinel = Sentinel::replay(cfg, kinds, &reports);
    let feed = sentinel.emit_feed(metacdn::model::Timestamp::ZERO);
    std::fs::write(out, feed_jsonl(&feed)).with_context(|| out.display().to_string())?;
    log::info!("{} reports, {} events", reports.len(), feed.len());
    Ok(())
}

fn sim_run(scenario: &Path, out: &Path, events: Option<&Path>, manifest: Option<&Path>) -> Result<()> {
    let s = Scenario::load(scenario)?;
    let output = netsim::run(&s)?;
    let mut w = BufWriter::new(File::create(out).with_context(|| out.display().to_string())?);
    output.log.write_jsonl(&mut w)?;
    w.flush()?;
    if let Some(p) = events {
        std::fs::write(p, output.events_jsonl()).with_context(|| p.display().to_string())?;
    }
    if let Some(p) = manifest {
        let mut text = String::new();
        for m in &output.manifest {
            text.push_str(&serde_json::to_string(m)?);
            text.push('\n');
        }
        std::fs::write(p, text).with_context(|| p.display().to_string())?;
    }
    log::info!("{} records, {} events", output.log.records.len(), output.events.len());
    Ok(())
}

fn parse_customers(s: &str) -> Result<std::ops::RangeInclusive<u16>> {
    let id = |x: &str| -> Result<u16> {
        Ok(x.trim().parse::<metacdn::model::CustomerId>()?.value())
    };
    let (lo, hi) = match s.split_once('-') {
        Some((a, b)) => (id(a)?, id(b)?),
        None => (id(s)?, id(s)?),
    };
    if lo > hi {
        bail!("empty customer range {s}");
    }
    Ok(lo..=hi)
}

fn enumerate(args: EnumerateArgs) -> Result<()> {
    let plan = EnumerationPlan::new(parse_customers(&args.customers)?, args.cap)?;
    log::info!("{} queries planned", plan.size());
    let (mut t, mut lim) = args.resolver.connect()?;
    let opts = EnumerateOptions {
        zone: &args.resolver.zone,
        checkpoint: args.checkpoint.as_deref(),
        checkpoint_every: 1000,
        budget: None,
    };
    let result = enumerate_customers(&plan, &opts, &mut t, &mut lim)?;
    if let Some(reason) = &result.aborted {
        log::error!("aborted at plan index {}: {reason}", result.next);
    }
    let mut records = result.records;
    if let Some(p) = &args.resolutions {
        let res = read_resolutions(BufReader::new(File::open(p).with_context(|| p.display().to_string())?))?;
        records = merge_discoveries(&records, &res, &args.resolver.zone);
    }
    let mut w = BufWriter::new(File::create(&args.out)?);
    for r in &records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    log::info!("{} apps found", records.len());
    if !result.complete {
        bail!("enumeration incomplete; rerun with the same --checkpoint to resume");
    }
    Ok(())
}

fn resolve(args: ResolveArgs) -> Result<()> {
    let domains = read_domain_list(BufReader::new(
        File::open(&args.domains).with_context(|| args.domains.display().to_string())?,
    ))?;
    let (mut t, mut lim) = args.resolver.connect()?;
    let res = resolve_domains(&domains, &args.resolver.zone, &mut t, &mut lim);
    let mut w = BufWriter::new(File::create(&args.out)?);
    write_resolutions(&res, &mut w)?;
    w.flush()?;
    let meta = res.iter().filter(|r| r.is_meta_cdn()).count();
    log::info!("{} domains, {meta} routed through the zone", res.len());
    Ok(())
}

enum Loaded {
    Sim(SimLog),
    Resolutions(Vec<DomainResolution>),
}

fn load_input(input: &Input) -> Result<Loaded> {
    if let Some(p) = &input.simlog {
        return Ok(Loaded::Sim(SimLog::load(p).with_context(|| p.display().to_string())?));
    }
    let p = input.resolutions.as_ref().expect("clap requires one input");
    let f = File::open(p).with_context(|| p.display().to_string())?;
    Ok(Loaded::Resolutions(read_resolutions(BufReader::new(f))?))
}

fn analyze(cmd: AnalyzeCmd) -> Result<()> {
    match cmd {
        AnalyzeCmd::Ttl(input) => {
            let obs = match load_input(&input)? {
                Loaded::Sim(log) => TtlObservation::from_simlog(&log, &input.zone),
                Loaded::Resolutions(r) => TtlObservation::from_resolutions(&r),
            };
            let a = analyze_ttl(&obs);
            let summary = vec![
                ("observations".to_string(), obs.len().to_string()),
                ("ttl_at_most_20s".to_string(), a.cdf.fraction_at(20.0).to_string()),
            ];
            write_report(&[a.cdf.to_table("ttl_cdf"), a.platform_table("ttl_by_platform")], &summary, &input.out)
        }
        AnalyzeCmd::Choices {
            input,
            group,
            vantage,
            country,
        } => {
            let obs = match load_input(&input)? {
                Loaded::Sim(log) => ChoiceObservation::from_simlog(&log),
                Loaded::Resolutions(r) => ChoiceObservation::from_resolutions(&r, &vantage, &country),
            };
            let grouping = match group {
                GroupBy::Vantage => Grouping::Vantage,
                GroupBy::Country => Grouping::Country,
            };
            let a = analyze_choices(&obs, grouping);
            let summary = vec![
                ("observations".to_string(), obs.len().to_string()),
                ("domains".to_string(), a.per_domain.len().to_string()),
            ];
            write_report(
                &[a.share_table("choices"), a.histogram_table("distinct_platforms")],
                &summary,
                &input.out,
            )
        }
        AnalyzeCmd::Latency { simlog, out } => {
            let log = SimLog::load(&simlog).with_context(|| simlog.display().to_string())?;
            let a = analyze_latency_diff(&LatencyObservation::from_simlog(&log));
            write_report(
                &[a.relative.to_table("latency_relative"), a.absolute.to_table("latency_absolute")],
                &a.summary(),
                &out,
            )
        }
    }
}

fn write_report(tables: &[Table], summary: &[(String, String)], out: &Path) -> Result<()> {
    for p in emit_report(tables, summary, out)? {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}
