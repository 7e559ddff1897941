//! Measurement toolkit: portal enumeration, CNAME-chain resolution and the
//! TTL, choice and latency analyses, with CSV output.
//!
//! The zone under measurement is always passed in explicitly.

pub mod analyze;
pub mod enumerate;
pub mod report;
pub mod resolve;
pub mod transport;

pub use analyze::{
    analyze_choices, analyze_latency_diff, analyze_ttl, CdfTable, ChoiceAnalysis, ChoiceObservation, Grouping,
    LatencyAnalysis, LatencyObservation, TtlAnalysis, TtlObservation, simlog_report,
};
pub use enumerate::{
    enumerate_customers, merge_discoveries, DiscoveryRecord, EnumerateError, EnumerateOptions, EnumerationPlan,
    EnumerationResult, Source,
};
pub use report::{emit_report, ReportError, Table};
pub use resolve::{read_domain_list, read_resolutions, resolve_domain, resolve_domains, write_resolutions, DomainResolution, Stage};
pub use transport::{DnsTransport, InProcess, RateLimiter, TransportError, UdpTransport, DEFAULT_QPS};
