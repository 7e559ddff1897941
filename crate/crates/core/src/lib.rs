//! DNS-based request routing across multiple delivery platforms.
//!
//! * [`dns`]: authoritative answers for portal names, CNAME or A.
//! * [`openmix`]: per-query platform choice from measurements and feeds.
//! * [`radar`]: real-user probe collection and rolling aggregates.
//! * [`fusion`]: third-party platform statistics.
//! * [`sentinel`]: network event detection over probe reports.
//! * [`netsim`]: a deterministic simulated internet driving all of the above.
//! * [`charscope`]: enumeration, resolution and analysis tooling.

pub mod charscope;
pub mod config;
pub mod dns;
pub mod fusion;
pub mod model;
pub mod netsim;
pub mod numeric;
pub mod openmix;
pub mod radar;
pub mod sentinel;
