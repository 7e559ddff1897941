//! Policy engine: picks one candidate platform per query.
//!
//! Data-driven policies look for measurements at the most specific scope
//! that has any usable value (client AS, then country, then global) and only
//! compare candidates at that scope. Aggregates older than
//! [`OpenmixConfig::max_age`] are ignored. Candidates whose known
//! availability is below [`OpenmixConfig::availability_floor`] are skipped
//! unless that would leave nothing. Ties go to the lexicographically smallest
//! alias.

pub mod rules;
pub mod stats;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::fusion::{quota_headroom, FusionView};
use crate::model::{AppConfig, AppId, ClientContext, CustomerId, Metric, PolicyKind, Timestamp};
use rules::{Bindings, RuleProgram};
pub use stats::{Aggregate, Scope, StatsView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Policy,
    FallbackNoData,
    FallbackAllUnavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub chosen: String,
    pub reason: Reason,
    /// Every candidate once, in app order, with the value the policy looked at.
    pub considered: Vec<(String, Option<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpenmixConfig {
    #[serde(with = "secs")]
    pub max_age: Duration,
    pub availability_floor: f64,
}

impl Default for OpenmixConfig {
    fn default() -> Self {
        OpenmixConfig {
            max_age: Duration::from_secs(600),
            availability_floor: 0.5,
        }
    }
}

pub(crate) mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

/// Per-call inputs shared by the policies.
pub struct Inputs<'a> {
    pub ctx: &'a ClientContext,
    pub stats: &'a StatsView,
    pub fusion: &'a FusionView,
    pub now: Timestamp,
    pub config: &'a OpenmixConfig,
}

impl Inputs<'_> {
    fn availability(&self, platform: &str) -> Option<f64> {
        self.stats
            .lookup(platform, Metric::Availability, self.ctx, self.now, self.config.max_age)
            .map(|(_, v)| v)
    }

    /// Candidates passing the availability floor, or all of them if none pass.
    fn gate<'c>(&self, candidates: &'c [String]) -> (Vec<&'c String>, bool) {
        let up: Vec<&String> = candidates
            .iter()
            .filter(|c| {
                self.availability(c)
                    .is_none_or(|a| a >= self.config.availability_floor)
            })
            .collect();
        if up.is_empty() {
            (candidates.iter().collect(), true)
        } else {
            (up, false)
        }
    }
}

/// Values for each candidate at the most specific scope where any candidate has data.
fn scoped_values(candidates: &[&String], metric: Metric, inp: &Inputs) -> Vec<Option<f64>> {
    for scope in Scope::hierarchy(inp.ctx) {
        let vals: Vec<Option<f64>> = candidates
            .iter()
            .map(|c| inp.stats.usable(c, scope, metric, inp.now, inp.config.max_age))
            .collect();
        if vals.iter().any(Option::is_some) {
            return vals;
        }
    }
    vec![None; candidates.len()]
}

fn best_by(
    candidates: &[String],
    metric: Metric,
    inp: &Inputs,
    better: impl Fn(f64, f64) -> bool,
) -> Decision {
    let (eligible, all_down) = inp.gate(candidates);
    let vals = scoped_values(&eligible, metric, inp);
    let mut best: Option<(&String, f64)> = None;
    for (c, v) in eligible.iter().zip(&vals) {
        let Some(v) = *v else { continue };
        best = match best {
            Some((b, bv)) if better(bv, v) || (bv == v && *b <= **c) => Some((b, bv)),
            _ => Some((c, v)),
        };
    }
    let considered = candidates
        .iter()
        .map(|c| {
            let v = eligible
                .iter()
                .position(|e| *e == c)
                .and_then(|i| vals[i]);
            (c.clone(), v)
        })
        .collect();
    match best {
        Some((chosen, _)) => Decision {
            chosen: chosen.clone(),
            reason: if all_down {
                Reason::FallbackAllUnavailable
            } else {
                Reason::Policy
            },
            considered,
        },
        None => Decision {
            chosen: eligible[0].clone(),
            reason: if all_down {
                Reason::FallbackAllUnavailable
            } else {
                Reason::FallbackNoData
            },
            considered,
        },
    }
}

/// Lowest latency wins.
pub fn policy_optimal_rtt(candidates: &[String], inp: &Inputs) -> Decision {
    best_by(candidates, Metric::LatencyMs, inp, |incumbent, new| incumbent < new)
}

/// Highest throughput wins.
pub fn policy_throughput(candidates: &[String], inp: &Inputs) -> Decision {
    best_by(candidates, Metric::ThroughputKbps, inp, |incumbent, new| incumbent > new)
}

/// `candidates[counter mod N]`, then bumps the counter.
pub fn policy_round_robin(counter: &AtomicU64, candidates: &[String]) -> Decision {
    let n = counter.fetch_add(1, Ordering::Relaxed);
    let chosen = candidates[(n % candidates.len() as u64) as usize].clone();
    Decision {
        chosen,
        reason: Reason::Policy,
        considered: candidates.iter().map(|c| (c.clone(), None)).collect(),
    }
}

pub fn policy_static(candidates: &[String]) -> Decision {
    Decision {
        chosen: candidates[0].clone(),
        reason: Reason::Policy,
        considered: candidates.iter().map(|c| (c.clone(), None)).collect(),
    }
}

impl Bindings for Inputs<'_> {
    fn metric(&self, platform: &str, metric: Metric) -> Option<f64> {
        self.stats
            .lookup(platform, metric, self.ctx, self.now, self.config.max_age)
            .map(|(_, v)| v)
    }

    fn fusion(&self, platform: &str, key: &str) -> Option<f64> {
        self.fusion.get(platform, key).map(|v| v.as_f64())
    }

    fn headroom(&self, platform: &str) -> Option<f64> {
        quota_headroom(platform, self.fusion)
    }

    fn client(&self) -> &ClientContext {
        self.ctx
    }
}

/// Runs a rule program. The first rule admitting any candidate decides:
/// the admitted candidate with the lowest defined score, or the rule's own
/// fallback when no admitted candidate has a score (rules without a fallback
/// then defer to the next rule). If no rule decides, the program fallback wins.
pub fn eval_rules(prog: &RuleProgram, candidates: &[String], inp: &Inputs) -> Decision {
    let mut considered: Vec<(String, Option<f64>)> =
        candidates.iter().map(|c| (c.clone(), None)).collect();
    for rule in &prog.rules {
        let admitted: Vec<&String> = candidates
            .iter()
            .filter(|c| RuleProgram::admits(rule, c, inp))
            .collect();
        if admitted.is_empty() {
            continue;
        }
        let mut best: Option<(&String, f64)> = None;
        for c in &admitted {
            let Some(s) = RuleProgram::score(rule, c, inp) else {
                continue;
            };
            if let Some(slot) = considered.iter_mut().find(|(a, _)| a == *c) {
                slot.1 = Some(s);
            }
            best = match best {
                Some((b, bs)) if bs < s || (bs == s && *b <= **c) => Some((b, bs)),
                _ => Some((c, s)),
            };
        }
        if let Some((chosen, _)) = best {
            return Decision {
                chosen: chosen.clone(),
                reason: Reason::Policy,
                considered,
            };
        }
        if let Some(fb) = &rule.fallback {
            return Decision {
                chosen: fb.clone(),
                reason: Reason::FallbackNoData,
                considered,
            };
        }
    }
    Decision {
        chosen: prog.fallback.clone(),
        reason: Reason::FallbackNoData,
        considered,
    }
}

/// Mutable per-app routing state (round-robin counters) plus the policy configuration.
#[derive(Debug, Default)]
pub struct Openmix {
    config: OpenmixConfig,
    counters: Mutex<HashMap<(CustomerId, AppId), Arc<AtomicU64>>>,
}

impl Openmix {
    pub fn new(config: OpenmixConfig) -> Self {
        Openmix {
            config,
            counters: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &OpenmixConfig {
        &self.config
    }

    fn counter(&self, app: &AppConfig) -> Arc<AtomicU64> {
        self.counters
            .lock()
            .expect("counter lock poisoned")
            .entry((app.customer, app.app))
            .or_default()
            .clone()
    }

    /// Total: always returns one of `app.candidates`.
    pub fn evaluate(
        &self,
        app: &AppConfig,
        ctx: &ClientContext,
        stats: &StatsView,
        fusion: &FusionView,
        now: Timestamp,
    ) -> Decision {
        let inp = Inputs {
            ctx,
            stats,
            fusion,
            now,
            config: &self.config,
        };
        let c = &app.candidates;
        match (app.policy.kind, &app.policy.rules) {
            (PolicyKind::Static, _) => policy_static(c),
            (PolicyKind::RoundRobin, _) => policy_round_robin(&self.counter(app), c),
            (PolicyKind::OptimalRtt, _) => policy_optimal_rtt(c, &inp),
            (PolicyKind::Throughput, _) => policy_throughput(c, &inp),
            (PolicyKind::Rules, Some(prog)) => eval_rules(prog, c, &inp),
            // validated apps never get here
            (PolicyKind::Rules, None) => policy_static(c),
        }
    }
}
