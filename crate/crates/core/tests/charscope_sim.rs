//! The measurement toolkit pointed at a simulated deployment, checked
//! against the simulator's provisioning manifest.

use std::net::SocketAddrV4;

use metacdn::charscope::{
    analyze_choices, analyze_ttl, enumerate_customers, merge_discoveries, resolve_domains, ChoiceObservation,
    EnumerateOptions, EnumerationPlan, Grouping, InProcess, RateLimiter, Source, TtlObservation,
};
use metacdn::model::Timestamp;
use metacdn::netsim::{run, Scenario, World};
use serde_json::json;

const ZONE: &str = "cdx.metacdn.test";

fn scenario(apps: Vec<serde_json::Value>) -> Scenario {
    Scenario::parse(
        &json!({
            "seed": 11, "duration": 600, "probe_period": 10, "resolve_period": 30,
            "regions": [
                {"name": "eu", "country": "DE", "asns": [64500]},
                {"name": "us", "country": "US", "asns": [64600]}
            ],
            "platforms": [
                {"alias": "cdnA", "perf": {"eu": {"latency_ms": 20}, "us": {"latency_ms": 80}}},
                {"alias": "cdnB", "perf": {"eu": {"latency_ms": 70}, "us": {"latency_ms": 25}}},
                {"alias": "origin", "kind": "origin", "target": {"addresses": ["198.51.100.7"]},
                 "perf": {"eu": {"latency_ms": 90}, "us": {"latency_ms": 90}}}
            ],
            "apps": apps,
            "resolvers": [
                {"name": "r-eu", "ip": "192.0.2.53", "region": "eu", "asn": 64500},
                {"name": "r-us", "ip": "198.51.100.53", "region": "us", "asn": 64600}
            ],
            "clients": [
                {"name": "berlin", "region": "eu", "asn": 64500, "resolver": "r-eu"},
                {"name": "austin", "region": "us", "asn": 64600, "resolver": "r-us"}
            ],
            "radar": {"window": 60, "min_samples": 3}
        })
        .to_string(),
    )
    .unwrap()
}

fn app(customer: &str, app: &str, policy: &str, ttl: u32, domain: &str) -> serde_json::Value {
    json!({"customer": customer, "app": app, "policy": {"kind": policy},
           "candidates": ["cdnA", "cdnB"], "cname_ttl_s": ttl, "domain": domain})
}

fn transport(world: &World) -> InProcess<impl FnMut(&[u8]) -> Vec<u8> + '_> {
    let src: SocketAddrV4 = "192.0.2.53:5300".parse().unwrap();
    InProcess(move |q: &[u8]| world.answer(q, src, Timestamp::from_secs(1)).0)
}

#[test]
fn enumeration_finds_exactly_the_provisioned_apps() {
    let s = scenario(vec![
        app("0010", "0001", "round_robin", 20, "a.test"),
        app("0010", "0004", "round_robin", 20, "b.test"),
        app("0011", "0002", "optimal_rtt", 60, "c.test"),
        app("0012", "0007", "static", 300, "d.test"),
        app("0012", "0008", "round_robin", 5, "e.test"),
    ]);
    let world = World::build(&s).unwrap();
    let plan = EnumerationPlan::new(0x000f..=0x0013, 16).unwrap();
    let opts = EnumerateOptions {
        zone: ZONE,
        checkpoint: None,
        checkpoint_every: 100,
        budget: None,
    };
    let found = enumerate_customers(&plan, &opts, &mut transport(&world), &mut RateLimiter::new(1e6)).unwrap();
    assert!(found.complete);
    let got: Vec<(String, String)> =
        found.records.iter().map(|r| (r.customer.to_string(), r.app.to_string())).collect();
    let mut want: Vec<(String, String)> = world
        .manifest()
        .iter()
        .map(|m| (m.customer.to_string(), m.app.to_string()))
        .collect();
    want.sort();
    assert_eq!(got, want);

    let domains: Vec<String> = vec!["a.test".into(), "d.test".into(), "unknown.test".into()];
    let res = resolve_domains(&domains, ZONE, &mut transport(&world), &mut RateLimiter::new(1e6));
    assert_eq!(res[2].error.as_deref(), Some("REFUSED"));
    let merged = merge_discoveries(&found.records, &res, ZONE);
    assert_eq!(merged.len(), 5);
    assert_eq!(merged.iter().filter(|r| r.source == Source::Both).count(), 2);
}

#[test]
fn ttl_cdf_matches_the_manifest() {
    // 67 of 100 apps at or below 20 s.
    let ttls = |i: u32| if i < 67 { [5, 10, 20][i as usize % 3] } else { [30, 300, 3600][i as usize % 3] };
    let apps = (0..100)
        .map(|i| app("0020", &format!("{:04x}", i + 1), "round_robin", ttls(i), &format!("www.site{i}.test")))
        .collect();
    let world = World::build(&scenario(apps)).unwrap();
    let domains: Vec<String> = world.manifest().iter().map(|m| m.domain.clone()).collect();
    let res = resolve_domains(&domains, ZONE, &mut transport(&world), &mut RateLimiter::new(1e6));
    assert!(res.iter().all(|r| r.is_meta_cdn() && r.chain.len() == 3));

    let oracle = world.manifest().iter().filter(|m| m.cname_ttl_s <= 20).count() as f64 / domains.len() as f64;
    let a = analyze_ttl(&TtlObservation::from_resolutions(&res));
    assert!((a.cdf.fraction_at(20.0) - 0.67).abs() < 1e-9);
    assert_eq!(a.cdf.fraction_at(20.0), oracle);
    assert_eq!(a.cdf.points.last().unwrap().1, 1.0);
    assert!(!a.platforms.is_empty());
}

#[test]
fn regional_stats_give_regional_choices() {
    let out = run(&scenario(vec![app("0030", "0001", "optimal_rtt", 20, "shop.test")])).unwrap();
    let obs = ChoiceObservation::from_simlog(&out.log);
    let by_country = analyze_choices(&obs, Grouping::Country);
    assert!(by_country.share("DE", "cdnA") > 0.8, "{:?}", by_country.shares);
    assert!(by_country.share("US", "cdnB") > 0.8, "{:?}", by_country.shares);
    assert_eq!(by_country.histogram.get(&2), Some(&1));

    let ttl = analyze_ttl(&TtlObservation::from_simlog(&out.log, ZONE));
    assert_eq!(ttl.cdf.points, vec![(20.0, 1.0)]);
    assert_eq!(ttl.platforms.len(), 2);
}

#[test]
fn round_robin_shares_are_exact() {
    let mut s = scenario(vec![app("0040", "0001", "round_robin", 1, "rr.test")]);
    s.clients.truncate(1);
    s.resolve_period = std::time::Duration::from_secs(2);
    s.duration = std::time::Duration::from_secs(2000);
    let out = run(&s).unwrap();
    let fresh = ChoiceObservation::from_simlog(&out.log);
    assert_eq!(fresh.len(), 1000);
    let a = analyze_choices(&fresh, Grouping::Vantage);
    assert_eq!(a.share("berlin", "cdnA"), 0.5);
    assert_eq!(a.share("berlin", "cdnB"), 0.5);
}
