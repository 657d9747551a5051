use warehouse_twin::experiment::candidate_alternatives;
use warehouse_twin::sim::{build_world, snapshot, ScenarioConfig, SimError, Snapshot, WorldState};
use warehouse_twin::twin::{assimilate, run_batch, run_what_if, TwinError, WhatIfJob, WhatIfSettings};

fn world_at(t: f64) -> WorldState {
    let s = ScenarioConfig::default();
    let mut w = build_world(&s).unwrap();
    while w.now() < t - 1e-9 {
        w.step();
    }
    w
}

#[test]
fn twin_starts_from_the_snapshot_clock() {
    let w = world_at(1000.0);
    let twin = assimilate(&snapshot(&w)).unwrap();
    assert!((twin.now() - 1000.0).abs() < 1e-9);
    assert_eq!(twin.world, w);
}

#[test]
fn corrupt_bytes_are_rejected() {
    let err = assimilate(&Snapshot::from_bytes(b"\x00\x01garbage".to_vec())).unwrap_err();
    assert!(matches!(err, TwinError::Sim(SimError::CorruptSnapshot(_))));
}

#[test]
fn replications_are_averaged() {
    let s = ScenarioConfig::default();
    let base = snapshot(&world_at(600.0));
    let alt = candidate_alternatives(s.rule, &[3.0]).unwrap().remove(0);
    let settings = WhatIfSettings { horizon: 120.0, replications: 5, seed_base: Some(11), metrics: s.metrics };
    let r = run_what_if(&WhatIfJob { base, alternative: alt, settings }).unwrap();
    assert_eq!(r.safety_raw.len(), 5);
    assert_eq!(r.productivity_raw.len(), 5);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!((r.safety_score - mean(&r.safety_raw)).abs() < 1e-12);
    assert!((r.productivity_score - mean(&r.productivity_raw)).abs() < 1e-12);
    assert!(r.safety_ci >= 0.0 && r.productivity_ci >= 0.0);
}

#[test]
fn batch_rejects_bad_settings() {
    let s = ScenarioConfig::default();
    let base = snapshot(&world_at(10.0));
    let alts = candidate_alternatives(s.rule, &[1.0]).unwrap();
    let bad = WhatIfSettings { horizon: 0.0, ..WhatIfSettings::default() };
    assert!(matches!(run_batch(&base, &alts, &bad), Err(TwinError::InvalidJob(_))));
}

#[test]
fn smaller_slow_radius_is_at_least_as_productive_when_congested() {
    let s = ScenarioConfig::default();
    let base = snapshot(&world_at(5400.0));
    let alts = candidate_alternatives(s.rule, &[1.0, 5.0]).unwrap();
    let settings = WhatIfSettings { horizon: 600.0, replications: 3, seed_base: Some(1), metrics: s.metrics };
    let r = run_batch(&base, &alts, &settings).unwrap();
    assert!(r[0].productivity_score >= r[1].productivity_score, "{} < {}", r[0].productivity_score, r[1].productivity_score);
}
