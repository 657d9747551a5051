use std::time::{Duration, Instant};

use warehouse_twin::experiment::candidate_alternatives;
use warehouse_twin::goal::GoalModel;
use warehouse_twin::metrics::Preference;
use warehouse_twin::orchestrator::{CycleStatus, LiveHandle, LoopConfig, Notice, Orchestrator, OrchestratorError, Trigger};
use warehouse_twin::sim::{EventKind, ScenarioConfig};

fn orchestrator(auto_enact: bool) -> Orchestrator {
    let cfg = LoopConfig { auto_enact, time_scale: None, ..LoopConfig::default() };
    Orchestrator::new(&ScenarioConfig::default(), GoalModel::builtin_default(), cfg).unwrap()
}

#[test]
fn productivity_only_preference_picks_smallest_radius_at_phase_two() {
    let mut o = orchestrator(false);
    o.set_preference(Preference::new(0.0, 1.0).unwrap()).unwrap();
    o.run_until(4000.0);
    let reports: Vec<_> = o.reports().collect();
    assert_eq!(reports.len(), 1);
    let r = reports[0];
    assert!(matches!(r.trigger, Trigger::PhaseChange(_)));
    let chosen = r.alternatives.iter().find(|a| Some(a.id) == r.selected).unwrap();
    assert_eq!(chosen.y(), 1.0);
    // Without auto_enact nothing changes on the floor.
    assert_eq!(r.status, CycleStatus::PendingHumanDecision);
    assert!(r.enactment.is_none());
    assert!(o.world.amrs.iter().all(|a| a.rule.slow_radius_y == 5.0));
    assert!(!o.log().iter().any(|e| e.kind == EventKind::RuleEnacted));
}

#[test]
fn manual_enactment_applies_at_the_next_tick() {
    let mut o = orchestrator(false);
    o.run_until(300.0);
    let s = ScenarioConfig::default();
    let alts = candidate_alternatives(s.rule, &[4.5]).unwrap();
    let id = o.analyse(Some(alts)).id;
    assert_eq!(o.report(id).unwrap().selected, Some(0), "singleton front is selected");
    assert!(matches!(o.request_enactment(99, 0), Err(OrchestratorError::UnknownAnalysis(99))));
    assert!(matches!(o.request_enactment(id, 7), Err(OrchestratorError::UnknownAlternative { .. })));
    o.request_enactment(id, 0).unwrap();
    assert!(o.world.amrs.iter().all(|a| a.rule.slow_radius_y == 5.0));
    o.tick();
    assert!(o.world.amrs.iter().all(|a| a.rule.slow_radius_y == 4.5));
    let notices = o.take_notices();
    assert!(notices.iter().any(|n| matches!(n, Notice::Enacted { slow_radius_y, .. } if *slow_radius_y == 4.5)));
}

#[test]
fn invalid_preference_is_rejected() {
    let mut o = orchestrator(false);
    let bad = Preference { w_s: 0.7, w_p: 0.2 };
    assert!(matches!(o.set_preference(bad), Err(OrchestratorError::InvalidPreference(_))));
    assert_eq!(o.preference(), Preference::default());
}

fn wait_for(what: &str, limit: Duration, mut f: impl FnMut() -> bool) {
    let start = Instant::now();
    while !f() {
        assert!(start.elapsed() < limit, "timed out waiting for {what}");
        std::thread::sleep(Duration::from_millis(10));
    }
}

#[test]
fn live_loop_runs_analyses_and_accepts_commands() {
    let h = LiveHandle::spawn(orchestrator(false));
    wait_for("simulated time", Duration::from_secs(20), || h.view().state.t > 200.0);
    assert_eq!(h.view().state.amrs.len(), 15);
    assert_eq!(h.view().state.workers.len(), 9);

    let id = h.what_if(Some(60.0), Some(2), Some(vec![1.0, 5.0])).unwrap();
    wait_for("analysis", Duration::from_secs(30), || {
        h.view().analyses.get(&id).is_some_and(|a| !a.running)
    });
    let report = h.view().analyses[&id].report.clone().unwrap();
    assert_eq!(report.results.len(), 2);
    assert!(matches!(h.enact(id + 100, 0), Err(OrchestratorError::UnknownAnalysis(_))));
    h.enact(id, 0).unwrap();
    wait_for("enactment", Duration::from_secs(10), || {
        h.view().state.rule.is_some_and(|r| r.slow_radius_y == 1.0)
    });

    h.pause().unwrap();
    wait_for("pause", Duration::from_secs(5), || h.view().state.paused);
    let t = h.view().state.t;
    std::thread::sleep(Duration::from_millis(100));
    assert_eq!(h.view().state.t, t);
    h.resume().unwrap();
    wait_for("resume", Duration::from_secs(5), || h.view().state.t > t);

    assert!(h.set_preference(Preference { w_s: 0.9, w_p: 0.3 }).is_err());
    h.set_preference(Preference::new(0.2, 0.8).unwrap()).unwrap();
    let seen: Vec<_> = h.view().notices_after(None).map(|(_, n)| n.clone()).collect();
    assert!(seen.iter().any(|n| matches!(n, Notice::AnalysisFinished { id: i, .. } if *i == id)));

    let o = h.shutdown().unwrap();
    assert_eq!(o.preference(), Preference::new(0.2, 0.8).unwrap());
}
