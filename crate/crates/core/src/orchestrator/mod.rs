//! Closed adaptation loop around the physical simulation: watches the order
//! arrival rate, runs what-if analyses when the regime changes, and applies
//! the chosen rule at tick boundaries.

mod live;

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::goal::{DesignAlternative, GoalModel};
use crate::metrics::{MetricsError, MetricsRecorder, Preference};
use crate::pool::whatif_pool;
use crate::sim::{build_world, snapshot, Event, EventKind, ScenarioConfig, SimError, Snapshot, TickReport, WorldState};
use crate::twin::{enact, pareto_flags, run_batch, select, EnactmentCommand, TwinError, WhatIfResult, WhatIfSettings};

pub use live::{Command, LiveHandle, PublishedView, StateView};

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("not enough arrivals to estimate a rate")]
    InsufficientData,
    #[error(transparent)]
    InvalidPreference(#[from] MetricsError),
    #[error("unknown analysis {0}")]
    UnknownAnalysis(u64),
    #[error("analysis {analysis} has no alternative {alternative}")]
    UnknownAlternative { analysis: u64, alternative: usize },
    #[error("analysis {0} has not finished")]
    AnalysisPending(u64),
    #[error("invalid loop config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Twin(#[from] TwinError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("runtime stopped")]
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub window_w: usize,
    pub deviation_threshold: f64,
    /// Seconds after an adaptation during which no new phase change fires.
    pub debounce: f64,
    pub auto_enact: bool,
    /// Simulated seconds per wall second; `None` runs as fast as possible.
    pub time_scale: Option<f64>,
    pub snapshot_every: u64,
    /// Reference inter-arrival time; learned from the first full window if unset.
    pub initial_baseline: Option<f64>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            window_w: 20,
            deviation_threshold: 0.4,
            debounce: 300.0,
            auto_enact: false,
            time_scale: Some(10.0),
            snapshot_every: 100,
            initial_baseline: None,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: &str| Err(OrchestratorError::InvalidConfig(m.into()));
        if self.window_w < 2 {
            return bad("window_w must be at least 2");
        }
        if !(self.deviation_threshold > 0.0) {
            return bad("deviation_threshold must be positive");
        }
        if self.time_scale.is_some_and(|s| !(s > 0.0)) {
            return bad("time_scale must be positive");
        }
        if self.initial_baseline.is_some_and(|b| !(b > 0.0)) {
            return bad("baseline must be positive");
        }
        if self.snapshot_every == 0 {
            return bad("snapshot_every must be positive");
        }
        Ok(())
    }
}

/// Recent arrivals and the reference rate they are compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorWindow {
    capacity: usize,
    arrivals: VecDeque<f64>,
    pub baseline: Option<f64>,
    pub last_adaptation_time: Option<f64>,
}

impl MonitorWindow {
    pub fn new(capacity: usize, baseline: Option<f64>) -> Self {
        Self { capacity, arrivals: VecDeque::with_capacity(capacity), baseline, last_adaptation_time: None }
    }

    pub fn push_arrival(&mut self, t: f64) {
        if self.arrivals.len() == self.capacity {
            self.arrivals.pop_front();
        }
        self.arrivals.push_back(t);
    }

    pub fn arrivals(&self) -> impl Iterator<Item = f64> + '_ {
        self.arrivals.iter().copied()
    }

    pub fn is_full(&self) -> bool {
        self.arrivals.len() == self.capacity
    }
}

/// Mean gap between the arrivals currently in the window.
pub fn estimate_interarrival(window: &MonitorWindow) -> Result<f64, OrchestratorError> {
    let n = window.arrivals.len();
    if n < 2 {
        return Err(OrchestratorError::InsufficientData);
    }
    Ok((window.arrivals[n - 1] - window.arrivals[0]) / (n - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseChangeEvent {
    pub t: f64,
    pub estimate: f64,
    pub baseline: f64,
    pub deviation: f64,
}

/// Compares the current estimate with the baseline.
///
/// Fires when the relative deviation exceeds the threshold outside the
/// debounce period, and adopts the estimate as the new baseline. Inside the
/// debounce period the baseline follows the estimate, so a window still
/// sliding from the old regime into the new one does not fire again.
pub fn detect_phase_change(window: &mut MonitorWindow, cfg: &LoopConfig, now: f64) -> Option<PhaseChangeEvent> {
    let estimate = estimate_interarrival(window).ok()?;
    let Some(baseline) = window.baseline else {
        if window.is_full() {
            window.baseline = Some(estimate);
        }
        return None;
    };
    if window.last_adaptation_time.is_some_and(|l| now - l <= cfg.debounce) {
        window.baseline = Some(estimate);
        return None;
    }
    let deviation = (estimate - baseline).abs() / baseline;
    if deviation <= cfg.deviation_threshold {
        return None;
    }
    window.baseline = Some(estimate);
    window.last_adaptation_time = Some(now);
    Some(PhaseChangeEvent { t: now, estimate, baseline, deviation })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trigger {
    PhaseChange(PhaseChangeEvent),
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum CycleStatus {
    Enacted,
    PendingHumanDecision,
    Failed(String),
}

/// Audit record of one analysis: what was evaluated, what was chosen, what was done.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub id: u64,
    pub trigger: Trigger,
    pub t: f64,
    pub tick: u64,
    pub settings: WhatIfSettings,
    pub preference: Preference,
    pub alternatives: Vec<DesignAlternative>,
    pub results: Vec<WhatIfResult>,
    pub on_front: Vec<bool>,
    pub selected: Option<usize>,
    pub status: CycleStatus,
    pub enactment: Option<EnactmentCommand>,
}

/// An analysis whose snapshot has been taken but whose batch has not run yet.
#[derive(Debug, Clone)]
pub struct PendingCycle {
    pub id: u64,
    pub trigger: Trigger,
    pub t: f64,
    pub tick: u64,
    pub snapshot: Snapshot,
    pub alternatives: Vec<DesignAlternative>,
    pub settings: WhatIfSettings,
    /// Manual analyses only report; they never enact on their own.
    pub may_enact: bool,
}

impl PendingCycle {
    pub fn run(&self, pool: &ThreadPool) -> Result<Vec<WhatIfResult>, TwinError> {
        pool.install(|| run_batch(&self.snapshot, &self.alternatives, &self.settings))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Notice {
    PhaseChange(PhaseChangeEvent),
    AnalysisStarted { id: u64, t: f64 },
    AnalysisFinished { id: u64, t: f64, selected: Option<usize> },
    Enacted { t: f64, alternative_id: usize, analysis_id: Option<u64>, slow_radius_y: f64 },
    PreferenceChanged { t: f64, preference: Preference },
}

/// Single-threaded owner of the physical world.
pub struct Orchestrator {
    pub world: WorldState,
    pub recorder: MetricsRecorder,
    pub monitor: MonitorWindow,
    pub cfg: LoopConfig,
    pub whatif: WhatIfSettings,
    goal: GoalModel,
    candidates: Option<Vec<DesignAlternative>>,
    preference: Preference,
    pool: Arc<ThreadPool>,
    pending: Vec<EnactmentCommand>,
    reports: BTreeMap<u64, CycleReport>,
    next_id: u64,
    log: Vec<Event>,
    notices: Vec<Notice>,
    latest_snapshot: Option<Snapshot>,
}

impl Orchestrator {
    pub fn new(scenario: &ScenarioConfig, goal: GoalModel, cfg: LoopConfig) -> Result<Self, OrchestratorError> {
        cfg.validate()?;
        let world = build_world(scenario)?;
        let whatif = WhatIfSettings { metrics: scenario.metrics, ..WhatIfSettings::default() };
        Ok(Self {
            recorder: MetricsRecorder::new(scenario.metrics),
            monitor: MonitorWindow::new(cfg.window_w, cfg.initial_baseline),
            world,
            cfg,
            whatif,
            goal,
            candidates: None,
            preference: Preference::default(),
            pool: whatif_pool(None),
            pending: Vec::new(),
            reports: BTreeMap::new(),
            next_id: 1,
            log: Vec::new(),
            notices: Vec::new(),
            latest_snapshot: None,
        })
    }

    pub fn with_pool(mut self, pool: Arc<ThreadPool>) -> Self {
        self.pool = pool;
        self
    }

    pub fn pool(&self) -> &Arc<ThreadPool> {
        &self.pool
    }

    /// Evaluates these instead of the goal model's alternatives.
    pub fn set_candidates(&mut self, candidates: Option<Vec<DesignAlternative>>) {
        self.candidates = candidates;
    }

    pub fn goal_model(&self) -> &GoalModel {
        &self.goal
    }

    pub fn alternatives(&self) -> Vec<DesignAlternative> {
        self.candidates.clone().unwrap_or_else(|| self.goal.enumerate_alternatives())
    }

    pub fn preference(&self) -> Preference {
        self.preference
    }

    pub fn set_preference(&mut self, pref: Preference) -> Result<(), OrchestratorError> {
        pref.validate()?;
        self.preference = pref;
        self.notices.push(Notice::PreferenceChanged { t: self.world.now(), preference: pref });
        Ok(())
    }

    pub fn reports(&self) -> impl Iterator<Item = &CycleReport> {
        self.reports.values()
    }

    pub fn report(&self, id: u64) -> Option<&CycleReport> {
        self.reports.get(&id)
    }

    pub fn log(&self) -> &[Event] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.log)
    }

    pub fn take_notices(&mut self) -> Vec<Notice> {
        std::mem::take(&mut self.notices)
    }

    pub fn latest_snapshot(&self) -> Option<&Snapshot> {
        self.latest_snapshot.as_ref()
    }

    /// Queues an enactment for the next tick boundary. Several queued in one
    /// gap are applied in order, so the last one wins; each is logged.
    pub fn queue_enactment(&mut self, cmd: EnactmentCommand) {
        self.pending.push(cmd);
    }

    /// Enacts an alternative evaluated by a finished analysis.
    pub fn request_enactment(&mut self, analysis_id: u64, alternative_id: usize) -> Result<(), OrchestratorError> {
        let report = self.reports.get(&analysis_id).ok_or(OrchestratorError::UnknownAnalysis(analysis_id))?;
        let alt = report
            .alternatives
            .iter()
            .find(|a| a.id == alternative_id)
            .ok_or(OrchestratorError::UnknownAlternative { analysis: analysis_id, alternative: alternative_id })?;
        let cmd = enact(alt, Some(analysis_id), self.world.now());
        self.queue_enactment(cmd);
        Ok(())
    }

    /// Advances one tick, running any triggered adaptation cycle inline.
    pub fn tick(&mut self) -> TickReport {
        let (report, cycle) = self.tick_deferred();
        if let Some(c) = cycle {
            let results = c.run(&self.pool);
            self.finish_cycle(c, results);
        }
        report
    }

    /// Advances one tick; a triggered cycle is returned for the caller to run.
    pub fn tick_deferred(&mut self) -> (TickReport, Option<PendingCycle>) {
        for cmd in std::mem::take(&mut self.pending) {
            let e = cmd.apply(&mut self.world);
            self.log.push(e);
            self.notices.push(Notice::Enacted {
                t: self.world.now(),
                alternative_id: cmd.alternative_id,
                analysis_id: cmd.analysis_id,
                slow_radius_y: cmd.rule.slow_radius_y,
            });
        }

        let report = self.world.step();
        self.recorder.record(&self.world, &report);
        self.log.extend(report.events.iter().cloned());

        let mut cycle = None;
        let mut arrived = false;
        for e in report.events.iter().filter(|e| e.kind == EventKind::OrderArrived) {
            let t = e.order.map_or(e.t, |o| self.world.orders[o].arrival_time);
            self.monitor.push_arrival(t);
            arrived = true;
        }
        if arrived {
            if let Some(ev) = detect_phase_change(&mut self.monitor, &self.cfg, report.t) {
                self.notices.push(Notice::PhaseChange(ev));
                cycle = Some(self.begin_cycle(Trigger::PhaseChange(ev), None, true));
            }
        }
        if self.world.clock.tick % self.cfg.snapshot_every == 0 {
            self.latest_snapshot = Some(snapshot(&self.world));
        }
        (report, cycle)
    }

    /// Takes a fresh snapshot and prepares an analysis of `alternatives`
    /// (the configured candidates when `None`).
    pub fn begin_cycle(
        &mut self,
        trigger: Trigger,
        alternatives: Option<Vec<DesignAlternative>>,
        may_enact: bool,
    ) -> PendingCycle {
        let id = self.next_id;
        self.next_id += 1;
        let snap = snapshot(&self.world);
        self.latest_snapshot = Some(snap.clone());
        self.notices.push(Notice::AnalysisStarted { id, t: self.world.now() });
        PendingCycle {
            id,
            trigger,
            t: self.world.now(),
            tick: self.world.clock.tick,
            snapshot: snap,
            alternatives: alternatives.unwrap_or_else(|| self.alternatives()),
            settings: self.whatif,
            may_enact,
        }
    }

    /// Pareto analysis and selection over a finished batch; enacts when allowed.
    /// A failed batch leaves the physical rule untouched.
    pub fn finish_cycle(&mut self, c: PendingCycle, results: Result<Vec<WhatIfResult>, TwinError>) -> &CycleReport {
        let pref = self.preference;
        let mut report = CycleReport {
            id: c.id,
            trigger: c.trigger,
            t: c.t,
            tick: c.tick,
            settings: c.settings,
            preference: pref,
            alternatives: c.alternatives,
            results: Vec::new(),
            on_front: Vec::new(),
            selected: None,
            status: CycleStatus::PendingHumanDecision,
            enactment: None,
        };
        match results {
            Err(e) => report.status = CycleStatus::Failed(e.to_string()),
            Ok(results) => {
                let points: Vec<_> = results.iter().map(WhatIfResult::point).collect();
                report.on_front = pareto_flags(&points);
                let front: Vec<_> = points.iter().zip(&report.on_front).filter(|(_, f)| **f).map(|(p, _)| *p).collect();
                report.results = results;
                match select(&front, &pref) {
                    Err(e) => report.status = CycleStatus::Failed(e.to_string()),
                    Ok(best) => {
                        report.selected = Some(best.id);
                        if c.may_enact && self.cfg.auto_enact {
                            let alt = report.alternatives.iter().find(|a| a.id == best.id).expect("selected from batch");
                            let cmd = enact(alt, Some(c.id), self.world.now());
                            self.queue_enactment(cmd.clone());
                            report.enactment = Some(cmd);
                            report.status = CycleStatus::Enacted;
                        }
                    }
                }
            }
        }
        self.notices.push(Notice::AnalysisFinished { id: c.id, t: self.world.now(), selected: report.selected });
        self.reports.insert(c.id, report);
        &self.reports[&c.id]
    }

    /// Runs an analysis now, without enacting anything.
    pub fn analyse(&mut self, alternatives: Option<Vec<DesignAlternative>>) -> &CycleReport {
        let c = self.begin_cycle(Trigger::Manual, alternatives, false);
        let results = c.run(&self.pool);
        self.finish_cycle(c, results)
    }

    pub fn run_until(&mut self, t: f64) {
        while self.world.now() < t - 1e-9 {
            self.tick();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(ts: &[f64], w: usize) -> MonitorWindow {
        let mut m = MonitorWindow::new(w, None);
        for &t in ts {
            m.push_arrival(t);
        }
        m
    }

    #[test]
    fn interarrival_estimates() {
        let ts: Vec<f64> = (1..=40).map(|k| 50.0 * k as f64).collect();
        assert_eq!(estimate_interarrival(&window(&ts, 20)).unwrap(), 50.0);
        assert_eq!(estimate_interarrival(&window(&[0.0, 10.0, 30.0], 3)).unwrap(), 15.0);
        assert!(matches!(estimate_interarrival(&window(&[5.0], 3)), Err(OrchestratorError::InsufficientData)));
    }

    #[test]
    fn detector_examples() {
        let cfg = LoopConfig::default();
        let mut m = window(&[0.0, 15.0], 2);
        m.baseline = Some(50.0);
        let ev = detect_phase_change(&mut m, &cfg, 1000.0).unwrap();
        assert!((ev.deviation - 0.7).abs() < 1e-12);
        assert_eq!(m.baseline, Some(15.0));

        let mut m = window(&[0.0, 45.0], 2);
        m.baseline = Some(50.0);
        assert!(detect_phase_change(&mut m, &cfg, 1000.0).is_none());

        let mut m = window(&[0.0, 15.0], 2);
        m.baseline = Some(50.0);
        m.last_adaptation_time = Some(900.0);
        assert!(detect_phase_change(&mut m, &cfg, 1000.0).is_none());
    }

    #[test]
    fn preference_validation() {
        let mut o = Orchestrator::new(&ScenarioConfig::default(), GoalModel::builtin_default(), LoopConfig::default())
            .unwrap()
            .with_pool(whatif_pool(Some(1)));
        assert!(o.set_preference(Preference { w_s: 0.5, w_p: 0.5 }).is_ok());
        assert!(matches!(
            o.set_preference(Preference { w_s: 0.7, w_p: 0.2 }),
            Err(OrchestratorError::InvalidPreference(_))
        ));
        assert!(o.set_preference(Preference { w_s: 1.0, w_p: 0.0 }).is_ok());
        assert_eq!(o.preference().w_s, 1.0);
    }
}
