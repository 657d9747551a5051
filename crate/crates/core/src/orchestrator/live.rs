//! Paced physical runtime on its own thread.
//!
//! The tick loop is the only writer of the world. Control arrives through a
//! command queue drained at tick boundaries; readers get a published view
//! that is replaced, never mutated in place by anyone but the loop.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, RwLock, RwLockReadGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{CycleReport, Notice, Orchestrator, OrchestratorError, PendingCycle, Trigger};
use crate::goal::DesignAlternative;
use crate::metrics::{CompletionSample, Preference, TickSample};
use crate::sim::{AmrState, GovernorMode, SafetyRuleParams, WorkerState};
use crate::twin::{TwinError, WhatIfResult};

const METRICS_TAIL: usize = 36_000;
const NOTICE_TAIL: usize = 1_000;
const PUBLISH_EVERY: Duration = Duration::from_millis(20);

type Reply<T> = Sender<Result<T, OrchestratorError>>;

pub enum Command {
    SetPreference(Preference, Reply<()>),
    Enact { analysis_id: u64, alternative_id: usize, reply: Reply<()> },
    WhatIf { horizon: Option<f64>, replications: Option<usize>, candidates: Option<Vec<f64>>, reply: Reply<u64> },
    Pause,
    Resume,
    TimeScale(Option<f64>),
    Shutdown,
    CycleDone(Box<PendingCycle>, Result<Vec<WhatIfResult>, TwinError>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    pub state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub governor: Option<GovernorMode>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub t: f64,
    pub tick: u64,
    pub paused: bool,
    pub time_scale: Option<f64>,
    pub rule: Option<SafetyRuleParams>,
    pub width: f64,
    pub height: f64,
    pub amrs: Vec<AgentView>,
    pub workers: Vec<AgentView>,
    /// `[queued, assigned, in_transit, completed]`.
    pub orders: [usize; 4],
    pub safety_min: Option<f64>,
    pub productivity: Option<f64>,
    pub preference: Option<Preference>,
    /// Mean wall-clock cost of a tick over the last publish interval.
    pub tick_micros: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisView {
    pub id: u64,
    pub running: bool,
    pub report: Option<CycleReport>,
}

#[derive(Debug, Clone, Default)]
pub struct PublishedView {
    pub state: StateView,
    pub layout_rows: Vec<String>,
    pub metrics: VecDeque<TickSample>,
    pub completions: VecDeque<CompletionSample>,
    pub alternatives: Vec<DesignAlternative>,
    pub analyses: BTreeMap<u64, AnalysisView>,
    /// `(sequence number, notice)`, oldest first.
    pub notices: VecDeque<(u64, Notice)>,
    pub next_notice: u64,
}

impl PublishedView {
    pub fn notices_after(&self, seq: Option<u64>) -> impl Iterator<Item = &(u64, Notice)> {
        self.notices.iter().filter(move |(s, _)| seq.is_none_or(|k| *s > k))
    }
}

/// Handle to a running physical loop.
pub struct LiveHandle {
    tx: Sender<Command>,
    view: Arc<RwLock<PublishedView>>,
    thread: Option<JoinHandle<Orchestrator>>,
}

impl LiveHandle {
    pub fn spawn(orch: Orchestrator) -> Self {
        let (tx, rx) = mpsc::channel();
        let view = Arc::new(RwLock::new(PublishedView::default()));
        let runtime = Runtime::new(orch, rx, tx.clone(), view.clone());
        let thread = std::thread::Builder::new()
            .name("physical".into())
            .spawn(move || runtime.run())
            .expect("spawn physical loop");
        Self { tx, view, thread: Some(thread) }
    }

    pub fn view(&self) -> RwLockReadGuard<'_, PublishedView> {
        self.view.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn send(&self, cmd: Command) -> Result<(), OrchestratorError> {
        self.tx.send(cmd).map_err(|_| OrchestratorError::Stopped)
    }

    fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, OrchestratorError> {
        let (reply, rx) = mpsc::channel();
        self.send(make(reply))?;
        rx.recv().map_err(|_| OrchestratorError::Stopped)?
    }

    pub fn set_preference(&self, pref: Preference) -> Result<(), OrchestratorError> {
        self.call(|r| Command::SetPreference(pref, r))
    }

    pub fn enact(&self, analysis_id: u64, alternative_id: usize) -> Result<(), OrchestratorError> {
        self.call(|reply| Command::Enact { analysis_id, alternative_id, reply })
    }

    pub fn what_if(
        &self,
        horizon: Option<f64>,
        replications: Option<usize>,
        candidates: Option<Vec<f64>>,
    ) -> Result<u64, OrchestratorError> {
        self.call(|reply| Command::WhatIf { horizon, replications, candidates, reply })
    }

    pub fn pause(&self) -> Result<(), OrchestratorError> {
        self.send(Command::Pause)
    }

    pub fn resume(&self) -> Result<(), OrchestratorError> {
        self.send(Command::Resume)
    }

    pub fn set_time_scale(&self, scale: Option<f64>) -> Result<(), OrchestratorError> {
        if scale.is_some_and(|s| !(s > 0.0)) {
            return Err(OrchestratorError::InvalidConfig("time_scale must be positive".into()));
        }
        self.send(Command::TimeScale(scale))
    }

    /// Stops the loop and returns the orchestrator.
    pub fn shutdown(mut self) -> Option<Orchestrator> {
        let _ = self.tx.send(Command::Shutdown);
        self.thread.take().and_then(|t| t.join().ok())
    }
}

impl Drop for LiveHandle {
    fn drop(&mut self) {
        if let Some(t) = self.thread.take() {
            let _ = self.tx.send(Command::Shutdown);
            let _ = t.join();
        }
    }
}

struct Runtime {
    orch: Orchestrator,
    rx: Receiver<Command>,
    tx: Sender<Command>,
    view: Arc<RwLock<PublishedView>>,
    paused: bool,
    running: BTreeSet<u64>,
    published_ticks: usize,
    published_completions: usize,
    tick_cost: Duration,
    ticks_since_publish: u32,
}

impl Runtime {
    fn new(orch: Orchestrator, rx: Receiver<Command>, tx: Sender<Command>, view: Arc<RwLock<PublishedView>>) -> Self {
        {
            let mut v = view.write().unwrap_or_else(|e| e.into_inner());
            v.layout_rows = orch.world.layout.rows().to_vec();
            v.alternatives = orch.alternatives();
        }
        Self {
            orch,
            rx,
            tx,
            view,
            paused: false,
            running: BTreeSet::new(),
            published_ticks: 0,
            published_completions: 0,
            tick_cost: Duration::ZERO,
            ticks_since_publish: 0,
        }
    }

    fn run(mut self) -> Orchestrator {
        self.publish();
        let mut last_publish = Instant::now();
        let mut deadline = Instant::now();
        loop {
            // Commands are applied between ticks only.
            loop {
                let cmd = if self.paused {
                    match self.rx.recv_timeout(Duration::from_millis(100)) {
                        Ok(c) => c,
                        Err(RecvTimeoutError::Timeout) => break,
                        Err(RecvTimeoutError::Disconnected) => return self.orch,
                    }
                } else {
                    match self.rx.try_recv() {
                        Ok(c) => c,
                        Err(_) => break,
                    }
                };
                if !self.handle(cmd) {
                    self.publish();
                    return self.orch;
                }
                deadline = Instant::now();
            }
            if self.paused {
                self.publish();
                continue;
            }

            let started = Instant::now();
            let (_, cycle) = self.orch.tick_deferred();
            self.tick_cost += started.elapsed();
            self.ticks_since_publish += 1;
            if let Some(c) = cycle {
                self.spawn_cycle(c);
            }
            if last_publish.elapsed() >= PUBLISH_EVERY {
                self.publish();
                last_publish = Instant::now();
            }

            if let Some(scale) = self.orch.cfg.time_scale {
                deadline += Duration::from_secs_f64(self.orch.world.clock.dt / scale);
                let now = Instant::now();
                if deadline > now {
                    std::thread::sleep(deadline - now);
                } else if now - deadline > Duration::from_secs(1) {
                    // Too far behind to catch up; do not burst.
                    deadline = now;
                }
            }
        }
    }

    /// Returns false on shutdown.
    fn handle(&mut self, cmd: Command) -> bool {
        match cmd {
            Command::SetPreference(p, reply) => {
                let _ = reply.send(self.orch.set_preference(p));
            }
            Command::Enact { analysis_id, alternative_id, reply } => {
                let r = if self.running.contains(&analysis_id) {
                    Err(OrchestratorError::AnalysisPending(analysis_id))
                } else {
                    self.orch.request_enactment(analysis_id, alternative_id)
                };
                let _ = reply.send(r);
            }
            Command::WhatIf { horizon, replications, candidates, reply } => {
                let _ = reply.send(self.start_what_if(horizon, replications, candidates));
            }
            Command::Pause => self.paused = true,
            Command::Resume => self.paused = false,
            Command::TimeScale(s) => self.orch.cfg.time_scale = s,
            Command::Shutdown => return false,
            Command::CycleDone(c, results) => {
                self.running.remove(&c.id);
                self.orch.finish_cycle(*c, results);
            }
        }
        true
    }

    fn start_what_if(
        &mut self,
        horizon: Option<f64>,
        replications: Option<usize>,
        candidates: Option<Vec<f64>>,
    ) -> Result<u64, OrchestratorError> {
        let base_rule = self.orch.world.amrs.first().map(|a| a.rule).unwrap_or_default();
        let alternatives = match candidates {
            None => None,
            Some(ys) => Some(
                ys.iter()
                    .enumerate()
                    .map(|(i, &y)| {
                        let rule = SafetyRuleParams::new(base_rule.stop_radius_x, y, base_rule.slow_factor)?;
                        Ok(DesignAlternative::from_rule(i, format!("y = {y} m"), rule))
                    })
                    .collect::<Result<Vec<_>, crate::sim::SimError>>()?,
            ),
        };
        let mut c = self.orch.begin_cycle(Trigger::Manual, alternatives, false);
        if let Some(h) = horizon {
            c.settings.horizon = h;
        }
        if let Some(r) = replications {
            c.settings.replications = r;
        }
        c.settings.validate()?;
        let id = c.id;
        self.spawn_cycle(c);
        Ok(id)
    }

    fn spawn_cycle(&mut self, c: PendingCycle) {
        self.running.insert(c.id);
        self.view
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .analyses
            .insert(c.id, AnalysisView { id: c.id, running: true, report: None });
        let pool = self.orch.pool().clone();
        let tx = self.tx.clone();
        pool.clone().spawn(move || {
            let results = c.run(&pool);
            let _ = tx.send(Command::CycleDone(Box::new(c), results));
        });
    }

    fn publish(&mut self) {
        let o = &mut self.orch;
        let w = &o.world;
        let bounds = w.layout.bounds();
        let amr_state = |s: AmrState| format!("{s:?}");
        let worker_state = |s: WorkerState| format!("{s:?}");
        let state = StateView {
            t: w.now(),
            tick: w.clock.tick,
            paused: self.paused,
            time_scale: o.cfg.time_scale,
            rule: w.amrs.first().map(|a| a.rule),
            width: bounds.x,
            height: bounds.y,
            amrs: w
                .amrs
                .iter()
                .map(|a| AgentView {
                    id: a.id,
                    x: a.position.x,
                    y: a.position.y,
                    speed: a.speed(),
                    state: amr_state(a.state),
                    governor: Some(a.governor),
                })
                .collect(),
            workers: w
                .workers
                .iter()
                .map(|k| AgentView {
                    id: k.id,
                    x: k.position.x,
                    y: k.position.y,
                    speed: k.velocity.norm(),
                    state: worker_state(k.state),
                    governor: None,
                })
                .collect(),
            orders: w.order_counts(),
            safety_min: o.recorder.series.ticks.last().map(|s| s.safety_min),
            productivity: o.recorder.series.latest_productivity(),
            preference: Some(o.preference()),
            tick_micros: if self.ticks_since_publish > 0 {
                self.tick_cost.as_secs_f64() * 1e6 / self.ticks_since_publish as f64
            } else {
                0.0
            },
        };
        self.tick_cost = Duration::ZERO;
        self.ticks_since_publish = 0;
        let notices = o.take_notices();
        // The event log is not kept by the live loop; the view is what readers see.
        o.take_log();

        let mut v = self.view.write().unwrap_or_else(|e| e.into_inner());
        v.state = state;
        let series = &o.recorder.series;
        for s in &series.ticks[self.published_ticks.min(series.ticks.len())..] {
            if v.metrics.len() == METRICS_TAIL {
                v.metrics.pop_front();
            }
            v.metrics.push_back(*s);
        }
        self.published_ticks = series.ticks.len();
        for c in &series.completions[self.published_completions.min(series.completions.len())..] {
            if v.completions.len() == METRICS_TAIL {
                v.completions.pop_front();
            }
            v.completions.push_back(*c);
        }
        self.published_completions = series.completions.len();
        for n in notices {
            let seq = v.next_notice;
            v.next_notice += 1;
            if v.notices.len() == NOTICE_TAIL {
                v.notices.pop_front();
            }
            v.notices.push_back((seq, n));
        }
        for &id in &self.running {
            v.analyses.entry(id).or_insert(AnalysisView { id, running: true, report: None });
        }
        for r in o.reports() {
            if !v.analyses.get(&r.id).is_some_and(|a| a.report.is_some()) {
                v.analyses.insert(r.id, AnalysisView { id: r.id, running: false, report: Some(r.clone()) });
            }
        }
    }
}
