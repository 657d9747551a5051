//! The twin: replicates physical state from snapshots, runs what-if
//! simulations of design alternatives, and picks among Pareto-efficient ones.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::goal::DesignAlternative;
use crate::metrics::{overall, MetricsConfig, MetricsRecorder, Preference};
use crate::sim::{restore, Event, EventKind, SafetyRuleParams, SimError, Snapshot, WorldState};

#[derive(Debug, thiserror::Error)]
pub enum TwinError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid what-if job: {0}")]
    InvalidJob(String),
    #[error("empty Pareto front")]
    EmptyFront,
}

/// Base state held by the twin.
#[derive(Debug, Clone)]
pub struct TwinState {
    pub base: Snapshot,
    pub world: WorldState,
}

impl TwinState {
    pub fn now(&self) -> f64 {
        self.world.now()
    }
}

pub fn assimilate(snap: &Snapshot) -> Result<TwinState, TwinError> {
    let world = restore(snap)?;
    Ok(TwinState { base: snap.clone(), world })
}

/// Adjusts a twin's internal parameters against observations. Twin and
/// physical space share one implementation, so the default does nothing.
pub trait CalibrationHook: Send + Sync {
    fn calibrate(&self, twin: &mut TwinState, observed: &WorldState);
}

pub struct NoCalibration;

impl CalibrationHook for NoCalibration {
    fn calibrate(&self, _twin: &mut TwinState, _observed: &WorldState) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhatIfSettings {
    /// Simulated seconds per replication.
    pub horizon: f64,
    pub replications: usize,
    /// Replication `r` reseeds all streams with `seed_base + r`, the same
    /// for every alternative. `None` keeps the snapshot's own streams.
    pub seed_base: Option<u64>,
    pub metrics: MetricsConfig,
}

impl Default for WhatIfSettings {
    fn default() -> Self {
        Self { horizon: 600.0, replications: 5, seed_base: Some(1), metrics: MetricsConfig::default() }
    }
}

impl WhatIfSettings {
    pub fn validate(&self) -> Result<(), TwinError> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(TwinError::InvalidJob(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.replications == 0 {
            return Err(TwinError::InvalidJob("at least one replication is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct WhatIfJob {
    pub base: Snapshot,
    pub alternative: DesignAlternative,
    pub settings: WhatIfSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    /// Safety_min averaged over every tick of the horizon.
    pub safety: f64,
    /// Productivity at the end of the horizon.
    pub productivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResult {
    pub alternative_id: usize,
    pub label: String,
    pub rule: SafetyRuleParams,
    pub safety_score: f64,
    pub productivity_score: f64,
    pub safety_raw: Vec<f64>,
    pub productivity_raw: Vec<f64>,
    /// 95% confidence half-widths (0 with a single replication).
    pub safety_ci: f64,
    pub productivity_ci: f64,
}

impl WhatIfResult {
    pub fn point(&self) -> ParetoPoint {
        ParetoPoint { id: self.alternative_id, safety: self.safety_score, productivity: self.productivity_score }
    }
}

/// Runs one replication from `base` under `rule`.
pub fn run_replication(
    base: &WorldState,
    rule: SafetyRuleParams,
    horizon: f64,
    seed: Option<u64>,
    metrics: MetricsConfig,
) -> ReplicationOutcome {
    let mut world = base.clone();
    world.set_rule(rule);
    if let Some(s) = seed {
        world.reseed(s);
    }
    let mut rec = MetricsRecorder::resume(metrics, &world);
    let ticks = (horizon / world.clock.dt).round() as u64;
    for _ in 0..ticks {
        let report = world.step();
        rec.record(&world, &report);
    }
    ReplicationOutcome {
        safety: rec.series.mean_safety_min().unwrap_or(1.0),
        // No completion at all gives no evidence of delay.
        productivity: rec.current_productivity().unwrap_or(1.0),
    }
}

pub fn run_what_if(job: &WhatIfJob) -> Result<WhatIfResult, TwinError> {
    job.settings.validate()?;
    let base = restore(&job.base)?;
    let outcomes: Vec<ReplicationOutcome> = (0..job.settings.replications)
        .map(|r| replicate(&base, &job.alternative, &job.settings, r))
        .collect();
    Ok(aggregate(&job.alternative, &outcomes))
}

/// Runs every alternative, fanning replications out over the current rayon
/// pool. Results come back in alternative order whatever the scheduling.
pub fn run_batch(
    base: &Snapshot,
    alternatives: &[DesignAlternative],
    settings: &WhatIfSettings,
) -> Result<Vec<WhatIfResult>, TwinError> {
    settings.validate()?;
    let world = restore(base)?;
    let reps = settings.replications;
    let outcomes: Vec<ReplicationOutcome> = (0..alternatives.len() * reps)
        .into_par_iter()
        .map(|k| replicate(&world, &alternatives[k / reps], settings, k % reps))
        .collect();
    Ok(alternatives.iter().zip(outcomes.chunks(reps)).map(|(a, o)| aggregate(a, o)).collect())
}

fn replicate(base: &WorldState, alt: &DesignAlternative, s: &WhatIfSettings, r: usize) -> ReplicationOutcome {
    let seed = s.seed_base.map(|b| b.wrapping_add(r as u64));
    run_replication(base, alt.resolved_params, s.horizon, seed, s.metrics)
}

fn aggregate(alt: &DesignAlternative, outcomes: &[ReplicationOutcome]) -> WhatIfResult {
    let safety: Vec<f64> = outcomes.iter().map(|o| o.safety).collect();
    let productivity: Vec<f64> = outcomes.iter().map(|o| o.productivity).collect();
    WhatIfResult {
        alternative_id: alt.id,
        label: alt.label.clone(),
        rule: alt.resolved_params,
        safety_score: mean(&safety),
        productivity_score: mean(&productivity),
        safety_ci: ci_halfwidth(&safety),
        productivity_ci: ci_halfwidth(&productivity),
        safety_raw: safety,
        productivity_raw: productivity,
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Half-width of the two-sided 95% t interval for the mean.
pub fn ci_halfwidth(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom").inverse_cdf(0.975);
    t * (var / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub id: usize,
    pub safety: f64,
    pub productivity: f64,
}

impl ParetoPoint {
    pub fn new(id: usize, safety: f64, productivity: f64) -> Self {
        Self { id, safety, productivity }
    }
}

/// `a` is at least as good as `b` in both objectives and better in one.
pub fn dominates(a: &ParetoPoint, b: &ParetoPoint) -> bool {
    a.safety >= b.safety
        && a.productivity >= b.productivity
        && (a.safety > b.safety || a.productivity > b.productivity)
}

/// For each point, whether no other point dominates it.
///
/// Sorting by safety (descending) lets one sweep decide every point: within
/// a run of equal safety only the best productivity survives, and it must
/// beat everything seen at strictly higher safety.
pub fn pareto_flags(points: &[ParetoPoint]) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| points[b].safety.total_cmp(&points[a].safety));
    let mut flags = vec![false; points.len()];
    let mut best_above = f64::NEG_INFINITY;
    let mut i = 0;
    while i < idx.len() {
        let s = points[idx[i]].safety;
        let mut j = i;
        while j < idx.len() && points[idx[j]].safety == s {
            j += 1;
        }
        let group = &idx[i..j];
        let top = group.iter().map(|&k| points[k].productivity).fold(f64::NEG_INFINITY, f64::max);
        if top > best_above {
            for &k in group {
                flags[k] = points[k].productivity == top;
            }
        }
        best_above = best_above.max(top);
        i = j;
    }
    flags
}

/// Non-dominated points in input order; identical points are all kept.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    points.iter().zip(pareto_flags(points)).filter(|(_, f)| *f).map(|(p, _)| *p).collect()
}

/// Highest weighted sum; ties go to higher safety, then lower id.
pub fn select(front: &[ParetoPoint], pref: &Preference) -> Result<ParetoPoint, TwinError> {
    const TIE: f64 = 1e-12;
    let mut best: Option<(f64, &ParetoPoint)> = None;
    for p in front {
        let v = overall(p.safety, p.productivity, pref);
        let better = match best {
            None => true,
            Some((bv, b)) => {
                v > bv + TIE
                    || ((v - bv).abs() <= TIE
                        && (p.safety > b.safety || (p.safety == b.safety && p.id < b.id)))
            }
        };
        if better {
            best = Some((v, p));
        }
    }
    best.map(|(_, p)| *p).ok_or(TwinError::EmptyFront)
}

/// Instruction to swap the fleet's rule at the next tick boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnactmentCommand {
    pub alternative_id: usize,
    pub label: String,
    pub rule: SafetyRuleParams,
    /// The analysis that justified the change, if any.
    pub analysis_id: Option<u64>,
    pub issued_at: f64,
}

impl EnactmentCommand {
    /// Replaces every AMR's rule and returns the log entry.
    pub fn apply(&self, world: &mut WorldState) -> Event {
        world.set_rule(self.rule);
        let mut e = world.make_event(EventKind::RuleEnacted, crate::sim::Vec2::ZERO);
        e.alternative = Some(self.alternative_id);
        e.analysis = self.analysis_id;
        e
    }
}

pub fn enact(alternative: &DesignAlternative, analysis_id: Option<u64>, now: f64) -> EnactmentCommand {
    EnactmentCommand {
        alternative_id: alternative.id,
        label: alternative.label.clone(),
        rule: alternative.resolved_params,
        analysis_id,
        issued_at: now,
    }
}
