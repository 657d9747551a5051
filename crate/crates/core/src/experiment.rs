//! Headless experiments: the two-phase arrival-rate scenario and what-if
//! sweeps over candidate slow-zone radii.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::goal::DesignAlternative;
use crate::metrics::{MetricsRecorder, MetricsSeries, SafetyHistogram};
use crate::sim::{build_world, snapshot, Distribution, Event, Phase, SafetyRuleParams, ScenarioConfig, SimError};
use crate::twin::{pareto_flags, run_batch, TwinError, WhatIfResult, WhatIfSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPhasePlan {
    pub phase1_interarrival: f64,
    pub phase2_interarrival: f64,
    pub distribution: Distribution,
    /// Length of each phase in simulated seconds.
    pub phase_duration: f64,
    /// Phase-1 orders arriving before this are warm-up.
    pub warmup: f64,
    pub y: f64,
}

impl Default for TwoPhasePlan {
    fn default() -> Self {
        Self {
            phase1_interarrival: 50.0,
            phase2_interarrival: 15.0,
            distribution: Distribution::Fixed,
            phase_duration: 3600.0,
            warmup: 600.0,
            y: 5.0,
        }
    }
}

impl TwoPhasePlan {
    pub fn scenario(&self, base: &ScenarioConfig, seed: u64) -> Result<ScenarioConfig, SimError> {
        let mut s = base.clone();
        s.seed = seed;
        s.rule = SafetyRuleParams::new(s.rule.stop_radius_x, self.y, s.rule.slow_factor)?;
        s.phases = vec![
            Phase { start: 0.0, mean_interarrival: self.phase1_interarrival, distribution: self.distribution },
            Phase {
                start: self.phase_duration,
                mean_interarrival: self.phase2_interarrival,
                distribution: self.distribution,
            },
        ];
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletedOrder {
    pub id: usize,
    pub arrival: f64,
    pub completion: f64,
    pub service_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    /// Orders completed during the phase, in completion order.
    pub completions: Vec<CompletedOrder>,
    pub histogram: SafetyHistogram,
    /// Mean of the Safety_min samples below 1, if any.
    pub sub_saturated_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseRun {
    pub seed: u64,
    pub y: f64,
    pub phase1: PhaseSummary,
    pub phase2: PhaseSummary,
    /// Mean service time of Phase-1 orders that arrived after warm-up.
    pub phase1_steady_mean: f64,
    /// Least-squares slope of those service times against completion time.
    pub phase1_slope: f64,
    /// Mean service time of the last `n` Phase-2 completions.
    pub phase2_tail_mean: f64,
    #[serde(skip)]
    pub series: MetricsSeries,
    #[serde(skip)]
    pub events: Vec<Event>,
}

pub fn run_two_phase(base: &ScenarioConfig, plan: &TwoPhasePlan, seed: u64, tail_n: usize) -> Result<TwoPhaseRun, SimError> {
    let scenario = plan.scenario(base, seed)?;
    let mut world = build_world(&scenario)?;
    let mut rec = MetricsRecorder::new(scenario.metrics);
    let mut events = Vec::new();
    let end = 2.0 * plan.phase_duration;
    let mut hist = [SafetyHistogram::default(), SafetyHistogram::default()];
    let mut sub = [(0.0, 0usize); 2];
    while world.now() < end - 1e-9 {
        let r = world.step();
        rec.record(&world, &r);
        events.extend(r.events);
        let phase = usize::from(r.t > plan.phase_duration + 1e-9);
        if let Some(s) = rec.series.ticks.last() {
            hist[phase].record(s.safety_min);
            if s.safety_min < 1.0 {
                sub[phase].0 += s.safety_min;
                sub[phase].1 += 1;
            }
        }
    }

    let done: Vec<CompletedOrder> = rec
        .series
        .completions
        .iter()
        .map(|c| CompletedOrder { id: c.order, arrival: c.arrival_time, completion: c.t, service_time: c.service_time })
        .collect();
    let (p1, p2): (Vec<CompletedOrder>, Vec<CompletedOrder>) = done.into_iter().partition(|c| c.completion <= plan.phase_duration + 1e-9);
    let steady: Vec<&CompletedOrder> = p1.iter().filter(|c| c.arrival >= plan.warmup).collect();
    let steady_x: Vec<f64> = steady.iter().map(|c| c.completion).collect();
    let steady_y: Vec<f64> = steady.iter().map(|c| c.service_time).collect();
    let tail = &p2[p2.len().saturating_sub(tail_n)..];

    let [h1, h2] = hist;
    let sub_mean = |(sum, n): (f64, usize)| (n > 0).then(|| sum / n as f64);
    Ok(TwoPhaseRun {
        seed,
        y: plan.y,
        phase1_steady_mean: mean(&steady_y),
        phase1_slope: ols_slope(&steady_x, &steady_y),
        phase2_tail_mean: mean(&tail.iter().map(|c| c.service_time).collect::<Vec<_>>()),
        phase1: PhaseSummary { completions: p1, histogram: h1, sub_saturated_mean: sub_mean(sub[0]) },
        phase2: PhaseSummary { completions: p2, histogram: h2, sub_saturated_mean: sub_mean(sub[1]) },
        series: rec.series,
        events,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Two-sided one-sample t-test of `mean(v) = 0`; returns `(t, p)`.
pub fn t_test_zero_mean(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n < 2 {
        return (0.0, 1.0);
    }
    let m = mean(v);
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    if sd == 0.0 {
        return if m == 0.0 { (0.0, 1.0) } else { (f64::INFINITY.copysign(m), 0.0) };
    }
    let t = m / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
    (t, 2.0 * (1.0 - dist.cdf(t.abs())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub candidates: Vec<f64>,
    /// Simulated times at which the physical run is snapshotted.
    pub snapshot_times: Vec<f64>,
    pub settings: WhatIfSettings,
    pub two_phase: TwoPhasePlan,
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self {
            candidates: vec![1.0, 2.0, 3.0, 4.5, 5.0],
            // Mid-phase, so each analysis sees that phase's settled regime.
            snapshot_times: vec![1800.0, 5400.0],
            settings: WhatIfSettings::default(),
            two_phase: TwoPhasePlan::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPhase {
    pub t: f64,
    pub results: Vec<WhatIfResult>,
    pub on_front: Vec<bool>,
}

pub fn candidate_alternatives(base: SafetyRuleParams, ys: &[f64]) -> Result<Vec<DesignAlternative>, SimError> {
    ys.iter()
        .enumerate()
        .map(|(i, &y)| {
            let rule = SafetyRuleParams::new(base.stop_radius_x, y, base.slow_factor)?;
            Ok(DesignAlternative::from_rule(i, format!("y = {y} m"), rule))
        })
        .collect()
}

/// Runs the physical two-phase scenario and, at each snapshot time, a full
/// what-if batch over the candidates.
pub fn run_sweep(base: &ScenarioConfig, plan: &SweepPlan, seed: u64) -> Result<Vec<SweepPhase>, TwinError> {
    if plan.candidates.is_empty() {
        return Err(TwinError::InvalidJob("no candidates".into()));
    }
    let scenario = plan.two_phase.scenario(base, seed)?;
    let alternatives = candidate_alternatives(scenario.rule, &plan.candidates)?;
    let mut settings = plan.settings;
    settings.metrics = scenario.metrics;
    let mut world = build_world(&scenario)?;
    let mut times = plan.snapshot_times.clone();
    times.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    for t in times {
        while world.now() < t - 1e-9 {
            world.step();
        }
        let results = run_batch(&snapshot(&world), &alternatives, &settings)?;
        let on_front = pareto_flags(&results.iter().map(WhatIfResult::point).collect::<Vec<_>>());
        out.push(SweepPhase { t: world.now(), results, on_front });
    }
    Ok(out)
}

pub fn write_sweep_csv<W: Write>(out: W, phases: &[SweepPhase]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "phase",
        "t",
        "alternative_id",
        "y",
        "x",
        "safety_score",
        "productivity_score",
        "safety_ci",
        "productivity_ci",
        "on_pareto_front",
    ])?;
    for (k, p) in phases.iter().enumerate() {
        for (r, f) in p.results.iter().zip(&p.on_front) {
            w.write_record([
                (k + 1).to_string(),
                p.t.to_string(),
                r.alternative_id.to_string(),
                r.rule.slow_radius_y.to_string(),
                r.rule.stop_radius_x.to_string(),
                r.safety_score.to_string(),
                r.productivity_score.to_string(),
                r.safety_ci.to_string(),
                r.productivity_ci.to_string(),
                f.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_service_times_csv<W: Write>(out: W, run: &TwoPhaseRun) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["phase", "order", "arrival", "completion", "service_time"])?;
    for (k, p) in [&run.phase1, &run.phase2].into_iter().enumerate() {
        for c in &p.completions {
            w.write_record([
                (k + 1).to_string(),
                c.id.to_string(),
                c.arrival.to_string(),
                c.completion.to_string(),
                c.service_time.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_and_t_test() {
        assert!((ols_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-12);
        let (t, p) = t_test_zero_mean(&[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(t, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
        // mean 2, sd sqrt(2/3), n 4: t = 2 / (sd / 2).
        let (t, p) = t_test_zero_mean(&[1.0, 2.0, 3.0, 2.0]);
        assert!((t - 4.898_979).abs() < 1e-5);
        assert!(p < 0.05);
    }
}
