use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use warehouse_twin::experiment::{
    run_sweep, run_two_phase, t_test_zero_mean, write_service_times_csv, write_sweep_csv, SweepPlan, TwoPhasePlan,
};
use warehouse_twin::goal::GoalModel;
use warehouse_twin::metrics::{MetricsRecorder, SafetyHistogram};
use warehouse_twin::orchestrator::{LiveHandle, LoopConfig, Orchestrator};
use warehouse_twin::sim::{build_world, write_events, SafetyRuleParams, ScenarioConfig};
use warehouse_twin::twin::WhatIfSettings;

use crate::{RunArgs, ServeArgs, SweepArgs, TwoPhaseArgs, ValidateArgs};

#[derive(Debug)]
pub enum CliError {
    /// Bad scenario, goal model, config or flag values.
    Input(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

type Result<T> = std::result::Result<T, CliError>;

fn load_scenario(path: Option<&Path>) -> Result<ScenarioConfig> {
    let s = match path {
        Some(p) => ScenarioConfig::load(p).map_err(input)?,
        None => ScenarioConfig::default(),
    };
    s.validate().map_err(input)?;
    s.resolve_layout().map_err(input)?;
    Ok(s)
}

fn load_goal(path: Option<&Path>) -> Result<GoalModel> {
    match path {
        Some(p) => GoalModel::load(p).map_err(input),
        None => Ok(GoalModel::builtin_default()),
    }
}

fn with_y(rule: SafetyRuleParams, y: f64) -> Result<SafetyRuleParams> {
    SafetyRuleParams::new(rule.stop_radius_x, y, rule.slow_factor).map_err(input)
}

/// Files are staged in memory and only written once everything succeeded.
struct Outputs {
    dir: PathBuf,
    files: Vec<(&'static str, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Self {
        Self { dir, files: Vec::new() }
    }

    fn add(&mut self, name: &'static str, bytes: Vec<u8>) {
        self.files.push((name, bytes));
    }

    fn csv(&mut self, name: &'static str, f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(runtime)?;
        self.add(name, buf);
        Ok(())
    }

    fn commit(self) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| runtime(format!("{}: {e}", self.dir.display())))?;
        let staged: Vec<(PathBuf, PathBuf)> =
            self.files.iter().map(|(n, _)| (self.dir.join(format!(".{n}.partial")), self.dir.join(n))).collect();
        let cleanup = || {
            for (tmp, _) in &staged {
                let _ = fs::remove_file(tmp);
            }
        };
        for ((tmp, _), (_, bytes)) in staged.iter().zip(&self.files) {
            if let Err(e) = fs::write(tmp, bytes) {
                cleanup();
                return Err(runtime(format!("{}: {e}", tmp.display())));
            }
        }
        for (tmp, dst) in &staged {
            fs::rename(tmp, dst).map_err(|e| runtime(format!("{}: {e}", dst.display())))?;
        }
        for (_, dst) in &staged {
            println!("wrote {}", dst.display());
        }
        Ok(())
    }
}

pub fn run(a: RunArgs) -> Result<()> {
    let mut s = load_scenario(a.common.scenario.as_deref())?;
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    if let Some(y) = a.y {
        s.rule = with_y(s.rule, y)?;
    }
    if !(a.duration > 0.0) || !a.duration.is_finite() {
        return Err(input("duration must be positive"));
    }
    let mut w = build_world(&s).map_err(input)?;
    let mut rec = MetricsRecorder::new(s.metrics);
    let mut events = Vec::new();
    while w.now() < a.duration - 1e-9 {
        let r = w.step();
        rec.record(&w, &r);
        events.extend(r.events);
    }

    let mut out = Outputs::new(a.common.out);
    let mut log = Vec::new();
    write_events(&mut log, &events).map_err(runtime)?;
    out.add("events.jsonl", log);
    out.csv("metrics.csv", |b| rec.series.write_csv(b))?;
    out.csv("histogram.csv", |b| rec.series.histogram.write_csv(b))?;
    let [queued, assigned, in_transit, done] = w.order_counts();
    let mut text = String::new();
    let _ = writeln!(text, "seed {}  duration {} s  y {} m", s.seed, a.duration, s.rule.slow_radius_y);
    let _ = writeln!(text, "orders: {done} completed, {in_transit} in transit, {assigned} assigned, {queued} queued");
    if let Some(m) = rec.series.mean_safety_min() {
        let _ = writeln!(text, "time-averaged Safety_min: {m:.4}");
    }
    if let Some(p) = rec.series.latest_productivity() {
        let _ = writeln!(text, "final productivity: {p:.4}");
    }
    print!("{text}");
    out.add("summary.txt", text.into_bytes());
    out.commit()
}

fn plan_for(s: &ScenarioConfig, y: f64, phase_duration: Option<f64>, warmup: f64) -> Result<TwoPhasePlan> {
    let [p1, p2] = s.phases.as_slice() else {
        return Err(input("two-phase experiments need a scenario with exactly two phases"));
    };
    if p1.distribution != p2.distribution {
        return Err(input("both phases must use the same arrival distribution"));
    }
    let plan = TwoPhasePlan {
        phase1_interarrival: p1.mean_interarrival,
        phase2_interarrival: p2.mean_interarrival,
        distribution: p1.distribution,
        phase_duration: phase_duration.unwrap_or(p2.start),
        warmup,
        y,
    };
    if !(plan.phase_duration > 0.0) || !(plan.warmup >= 0.0 && plan.warmup < plan.phase_duration) {
        return Err(input("need 0 <= warmup < phase duration"));
    }
    with_y(s.rule, y)?;
    Ok(plan)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn two_phase(a: TwoPhaseArgs) -> Result<()> {
    let s = load_scenario(a.common.scenario.as_deref())?;
    if a.seeds.is_empty() {
        return Err(input("at least one seed is required"));
    }
    if a.tail == 0 {
        return Err(input("tail must be positive"));
    }
    let plan = plan_for(&s, a.y, a.phase_duration, a.warmup)?;
    let mut runs = Vec::with_capacity(a.seeds.len());
    for &seed in &a.seeds {
        runs.push(run_two_phase(&s, &plan, seed, a.tail).map_err(runtime)?);
    }

    let mut out = Outputs::new(a.common.out);
    let mut hist = [SafetyHistogram::default(), SafetyHistogram::default()];
    let mut summary = csv::Writer::from_writer(Vec::new());
    let header = [
        "seed",
        "y",
        "phase1_steady_mean",
        "phase2_tail_mean",
        "ratio",
        "phase1_slope",
        "phase1_sub_saturated_safety_min",
        "phase2_sub_saturated_safety_min",
    ];
    summary.write_record(header).map_err(runtime)?;
    let mut series = Vec::new();
    for r in &runs {
        hist[0].merge(&r.phase1.histogram);
        hist[1].merge(&r.phase2.histogram);
        summary
            .write_record([
                r.seed.to_string(),
                r.y.to_string(),
                r.phase1_steady_mean.to_string(),
                r.phase2_tail_mean.to_string(),
                (r.phase2_tail_mean / r.phase1_steady_mean).to_string(),
                r.phase1_slope.to_string(),
                fmt_opt(r.phase1.sub_saturated_mean),
                fmt_opt(r.phase2.sub_saturated_mean),
            ])
            .map_err(runtime)?;
        let mut b = Vec::new();
        write_service_times_csv(&mut b, r).map_err(runtime)?;
        series.push((r.seed, b));
    }
    out.add("summary.csv", summary.into_inner().map_err(runtime)?);
    // One service-time file for all seeds keeps the output set fixed.
    let mut all = b"seed,".to_vec();
    for (k, (seed, b)) in series.iter().enumerate() {
        for (i, line) in b.split_inclusive(|&c| c == b'\n').enumerate() {
            if i == 0 {
                if k == 0 {
                    all.extend_from_slice(line);
                }
                continue;
            }
            all.extend_from_slice(format!("{seed},").as_bytes());
            all.extend_from_slice(line);
        }
    }
    out.add("service_times.csv", all);
    let [h1, h2] = hist;
    out.csv("histogram_phase1.csv", |b| h1.write_csv(b))?;
    out.csv("histogram_phase2.csv", |b| h2.write_csv(b))?;

    let mut text = String::new();
    let _ = writeln!(
        text,
        "two-phase run: {} s per phase, inter-arrival {} s then {} s, y = {} m, {} seed(s)",
        plan.phase_duration,
        plan.phase1_interarrival,
        plan.phase2_interarrival,
        plan.y,
        runs.len()
    );
    let _ = writeln!(text, "{:>6} {:>12} {:>12} {:>7} {:>10} {:>10}", "seed", "P1 mean", "P2 last", "ratio", "P1 Smin<1", "P2 Smin<1");
    for r in &runs {
        let _ = writeln!(
            text,
            "{:>6} {:>12.1} {:>12.1} {:>7.2} {:>10.3} {:>10.3}",
            r.seed,
            r.phase1_steady_mean,
            r.phase2_tail_mean,
            r.phase2_tail_mean / r.phase1_steady_mean,
            r.phase1.sub_saturated_mean.unwrap_or(f64::NAN),
            r.phase2.sub_saturated_mean.unwrap_or(f64::NAN),
        );
    }
    let slopes: Vec<f64> = runs.iter().map(|r| r.phase1_slope).collect();
    let (t, p) = t_test_zero_mean(&slopes);
    let _ = writeln!(text, "Phase-1 service-time slope across seeds: t = {t:.3}, p = {p:.3}");
    print!("{text}");
    out.add("summary.txt", text.into_bytes());
    out.commit()
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let s = load_scenario(a.common.scenario.as_deref())?;
    if a.candidates.is_empty() {
        return Err(input("at least one candidate is required"));
    }
    for &y in &a.candidates {
        with_y(s.rule, y)?;
    }
    if a.snapshot_times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) || a.snapshot_times.is_empty() {
        return Err(input("snapshot times must be non-negative and finite"));
    }
    let settings =
        WhatIfSettings { horizon: a.horizon, replications: a.replications, seed_base: Some(a.seed_base), metrics: s.metrics };
    settings.validate().map_err(input)?;
    let plan = SweepPlan {
        candidates: a.candidates,
        snapshot_times: a.snapshot_times,
        settings,
        two_phase: plan_for(&s, a.y, None, 0.0)?,
    };
    let phases = run_sweep(&s, &plan, a.seed).map_err(runtime)?;

    let mut out = Outputs::new(a.common.out);
    out.csv("sweep.csv", |b| write_sweep_csv(b, &phases))?;
    let mut text = String::new();
    for (k, ph) in phases.iter().enumerate() {
        let _ = writeln!(text, "snapshot {} at t = {} s", k + 1, ph.t);
        let _ = writeln!(text, "{:>6} {:>16} {:>16} {:>6}", "y", "safety", "productivity", "front");
        for (r, f) in ph.results.iter().zip(&ph.on_front) {
            let _ = writeln!(
                text,
                "{:>6} {:>8.4} ±{:<6.4} {:>8.4} ±{:<6.4} {:>6}",
                r.rule.slow_radius_y,
                r.safety_score,
                r.safety_ci,
                r.productivity_score,
                r.productivity_ci,
                if *f { "*" } else { "" }
            );
        }
    }
    print!("{text}");
    out.add("summary.txt", text.into_bytes());
    out.commit()
}

pub fn validate(a: ValidateArgs) -> Result<()> {
    let mut problems = Vec::new();
    if a.scenario.is_some() || a.goal.is_none() {
        match load_scenario(a.scenario.as_deref()).and_then(|s| build_world(&s).map(|_| s).map_err(input)) {
            Ok(s) => println!(
                "scenario ok: {} AMRs, {} workers, {} phase(s), y = {} m",
                s.amr_count,
                s.worker_count,
                s.phases.len(),
                s.rule.slow_radius_y
            ),
            Err(e) => problems.push(format!("scenario: {e}")),
        }
    }
    if a.goal.is_some() || a.scenario.is_none() {
        match load_goal(a.goal.as_deref()) {
            Ok(g) => println!("goal model ok: {} design alternative(s)", g.enumerate_alternatives().len()),
            Err(e) => problems.push(format!("goal model: {e}")),
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CliError::Input(problems.join("; ")))
    }
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let s = load_scenario(a.scenario.as_deref())?;
    let goal = load_goal(a.goal.as_deref())?;
    if !(a.time_scale >= 0.0) {
        return Err(input("time_scale must be non-negative"));
    }
    let cfg = LoopConfig {
        auto_enact: a.auto_enact,
        time_scale: (a.time_scale > 0.0).then_some(a.time_scale),
        ..LoopConfig::default()
    };
    let orch = Orchestrator::new(&s, goal, cfg).map_err(input)?;
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.addr)
            .await
            .map_err(|e| input(format!("{}: {e}", a.addr)))?;
        println!("listening on http://{}", listener.local_addr().map_err(runtime)?);
        let live = Arc::new(LiveHandle::spawn(orch));
        let stop = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        warehouse_twin_server::serve(listener, live, stop).await.map_err(runtime)
    })
}
