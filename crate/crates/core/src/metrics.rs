//! Safety-compliance and productivity metrics, and their time series.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::sim::{TickReport, WorldState};

pub const HISTOGRAM_BINS: usize = 20;
pub const HISTOGRAM_WIDTH: f64 = 0.05;
const PREFERENCE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty population")]
    EmptyPopulation,
    #[error("no completed orders")]
    NoCompletedOrders,
    #[error("unknown person {0}")]
    UnknownPerson(usize),
    #[error("invalid preference: w_s = {w_s}, w_p = {w_p}")]
    InvalidPreference { w_s: f64, w_p: f64 },
    #[error("invalid metrics config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyConfig {
    pub d_th: f64,
    pub epsilon_speed: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self { d_th: 4.0, epsilon_speed: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProductivityConfig {
    pub window_n: usize,
    pub t_th: f64,
}

impl Default for ProductivityConfig {
    fn default() -> Self {
        Self { window_n: 20, t_th: 400.0 }
    }
}

/// Both configs; serialized as one flat table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    #[serde(flatten)]
    pub safety: SafetyConfig,
    #[serde(flatten)]
    pub productivity: ProductivityConfig,
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let bad = |m: &str| Err(MetricsError::InvalidConfig(m.into()));
        if !(self.safety.d_th > 0.0) {
            return bad("d_th must be positive");
        }
        if !(self.safety.epsilon_speed >= 0.0) {
            return bad("epsilon_speed must be non-negative");
        }
        if self.productivity.window_n == 0 {
            return bad("window_n must be at least 1");
        }
        if !(self.productivity.t_th > 0.0) {
            return bad("t_th must be positive");
        }
        Ok(())
    }
}

/// Operator weights for safety and productivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preference {
    pub w_s: f64,
    pub w_p: f64,
}

impl Default for Preference {
    fn default() -> Self {
        Self { w_s: 0.5, w_p: 0.5 }
    }
}

impl Preference {
    pub fn new(w_s: f64, w_p: f64) -> Result<Self, MetricsError> {
        let ok = (0.0..=1.0).contains(&w_s)
            && (0.0..=1.0).contains(&w_p)
            && (w_s + w_p - 1.0).abs() <= PREFERENCE_TOLERANCE;
        if ok {
            Ok(Self { w_s, w_p })
        } else {
            Err(MetricsError::InvalidPreference { w_s, w_p })
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        Self::new(self.w_s, self.w_p).map(|_| ())
    }
}

/// Distance from a worker to the nearest AMR moving towards them.
pub fn person_distance(world: &WorldState, person_id: usize) -> Result<f64, MetricsError> {
    world.person_distance(person_id).ok_or(MetricsError::UnknownPerson(person_id))
}

pub fn person_safety(d: f64, cfg: &SafetyConfig) -> f64 {
    if d.is_infinite() {
        return 1.0;
    }
    d / d.max(cfg.d_th)
}

pub fn safety_mean(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyPopulation);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn safety_min(values: &[f64]) -> Result<f64, MetricsError> {
    values.iter().copied().reduce(f64::min).ok_or(MetricsError::EmptyPopulation)
}

/// Mean of the last `min(n, len)` service times (given in completion order).
pub fn avg_service_time(service_times: &[f64], n: usize) -> Result<f64, MetricsError> {
    if service_times.is_empty() || n == 0 {
        return Err(MetricsError::NoCompletedOrders);
    }
    let tail = &service_times[service_times.len().saturating_sub(n)..];
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

pub fn productivity(avg: f64, cfg: &ProductivityConfig) -> f64 {
    1.0 - avg / cfg.t_th.max(avg)
}

pub fn overall(safety: f64, productivity: f64, pref: &Preference) -> f64 {
    pref.w_s * safety + pref.w_p * productivity
}

/// Service times of a world's completed orders, in completion order.
pub fn service_times(world: &WorldState) -> Vec<f64> {
    world.completed.iter().filter_map(|&id| world.orders[id].service_time()).collect()
}

/// Histogram of safety samples in `[0, 1)`; exact ones are only counted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SafetyHistogram {
    pub bins: [u64; HISTOGRAM_BINS],
    pub saturated: u64,
}

impl SafetyHistogram {
    pub fn record(&mut self, sample: f64) {
        if sample >= 1.0 {
            self.saturated += 1;
            return;
        }
        // The epsilon keeps values like 0.55 (stored as 0.5500000000000000444) in their own bin.
        let bin = ((sample.max(0.0) * HISTOGRAM_BINS as f64) + 1e-9).floor() as usize;
        self.bins[bin.min(HISTOGRAM_BINS - 1)] += 1;
    }

    pub fn displayed_total(&self) -> u64 {
        self.bins.iter().sum()
    }

    pub fn merge(&mut self, other: &SafetyHistogram) {
        for (a, b) in self.bins.iter_mut().zip(other.bins) {
            *a += b;
        }
        self.saturated += other.saturated;
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_low", "bin_high", "count", "saturated_count"])?;
        for (i, c) in self.bins.iter().enumerate() {
            let lo = i as f64 * HISTOGRAM_WIDTH;
            w.write_record([
                format!("{lo:.2}"),
                format!("{:.2}", lo + HISTOGRAM_WIDTH),
                c.to_string(),
                self.saturated.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickSample {
    pub t: f64,
    pub safety_mean: f64,
    pub safety_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionSample {
    pub t: f64,
    pub order: usize,
    pub arrival_time: f64,
    pub service_time: f64,
    pub avg_service_time: f64,
    pub productivity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSeries {
    pub ticks: Vec<TickSample>,
    pub completions: Vec<CompletionSample>,
    pub histogram: SafetyHistogram,
}

impl MetricsSeries {
    /// Time average of Safety_min over the recorded ticks.
    pub fn mean_safety_min(&self) -> Option<f64> {
        if self.ticks.is_empty() {
            return None;
        }
        Some(self.ticks.iter().map(|s| s.safety_min).sum::<f64>() / self.ticks.len() as f64)
    }

    pub fn latest_productivity(&self) -> Option<f64> {
        self.completions.last().map(|c| c.productivity)
    }

    /// One row per tick; completion metrics hold their last value (blank before the first).
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "safety_mean", "safety_min", "avg_service_time", "productivity"])?;
        let mut k = 0;
        let mut held: Option<&CompletionSample> = None;
        for s in &self.ticks {
            while k < self.completions.len() && self.completions[k].t <= s.t {
                held = Some(&self.completions[k]);
                k += 1;
            }
            let (avg, prod) = match held {
                Some(c) => (c.avg_service_time.to_string(), c.productivity.to_string()),
                None => (String::new(), String::new()),
            };
            w.write_record([s.t.to_string(), s.safety_mean.to_string(), s.safety_min.to_string(), avg, prod])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Accumulates a [`MetricsSeries`] from tick reports.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecorder {
    pub cfg: MetricsConfig,
    pub series: MetricsSeries,
    service_times: Vec<f64>,
}

impl MetricsRecorder {
    pub fn new(cfg: MetricsConfig) -> Self {
        Self { cfg, series: MetricsSeries::default(), service_times: Vec::new() }
    }

    /// Starts from the completions already in `world`, so productivity
    /// continues from the same order history.
    pub fn resume(cfg: MetricsConfig, world: &WorldState) -> Self {
        Self { cfg, series: MetricsSeries::default(), service_times: service_times(world) }
    }

    pub fn record(&mut self, world: &WorldState, report: &TickReport) {
        let s: Vec<f64> = report.person_distances.iter().map(|&d| person_safety(d, &self.cfg.safety)).collect();
        if let (Ok(mean), Ok(min)) = (safety_mean(&s), safety_min(&s)) {
            self.series.ticks.push(TickSample { t: report.t, safety_mean: mean, safety_min: min });
            self.series.histogram.record(min);
        }
        for &id in &report.completed {
            let o = &world.orders[id];
            let st = o.service_time().expect("completed order has a completion time");
            self.service_times.push(st);
            let avg = avg_service_time(&self.service_times, self.cfg.productivity.window_n)
                .expect("at least one completion");
            self.series.completions.push(CompletionSample {
                t: report.t,
                order: id,
                arrival_time: o.arrival_time,
                service_time: st,
                avg_service_time: avg,
                productivity: productivity(avg, &self.cfg.productivity),
            });
        }
    }

    /// Productivity over the whole completion history, if any.
    pub fn current_productivity(&self) -> Option<f64> {
        avg_service_time(&self.service_times, self.cfg.productivity.window_n)
            .ok()
            .map(|a| productivity(a, &self.cfg.productivity))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: SafetyConfig = SafetyConfig { d_th: 4.0, epsilon_speed: 0.01 };
    const P: ProductivityConfig = ProductivityConfig { window_n: 2, t_th: 400.0 };

    #[test]
    fn person_safety_examples() {
        assert_eq!(person_safety(2.0, &S), 0.5);
        assert_eq!(person_safety(6.0, &S), 1.0);
        assert_eq!(person_safety(0.0, &S), 0.0);
        assert_eq!(person_safety(f64::INFINITY, &S), 1.0);
    }

    #[test]
    fn aggregate_examples() {
        let v = [0.5, 1.0, 0.75];
        assert!((safety_mean(&v).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(safety_min(&v).unwrap(), 0.5);
        assert_eq!(safety_mean(&[1.0; 9]).unwrap(), 1.0);
        let mut v = vec![1.0; 8];
        v.push(0.0);
        assert_eq!(safety_min(&v).unwrap(), 0.0);
        assert_eq!(safety_mean(&[]), Err(MetricsError::EmptyPopulation));
        assert_eq!(safety_min(&[]), Err(MetricsError::EmptyPopulation));
    }

    #[test]
    fn service_time_examples() {
        assert_eq!(avg_service_time(&[100.0, 200.0], 2).unwrap(), 150.0);
        assert_eq!(avg_service_time(&[100.0, 200.0, 300.0], 2).unwrap(), 250.0);
        assert_eq!(avg_service_time(&[400.0], 20).unwrap(), 400.0);
        assert_eq!(avg_service_time(&[], 20), Err(MetricsError::NoCompletedOrders));
    }

    #[test]
    fn productivity_and_overall() {
        assert_eq!(productivity(200.0, &P), 0.5);
        assert_eq!(productivity(400.0, &P), 0.0);
        assert_eq!(productivity(800.0, &P), 0.0);
        let half = Preference::new(0.5, 0.5).unwrap();
        assert!((overall(0.8, 0.6, &half) - 0.7).abs() < 1e-12);
        assert_eq!(overall(0.3, 0.9, &Preference::new(1.0, 0.0).unwrap()), 0.3);
        assert!(Preference::new(0.7, 0.2).is_err());
    }

    #[test]
    fn histogram_binning() {
        let mut h = SafetyHistogram::default();
        for _ in 0..3 {
            h.record(1.0);
        }
        assert_eq!((h.displayed_total(), h.saturated), (0, 3));
        h.record(0.52);
        assert_eq!(h.bins[10], 1);
        h.record(0.0);
        assert_eq!(h.bins[0], 1);
        h.record(0.55);
        assert_eq!(h.bins[11], 1);
        h.record(0.999);
        assert_eq!(h.bins[19], 1);
    }

    #[test]
    fn flat_config_table() {
        let cfg: MetricsConfig = toml::from_str("d_th = 3.0\nwindow_n = 5").unwrap();
        assert_eq!(cfg.safety.d_th, 3.0);
        assert_eq!(cfg.safety.epsilon_speed, 0.01);
        assert_eq!(cfg.productivity.window_n, 5);
        assert_eq!(cfg.productivity.t_th, 400.0);
    }
}
