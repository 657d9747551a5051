use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::layout::WarehouseLayout;
use super::rules::SafetyRuleParams;
use super::schedule::{ArrivalSchedule, Phase};
use super::SimError;
use crate::metrics::MetricsConfig;

pub const DEFAULT_SCENARIO: &str = include_str!("../../data/default.scn");
const SCENARIO_VERSION: u32 = 1;
const BUILTIN_LAYOUT: &str = "builtin:default";

fn default_version() -> u32 {
    SCENARIO_VERSION
}

fn default_layout_ref() -> String {
    BUILTIN_LAYOUT.to_owned()
}

/// Everything needed to build a world. Parsed from a TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    /// `builtin:default`, or a layout file path (relative to the scenario file).
    #[serde(default = "default_layout_ref")]
    pub layout: String,
    pub seed: u64,
    pub dt: f64,
    pub load_duration: f64,
    pub load_range: f64,
    pub amr_count: usize,
    pub worker_count: usize,
    pub amr_max_speed: f64,
    pub worker_max_speed: f64,
    pub rule: SafetyRuleParams,
    #[serde(rename = "phase")]
    pub phases: Vec<Phase>,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let mut cfg = Self::parse(DEFAULT_SCENARIO).expect("bundled scenario parses");
        // The bundled file references its layout by relative path.
        cfg.layout = BUILTIN_LAYOUT.to_owned();
        cfg
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        if cfg.version != SCENARIO_VERSION {
            return Err(SimError::InvalidScenario(format!("unsupported scenario version {}", cfg.version)));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::InvalidScenario(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn schedule(&self) -> ArrivalSchedule {
        ArrivalSchedule { phases: self.phases.clone() }
    }

    pub fn resolve_layout(&self) -> Result<WarehouseLayout, SimError> {
        if self.layout == BUILTIN_LAYOUT {
            return Ok(WarehouseLayout::builtin_default());
        }
        let rel = Path::new(&self.layout);
        let path = match &self.base_dir {
            Some(dir) if rel.is_relative() => dir.join(rel),
            _ => rel.to_path_buf(),
        };
        WarehouseLayout::load(&path)
    }

    /// Checks everything except the layout file.
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if self.amr_count == 0 {
            return bad("amr_count must be positive".into());
        }
        if self.worker_count == 0 {
            return bad("worker_count must be positive".into());
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.load_duration < self.dt {
            return bad("load_duration must last at least one tick".into());
        }
        if !(self.amr_max_speed > 0.0) || !(self.worker_max_speed > 0.0) {
            return bad("max speeds must be positive".into());
        }
        self.rule.validate()?;
        if !(self.load_range > self.rule.stop_radius_x) {
            return bad("load_range must exceed the stop radius".into());
        }
        self.schedule().validate()?;
        self.metrics.validate().map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenario_matches_experiment_setup() {
        let s = ScenarioConfig::default();
        assert_eq!((s.amr_count, s.worker_count), (15, 9));
        assert_eq!((s.amr_max_speed, s.worker_max_speed), (1.0, 1.0));
        assert_eq!(s.rule.slow_radius_y, 5.0);
        assert_eq!(s.phases.len(), 2);
        assert_eq!(s.metrics.safety.d_th, 4.0);
        assert_eq!(s.metrics.productivity.t_th, 400.0);
        s.validate().unwrap();
    }

    #[test]
    fn bad_documents() {
        assert!(matches!(ScenarioConfig::parse("seed = "), Err(SimError::Parse(_))));
        let mut s = ScenarioConfig::default();
        s.amr_count = 0;
        assert!(matches!(s.validate(), Err(SimError::InvalidScenario(_))));
        let mut s = ScenarioConfig::default();
        s.phases[1].start = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn missing_layout_file() {
        let mut s = ScenarioConfig::default();
        s.layout = "/nonexistent/layout.toml".into();
        assert!(matches!(s.resolve_layout(), Err(SimError::InvalidScenario(_))));
    }
}
