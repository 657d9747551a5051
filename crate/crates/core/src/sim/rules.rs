use serde::{Deserialize, Serialize};

use super::SimError;

/// Parameters of the onboard speed governor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyRuleParams {
    /// Emergency-stop distance in meters.
    pub stop_radius_x: f64,
    /// Slow-down distance in meters.
    pub slow_radius_y: f64,
    /// Fraction of max speed used inside the slow zone.
    pub slow_factor: f64,
}

impl Default for SafetyRuleParams {
    fn default() -> Self {
        Self { stop_radius_x: 0.5, slow_radius_y: 5.0, slow_factor: 0.5 }
    }
}

impl SafetyRuleParams {
    pub fn new(stop_radius_x: f64, slow_radius_y: f64, slow_factor: f64) -> Result<Self, SimError> {
        let p = Self { stop_radius_x, slow_radius_y, slow_factor };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.stop_radius_x > 0.0
            && self.stop_radius_x < self.slow_radius_y
            && self.slow_radius_y.is_finite()
            && self.slow_factor > 0.0
            && self.slow_factor < 1.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidScenario(format!(
                "safety rule needs 0 < x < y and 0 < slow_factor < 1, got x={} y={} factor={}",
                self.stop_radius_x, self.slow_radius_y, self.slow_factor
            )))
        }
    }
}

/// Speed permitted by the rule for the given distance to the nearest entity.
pub fn governed_speed(rule: &SafetyRuleParams, nearest_entity_distance: f64, max_speed: f64) -> f64 {
    if nearest_entity_distance <= rule.stop_radius_x {
        0.0
    } else if nearest_entity_distance <= rule.slow_radius_y {
        rule.slow_factor * max_speed
    } else {
        max_speed
    }
}

/// Which band of the governor an AMR is in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GovernorMode {
    #[default]
    Clear,
    Slow,
    Stop,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule() -> SafetyRuleParams {
        SafetyRuleParams::new(0.5, 5.0, 0.5).unwrap()
    }

    #[test]
    fn slow_zone() {
        assert_eq!(governed_speed(&rule(), 3.0, 1.0), 0.5);
    }

    #[test]
    fn outside_both_radii() {
        assert_eq!(governed_speed(&rule(), 10.0, 1.0), 1.0);
    }

    #[test]
    fn inside_stop_radius() {
        assert_eq!(governed_speed(&rule(), 0.3, 1.0), 0.0);
    }

    #[test]
    fn band_edges_are_inclusive() {
        assert_eq!(governed_speed(&rule(), 0.5, 1.0), 0.0);
        assert_eq!(governed_speed(&rule(), 5.0, 1.0), 0.5);
        assert_eq!(governed_speed(&rule(), f64::INFINITY, 1.0), 1.0);
    }

    #[test]
    fn invalid_params() {
        assert!(SafetyRuleParams::new(0.0, 5.0, 0.5).is_err());
        assert!(SafetyRuleParams::new(5.0, 5.0, 0.5).is_err());
        assert!(SafetyRuleParams::new(0.5, 5.0, 1.0).is_err());
        assert!(SafetyRuleParams::new(0.5, 5.0, 0.0).is_err());
    }
}
