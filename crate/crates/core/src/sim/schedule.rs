use rand::Rng;
use rand_distr::{Distribution as _, Exp};
use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Fixed,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub start: f64,
    pub mean_interarrival: f64,
    pub distribution: Distribution,
}

/// Piecewise-stationary order arrival process.
///
/// Arrivals inside a phase starting at `s` with mean `m` happen at
/// `s + m, s + 2m, ...` (fixed) or after exponential gaps (exponential).
/// A gap that would cross into the next phase is discarded and the next
/// phase restarts its own process at its start time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSchedule {
    pub phases: Vec<Phase>,
}

/// Position of the arrival process; part of the world state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalCursor {
    pub phase: usize,
    /// Arrivals already emitted in the current phase.
    pub emitted_in_phase: u64,
    pub last: f64,
    pub next: f64,
}

impl ArrivalSchedule {
    pub fn fixed(mean_interarrival: f64) -> Self {
        Self {
            phases: vec![Phase { start: 0.0, mean_interarrival, distribution: Distribution::Fixed }],
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidScenario(format!("arrival schedule: {m}")));
        let Some(first) = self.phases.first() else {
            return bad("no phases");
        };
        if first.start != 0.0 {
            return bad("first phase must start at 0");
        }
        if self.phases.windows(2).any(|w| !(w[1].start > w[0].start)) {
            return bad("phase start times must be strictly increasing");
        }
        if self.phases.iter().any(|p| !(p.mean_interarrival > 0.0) || !p.mean_interarrival.is_finite()) {
            return bad("mean inter-arrival must be positive");
        }
        Ok(())
    }

    /// Index of the phase active at time `t`.
    pub fn phase_at(&self, t: f64) -> usize {
        self.phases.iter().rposition(|p| p.start <= t).unwrap_or(0)
    }

    pub fn start<R: Rng>(&self, rng: &mut R) -> ArrivalCursor {
        let mut cursor = ArrivalCursor { phase: 0, emitted_in_phase: 0, last: 0.0, next: 0.0 };
        cursor.next = self.candidate(&cursor, rng);
        self.settle(&mut cursor, rng);
        cursor
    }

    /// Moves the cursor past the arrival at `cursor.next`.
    pub fn advance<R: Rng>(&self, cursor: &mut ArrivalCursor, rng: &mut R) {
        cursor.last = cursor.next;
        cursor.emitted_in_phase += 1;
        cursor.next = self.candidate(cursor, rng);
        self.settle(cursor, rng);
    }

    fn candidate<R: Rng>(&self, cursor: &ArrivalCursor, rng: &mut R) -> f64 {
        let p = &self.phases[cursor.phase];
        match p.distribution {
            Distribution::Fixed => p.start + (cursor.emitted_in_phase + 1) as f64 * p.mean_interarrival,
            Distribution::Exponential => {
                let base = if cursor.emitted_in_phase == 0 { p.start } else { cursor.last };
                let gap = Exp::new(1.0 / p.mean_interarrival).expect("positive rate").sample(rng);
                base + gap
            }
        }
    }

    fn settle<R: Rng>(&self, cursor: &mut ArrivalCursor, rng: &mut R) {
        while let Some(next_phase) = self.phases.get(cursor.phase + 1) {
            if cursor.next < next_phase.start {
                break;
            }
            cursor.phase += 1;
            cursor.emitted_in_phase = 0;
            cursor.next = self.candidate(cursor, rng);
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn arrivals_until(s: &ArrivalSchedule, horizon: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = s.start(&mut rng);
        let mut out = Vec::new();
        while c.next <= horizon {
            out.push(c.next);
            s.advance(&mut c, &mut rng);
        }
        out
    }

    fn two_phase() -> ArrivalSchedule {
        ArrivalSchedule {
            phases: vec![
                Phase { start: 0.0, mean_interarrival: 50.0, distribution: Distribution::Fixed },
                Phase { start: 3600.0, mean_interarrival: 15.0, distribution: Distribution::Fixed },
            ],
        }
    }

    #[test]
    fn fixed_interval_emits_one_per_interval() {
        assert_eq!(arrivals_until(&ArrivalSchedule::fixed(50.0), 100.0, 1), vec![50.0, 100.0]);
    }

    #[test]
    fn phase_boundary_restarts_the_clock() {
        let a = arrivals_until(&two_phase(), 3630.0, 1);
        let first_p2 = a.iter().copied().find(|&t| t >= 3600.0).unwrap();
        assert_eq!(first_p2, 3615.0);
        assert!(!a.contains(&3600.0));
        assert_eq!(*a.iter().rev().nth(2).unwrap(), 3550.0);
    }

    #[test]
    fn validation() {
        assert!(two_phase().validate().is_ok());
        let mut s = two_phase();
        s.phases[0].start = 5.0;
        assert!(s.validate().is_err());
        let mut s = two_phase();
        s.phases[1].start = 0.0;
        assert!(s.validate().is_err());
        let mut s = two_phase();
        s.phases[1].mean_interarrival = 0.0;
        assert!(s.validate().is_err());
        assert!(ArrivalSchedule { phases: vec![] }.validate().is_err());
    }

    #[test]
    fn exponential_arrivals_are_increasing_and_in_phase() {
        let s = ArrivalSchedule {
            phases: vec![
                Phase { start: 0.0, mean_interarrival: 50.0, distribution: Distribution::Exponential },
                Phase { start: 1000.0, mean_interarrival: 5.0, distribution: Distribution::Exponential },
            ],
        };
        let a = arrivals_until(&s, 2000.0, 3);
        assert!(a.windows(2).all(|w| w[1] > w[0]));
        let late = a.iter().filter(|&&t| t >= 1000.0).count();
        let early = a.len() - late;
        assert!(late > 5 * early, "phase 2 should be much denser: {early} vs {late}");
    }
}
