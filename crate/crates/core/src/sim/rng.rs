use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Named random streams. Each is a ChaCha8 generator keyed by the same seed
/// on a different stream id, so consumers never perturb one another.
///
/// Tie-breaking in the simulation is deterministic (lowest id wins), so no
/// stream is reserved for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStreams {
    /// Inter-arrival gaps of exponential phases.
    pub arrivals: ChaCha8Rng,
    /// Order contents (which slot is requested).
    pub orders: ChaCha8Rng,
}

impl RngStreams {
    pub fn seeded(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(id);
            r
        };
        Self { arrivals: stream(1), orders: stream(2) }
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let mut a = RngStreams::seeded(9);
        let mut b = RngStreams::seeded(9);
        let xa: u64 = a.arrivals.random();
        let oa: u64 = a.orders.random();
        assert_ne!(xa, oa);
        // Drawing from one stream leaves the other untouched.
        let _: u64 = b.arrivals.random();
        let _: u64 = b.arrivals.random();
        assert_eq!(oa, b.orders.random::<u64>());
    }

    #[test]
    fn state_round_trips_through_json() {
        let mut a = RngStreams::seeded(4);
        let _: u32 = a.orders.random();
        let json = serde_json::to_string(&a).unwrap();
        let mut b: RngStreams = serde_json::from_str(&json).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.orders.random::<u64>(), b.orders.random::<u64>());
    }
}
