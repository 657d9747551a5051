use std::path::PathBuf;

use warehouse_twin::sim::{ArrivalSchedule, Distribution, Phase, RngStreams};

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/exponential_mean50_seed42.txt")
}

fn exponential_arrivals(seed: u64, n: usize) -> Vec<f64> {
    let s = ArrivalSchedule {
        phases: vec![Phase { start: 0.0, mean_interarrival: 50.0, distribution: Distribution::Exponential }],
    };
    let mut rng = RngStreams::seeded(seed).arrivals;
    let mut c = s.start(&mut rng);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(c.next);
        s.advance(&mut c, &mut rng);
    }
    out
}

/// Set `UPDATE_GOLDEN=1` to regenerate after an intentional RNG change.
#[test]
fn exponential_sequence_matches_golden_file() {
    let got: Vec<String> = exponential_arrivals(42, 100).iter().map(f64::to_string).collect();
    let path = golden_path();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, got.join("\n") + "\n").unwrap();
    }
    let want = std::fs::read_to_string(&path).unwrap();
    let want: Vec<&str> = want.lines().collect();
    assert_eq!(got, want);
}

#[test]
fn exponential_mean_is_close_to_configured() {
    let a = exponential_arrivals(7, 20_000);
    let mean_gap = a.last().unwrap() / a.len() as f64;
    assert!((mean_gap - 50.0).abs() < 1.5, "mean gap {mean_gap}");
}
