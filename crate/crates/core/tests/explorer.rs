use std::sync::Arc;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use onrails::world::collect::{collect_logs, CollectConfig, DrivingPolicy};
use onrails::world::towns::town_a;

const STEER_BINS: usize = 6;
const THROTTLE_BINS: usize = 3;

// Random exploration has to cover the action box evenly, otherwise the
// ego model is fit on a skewed slice of its input space.
#[test]
fn random_explorer_covers_the_action_box_uniformly() {
    let config = CollectConfig {
        episodes: 10,
        decisions: 240,
        npcs: 0,
        noise: None,
        seed: 11,
    };
    let logs = collect_logs(Arc::new(town_a().map), &DrivingPolicy::random(), &config).unwrap();
    let actions: Vec<_> = logs.trajectories.iter().flat_map(|t| t.records.iter().map(|r| r.action)).collect();
    assert_eq!(actions.len(), 2400);

    let brakes = actions.iter().filter(|a| a.brake).count() as f64;
    let n = actions.len() as f64;
    let sd = (n * 0.1 * 0.9).sqrt();
    assert!((brakes - 0.1 * n).abs() < 4.0 * sd, "{brakes} brakes in {n}");

    let mut counts = [0usize; STEER_BINS * THROTTLE_BINS];
    let mut total = 0;
    for a in actions.iter().filter(|a| !a.brake) {
        assert!((-1.0..=1.0).contains(&a.steer) && (0.0..=1.0).contains(&a.throttle));
        let i = (((a.steer + 1.0) / 2.0 * STEER_BINS as f64) as usize).min(STEER_BINS - 1);
        let j = ((a.throttle * THROTTLE_BINS as f64) as usize).min(THROTTLE_BINS - 1);
        counts[i * THROTTLE_BINS + j] += 1;
        total += 1;
    }
    let expected = total as f64 / counts.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    let p = 1.0 - dist.cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2:.2}, p {p:.4}, counts {counts:?}");
}
