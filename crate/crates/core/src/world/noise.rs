//! Ornstein-Uhlenbeck steering noise for data collection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuConfig {
    pub theta: f64,
    pub sigma: f64,
    /// Time step in decision units.
    pub dt: f64,
}

impl Default for OuConfig {
    fn default() -> Self {
        Self {
            theta: 0.15,
            sigma: 0.3,
            dt: 1.0,
        }
    }
}

/// Mean-reverting process x += theta * (0 - x) * dt + sigma * sqrt(dt) * N(0, 1).
#[derive(Debug, Clone)]
pub struct OuNoise {
    pub config: OuConfig,
    state: f64,
    rng: ChaCha8Rng,
}

impl OuNoise {
    pub fn new(config: OuConfig, seed: u64) -> Self {
        Self {
            config,
            state: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn state(&self) -> f64 {
        self.state
    }

    pub fn sample(&mut self) -> f64 {
        let c = self.config;
        let z: f64 = StandardNormal.sample(&mut self.rng);
        self.state += -c.theta * self.state * c.dt + c.sigma * c.dt.sqrt() * z;
        self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_stays_at_zero() {
        let mut n = OuNoise::new(
            OuConfig {
                sigma: 0.0,
                ..Default::default()
            },
            3,
        );
        assert!((0..100).all(|_| n.sample() == 0.0));
    }

    #[test]
    fn stationary_variance_matches_closed_form() {
        // discrete AR(1): x' = (1 - theta) x + sigma z, var = sigma^2 / (1 - (1 - theta)^2)
        let cfg = OuConfig::default();
        let mut n = OuNoise::new(cfg, 11);
        for _ in 0..1000 {
            n.sample();
        }
        let k = 200_000;
        let mut acc = 0.0;
        for _ in 0..k {
            let x = n.sample();
            acc += x * x;
        }
        let var = acc / k as f64;
        let a = 1.0 - cfg.theta;
        let expected = cfg.sigma * cfg.sigma / (1.0 - a * a);
        assert!((var - expected).abs() / expected < 0.05, "{var} vs {expected}");
    }
}
