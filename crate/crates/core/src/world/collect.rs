//! Recording driving logs with the autopilot, the random explorer or any agent.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{Agent, AgentInput};
use crate::error::{Error, Result};

use super::autopilot::Autopilot;
use super::ego::step_ego_ground_truth;
use super::noise::{OuConfig, OuNoise};
use super::render::render_observation;
use super::sim::{splitmix64, SimMode, World};
use super::{Action, Command, EgoState, LaneMap, Record, Trajectory, CONTROL_PERIOD, TICK_DT, TICK_RATE_HZ};

pub enum DrivingPolicy {
    Autopilot,
    /// Uniform steering and throttle with a Bernoulli brake.
    Random { brake_probability: f64 },
    Agent(Arc<dyn Agent>),
}

impl DrivingPolicy {
    pub fn random() -> Self {
        DrivingPolicy::Random { brake_probability: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectConfig {
    pub episodes: usize,
    /// Control decisions recorded per episode.
    pub decisions: usize,
    pub npcs: usize,
    pub noise: Option<OuConfig>,
    pub seed: u64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            episodes: 10,
            decisions: 240,
            npcs: 6,
            noise: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Collected {
    pub trajectories: Vec<Trajectory>,
    /// Episodes abandoned because the ego spawned on top of another agent.
    pub skipped: usize,
}

const MAX_ATTEMPTS: usize = 32;
const EGO_CLEARANCE: f64 = 8.0;

/// Records `config.episodes` trajectories. Every byte is a function of
/// (map, policy, config).
pub fn collect_logs(map: Arc<LaneMap>, policy: &DrivingPolicy, config: &CollectConfig) -> Result<Collected> {
    if map.spawn_points.is_empty() {
        return Err(Error::Config("map has no spawn points".into()));
    }
    let mut trajectories = Vec::with_capacity(config.episodes);
    let mut skipped = 0;
    for episode in 0..config.episodes {
        let mut attempt = 0;
        loop {
            if attempt == MAX_ATTEMPTS {
                return Err(Error::Config(format!("episode {episode}: no conflict-free spawn")));
            }
            let seed = splitmix64(config.seed ^ splitmix64(((episode as u64) << 16) | attempt as u64));
            attempt += 1;
            match run_episode(&map, policy, config, seed)? {
                Some(t) => {
                    trajectories.push(t);
                    break;
                }
                None => {
                    skipped += 1;
                    log::warn!("episode {episode}: spawn conflict, retrying");
                }
            }
        }
    }
    Ok(Collected { trajectories, skipped })
}

fn run_episode(map: &Arc<LaneMap>, policy: &DrivingPolicy, config: &CollectConfig, seed: u64) -> Result<Option<Trajectory>> {
    let world = World::new(map.clone(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0xC011));
    let sp = map.spawn_points[rng.random_range(0..map.spawn_points.len())];
    let (p, h) = map.lanes[sp.lane].centerline.at(sp.s);
    let mut ego = EgoState::new(p[0], p[1], h, 0.0);
    let mut snapshot = world.spawn(config.npcs, &[]).snapshot;
    let ego_fp = ego.footprint();
    if snapshot
        .npcs
        .iter()
        .any(|n| crate::geom::dist([n.x, n.y], p) < EGO_CLEARANCE || n.footprint().overlap_depth(&ego_fp) > 0.0)
    {
        return Ok(None);
    }
    let mut autopilot = Autopilot::new(sp.lane, splitmix64(seed ^ 0xA070));
    let mut noise = config.noise.map(|c| OuNoise::new(c, splitmix64(seed ^ 0x0F0F)));
    let mut records = Vec::with_capacity(config.decisions);
    for _ in 0..config.decisions {
        let (planned, command) = match policy {
            DrivingPolicy::Autopilot => autopilot.act(map, &snapshot, &ego),
            DrivingPolicy::Random { brake_probability } => {
                let a = if rng.random_bool(*brake_probability) {
                    Action::brake()
                } else {
                    Action::new(rng.random_range(-1.0..=1.0), rng.random_range(0.0..=1.0), false)
                };
                (a, Command::FollowLane)
            }
            DrivingPolicy::Agent(agent) => {
                let input = AgentInput {
                    map,
                    world_seed: seed,
                    snapshot: &snapshot,
                    ego,
                    command: Command::FollowLane,
                };
                (agent.act(&input)?, Command::FollowLane)
            }
        };
        let action = match noise.as_mut() {
            Some(n) if !planned.brake => Action::new(planned.steer + n.sample(), planned.throttle, false),
            _ => planned,
        };
        records.push(Record {
            observation: render_observation(map, &snapshot, &ego, command),
            snapshot: snapshot.clone(),
            ego,
            action,
        });
        for _ in 0..CONTROL_PERIOD {
            ego = step_ego_ground_truth(&ego, &action, TICK_DT);
            snapshot = world.step(&snapshot, SimMode::OnRails, None)?;
        }
    }
    Ok(Some(Trajectory {
        map_id: map.id.clone(),
        tick_rate_hz: TICK_RATE_HZ,
        control_period: CONTROL_PERIOD,
        records,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::log::encode_trajectory;
    use crate::world::towns::town_a;

    fn small(seed: u64) -> CollectConfig {
        CollectConfig {
            episodes: 1,
            decisions: 12,
            npcs: 4,
            noise: None,
            seed,
        }
    }

    #[test]
    fn collection_is_byte_deterministic() {
        let map = Arc::new(town_a().map);
        let a = collect_logs(map.clone(), &DrivingPolicy::Autopilot, &small(3)).unwrap();
        let b = collect_logs(map, &DrivingPolicy::Autopilot, &small(3)).unwrap();
        assert_eq!(encode_trajectory(&a.trajectories[0]), encode_trajectory(&b.trajectories[0]));
    }

    #[test]
    fn decisions_are_five_ticks_apart() {
        let map = Arc::new(town_a().map);
        let c = collect_logs(map, &DrivingPolicy::random(), &small(1)).unwrap();
        let t = &c.trajectories[0];
        assert!(t.ticks_consistent());
        for (k, r) in t.records.iter().enumerate() {
            assert_eq!(r.snapshot.tick, 5 * k as u64);
            assert!(r.action.is_valid());
            assert!(r.ego.v >= 0.0);
        }
    }

    #[test]
    fn zero_sigma_noise_changes_nothing() {
        let map = Arc::new(town_a().map);
        let plain = collect_logs(map.clone(), &DrivingPolicy::Autopilot, &small(5)).unwrap();
        let mut cfg = small(5);
        cfg.noise = Some(OuConfig {
            sigma: 0.0,
            ..Default::default()
        });
        let noisy = collect_logs(map, &DrivingPolicy::Autopilot, &cfg).unwrap();
        let a: Vec<Action> = plain.trajectories[0].records.iter().map(|r| r.action).collect();
        let b: Vec<Action> = noisy.trajectories[0].records.iter().map(|r| r.action).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn crowded_spawns_are_skipped_and_counted() {
        let map = Arc::new(town_a().map);
        let mut cfg = small(2);
        cfg.npcs = 40;
        cfg.episodes = 3;
        let c = collect_logs(map, &DrivingPolicy::random(), &cfg).unwrap();
        assert_eq!(c.trajectories.len(), 3);
        assert!(c.skipped > 0);
    }
}
