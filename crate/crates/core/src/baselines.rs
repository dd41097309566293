//! Comparison drivers: the privileged tabular planner and a cross-entropy
//! method planner over a static world.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentInput};
use crate::ego_model::EgoModel;
use crate::error::{Error, Result};
use crate::reward::{reward_on_path, RewardConfig, TargetPath, ZoneContext};
use crate::value::label::{PathCache, PathStage};
use crate::value::{argmax, q_values, Labeler, PlanConfig};
use crate::world::sim::{splitmix64, step_world, SimMode};
use crate::world::{Action, Command, EgoState, LaneMap, WorldSnapshot, CONTROL_PERIOD};

/// `count` snapshots one decision apart, starting with `snapshot` itself,
/// replayed with the on-rails stepper.
pub fn forecast(map: &LaneMap, seed: u64, snapshot: &WorldSnapshot, count: usize) -> Result<Vec<WorldSnapshot>> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return Ok(out);
    }
    out.push(snapshot.clone());
    while out.len() < count {
        let mut s = out.last().unwrap().clone();
        for _ in 0..CONTROL_PERIOD {
            s = step_world(map, &s, SimMode::OnRails, None, seed)?;
        }
        out.push(s);
    }
    Ok(out)
}

/// Acts greedily on action values computed afresh from the true world state.
#[derive(Debug, Clone)]
pub struct PrivilegedDriver {
    pub labeler: Labeler,
}

impl PrivilegedDriver {
    pub fn new(labeler: Labeler) -> Result<Self> {
        labeler.validate()?;
        Ok(Self { labeler })
    }

    /// Action values at the true ego state for `command`, with the world
    /// given per window stage.
    pub fn q_values(&self, map: &LaneMap, snapshots: &[&WorldSnapshot], ego: &EgoState, command: Command) -> Result<Vec<f64>> {
        if snapshots.is_empty() {
            return Err(Error::TrajectoryTooShort(0));
        }
        let lb = &self.labeler;
        let path = TargetPath::resolve(map, ego.x, ego.y, ego.theta, command);
        let cache = PathCache::new(&path, ego, &lb.spec);
        let stages = PathStage::window(&path, &cache, snapshots, ego, &lb.reward);
        let next = lb.next_values(&stages)?;
        let local = EgoState::new(0.0, 0.0, 0.0, ego.v);
        Ok(q_values(&local, next.as_ref(), &stages[0], &lb.dynamics(), &lb.actions, lb.plan.gamma, lb.reward.r_brake))
    }

    /// Index of the chosen action and its values.
    pub fn choose(&self, input: &AgentInput<'_>) -> Result<(usize, Vec<f64>)> {
        let snaps = forecast(input.map, input.world_seed, input.snapshot, self.labeler.plan.horizon)?;
        let refs: Vec<&WorldSnapshot> = snaps.iter().collect();
        let q = self.q_values(input.map, &refs, &input.ego, input.command)?;
        Ok((argmax(&q), q))
    }
}

impl Agent for PrivilegedDriver {
    fn name(&self) -> String {
        "privileged".into()
    }

    fn act(&self, input: &AgentInput<'_>) -> Result<Action> {
        let (i, _) = self.choose(input)?;
        Ok(self.labeler.actions.actions()[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CemConfig {
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            population: 64,
            elites: 8,
            iterations: 4,
            horizon: 5,
            seed: 0,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.elites == 0 || self.population < self.elites {
            return Err(Error::Config(format!(
                "cem needs 0 < elites <= population, got {} of {}",
                self.elites, self.population
            )));
        }
        if self.iterations == 0 || self.horizon == 0 {
            return Err(Error::Config("cem needs at least one iteration and one step".into()));
        }
        Ok(())
    }
}

const STEER_STD: f64 = 0.5;
const THROTTLE_STD: f64 = 0.35;
const BRAKE_P: f64 = 0.2;
const MIN_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct CemPlan {
    /// Final mean sequence; brake where the refit brake probability is at least 0.5.
    pub actions: Vec<Action>,
    /// Mean modeled return of the elite set after each iteration.
    pub elite_means: Vec<f64>,
}

/// Samples action sequences, scores them against a world frozen at the
/// current snapshot and refits to the elites. Elites are carried into the
/// next population.
#[derive(Debug, Clone)]
pub struct CemPlanner {
    pub model: EgoModel,
    pub plan: PlanConfig,
    pub reward: RewardConfig,
    pub config: CemConfig,
}

impl CemPlanner {
    pub fn new(model: EgoModel, plan: PlanConfig, reward: RewardConfig, config: CemConfig) -> Result<Self> {
        config.validate()?;
        plan.validate()?;
        reward.validate()?;
        Ok(Self {
            model,
            plan,
            reward,
            config,
        })
    }

    /// Discounted modeled return of `actions` from `ego`, brake bonus included.
    pub fn score(&self, path: &TargetPath, zones: &ZoneContext, ego: &EgoState, actions: &[Action]) -> f64 {
        let mut s = *ego;
        let mut total = 0.0;
        let mut disc = 1.0;
        for a in actions {
            let r = reward_on_path(path, zones, &s, a.brake, &self.reward);
            total += disc * (r.drive + r.brake_bonus);
            disc *= self.plan.gamma;
            s = self.model.step(&s, a, self.plan.dt);
        }
        total
    }

    pub fn plan(&self, map: &LaneMap, snapshot: &WorldSnapshot, ego: &EgoState, command: Command, seed: u64) -> Result<CemPlan> {
        let c = &self.config;
        c.validate()?;
        let path = TargetPath::resolve(map, ego.x, ego.y, ego.theta, command);
        let zones = ZoneContext::new(&path, snapshot);
        let h = c.horizon;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mean = vec![[0.0, 0.5]; h];
        let mut std = vec![[STEER_STD, THROTTLE_STD]; h];
        let mut p_brake = vec![BRAKE_P; h];
        let mut carried: Vec<(f64, Vec<Action>)> = Vec::new();
        let mut elite_means = Vec::with_capacity(c.iterations);
        for _ in 0..c.iterations {
            let fresh = c.population - carried.len();
            let mut seqs: Vec<Vec<Action>> = Vec::with_capacity(fresh);
            for _ in 0..fresh {
                let seq = (0..h)
                    .map(|k| {
                        let steer = sample_clamped(&mut rng, mean[k][0], std[k][0], -1.0, 1.0);
                        let throttle = sample_clamped(&mut rng, mean[k][1], std[k][1], 0.0, 1.0);
                        let brake = rng.random_bool(p_brake[k]);
                        if brake {
                            Action::brake()
                        } else {
                            Action::new(steer, throttle, false)
                        }
                    })
                    .collect();
                seqs.push(seq);
            }
            let mut scored: Vec<(f64, Vec<Action>)> = seqs
                .into_par_iter()
                .map(|s| (self.score(&path, &zones, ego, &s), s))
                .collect();
            scored.append(&mut carried);
            // stable sort keeps the result independent of thread scheduling
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            scored.truncate(c.elites);
            elite_means.push(scored.iter().map(|e| e.0).sum::<f64>() / c.elites as f64);
            for k in 0..h {
                let n = c.elites as f64;
                let driving: Vec<&Action> = scored.iter().map(|e| &e.1[k]).filter(|a| !a.brake).collect();
                p_brake[k] = (scored.len() - driving.len()) as f64 / n;
                if !driving.is_empty() {
                    let m = driving.len() as f64;
                    let ms = driving.iter().map(|a| a.steer).sum::<f64>() / m;
                    let mt = driving.iter().map(|a| a.throttle).sum::<f64>() / m;
                    let vs = driving.iter().map(|a| (a.steer - ms).powi(2)).sum::<f64>() / m;
                    let vt = driving.iter().map(|a| (a.throttle - mt).powi(2)).sum::<f64>() / m;
                    mean[k] = [ms, mt];
                    std[k] = [vs.sqrt().max(MIN_STD), vt.sqrt().max(MIN_STD)];
                }
            }
            carried = scored;
        }
        let actions = (0..h)
            .map(|k| {
                if p_brake[k] >= 0.5 {
                    Action::brake()
                } else {
                    Action::new(mean[k][0], mean[k][1], false)
                }
            })
            .collect();
        Ok(CemPlan { actions, elite_means })
    }
}

fn sample_clamped(rng: &mut ChaCha8Rng, mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
    let d = Normal::new(mean, std).expect("positive std");
    d.sample(rng).clamp(lo, hi)
}

/// Replans every decision and executes the first action.
impl Agent for CemPlanner {
    fn name(&self) -> String {
        "cem".into()
    }

    fn act(&self, input: &AgentInput<'_>) -> Result<Action> {
        let seed = splitmix64(self.config.seed ^ splitmix64(input.world_seed ^ input.snapshot.tick));
        let plan = self.plan(input.map, input.snapshot, &input.ego, input.command, seed)?;
        Ok(plan.actions[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ego_model::BicycleParams;
    use crate::world::sim::World;
    use crate::world::towns::town_a;
    use std::sync::Arc;

    fn model() -> EgoModel {
        EgoModel::new(BicycleParams::default(), 5)
    }

    fn on_lane(map: &LaneMap, lane: usize, s: f64, v: f64) -> EgoState {
        let (p, h) = map.lanes[lane].centerline.at(s);
        EgoState::new(p[0], p[1], h, v)
    }

    #[test]
    fn forecast_spacing_and_first_frame() {
        let town = town_a();
        let w = World::new(Arc::new(town.map.clone()), 4);
        let snap = w.spawn(6, &[]).snapshot;
        let f = forecast(&town.map, 4, &snap, 3).unwrap();
        assert_eq!(f[0], snap);
        assert_eq!(f[2].tick, snap.tick + 2 * CONTROL_PERIOD as u64);
        assert!(forecast(&town.map, 4, &snap, 0).unwrap().is_empty());
    }

    #[test]
    fn cem_rejects_more_elites_than_samples() {
        let cfg = CemConfig {
            population: 4,
            elites: 8,
            ..Default::default()
        };
        assert!(matches!(
            CemPlanner::new(model(), PlanConfig::default(), RewardConfig::default(), cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn cem_is_seeded_and_elites_improve() {
        let town = town_a();
        let map = &town.map;
        let snap = World::new(Arc::new(map.clone()), 0).empty_snapshot();
        let ego = on_lane(map, 0, 10.0, 4.0);
        let p = CemPlanner::new(model(), PlanConfig::default(), RewardConfig::default(), CemConfig::default()).unwrap();
        let a = p.plan(map, &snap, &ego, Command::FollowLane, 9).unwrap();
        let b = p.plan(map, &snap, &ego, Command::FollowLane, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.elite_means.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn single_full_elite_iteration_returns_sample_mean() {
        let town = town_a();
        let map = &town.map;
        let snap = World::new(Arc::new(map.clone()), 0).empty_snapshot();
        let ego = on_lane(map, 0, 10.0, 4.0);
        let cfg = CemConfig {
            population: 16,
            elites: 16,
            iterations: 1,
            horizon: 3,
            seed: 0,
        };
        let p = CemPlanner::new(model(), PlanConfig::default(), RewardConfig::default(), cfg).unwrap();
        let plan = p.plan(map, &snap, &ego, Command::FollowLane, 2).unwrap();
        // replay the same draws
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut sum = vec![[0.0, 0.0, 0.0]; 3];
        for _ in 0..16 {
            for s in sum.iter_mut() {
                let steer = sample_clamped(&mut rng, 0.0, STEER_STD, -1.0, 1.0);
                let thr = sample_clamped(&mut rng, 0.5, THROTTLE_STD, 0.0, 1.0);
                if !rng.random_bool(BRAKE_P) {
                    s[0] += steer;
                    s[1] += thr;
                    s[2] += 1.0;
                }
            }
        }
        for (a, s) in plan.actions.iter().zip(&sum) {
            assert!(!a.brake);
            assert!((a.steer - s[0] / s[2]).abs() < 1e-12);
            assert!((a.throttle - s[1] / s[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn privileged_driver_goes_straight_on_an_empty_lane() {
        let town = town_a();
        let map = &town.map;
        let snap = World::new(Arc::new(map.clone()), 0).empty_snapshot();
        let ego = on_lane(map, 0, 12.0, 5.0);
        let d = PrivilegedDriver::new(Labeler::new(model())).unwrap();
        let input = AgentInput {
            map,
            world_seed: 0,
            snapshot: &snap,
            ego,
            command: Command::FollowLane,
        };
        let (i, q) = d.choose(&input).unwrap();
        let a = d.labeler.actions.actions()[i];
        assert!(a.steer.abs() < 1e-12, "{a:?} {q:?}");
        assert!(!a.brake);
        assert_eq!(d.choose(&input).unwrap().0, i);
    }
}
