//! Per-frame action-value labels from a recorded trajectory.
//!
//! Each labeled frame anchors a grid at the recorded ego pose, replays the
//! logged world for the next `horizon` decisions and runs backward induction
//! per command. Commands whose target paths coincide near the ego share one
//! backup chain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::{drive_reward, RewardConfig, TargetPath, ZeroSpeedRegion, ZoneContext};
use crate::geom::Projection;
use crate::world::{Command, EgoState, LaneMap, Trajectory, WorldSnapshot, DECISION_DT};

use super::backup::{backup, q_values, ModelDynamics, StageReward};
use super::grid::{to_world_state, ActionGrid, GridSpec, ValueGrid};
use crate::ego_model::EgoModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    pub gamma: f64,
    /// Decisions per planning window.
    pub horizon: usize,
    pub dt: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            horizon: 5,
            dt: DECISION_DT,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || self.horizon == 0 || !(self.dt > 0.0) {
            return Err(Error::Config("plan config needs 0 < gamma <= 1, horizon >= 1, dt > 0".into()));
        }
        Ok(())
    }
}

/// A perturbed query pose relative to the anchor: lateral shift (left
/// positive, meters) and yaw (radians).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseOffset {
    pub lateral: f64,
    pub yaw: f64,
}

impl PoseOffset {
    pub const IDENTITY: PoseOffset = PoseOffset { lateral: 0.0, yaw: 0.0 };

    /// Identity followed by yaw +-30 degrees and lateral +-0.5 m.
    pub fn augmented() -> Vec<PoseOffset> {
        let yaw = 30f64.to_radians();
        vec![
            Self::IDENTITY,
            PoseOffset { lateral: 0.0, yaw },
            PoseOffset { lateral: 0.0, yaw: -yaw },
            PoseOffset { lateral: 0.5, yaw: 0.0 },
            PoseOffset { lateral: -0.5, yaw: 0.0 },
        ]
    }

    /// Local-frame state of this pose at speed `v`.
    pub fn local_state(&self, v: f64) -> EgoState {
        EgoState {
            x: 0.0,
            y: self.lateral,
            theta: self.yaw,
            v,
        }
    }

    /// World pose of this offset around `anchor`.
    pub fn world_pose(&self, anchor: &EgoState) -> EgoState {
        to_world_state(anchor, &self.local_state(anchor.v))
    }
}

/// Everything labeling needs besides the trajectory and the map.
#[derive(Debug, Clone)]
pub struct Labeler {
    pub model: EgoModel,
    pub spec: GridSpec,
    pub actions: ActionGrid,
    pub plan: PlanConfig,
    pub reward: RewardConfig,
    pub poses: Vec<PoseOffset>,
}

impl Labeler {
    pub fn new(model: EgoModel) -> Self {
        Self {
            model,
            spec: GridSpec::default(),
            actions: ActionGrid::default(),
            plan: PlanConfig::default(),
            reward: RewardConfig::default(),
            poses: vec![PoseOffset::IDENTITY],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.plan.validate()?;
        self.reward.validate()?;
        if self.poses.is_empty() {
            return Err(Error::Config("at least one query pose is required".into()));
        }
        Ok(())
    }

    pub fn dynamics(&self) -> ModelDynamics {
        ModelDynamics {
            model: self.model,
            dt: self.plan.dt,
        }
    }

    /// Local query states: every pose at every speed-bin center, pose-major.
    pub fn query_states(&self) -> Vec<EgoState> {
        let va = self.spec.v_axis();
        self.poses
            .iter()
            .flat_map(|p| (0..self.spec.n_v).map(move |l| p.local_state(va.center(l))))
            .collect()
    }

    /// Value grid one decision after the window start, or `None` for a
    /// one-stage window. `snapshots[k]` is the world at stage k.
    pub fn next_values(&self, stages: &[PathStage<'_>]) -> Result<Option<ValueGrid>> {
        let Some(last) = stages.last() else {
            return Err(Error::TrajectoryTooShort(0));
        };
        if stages.len() == 1 {
            return Ok(None);
        }
        let anchor = *last.anchor();
        let spec = self.spec;
        let mut v = ValueGrid::zeros(spec, anchor, stages.len() - 1);
        last.fill(&spec, &mut v.values);
        let dynamics = self.dynamics();
        let mut rewards = vec![0.0; spec.cells()];
        for stage in stages[1..stages.len() - 1].iter().rev() {
            stage.fill(&spec, &mut rewards);
            v = backup(&v, &rewards, &anchor, &dynamics, &self.actions, self.plan.gamma)?;
        }
        Ok(Some(v))
    }

    /// Full value grid at the window start (the backup at stage 0 included).
    pub fn start_values(&self, stages: &[PathStage<'_>]) -> Result<ValueGrid> {
        let spec = self.spec;
        let mut rewards = vec![0.0; spec.cells()];
        stages[0].fill(&spec, &mut rewards);
        match self.next_values(stages)? {
            None => Ok(ValueGrid {
                spec,
                anchor: *stages[0].anchor(),
                t: 0,
                values: rewards,
            }),
            Some(next) => backup(&next, &rewards, stages[0].anchor(), &self.dynamics(), &self.actions, self.plan.gamma),
        }
    }

    /// Action values at local `queries` for every command, command-major:
    /// `out[command][query][action]`. `snapshots` holds the world for each
    /// stage of the window (at least one).
    pub fn action_values(&self, map: &LaneMap, snapshots: &[&WorldSnapshot], anchor: &EgoState, queries: &[EgoState]) -> Result<Vec<Vec<Vec<f64>>>> {
        if snapshots.is_empty() {
            return Err(Error::TrajectoryTooShort(0));
        }
        let paths = PlanPaths::resolve(map, anchor, &self.spec);
        let dynamics = self.dynamics();
        let mut by_group: Vec<Vec<Vec<f64>>> = Vec::with_capacity(paths.groups.len());
        for (path, cache) in paths.groups.iter().zip(&paths.caches) {
            let stages = PathStage::window(path, cache, snapshots, anchor, &self.reward);
            let next = self.next_values(&stages)?;
            let qs = queries
                .iter()
                .map(|s| q_values(s, next.as_ref(), &stages[0], &dynamics, &self.actions, self.plan.gamma, self.reward.r_brake))
                .collect();
            by_group.push(qs);
        }
        Ok(paths.group_of.iter().map(|&g| by_group[g].clone()).collect())
    }

    /// Labels every frame of `traj`. Frames near the end use the remaining
    /// decisions as their horizon.
    pub fn label_trajectory(&self, map: &LaneMap, traj: &Trajectory) -> Result<QLabels> {
        self.validate()?;
        if traj.is_empty() {
            return Err(Error::TrajectoryTooShort(0));
        }
        let queries = self.query_states();
        let n = traj.len();
        let frames: Vec<FrameLabels> = (0..n)
            .into_par_iter()
            .map(|t| {
                let h = self.plan.horizon.min(n - t);
                let snaps: Vec<&WorldSnapshot> = traj.records[t..t + h].iter().map(|r| &r.snapshot).collect();
                let anchor = traj.records[t].ego;
                let q = self.action_values(map, &snaps, &anchor, &queries)?;
                let values = self.pack(&q);
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteLabel { frame: t });
                }
                Ok(FrameLabels {
                    tick: traj.records[t].snapshot.tick,
                    anchor,
                    values,
                })
            })
            .collect::<Result<_>>()?;
        Ok(QLabels {
            spec: self.spec,
            n_actions: self.actions.len(),
            poses: self.poses.clone(),
            gamma: self.plan.gamma,
            horizon: self.plan.horizon,
            frames,
        })
    }

    /// Reorders `[command][pose * n_v + l][action]` into `[pose][command][l][action]`.
    fn pack(&self, q: &[Vec<Vec<f64>>]) -> Vec<f64> {
        let (np, nv, na) = (self.poses.len(), self.spec.n_v, self.actions.len());
        let mut out = Vec::with_capacity(np * Command::COUNT * nv * na);
        for p in 0..np {
            for per_cmd in q {
                for l in 0..nv {
                    out.extend_from_slice(&per_cmd[p * nv + l]);
                }
            }
        }
        out
    }
}

/// Target paths of all commands at one anchor, deduplicated.
pub struct PlanPaths {
    pub groups: Vec<TargetPath>,
    pub caches: Vec<PathCache>,
    /// Group index per command, in [`Command::ALL`] order.
    pub group_of: Vec<usize>,
}

/// Path window compared when deduplicating commands: farther than the
/// grid reaches, so equal keys give equal rewards on every cell.
const DEDUP_HORIZON: f64 = 24.0;

impl PlanPaths {
    pub fn resolve(map: &LaneMap, anchor: &EgoState, spec: &GridSpec) -> Self {
        let mut groups: Vec<TargetPath> = Vec::new();
        let mut keys: Vec<Vec<usize>> = Vec::new();
        let mut group_of = Vec::with_capacity(Command::COUNT);
        for c in Command::ALL {
            let path = TargetPath::resolve(map, anchor.x, anchor.y, anchor.theta, c);
            let key = path.key(path.project(anchor.position()).s, DEDUP_HORIZON);
            match keys.iter().position(|k| *k == key) {
                Some(g) => group_of.push(g),
                None => {
                    group_of.push(groups.len());
                    keys.push(key);
                    groups.push(path);
                }
            }
        }
        let caches = groups.iter().map(|p| PathCache::new(p, anchor, spec)).collect();
        Self { groups, caches, group_of }
    }
}

/// Projection of every position cell center onto one target path.
pub struct PathCache {
    proj: Vec<Projection>,
}

impl PathCache {
    pub fn new(path: &TargetPath, anchor: &EgoState, spec: &GridSpec) -> Self {
        let (xa, ya) = (spec.x_axis(), spec.y_axis());
        let mut proj = Vec::with_capacity(spec.plane());
        for i in 0..spec.n_h {
            for j in 0..spec.n_w {
                let local = EgoState::new(xa.center(i), ya.center(j), 0.0, 0.0);
                proj.push(path.project(to_world_state(anchor, &local).position()));
            }
        }
        Self { proj }
    }
}

/// Reward of one window stage along one target path.
pub struct PathStage<'a> {
    path: &'a TargetPath,
    cache: &'a PathCache,
    zones: ZoneContext,
    anchor: EgoState,
    config: &'a RewardConfig,
}

impl<'a> PathStage<'a> {
    pub fn new(path: &'a TargetPath, cache: &'a PathCache, snapshot: &WorldSnapshot, anchor: &EgoState, config: &'a RewardConfig) -> Self {
        Self {
            path,
            cache,
            zones: ZoneContext::new(path, snapshot),
            anchor: *anchor,
            config,
        }
    }

    pub fn window(
        path: &'a TargetPath,
        cache: &'a PathCache,
        snapshots: &[&WorldSnapshot],
        anchor: &EgoState,
        config: &'a RewardConfig,
    ) -> Vec<PathStage<'a>> {
        snapshots.iter().map(|s| Self::new(path, cache, s, anchor, config)).collect()
    }
}

impl StageReward for PathStage<'_> {
    fn anchor(&self) -> &EgoState {
        &self.anchor
    }

    fn at(&self, s: &EgoState) -> (f64, bool) {
        let w = to_world_state(&self.anchor, s);
        let proj = self.path.project(w.position());
        let zone = self.zones.classify(&proj, self.config);
        (drive_reward(&proj, w.theta, w.v, zone, self.config), zone != ZeroSpeedRegion::None)
    }

    fn fill(&self, spec: &GridSpec, out: &mut [f64]) {
        let (ta, va) = (spec.theta_axis(), spec.v_axis());
        let plane = spec.plane();
        let thetas: Vec<f64> = (0..spec.n_theta)
            .map(|k| to_world_state(&self.anchor, &EgoState::new(0.0, 0.0, ta.center(k), 0.0)).theta)
            .collect();
        for (c, proj) in self.cache.proj.iter().enumerate() {
            let zone = self.zones.classify(proj, self.config);
            for (k, &th) in thetas.iter().enumerate() {
                for l in 0..spec.n_v {
                    out[(k * spec.n_v + l) * plane + c] = drive_reward(proj, th, va.center(l), zone, self.config);
                }
            }
        }
    }
}

/// Labels of one frame, `[pose][command][speed bin][action]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabels {
    pub tick: u64,
    pub anchor: EgoState,
    pub values: Vec<f64>,
}

/// Action-value labels for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct QLabels {
    pub spec: GridSpec,
    pub n_actions: usize,
    pub poses: Vec<PoseOffset>,
    pub gamma: f64,
    pub horizon: usize,
    pub frames: Vec<FrameLabels>,
}

impl QLabels {
    pub fn frame_len(&self) -> usize {
        self.poses.len() * Command::COUNT * self.spec.n_v * self.n_actions
    }

    /// The action values of one (frame, pose, command, speed bin).
    pub fn q(&self, frame: usize, pose: usize, command: Command, l: usize) -> &[f64] {
        let na = self.n_actions;
        let off = ((pose * Command::COUNT + command.index()) * self.spec.n_v + l) * na;
        &self.frames[frame].values[off..off + na]
    }
}

/// Full value grid for frame `t` of `traj` under `command`, e.g. for
/// visualisation. Uses the same horizon rule as labeling.
pub fn frame_values(labeler: &Labeler, map: &LaneMap, traj: &Trajectory, t: usize, command: Command) -> Result<ValueGrid> {
    if t >= traj.len() {
        return Err(Error::TrajectoryTooShort(traj.len()));
    }
    let h = labeler.plan.horizon.min(traj.len() - t);
    let anchor = traj.records[t].ego;
    let snaps: Vec<&WorldSnapshot> = traj.records[t..t + h].iter().map(|r| &r.snapshot).collect();
    let path = TargetPath::resolve(map, anchor.x, anchor.y, anchor.theta, command);
    let cache = PathCache::new(&path, &anchor, &labeler.spec);
    let stages = PathStage::window(&path, &cache, &snaps, &anchor, &labeler.reward);
    let mut v = labeler.start_values(&stages)?;
    v.t = t;
    Ok(v)
}
