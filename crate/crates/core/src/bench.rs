//! Route-following benchmark in the reactive world: episodes, metrics and
//! reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentInput};
use crate::baselines::CemConfig;
use crate::error::{Error, Result};
use crate::geom::{dist, Frame};
use crate::policy::{ControlConfig, DistillConfig};
use crate::reward::{RewardConfig, TargetPath, ZeroSpeedRegion, ZoneContext};
use crate::value::{GridSpec, PlanConfig};
use crate::world::map::LightPhase;
use crate::world::route::{plan_route, Route, Turn};
use crate::world::sim::{splitmix64, SimMode, World};
use crate::world::towns::{town_by_name, Town};
use crate::world::ego::step_ego_ground_truth;
use crate::world::{Action, Command, EgoState, LaneMap, WorldSnapshot, CONTROL_PERIOD, TICK_DT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Density {
    Empty,
    Regular,
    Dense,
}

impl Density {
    pub const ALL: [Density; 3] = [Density::Empty, Density::Regular, Density::Dense];

    pub fn npcs(self) -> usize {
        match self {
            Density::Empty => 0,
            Density::Regular => 6,
            Density::Dense => 14,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Density::Empty => "empty",
            Density::Regular => "regular",
            Density::Dense => "dense",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteKind {
    Straight,
    Turn,
}

/// A benchmark route authored on the road graph of a town.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    pub name: String,
    pub map: String,
    pub kind: RouteKind,
    /// Start road, as (from node, to node).
    pub from: usize,
    pub to: usize,
    /// Lane index on the start road, outermost first.
    pub lane: usize,
    pub start_s: f64,
    pub turns: Vec<Turn>,
    /// Distance driven past the last junction.
    pub tail: f64,
}

impl RouteSpec {
    pub fn build(&self, town: &Town) -> Result<Route> {
        if town.map.id != self.map {
            return Err(Error::Config(format!("route {} is for {}, not {}", self.name, self.map, town.map.id)));
        }
        let kind_ok = match self.kind {
            RouteKind::Straight => self.turns.iter().all(|t| *t == Turn::Straight),
            RouteKind::Turn => self.turns.iter().any(|t| *t != Turn::Straight),
        };
        if !kind_ok {
            return Err(Error::Config(format!("route {} turns do not match its kind", self.name)));
        }
        plan_route(town, self.from, self.to, self.lane, self.start_s, &self.turns, self.tail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSet {
    pub routes: Vec<RouteSpec>,
}

impl RouteSet {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format("route file", e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::format("route file", e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

const ROUTES_PER_KIND: usize = 5;
const ROUTE_START: f64 = 6.0;
const ROUTE_TAIL: f64 = 25.0;

/// Five straight and five single-turn routes per town, enumerated over the
/// directed roads in a fixed order. Turn routes alternate left and right.
pub fn default_routes(town: &Town) -> Vec<RouteSpec> {
    let mut roads: Vec<(usize, usize)> = town.road_lanes.keys().copied().collect();
    roads.sort_unstable();
    let mut straight = Vec::new();
    let mut turns = Vec::new();
    let mut want_left = true;
    let spec = |from, to, kind, t: Vec<Turn>, n: usize| RouteSpec {
        name: format!("{}-{}-{n}", town.map.id, if kind == RouteKind::Straight { "straight" } else { "turn" }),
        map: town.map.id.clone(),
        kind,
        from,
        to,
        lane: 0,
        start_s: ROUTE_START,
        turns: t,
        tail: ROUTE_TAIL,
    };
    // spread the picks over the town instead of taking neighbouring roads
    let order: Vec<usize> = (0..roads.len()).map(|i| (i * 7) % roads.len()).collect();
    let mut seen = std::collections::HashSet::new();
    for &i in &order {
        if !seen.insert(i) {
            continue;
        }
        let (from, to) = roads[i];
        if straight.len() < ROUTES_PER_KIND {
            let s = spec(from, to, RouteKind::Straight, vec![Turn::Straight], straight.len());
            if s.build(town).is_ok() {
                straight.push(s);
            }
        }
        if turns.len() < ROUTES_PER_KIND {
            let first = if want_left { Turn::Left } else { Turn::Right };
            let second = if want_left { Turn::Right } else { Turn::Left };
            for t in [first, second] {
                let s = spec(from, to, RouteKind::Turn, vec![t], turns.len());
                if s.build(town).is_ok() {
                    turns.push(s);
                    want_left = t == Turn::Right;
                    break;
                }
            }
        }
    }
    straight.extend(turns);
    straight
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    /// Footprint overlap depth counted as a collision, m.
    pub collision_depth: f64,
    /// Lateral distance from the route that ends the episode, m.
    pub deviation: f64,
    /// The time limit drives the route at this speed, m/s.
    pub cruise_speed: f64,
    /// Below this speed inside a zero-speed region the clock stops, m/s.
    pub stopped_speed: f64,
    /// Distance to the route end that counts as arrived, m.
    pub goal_tolerance: f64,
    /// Hard cap on simulated time as a multiple of the time limit.
    pub wall_factor: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            collision_depth: 0.05,
            deviation: 3.0,
            cruise_speed: 5.0 / 3.6,
            stopped_speed: 0.1,
            goal_tolerance: 2.0,
            wall_factor: 4.0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.collision_depth >= 0.0
            && self.deviation > 0.0
            && self.cruise_speed > 0.0
            && self.stopped_speed >= 0.0
            && self.goal_tolerance > 0.0
            && self.wall_factor >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid episode configuration".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Failure {
    None,
    Collision,
    Deviation,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub agent: String,
    pub route: String,
    pub map: String,
    pub kind: RouteKind,
    pub density: Density,
    pub seed: u64,
    pub success: bool,
    pub completion: f64,
    pub failure: Failure,
    pub red_light_violations: usize,
    /// Simulated seconds.
    pub duration: f64,
    /// Seconds on the timeout clock.
    pub clock: f64,
}

/// Time-limit clock that stands still while the ego waits in a zero-speed
/// region.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TimeoutClock {
    pub elapsed: f64,
    pub stopped: f64,
}

impl TimeoutClock {
    pub fn tick(&mut self, dt: f64, speed: f64, in_zone: bool, stopped_speed: f64) {
        if in_zone && speed < stopped_speed {
            self.stopped += dt;
        } else {
            self.elapsed += dt;
        }
    }
}

/// Furthest route arc reached, monotone over the episode.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Progress {
    pub arc: f64,
}

impl Progress {
    pub fn update(&mut self, arc: f64) {
        self.arc = self.arc.max(arc);
    }

    pub fn completion(&self, length: f64) -> f64 {
        if length <= 0.0 {
            return 1.0;
        }
        (self.arc / length).clamp(0.0, 1.0)
    }
}

/// Route arcs of the signalised stop lines the route crosses.
fn route_stop_lines(map: &LaneMap, route: &Route) -> Vec<(f64, usize)> {
    let mut out = Vec::new();
    for sl in &map.stop_lines {
        if !route.lanes.contains(&sl.lane) {
            continue;
        }
        let (p, _) = map.lanes[sl.lane].centerline.at(sl.s);
        let proj = route.line().project(p);
        if proj.lateral.abs() < 1.0 {
            out.push((proj.s, sl.light));
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn episode_seed(route: &RouteSpec, density: Density, seed: u64) -> u64 {
    let name = route.name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    splitmix64(name ^ splitmix64(seed ^ ((density as u64) << 48)))
}

const EGO_CLEARANCE: f64 = 15.0;

/// Ego state and decision at one control step of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub time: f64,
    pub ego: EgoState,
    pub command: Command,
    pub action: Action,
    pub progress: f64,
    pub npcs: usize,
    /// Closest NPC in the ego frame: forward, left, its speed.
    pub nearest_npc: Option<[f64; 3]>,
}

fn nearest_npc(snapshot: &WorldSnapshot, ego: &EgoState) -> Option<[f64; 3]> {
    let frame = Frame::new(ego.x, ego.y, ego.theta);
    snapshot
        .npcs
        .iter()
        .map(|n| (dist([n.x, n.y], ego.position()), n))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, n)| {
            let l = frame.to_local(n.x, n.y);
            [l[0], l[1], n.v]
        })
}

/// Drives one route in the reactive world until arrival, collision,
/// deviation or timeout.
pub fn run_episode(town: &Town, spec: &RouteSpec, agent: &dyn Agent, density: Density, seed: u64, config: &EpisodeConfig) -> Result<EpisodeResult> {
    drive(town, spec, agent, density, seed, config, None)
}

/// [`run_episode`] that also records every control step.
pub fn trace_episode(
    town: &Town,
    spec: &RouteSpec,
    agent: &dyn Agent,
    density: Density,
    seed: u64,
    config: &EpisodeConfig,
) -> Result<(EpisodeResult, Vec<TraceStep>)> {
    let mut trace = Vec::new();
    let r = drive(town, spec, agent, density, seed, config, Some(&mut trace))?;
    Ok((r, trace))
}

fn drive(
    town: &Town,
    spec: &RouteSpec,
    agent: &dyn Agent,
    density: Density,
    seed: u64,
    config: &EpisodeConfig,
    mut trace: Option<&mut Vec<TraceStep>>,
) -> Result<EpisodeResult> {
    config.validate()?;
    let route = spec.build(town)?;
    let map = Arc::new(town.map.clone());
    let world_seed = episode_seed(spec, density, seed);
    let world = World::new(map.clone(), world_seed);
    let (start, heading) = route.start_pose();
    let mut snapshot = world.spawn(density.npcs(), &[(start, EGO_CLEARANCE)]).snapshot;
    let mut ego = EgoState::new(start[0], start[1], heading, 0.0);
    let length = route.length();
    let limit = length / config.cruise_speed;
    let stops = route_stop_lines(&map, &route);
    let reward = RewardConfig::default();

    let mut progress = Progress::default();
    let mut clock = TimeoutClock::default();
    let mut violations = 0;
    let mut failure = Failure::None;
    let mut time = 0.0;
    let mut arrived = false;
    'outer: loop {
        let command = route.command_at(progress.arc);
        let input = AgentInput {
            map: &map,
            world_seed,
            snapshot: &snapshot,
            ego,
            command,
        };
        let action = agent.act(&input)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceStep {
                time,
                ego,
                command,
                action,
                progress: progress.arc,
                npcs: snapshot.npcs.len(),
                nearest_npc: nearest_npc(&snapshot, &ego),
            });
        }
        let path = TargetPath::resolve(&map, ego.x, ego.y, ego.theta, command);
        for _ in 0..CONTROL_PERIOD {
            let next_snapshot = world.step(&snapshot, SimMode::Reactive, Some(&ego))?;
            ego = step_ego_ground_truth(&ego, &action, TICK_DT);
            snapshot = next_snapshot;
            time += TICK_DT;

            let before = progress.arc;
            let proj = route.project_window(ego.position(), before - 5.0, before + 15.0);
            progress.update(proj.s);
            for &(arc, light) in &stops {
                if before < arc && progress.arc >= arc && snapshot.light(light) == LightPhase::Red {
                    violations += 1;
                }
            }
            let zone = ZoneContext::new(&path, &snapshot).classify(&path.project(ego.position()), &reward);
            clock.tick(TICK_DT, ego.v, zone != ZeroSpeedRegion::None, config.stopped_speed);

            let fp = ego.footprint();
            if snapshot.npcs.iter().any(|n| n.footprint().overlap_depth(&fp) > config.collision_depth) {
                failure = Failure::Collision;
                break 'outer;
            }
            if proj.lateral.abs() > config.deviation {
                failure = Failure::Deviation;
                break 'outer;
            }
            if length - progress.arc <= config.goal_tolerance {
                arrived = true;
                break 'outer;
            }
            if clock.elapsed > limit || time > config.wall_factor * limit {
                failure = Failure::Timeout;
                break 'outer;
            }
        }
    }
    let completion = if arrived { 1.0 } else { progress.completion(length) };
    Ok(EpisodeResult {
        agent: agent.name(),
        route: spec.name.clone(),
        map: spec.map.clone(),
        kind: spec.kind,
        density,
        seed,
        success: arrived,
        completion,
        failure,
        red_light_violations: violations,
        duration: time,
        clock: clock.elapsed,
    })
}

/// Runs every (route, density, seed) combination; results come back in that
/// nesting order regardless of scheduling.
pub fn run_suite(
    towns: &[Town],
    routes: &[RouteSpec],
    agent: &dyn Agent,
    densities: &[Density],
    seeds: &[u64],
    config: &EpisodeConfig,
) -> Result<Vec<EpisodeResult>> {
    if routes.is_empty() {
        return Err(Error::Config("benchmark needs at least one route".into()));
    }
    let mut jobs = Vec::new();
    for r in routes {
        let town = towns
            .iter()
            .find(|t| t.map.id == r.map)
            .ok_or_else(|| Error::Config(format!("route {} needs map {}", r.name, r.map)))?;
        for &d in densities {
            for &s in seeds {
                jobs.push((town, r, d, s));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(town, r, d, s)| run_episode(town, r, agent, d, s, config))
        .collect()
}

/// Convenience wrapper that builds the towns the routes name.
pub fn towns_for(routes: &[RouteSpec]) -> Result<Vec<Town>> {
    let mut names: Vec<&str> = routes.iter().map(|r| r.map.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    names.into_iter().map(town_by_name).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub episodes: usize,
    /// Percent.
    pub success_rate: f64,
    /// Percent.
    pub completion: f64,
    pub violations: usize,
    pub hours: f64,
    pub violations_per_hour: f64,
}

pub fn aggregate<'a>(results: impl IntoIterator<Item = &'a EpisodeResult>) -> Aggregate {
    let mut a = Aggregate::default();
    let mut successes = 0;
    let mut completion = 0.0;
    for r in results {
        a.episodes += 1;
        successes += usize::from(r.success);
        completion += r.completion;
        a.violations += r.red_light_violations;
        a.hours += r.duration / 3600.0;
    }
    if a.episodes > 0 {
        a.success_rate = 100.0 * successes as f64 / a.episodes as f64;
        a.completion = 100.0 * completion / a.episodes as f64;
    }
    if a.hours > 0.0 {
        a.violations_per_hour = a.violations as f64 / a.hours;
    }
    a
}

/// Per-condition aggregates keyed by (agent, map, density, route kind).
/// A `None` kind row covers both kinds.
pub type ConditionKey = (String, String, Density, Option<RouteKind>);

pub fn summarize(results: &[EpisodeResult]) -> BTreeMap<ConditionKey, Aggregate> {
    let mut groups: BTreeMap<ConditionKey, Vec<&EpisodeResult>> = BTreeMap::new();
    for r in results {
        for kind in [None, Some(r.kind)] {
            groups
                .entry((r.agent.clone(), r.map.clone(), r.density, kind))
                .or_default()
                .push(r);
        }
    }
    groups.into_iter().map(|(k, v)| (k, aggregate(v))).collect()
}

pub fn text_report(results: &[EpisodeResult]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:<8} {:<8} {:<9} {:>4} {:>8} {:>10} {:>9}",
        "agent", "map", "density", "routes", "n", "success", "completion", "viol/h"
    );
    for ((agent, map, density, kind), a) in summarize(results) {
        let kind = match kind {
            None => "all",
            Some(RouteKind::Straight) => "straight",
            Some(RouteKind::Turn) => "turn",
        };
        let _ = writeln!(
            out,
            "{:<12} {:<8} {:<8} {:<9} {:>4} {:>8.1} {:>10.1} {:>9.2}",
            agent,
            map,
            density.name(),
            kind,
            a.episodes,
            a.success_rate,
            a.completion,
            a.violations_per_hour
        );
    }
    out
}

#[derive(Debug, Clone, Serialize)]
struct SummaryRow {
    agent: String,
    map: String,
    density: Density,
    kind: Option<RouteKind>,
    #[serde(flatten)]
    aggregate: Aggregate,
}

/// Writes `report.txt`, `episodes.jsonl` and `summary.json` into `dir`.
pub fn write_report(dir: &Path, results: &[EpisodeResult]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("report.txt", text_report(results))?;
    let mut lines = String::new();
    for r in results {
        lines.push_str(&serde_json::to_string(r).expect("episode serializes"));
        lines.push('\n');
    }
    write("episodes.jsonl", lines)?;
    let rows: Vec<SummaryRow> = summarize(results)
        .into_iter()
        .map(|((agent, map, density, kind), aggregate)| SummaryRow {
            agent,
            map,
            density,
            kind,
            aggregate,
        })
        .collect();
    write("summary.json", serde_json::to_string_pretty(&rows).expect("summary serializes"))
}

/// Every tunable of the pipeline in one file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub actions: ActionBins,
    pub plan: PlanConfig,
    pub reward: RewardConfig,
    pub distill: DistillConfig,
    pub control: ControlConfig,
    pub cem: CemConfig,
    pub episode: EpisodeConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionBins {
    pub steer: usize,
    pub throttle: usize,
}

impl Default for ActionBins {
    fn default() -> Self {
        Self { steer: 9, throttle: 3 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Self = toml::from_str(&text).map_err(|e| Error::format("run config", e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.plan.validate()?;
        self.reward.validate()?;
        self.control.validate()?;
        self.cem.validate()?;
        self.episode.validate()
    }
}
