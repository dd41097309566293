//! Explicit driving reward, evaluable at imagined ego states.
//!
//! The reward is built from the lane the high-level command asks for: the
//! ego earns up to 1 for being centered on that lane, aligned with it and at
//! the desired speed. Inside a zero-speed region (behind a stop line showing
//! red or yellow, or close behind traffic) it instead earns a small reward
//! for standing still, and braking there earns a one-off bonus.

use serde::{Deserialize, Serialize};

use crate::geom::{normalize_angle, triangular, Point, Polyline, Projection};
use crate::world::map::{LaneKind, LaneMap, LightPhase};
use crate::world::{Action, Command, EgoState, WorldSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub r_stop: f64,
    pub r_brake: f64,
    pub lateral_tolerance: f64,
    pub heading_tolerance: f64,
    pub desired_speed: f64,
    pub speed_tolerance: f64,
    pub proximity_radius: f64,
    pub red_zone_length: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            r_stop: 0.01,
            r_brake: 5.0,
            lateral_tolerance: crate::world::towns::LANE_WIDTH / 2.0,
            heading_tolerance: 38f64.to_radians(),
            desired_speed: 6.0,
            speed_tolerance: 4.0,
            proximity_radius: 6.0,
            red_zone_length: 8.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.lateral_tolerance > 0.0
            && self.heading_tolerance > 0.0
            && self.speed_tolerance > 0.0
            && self.proximity_radius > 0.0
            && self.red_zone_length > 0.0
            && self.r_stop > 0.0
            && self.r_stop <= 1.0
            && self.r_brake >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Config("invalid reward configuration".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ZeroSpeedRegion {
    None,
    RedLight,
    TrafficProximity,
}

/// Lane the ego should follow under a command, chained with its successors.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPath {
    /// The command-consistent lane (the turn connector when approaching a junction).
    pub target: usize,
    pub command: Command,
    /// True when the command had no consistent lane and follow-lane was used.
    pub fallback: bool,
    pub lanes: Vec<usize>,
    lane_starts: Vec<f64>,
    line: Polyline,
    /// Path arc lengths of stop lines with their light ids.
    stop_lines: Vec<(f64, usize)>,
    pub half_width: f64,
}

const PATH_AHEAD: f64 = 40.0;
const CANDIDATE_MARGIN: f64 = 0.25;

fn kind_rank(kind: LaneKind) -> u8 {
    match kind {
        LaneKind::Road => 0,
        LaneKind::Straight => 1,
        LaneKind::Left => 2,
        LaneKind::Right => 3,
    }
}

fn turn_kind(command: Command) -> Option<LaneKind> {
    match command {
        Command::TurnLeft => Some(LaneKind::Left),
        Command::TurnRight => Some(LaneKind::Right),
        Command::GoStraight => Some(LaneKind::Straight),
        _ => None,
    }
}

/// Lanes containing the point, sorted by |lateral| then kind then id.
fn lane_candidates(map: &LaneMap, p: Point, heading: f64) -> Vec<(usize, Projection)> {
    let mut out: Vec<(usize, Projection)> = map
        .lanes_near(p, 4.0)
        .filter_map(|lane| {
            let proj = lane.centerline.project(p);
            let inside = proj.s >= -0.5
                && proj.s <= lane.length() + 0.5
                && proj.lateral.abs() <= lane.half_width() + CANDIDATE_MARGIN
                && normalize_angle(heading - proj.heading).abs() < 100f64.to_radians();
            inside.then_some((lane.id, proj))
        })
        .collect();
    out.sort_by(|a, b| {
        a.1.lateral
            .abs()
            .partial_cmp(&b.1.lateral.abs())
            .unwrap()
            .then(kind_rank(map.lanes[a.0].kind).cmp(&kind_rank(map.lanes[b.0].kind)))
            .then(a.0.cmp(&b.0))
    });
    out
}

fn nearest_lane(map: &LaneMap, p: Point, heading: f64) -> usize {
    let score = |lane: &crate::world::map::Lane, strict: bool| -> f64 {
        let proj = lane.centerline.project(p);
        let over = (-proj.s).max(proj.s - lane.length()).max(0.0);
        let misaligned = normalize_angle(heading - proj.heading).abs() > std::f64::consts::FRAC_PI_2;
        if strict && misaligned {
            f64::INFINITY
        } else {
            proj.lateral.hypot(over)
        }
    };
    let pick = |strict: bool| {
        map.lanes
            .iter()
            .map(|l| (l.id, score(l, strict)))
            .filter(|(_, d)| d.is_finite())
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .map(|(id, _)| id)
    };
    pick(true).or_else(|| pick(false)).expect("map has lanes")
}

fn successor_for(map: &LaneMap, lane: usize, want: Option<LaneKind>) -> Option<usize> {
    let succ = &map.lanes[lane].successors;
    if let Some(k) = want {
        if let Some(&s) = succ.iter().find(|&&s| map.lanes[s].kind == k) {
            return Some(s);
        }
    }
    succ.iter().copied().min_by_key(|&s| (kind_rank(map.lanes[s].kind), s))
}

impl TargetPath {
    /// Resolves the target lane for a pose `[x, y, theta]` under `command`.
    pub fn resolve(map: &LaneMap, x: f64, y: f64, theta: f64, command: Command) -> TargetPath {
        let p = [x, y];
        let cands = lane_candidates(map, p, theta);
        let base = cands.first().map(|c| c.0).unwrap_or_else(|| nearest_lane(map, p, theta));
        let mut fallback = false;
        let mut start = base;
        let mut target = base;
        let want = turn_kind(command);
        match command {
            Command::FollowLane => {}
            Command::TurnLeft | Command::TurnRight | Command::GoStraight => {
                let k = want.unwrap();
                let consistent = |l: usize| {
                    let lane = &map.lanes[l];
                    lane.kind == k || lane.successors.iter().any(|&s| map.lanes[s].kind == k)
                };
                let base_lane = &map.lanes[base];
                let pick = cands
                    .iter()
                    .map(|c| c.0)
                    .find(|&l| consistent(l))
                    .or_else(|| [base_lane.left, base_lane.right].into_iter().flatten().find(|&l| consistent(l)));
                match pick {
                    Some(l) => {
                        start = l;
                        target = if map.lanes[l].kind == k {
                            l
                        } else {
                            successor_for(map, l, Some(k)).unwrap()
                        };
                    }
                    None => fallback = true,
                }
            }
            Command::ChangeLeft | Command::ChangeRight => {
                let nb = if command == Command::ChangeLeft {
                    map.lanes[base].left
                } else {
                    map.lanes[base].right
                };
                match nb {
                    Some(l) => {
                        start = l;
                        target = l;
                    }
                    None => fallback = true,
                }
            }
        }

        let ego_s = map.lanes[start].centerline.project(p).s.max(0.0);
        let mut lanes = vec![start];
        let mut lane_starts = vec![0.0];
        let mut total = map.lanes[start].length();
        let mut cur = start;
        while total - ego_s < PATH_AHEAD && lanes.len() < 8 {
            let want_here = if fallback { None } else { want };
            match successor_for(map, cur, want_here) {
                Some(n) => {
                    lane_starts.push(total);
                    total += map.lanes[n].length();
                    lanes.push(n);
                    cur = n;
                }
                None => break,
            }
        }
        let mut pts: Vec<Point> = Vec::new();
        for &l in &lanes {
            for &q in map.lanes[l].centerline.points() {
                if pts.last().is_none_or(|last| crate::geom::dist(*last, q) > 1e-9) {
                    pts.push(q);
                }
            }
        }
        let mut stop_lines = Vec::new();
        for (i, &l) in lanes.iter().enumerate() {
            for sl in map.stop_lines_on(l) {
                stop_lines.push((lane_starts[i] + sl.s, sl.light));
            }
        }
        TargetPath {
            target,
            command: if fallback { Command::FollowLane } else { command },
            fallback,
            half_width: map.lanes[start].half_width(),
            lanes,
            lane_starts,
            line: Polyline::new(pts),
            stop_lines,
        }
    }

    pub fn project(&self, p: Point) -> Projection {
        self.line.project(p)
    }

    pub fn line(&self) -> &Polyline {
        &self.line
    }

    /// Lane id under a path arc length.
    pub fn lane_at(&self, s: f64) -> usize {
        let i = self.lane_starts.iter().rposition(|&st| st <= s).unwrap_or(0);
        self.lanes[i]
    }

    /// Lanes reachable within `horizon` meters of path arc `s`; two paths
    /// with equal keys give identical rewards in that window.
    pub fn key(&self, s: f64, horizon: f64) -> Vec<usize> {
        self.lanes
            .iter()
            .zip(&self.lane_starts)
            .filter(|(_, &st)| st <= s + horizon)
            .map(|(&l, _)| l)
            .collect()
    }
}

/// Where the ego stands relative to its target lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetLane {
    pub lane: usize,
    /// Lane under the ego's projection onto the target path.
    pub path_lane: usize,
    pub lateral: f64,
    pub heading_error: f64,
    /// Arc length along the target path.
    pub s: f64,
    pub fallback: bool,
}

pub fn target_lane(map: &LaneMap, ego: &EgoState, command: Command) -> TargetLane {
    let path = TargetPath::resolve(map, ego.x, ego.y, ego.theta, command);
    let proj = path.project(ego.position());
    TargetLane {
        lane: path.target,
        path_lane: path.lane_at(proj.s),
        lateral: proj.lateral,
        heading_error: normalize_angle(ego.theta - proj.heading),
        s: proj.s,
        fallback: path.fallback,
    }
}

/// Per-snapshot zero-speed geometry projected onto one target path.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneContext {
    red_stops: Vec<f64>,
    /// (path arc of NPC center, bounding disc radius)
    npcs: Vec<(f64, f64)>,
}

impl ZoneContext {
    pub fn new(path: &TargetPath, snapshot: &WorldSnapshot) -> Self {
        let red_stops = path
            .stop_lines
            .iter()
            .filter(|(_, light)| snapshot.light(*light) != LightPhase::Green)
            .map(|(s, _)| *s)
            .collect();
        let npcs = snapshot
            .npcs
            .iter()
            .filter_map(|n| {
                let proj = path.project([n.x, n.y]);
                let on_path = proj.lateral.abs() <= path.half_width + n.half_width
                    && proj.s >= -10.0
                    && proj.s <= path.line.length() + 10.0;
                on_path.then_some((proj.s, n.disc_radius()))
            })
            .collect();
        Self { red_stops, npcs }
    }

    pub fn classify(&self, proj: &Projection, config: &RewardConfig) -> ZeroSpeedRegion {
        if proj.lateral.abs() > config.lateral_tolerance {
            return ZeroSpeedRegion::None;
        }
        let s = proj.s;
        if self
            .red_stops
            .iter()
            .any(|&stop| s <= stop && s >= stop - config.red_zone_length)
        {
            return ZeroSpeedRegion::RedLight;
        }
        if self
            .npcs
            .iter()
            .any(|&(sn, r)| sn >= s && sn - s - r <= config.proximity_radius)
        {
            return ZeroSpeedRegion::TrafficProximity;
        }
        ZeroSpeedRegion::None
    }
}

/// Drive reward from a path projection, world heading and speed.
#[inline]
pub fn drive_reward(proj: &Projection, theta: f64, v: f64, zone: ZeroSpeedRegion, config: &RewardConfig) -> f64 {
    let k_lat = triangular(proj.lateral, config.lateral_tolerance);
    match zone {
        ZeroSpeedRegion::None => {
            let k_head = triangular(normalize_angle(theta - proj.heading), config.heading_tolerance);
            let k_v = triangular(v - config.desired_speed, config.speed_tolerance);
            k_lat * k_head * k_v
        }
        ZeroSpeedRegion::RedLight => config.r_stop * triangular(v, config.speed_tolerance),
        ZeroSpeedRegion::TrafficProximity => config.r_stop * triangular(v, config.speed_tolerance) * k_lat,
    }
}

#[inline]
pub fn brake_bonus(brake: bool, zone: ZeroSpeedRegion, config: &RewardConfig) -> f64 {
    if brake && zone != ZeroSpeedRegion::None {
        config.r_brake
    } else {
        0.0
    }
}

pub fn zero_speed_region(map: &LaneMap, snapshot: &WorldSnapshot, ego: &EgoState, config: &RewardConfig) -> ZeroSpeedRegion {
    let path = TargetPath::resolve(map, ego.x, ego.y, ego.theta, Command::FollowLane);
    let proj = path.project(ego.position());
    ZoneContext::new(&path, snapshot).classify(&proj, config)
}

#[derive(Debug, Clone, Copy)]
pub struct RewardQuery<'a> {
    pub ego: EgoState,
    pub snapshot: &'a WorldSnapshot,
    pub action: Action,
    pub command: Command,
}

/// The two reward channels. The brake bonus is kept separate because it
/// must never be accumulated into state values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardTerms {
    pub drive: f64,
    pub brake_bonus: f64,
}

pub fn reward(map: &LaneMap, query: &RewardQuery<'_>, config: &RewardConfig) -> RewardTerms {
    let e = &query.ego;
    let path = TargetPath::resolve(map, e.x, e.y, e.theta, query.command);
    reward_on_path(&path, &ZoneContext::new(&path, query.snapshot), e, query.action.brake, config)
}

/// Reward against an already resolved target path.
pub fn reward_on_path(path: &TargetPath, zones: &ZoneContext, ego: &EgoState, brake: bool, config: &RewardConfig) -> RewardTerms {
    let proj = path.project(ego.position());
    let zone = zones.classify(&proj, config);
    RewardTerms {
        drive: drive_reward(&proj, ego.theta, ego.v, zone, config),
        brake_bonus: brake_bonus(brake, zone, config),
    }
}
