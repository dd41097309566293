//! World stepping: scripted NPC lane following and fixed-cycle lights.
//!
//! NPC decisions are pure functions of the previous snapshot and the world
//! seed, so an `OnRails` rollout never depends on what the ego does. In
//! `Reactive` mode NPCs additionally treat the ego as a leading vehicle.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point;

use super::map::{LaneMap, LightPhase};
use super::{EgoState, NpcState, WorldSnapshot, EGO_HALF_LENGTH, EGO_HALF_WIDTH, TICK_DT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimMode {
    OnRails,
    Reactive,
}

const NPC_HALF_LENGTH: f64 = 2.25;
const NPC_HALF_WIDTH: f64 = 0.95;
const LOOKAHEAD: f64 = 40.0;
// car-following parameters
const MAX_ACCEL: f64 = 2.0;
const COMFORT_DECEL: f64 = 3.0;
const MAX_DECEL: f64 = 9.0;
const MIN_GAP: f64 = 2.0;
const TIME_HEADWAY: f64 = 1.2;
const TTC_THRESHOLD: f64 = 2.0;
const TTC_DECEL: f64 = 4.0;

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Successor an NPC takes when leaving `lane`; stable for a given seed.
pub fn npc_next_lane(map: &LaneMap, seed: u64, npc: u32, lane: usize) -> Option<usize> {
    let succ = &map.lanes[lane].successors;
    match succ.len() {
        0 => None,
        1 => Some(succ[0]),
        n => {
            let h = splitmix64(seed ^ splitmix64((npc as u64) << 32 | lane as u64));
            Some(succ[(h % n as u64) as usize])
        }
    }
}

struct Leader {
    gap: f64,
    speed: f64,
}

fn idm_accel(v: f64, desired: f64, leader: Option<&Leader>) -> f64 {
    let free = MAX_ACCEL * (1.0 - (v / desired.max(0.1)).powi(4));
    let Some(l) = leader else {
        return free;
    };
    let dv = v - l.speed;
    let s_star = MIN_GAP + (v * TIME_HEADWAY + v * dv / (2.0 * (MAX_ACCEL * COMFORT_DECEL).sqrt())).max(0.0);
    let gap = l.gap.max(0.05);
    let mut a = free - MAX_ACCEL * (s_star / gap).powi(2);
    if dv > 0.0 && l.gap / dv < TTC_THRESHOLD {
        a = a.min(-TTC_DECEL);
    }
    a
}

/// Distance-ordered walk over the lanes an NPC will traverse.
fn lanes_ahead(map: &LaneMap, seed: u64, npc: &NpcState) -> Vec<(usize, f64)> {
    // (lane, arc offset of lane start relative to npc.s on the first lane)
    let mut out = vec![(npc.lane, 0.0)];
    let mut offset = map.lanes[npc.lane].length();
    let mut lane = npc.lane;
    while offset - npc.s < LOOKAHEAD {
        match npc_next_lane(map, seed, npc.id, lane) {
            Some(n) => {
                out.push((n, offset));
                offset += map.lanes[n].length();
                lane = n;
            }
            None => break,
        }
        if out.len() > 6 {
            break;
        }
    }
    out
}

fn find_leader(
    map: &LaneMap,
    seed: u64,
    snapshot: &WorldSnapshot,
    idx: usize,
    ego: Option<&EgoState>,
) -> Option<Leader> {
    let me = &snapshot.npcs[idx];
    let path = lanes_ahead(map, seed, me);
    let mut best: Option<Leader> = None;
    let mut consider = |gap: f64, speed: f64| {
        if best.as_ref().is_none_or(|b| gap < b.gap) {
            best = Some(Leader { gap, speed });
        }
    };
    for (j, other) in snapshot.npcs.iter().enumerate() {
        if j == idx {
            continue;
        }
        for &(lane, off) in &path {
            if other.lane == lane {
                let ahead = off + other.s - me.s;
                if ahead > 0.0 && ahead < LOOKAHEAD {
                    consider(ahead - me.half_length - other.half_length, other.v);
                }
                break;
            }
        }
    }
    if let Some(ego) = ego {
        for &(lane, off) in &path {
            let l = &map.lanes[lane];
            if !l.near(ego.position(), 3.0) {
                continue;
            }
            let p = l.centerline.project(ego.position());
            if p.s < 0.0 || p.s > l.length() || p.lateral.abs() > l.half_width() + EGO_HALF_WIDTH {
                continue;
            }
            let ahead = off + p.s - me.s;
            if ahead > 0.0 && ahead < LOOKAHEAD {
                let along = ego.v * (ego.theta - p.heading).cos();
                consider(ahead - me.half_length - EGO_HALF_LENGTH, along.max(0.0));
                break;
            }
        }
    }
    // signals behave like a stationary leader at the stop line
    for &(lane, off) in &path {
        for sl in map.stop_lines_on(lane) {
            let d = off + sl.s - me.s - me.half_length;
            if d < -0.5 || d > LOOKAHEAD {
                continue;
            }
            let must_stop = match snapshot.light(sl.light) {
                LightPhase::Green => false,
                LightPhase::Yellow => me.v * me.v / (2.0 * COMFORT_DECEL) < d,
                LightPhase::Red => true,
            };
            if must_stop {
                consider(d + MIN_GAP - 0.5, 0.0);
            }
        }
    }
    best
}

/// Advances the world by one tick.
pub fn step_world(
    map: &LaneMap,
    snapshot: &WorldSnapshot,
    mode: SimMode,
    ego: Option<&EgoState>,
    seed: u64,
) -> Result<WorldSnapshot> {
    for npc in &snapshot.npcs {
        if npc.lane >= map.lanes.len() {
            return Err(Error::Config(format!("npc {} references unknown lane {}", npc.id, npc.lane)));
        }
    }
    let ego = match mode {
        SimMode::OnRails => None,
        SimMode::Reactive => ego,
    };
    let mut npcs = Vec::with_capacity(snapshot.npcs.len());
    for (i, npc) in snapshot.npcs.iter().enumerate() {
        let leader = find_leader(map, seed, snapshot, i, ego);
        let a = idm_accel(npc.v, npc.desired_speed, leader.as_ref()).clamp(-MAX_DECEL, MAX_ACCEL);
        let v = (npc.v + a * TICK_DT).max(0.0);
        let mut s = npc.s + v * TICK_DT;
        let mut lane = npc.lane;
        let mut v_out = v;
        while s > map.lanes[lane].length() {
            match npc_next_lane(map, seed, npc.id, lane) {
                Some(n) => {
                    s -= map.lanes[lane].length();
                    lane = n;
                }
                None => {
                    s = map.lanes[lane].length();
                    v_out = 0.0;
                }
            }
        }
        let (p, heading) = map.lanes[lane].centerline.at(s);
        npcs.push(NpcState {
            x: p[0],
            y: p[1],
            theta: heading,
            v: v_out,
            lane,
            s,
            ..*npc
        });
    }
    let tick = snapshot.tick + 1;
    Ok(WorldSnapshot {
        tick,
        npcs,
        lights: map.light_phases_at(tick as f64 * TICK_DT),
        map_id: snapshot.map_id.clone(),
    })
}

/// Shared map plus the seed that fixes all NPC decisions.
#[derive(Debug, Clone)]
pub struct World {
    pub map: Arc<LaneMap>,
    pub seed: u64,
}

/// Outcome of populating a world with NPCs.
#[derive(Debug, Clone)]
pub struct Spawned {
    pub snapshot: WorldSnapshot,
    /// Spawn points rejected because they overlapped an existing agent.
    pub conflicts: usize,
}

impl World {
    pub fn new(map: Arc<LaneMap>, seed: u64) -> Self {
        Self { map, seed }
    }

    pub fn step(&self, snapshot: &WorldSnapshot, mode: SimMode, ego: Option<&EgoState>) -> Result<WorldSnapshot> {
        step_world(&self.map, snapshot, mode, ego, self.seed)
    }

    /// Empty world at tick 0.
    pub fn empty_snapshot(&self) -> WorldSnapshot {
        WorldSnapshot {
            tick: 0,
            npcs: Vec::new(),
            lights: self.map.light_phases_at(0.0),
            map_id: self.map.id.clone(),
        }
    }

    /// Places up to `count` NPCs on shuffled spawn points, keeping each
    /// `(center, radius)` region in `keep_clear` free.
    pub fn spawn(&self, count: usize, keep_clear: &[(Point, f64)]) -> Spawned {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ 0x5A5A));
        let mut points = self.map.spawn_points.clone();
        points.shuffle(&mut rng);
        let mut snapshot = self.empty_snapshot();
        let mut conflicts = 0;
        for sp in points {
            if snapshot.npcs.len() >= count {
                break;
            }
            let lane = &self.map.lanes[sp.lane];
            let (p, heading) = lane.centerline.at(sp.s);
            let blocked_region = keep_clear.iter().any(|(c, r)| crate::geom::dist(*c, p) < *r);
            if blocked_region {
                continue;
            }
            let desired = rng.random_range(5.0..7.0);
            let candidate = NpcState {
                id: snapshot.npcs.len() as u32,
                x: p[0],
                y: p[1],
                theta: heading,
                v: 0.5 * desired,
                half_length: NPC_HALF_LENGTH,
                half_width: NPC_HALF_WIDTH,
                lane: sp.lane,
                s: sp.s,
                desired_speed: desired,
            };
            let fp = candidate.footprint();
            let overlapping = snapshot
                .npcs
                .iter()
                .any(|o| crate::geom::dist([o.x, o.y], p) < 10.0 || o.footprint().overlap_depth(&fp) > 0.0);
            if overlapping {
                conflicts += 1;
                continue;
            }
            snapshot.npcs.push(candidate);
        }
        Spawned { snapshot, conflicts }
    }
}
