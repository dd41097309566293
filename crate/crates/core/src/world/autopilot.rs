//! Privileged lane-following autopilot used to record training logs.
//!
//! Pure pursuit on the lane chain ahead, a speed target limited by red and
//! yellow stop lines and by the vehicle ahead, and a proportional throttle.

use crate::geom::{Frame, Point, Polyline};

use super::ego::{steer_for_wheel_angle, true_wheelbase};
use super::map::{LaneKind, LaneMap, LightPhase};
use super::sim::splitmix64;
use super::{Action, Command, EgoState, WorldSnapshot, EGO_HALF_LENGTH};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutopilotConfig {
    pub cruise_speed: f64,
    pub turn_speed: f64,
    pub lookahead_base: f64,
    pub lookahead_gain: f64,
    pub comfort_decel: f64,
    pub min_gap: f64,
    pub headway: f64,
}

impl Default for AutopilotConfig {
    fn default() -> Self {
        Self {
            cruise_speed: 6.0,
            turn_speed: 4.5,
            lookahead_base: 3.0,
            lookahead_gain: 0.6,
            comfort_decel: 3.0,
            min_gap: 3.0,
            headway: 1.2,
        }
    }
}

const PLAN_AHEAD: f64 = 50.0;
const TURN_COMMAND_LEAD: f64 = 20.0;

#[derive(Debug, Clone)]
pub struct Autopilot {
    pub config: AutopilotConfig,
    lanes: Vec<usize>,
    cursor: usize,
    seed: u64,
}

fn command_for(kind: LaneKind) -> Command {
    match kind {
        LaneKind::Left => Command::TurnLeft,
        LaneKind::Right => Command::TurnRight,
        LaneKind::Straight => Command::GoStraight,
        LaneKind::Road => Command::FollowLane,
    }
}

impl Autopilot {
    /// Starts on `lane`; junction choices are drawn deterministically from `seed`.
    pub fn new(lane: usize, seed: u64) -> Self {
        Self {
            config: AutopilotConfig::default(),
            lanes: vec![lane],
            cursor: 0,
            seed,
        }
    }

    fn extend(&mut self, map: &LaneMap, ego_s: f64) {
        let mut ahead: f64 = self.lanes[self.cursor..].iter().map(|&l| map.lanes[l].length()).sum::<f64>() - ego_s;
        while ahead < PLAN_AHEAD {
            let last = *self.lanes.last().unwrap();
            let succ = &map.lanes[last].successors;
            if succ.is_empty() {
                break;
            }
            let h = splitmix64(self.seed ^ ((self.lanes.len() as u64) << 32) ^ last as u64);
            let next = succ[(h % succ.len() as u64) as usize];
            ahead += map.lanes[next].length();
            self.lanes.push(next);
        }
    }

    /// Chooses an action and reports the command describing the intent.
    pub fn act(&mut self, map: &LaneMap, snapshot: &WorldSnapshot, ego: &EgoState) -> (Action, Command) {
        let p = ego.position();
        // advance the cursor past finished lanes
        while self.cursor + 1 < self.lanes.len() {
            let lane = &map.lanes[self.lanes[self.cursor]];
            if lane.centerline.project(p).s > lane.length() - 0.1 {
                self.cursor += 1;
            } else {
                break;
            }
        }
        let cur = &map.lanes[self.lanes[self.cursor]];
        let ego_s = cur.centerline.project(p).s;
        self.extend(map, ego_s);

        let mut pts: Vec<Point> = Vec::new();
        let mut starts = Vec::new();
        let mut acc = 0.0;
        for &l in &self.lanes[self.cursor..] {
            starts.push((acc, l));
            acc += map.lanes[l].length();
            for &q in map.lanes[l].centerline.points() {
                if pts.last().is_none_or(|last| crate::geom::dist(*last, q) > 1e-9) {
                    pts.push(q);
                }
            }
        }
        let path = Polyline::new(pts);
        let proj = path.project(p);
        let s = proj.s;
        let c = self.config;

        // pure pursuit towards a point on the path
        let look = c.lookahead_base + c.lookahead_gain * ego.v;
        let (target, _) = path.at(s + look);
        let local = Frame::new(ego.x, ego.y, ego.theta).to_local(target[0], target[1]);
        let alpha = local[1].atan2(local[0]);
        let ld = local[0].hypot(local[1]).max(1e-3);
        let phi = (2.0 * true_wheelbase() * alpha.sin() / ld).atan();
        let steer = steer_for_wheel_angle(phi);

        // speed target
        let lane_at = |arc: f64| starts.iter().rev().find(|(st, _)| *st <= arc).map(|&(_, l)| l).unwrap_or(starts[0].1);
        let mut v_target = c.cruise_speed;
        for probe in [s, s + 6.0, s + 12.0] {
            if map.lanes[lane_at(probe)].kind.is_connector() && map.lanes[lane_at(probe)].kind != LaneKind::Straight {
                v_target = v_target.min(c.turn_speed);
            }
        }
        let stop_allow = |d: f64| (2.0 * c.comfort_decel * d.max(0.0)).sqrt();
        for &(st, l) in &starts {
            for sl in map.stop_lines_on(l) {
                let d = st + sl.s - s;
                if d < -0.2 {
                    continue;
                }
                let stop_at = d - 1.0;
                match snapshot.light(sl.light) {
                    LightPhase::Green => {}
                    LightPhase::Red => v_target = v_target.min(stop_allow(stop_at)),
                    LightPhase::Yellow => {
                        let needed = ego.v * ego.v / (2.0 * c.comfort_decel);
                        if needed <= stop_at + 0.5 {
                            v_target = v_target.min(stop_allow(stop_at));
                        }
                    }
                }
            }
        }
        for n in &snapshot.npcs {
            let q = path.project([n.x, n.y]);
            if q.s <= s || q.lateral.abs() > 2.2 || q.s - s > 40.0 {
                continue;
            }
            let gap = q.s - s - EGO_HALF_LENGTH - n.half_length;
            let room = gap - c.min_gap - c.headway * (ego.v - n.v).max(0.0);
            v_target = v_target.min(n.v + stop_allow(room));
        }

        let action = if v_target < 0.3 && ego.v < 0.6 || ego.v > v_target + 1.0 {
            Action::brake()
        } else {
            let drag = 0.12 * ego.v + 0.006 * ego.v * ego.v - 0.15;
            let throttle = (drag + 1.5 * (v_target - ego.v)) / 2.8;
            Action::new(steer, throttle, false)
        };

        let mut command = command_for(cur.kind);
        if cur.kind == LaneKind::Road {
            if let Some(&(st, l)) = starts.iter().find(|(st, l)| *st > 0.0 && map.lanes[*l].kind.is_connector()) {
                if st - s <= TURN_COMMAND_LEAD {
                    command = command_for(map.lanes[l].kind);
                }
            }
        }
        (action, command)
    }
}
