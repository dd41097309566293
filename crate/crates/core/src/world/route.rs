//! Routes: lane sequences with geometry and a command schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point, Polyline, Projection};

use super::map::{LaneKind, LaneMap};
use super::towns::Town;
use super::Command;

/// Length of the lateral blend used for lane changes.
pub const LANE_CHANGE_LENGTH: f64 = 20.0;
/// Turn commands are issued this far before the junction connector.
pub const TURN_COMMAND_LEAD: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    /// Consecutive lanes are successors or left/right neighbors.
    pub lanes: Vec<usize>,
    pub start_s: f64,
    pub goal_s: f64,
    #[serde(skip)]
    geometry: Option<RouteGeometry>,
}

#[derive(Debug, Clone, PartialEq)]
struct RouteGeometry {
    line: Polyline,
    /// (route arc, command) sorted by arc.
    schedule: Vec<(f64, Command)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Turn {
    Left,
    Right,
    Straight,
}

impl Turn {
    fn kind(self) -> LaneKind {
        match self {
            Turn::Left => LaneKind::Left,
            Turn::Right => LaneKind::Right,
            Turn::Straight => LaneKind::Straight,
        }
    }

    pub fn command(self) -> Command {
        match self {
            Turn::Left => Command::TurnLeft,
            Turn::Right => Command::TurnRight,
            Turn::Straight => Command::GoStraight,
        }
    }
}

fn command_for_kind(kind: LaneKind) -> Command {
    match kind {
        LaneKind::Left => Command::TurnLeft,
        LaneKind::Right => Command::TurnRight,
        LaneKind::Straight => Command::GoStraight,
        LaneKind::Road => Command::FollowLane,
    }
}

impl Route {
    pub fn new(map: &LaneMap, lanes: Vec<usize>, start_s: f64, goal_s: f64) -> Result<Self> {
        let mut r = Self {
            lanes,
            start_s,
            goal_s,
            geometry: None,
        };
        r.build(map)?;
        Ok(r)
    }

    /// Builds geometry after deserialization.
    pub fn build(&mut self, map: &LaneMap) -> Result<()> {
        if self.lanes.is_empty() {
            return Err(Error::Config("route has no lanes".into()));
        }
        for &l in &self.lanes {
            map.lane(l)?;
        }
        for w in self.lanes.windows(2) {
            let a = &map.lanes[w[0]];
            let lateral = a.left == Some(w[1]) || a.right == Some(w[1]);
            if !a.successors.contains(&w[1]) && !lateral {
                return Err(Error::Config(format!("lanes {} -> {} are not connected", w[0], w[1])));
            }
        }
        let first_len = map.lanes[self.lanes[0]].length();
        let last_len = map.lanes[*self.lanes.last().unwrap()].length();
        if self.start_s < 0.0 || self.start_s > first_len || self.goal_s < 0.0 || self.goal_s > last_len {
            return Err(Error::Config("route start or goal outside its lane".into()));
        }

        let mut pts: Vec<Point> = Vec::new();
        let mut arc = 0.0;
        let mut schedule: Vec<(f64, Command)> = Vec::new();
        let push = |pts: &mut Vec<Point>, arc: &mut f64, p: Point| {
            if let Some(last) = pts.last() {
                let d = crate::geom::dist(*last, p);
                if d < 1e-6 {
                    return;
                }
                *arc += d;
            }
            pts.push(p);
        };
        let mut s_in = self.start_s;
        let n = self.lanes.len();
        let mut i = 0;
        while i < n {
            let lane = &map.lanes[self.lanes[i]];
            let next = self.lanes.get(i + 1).copied();
            let lateral_next = next.filter(|&nx| lane.left == Some(nx) || lane.right == Some(nx));
            if let Some(nx) = lateral_next {
                let other = &map.lanes[nx];
                let len = lane.length().min(other.length());
                let s_c = (0.5 * len - 0.5 * LANE_CHANGE_LENGTH).max(s_in + 2.0).min(len - LANE_CHANGE_LENGTH - 1.0);
                if s_c < s_in {
                    return Err(Error::Config(format!("no room for lane change on lane {}", lane.id)));
                }
                let cmd = if lane.left == Some(nx) {
                    Command::ChangeLeft
                } else {
                    Command::ChangeRight
                };
                schedule.push((arc, Command::FollowLane));
                let mut s = s_in;
                while s < s_c {
                    push(&mut pts, &mut arc, lane.centerline.at(s).0);
                    s += 2.0;
                }
                push(&mut pts, &mut arc, lane.centerline.at(s_c).0);
                schedule.push(((arc - 8.0).max(0.0), cmd));
                let steps = 10;
                for k in 1..=steps {
                    let t = k as f64 / steps as f64;
                    let s = s_c + t * LANE_CHANGE_LENGTH;
                    let a = lane.centerline.at(s).0;
                    let b = other.centerline.at(s).0;
                    let w = 0.5 - 0.5 * (std::f64::consts::PI * t).cos();
                    push(&mut pts, &mut arc, [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])]);
                }
                schedule.push((arc, Command::FollowLane));
                s_in = s_c + LANE_CHANGE_LENGTH;
                i += 1;
                continue;
            }
            let s_out = if i + 1 == n { self.goal_s } else { lane.length() };
            let own_cmd = command_for_kind(lane.kind);
            schedule.push((arc, own_cmd));
            let lead_cmd = next
                .map(|nx| map.lanes[nx].kind)
                .filter(|k| k.is_connector())
                .map(command_for_kind);
            let lane_start_arc = arc;
            // sample the lane between s_in and s_out
            let pts_lane: Vec<Point> = {
                let mut v = Vec::new();
                let cum_pts = lane.centerline.points();
                v.push(lane.centerline.at(s_in).0);
                let mut acc = 0.0;
                for w in cum_pts.windows(2) {
                    acc += crate::geom::dist(w[0], w[1]);
                    if acc > s_in + 1e-9 && acc < s_out - 1e-9 {
                        v.push(w[1]);
                    }
                }
                v.push(lane.centerline.at(s_out).0);
                v
            };
            for p in pts_lane {
                push(&mut pts, &mut arc, p);
            }
            if let Some(cmd) = lead_cmd {
                let at = (arc - TURN_COMMAND_LEAD).max(lane_start_arc);
                schedule.push((at, cmd));
            }
            s_in = 0.0;
            i += 1;
        }
        if pts.len() < 2 {
            return Err(Error::Config("route is degenerate".into()));
        }
        schedule.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        self.geometry = Some(RouteGeometry {
            line: Polyline::new(pts),
            schedule,
        });
        Ok(())
    }

    fn geom(&self) -> &RouteGeometry {
        self.geometry.as_ref().expect("route geometry built")
    }

    pub fn line(&self) -> &Polyline {
        &self.geom().line
    }

    pub fn length(&self) -> f64 {
        self.geom().line.length()
    }

    pub fn command_at(&self, arc: f64) -> Command {
        let sched = &self.geom().schedule;
        let mut cmd = Command::FollowLane;
        for &(a, c) in sched {
            if a <= arc + 1e-9 {
                cmd = c;
            } else {
                break;
            }
        }
        cmd
    }

    pub fn start_pose(&self) -> (Point, f64) {
        let line = self.line();
        (line.start(), line.start_heading())
    }

    pub fn goal(&self) -> Point {
        self.line().end()
    }

    /// Projection restricted to the arc window `[lo, hi]` so the route can
    /// pass near itself without progress jumping.
    pub fn project_window(&self, p: Point, lo: f64, hi: f64) -> Projection {
        let line = self.line();
        let full = line.project(p);
        if full.s >= lo && full.s <= hi {
            return full;
        }
        // fall back to sampling the window
        let mut best = full;
        let mut best_d = f64::INFINITY;
        let mut s = lo.max(0.0);
        let end = hi.min(line.length());
        while s <= end {
            let (q, h) = line.at(s);
            let d = crate::geom::dist(p, q);
            if d < best_d {
                best_d = d;
                let dx = p[0] - q[0];
                let dy = p[1] - q[1];
                best = Projection {
                    segment: 0,
                    s,
                    lateral: -dx * h.sin() + dy * h.cos(),
                    heading: h,
                };
            }
            s += 0.25;
        }
        best
    }
}

/// Builds a route from a starting road and a list of junction choices.
/// Lane changes are inserted when the current lane lacks the requested
/// connector. After the last choice the route continues `tail` meters.
pub fn plan_route(town: &Town, from: usize, to: usize, lane_index: usize, start_s: f64, turns: &[Turn], tail: f64) -> Result<Route> {
    let map = &town.map;
    let lanes = town.lanes_between(from, to)?;
    let mut cur = *lanes
        .get(lane_index)
        .ok_or_else(|| Error::Config(format!("road {from}->{to} has no lane {lane_index}")))?;
    let mut seq = vec![cur];
    let mut pending = turns.iter().copied();
    let mut want = pending.next();
    loop {
        let lane = &map.lanes[cur];
        let connectors: Vec<usize> = lane.successors.clone();
        let junction = connectors.iter().any(|&c| map.lanes[c].kind.is_connector());
        if !junction {
            // unsignalised corner or plain continuation
            cur = connectors[0];
            seq.push(cur);
            continue;
        }
        let Some(turn) = want else {
            break;
        };
        let find = |l: usize| map.lanes[l].successors.iter().copied().find(|&c| map.lanes[c].kind == turn.kind());
        let conn = match find(cur) {
            Some(c) => c,
            None => {
                // try neighbors
                let mut found = None;
                for nb in [lane.left, lane.right].into_iter().flatten() {
                    if let Some(c) = find(nb) {
                        found = Some((nb, c));
                        break;
                    }
                }
                let (nb, c) = found.ok_or_else(|| {
                    Error::Config(format!("no {:?} connector reachable from lane {cur}", turn))
                })?;
                seq.push(nb);
                c
            }
        };
        seq.push(conn);
        cur = map.lanes[conn].successors[0];
        seq.push(cur);
        want = pending.next();
    }
    let last_len = map.lanes[cur].length();
    let goal_s = tail.min(last_len - 1.0).max(0.0);
    Route::new(map, seq, start_s, goal_s)
}
