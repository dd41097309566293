//! Procedural construction of the two built-in towns from a small road graph.
//!
//! Roads are straight two-way links between nodes with right-hand traffic.
//! Nodes of degree two become unsignalised corners; nodes of degree three or
//! more become junctions with one protected signal phase per approach.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::geom::{normalize_angle, Point};

use super::map::{LaneDef, LaneKind, LaneMap, LightTiming, SpawnPoint, StopLine};

pub const LANE_WIDTH: f64 = 3.5;
/// Distance from a node center to where road lanes begin and end.
pub const JUNCTION_RADIUS: f64 = 8.0;
/// Stop lines sit this far before the end of an approach lane.
pub const STOP_LINE_SETBACK: f64 = 3.0;
pub const GREEN_TIME: f64 = 6.0;
pub const YELLOW_TIME: f64 = 2.0;
pub const CLEARANCE_TIME: f64 = 1.0;
const SPAWN_SPACING: f64 = 12.0;

#[derive(Debug, Clone)]
pub struct RoadDef {
    pub a: usize,
    pub b: usize,
    /// Lanes per direction.
    pub lanes: usize,
}

#[derive(Debug, Clone)]
pub struct RoadNet {
    pub name: String,
    pub nodes: Vec<Point>,
    pub roads: Vec<RoadDef>,
}

/// A generated map together with the road-graph lookup needed to author routes.
#[derive(Debug, Clone)]
pub struct Town {
    pub map: LaneMap,
    pub net: RoadNet,
    /// (from node, to node) -> lane ids ordered right (outermost) to left.
    pub road_lanes: HashMap<(usize, usize), Vec<usize>>,
}

impl Town {
    pub fn lanes_between(&self, from: usize, to: usize) -> Result<&[usize]> {
        self.road_lanes
            .get(&(from, to))
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Config(format!("no road from node {from} to node {to}")))
    }
}

struct DirLanes {
    from: usize,
    to: usize,
    heading: f64,
    lanes: Vec<usize>,
}

fn bezier(p0: Point, p1: Point, p2: Point, p3: Point, n: usize) -> Vec<Point> {
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let u = 1.0 - t;
            let b0 = u * u * u;
            let b1 = 3.0 * u * u * t;
            let b2 = 3.0 * u * t * t;
            let b3 = t * t * t;
            [
                b0 * p0[0] + b1 * p1[0] + b2 * p2[0] + b3 * p3[0],
                b0 * p0[1] + b1 * p1[1] + b2 * p2[1] + b3 * p3[1],
            ]
        })
        .collect()
}

fn connector_points(p0: Point, h0: f64, p3: Point, h3: f64) -> Vec<Point> {
    let turn = normalize_angle(h3 - h0).abs();
    if turn < 1e-6 {
        return vec![p0, p3];
    }
    let chord = (p3[0] - p0[0]).hypot(p3[1] - p0[1]);
    let k = 0.39 * chord * (turn / FRAC_PI_2).max(0.5);
    let p1 = [p0[0] + k * h0.cos(), p0[1] + k * h0.sin()];
    let p2 = [p3[0] - k * h3.cos(), p3[1] - k * h3.sin()];
    bezier(p0, p1, p2, p3, 12)
}

pub fn build_town(net: &RoadNet) -> Result<Town> {
    let mut defs: Vec<LaneDef> = Vec::new();
    let mut dirs: Vec<DirLanes> = Vec::new();
    let mut road_lanes = HashMap::new();

    for road in &net.roads {
        for (from, to) in [(road.a, road.b), (road.b, road.a)] {
            let pa = net.nodes[from];
            let pb = net.nodes[to];
            let len = (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
            if len <= 2.0 * JUNCTION_RADIUS + 10.0 {
                return Err(Error::Config(format!("road {from}-{to} too short")));
            }
            let u = [(pb[0] - pa[0]) / len, (pb[1] - pa[1]) / len];
            let nrm = [-u[1], u[0]];
            let heading = u[1].atan2(u[0]);
            let base = defs.len();
            let mut ids = Vec::new();
            for k in 0..road.lanes {
                let off = -((road.lanes - k) as f64 - 0.5) * LANE_WIDTH;
                let start = [
                    pa[0] + u[0] * JUNCTION_RADIUS + nrm[0] * off,
                    pa[1] + u[1] * JUNCTION_RADIUS + nrm[1] * off,
                ];
                let end = [
                    pb[0] - u[0] * JUNCTION_RADIUS + nrm[0] * off,
                    pb[1] - u[1] * JUNCTION_RADIUS + nrm[1] * off,
                ];
                defs.push(LaneDef {
                    kind: LaneKind::Road,
                    width: LANE_WIDTH,
                    points: vec![start, end],
                    successors: Vec::new(),
                    left: (k + 1 < road.lanes).then_some(base + k + 1),
                    right: (k > 0).then(|| base + k - 1),
                });
                ids.push(base + k);
            }
            road_lanes.insert((from, to), ids.clone());
            dirs.push(DirLanes {
                from,
                to,
                heading,
                lanes: ids,
            });
        }
    }

    let mut lights = Vec::new();
    let mut stop_lines = Vec::new();
    for node in 0..net.nodes.len() {
        let incoming: Vec<usize> = (0..dirs.len()).filter(|&d| dirs[d].to == node).collect();
        let outgoing: Vec<usize> = (0..dirs.len()).filter(|&d| dirs[d].from == node).collect();
        let degree = incoming.len();
        if degree == 0 {
            continue;
        }
        let signalised = degree >= 3;
        let slot = GREEN_TIME + YELLOW_TIME + CLEARANCE_TIME;
        let cycle = slot * degree as f64;
        for (slot_idx, &din) in incoming.iter().enumerate() {
            let light = if signalised {
                lights.push(LightTiming {
                    cycle,
                    offset: (cycle - slot * slot_idx as f64).rem_euclid(cycle),
                    green: GREEN_TIME,
                    yellow: YELLOW_TIME,
                });
                Some(lights.len() - 1)
            } else {
                None
            };
            let in_lanes = dirs[din].lanes.clone();
            for &dout in &outgoing {
                if dirs[dout].to == dirs[din].from {
                    continue; // no U-turns
                }
                let out_lanes = dirs[dout].lanes.clone();
                let turn = normalize_angle(dirs[dout].heading - dirs[din].heading);
                let (kind, pairs): (LaneKind, Vec<(usize, usize)>) = if !signalised {
                    if in_lanes.len() != out_lanes.len() {
                        return Err(Error::Config(format!("lane count changes at corner node {node}")));
                    }
                    (LaneKind::Road, (0..in_lanes.len()).map(|k| (k, k)).collect())
                } else if turn.abs() < 0.5 {
                    (
                        LaneKind::Straight,
                        (0..in_lanes.len()).map(|k| (k, k.min(out_lanes.len() - 1))).collect(),
                    )
                } else if turn > 0.0 {
                    (LaneKind::Left, vec![(in_lanes.len() - 1, out_lanes.len() - 1)])
                } else {
                    (LaneKind::Right, vec![(0, 0)])
                };
                for (ki, ko) in pairs {
                    let li = in_lanes[ki];
                    let lo = out_lanes[ko];
                    let p0 = *defs[li].points.last().unwrap();
                    let p3 = defs[lo].points[0];
                    let pts = connector_points(p0, dirs[din].heading, p3, dirs[dout].heading);
                    let cid = defs.len();
                    defs.push(LaneDef {
                        kind,
                        width: LANE_WIDTH,
                        points: pts,
                        successors: vec![lo],
                        left: None,
                        right: None,
                    });
                    defs[li].successors.push(cid);
                }
            }
            if let Some(light) = light {
                for &l in &in_lanes {
                    let p = &defs[l].points;
                    let len = (p[1][0] - p[0][0]).hypot(p[1][1] - p[0][1]);
                    stop_lines.push(StopLine {
                        lane: l,
                        s: len - STOP_LINE_SETBACK,
                        light,
                    });
                }
            }
        }
    }

    let mut spawn_points = Vec::new();
    for (id, d) in defs.iter().enumerate() {
        if d.kind != LaneKind::Road {
            continue;
        }
        let len = (d.points[1][0] - d.points[0][0]).hypot(d.points[1][1] - d.points[0][1]);
        let mut s = 6.0;
        while s < len - 12.0 {
            spawn_points.push(SpawnPoint { lane: id, s });
            s += SPAWN_SPACING;
        }
    }

    let map = LaneMap::new(net.name.clone(), defs, stop_lines, spawn_points, lights)?;
    Ok(Town {
        map,
        net: net.clone(),
        road_lanes,
    })
}

fn grid_nodes(xs: &[f64], ys: &[f64]) -> Vec<Point> {
    let mut nodes = Vec::new();
    for &y in ys {
        for &x in xs {
            nodes.push([x, y]);
        }
    }
    nodes
}

/// Training town: a 3x3 grid of nodes, one four-way junction, four T-junctions,
/// and a two-lane-per-direction avenue across the middle.
pub fn town_a_net() -> RoadNet {
    let nodes = grid_nodes(&[0.0, 64.0, 128.0], &[0.0, 64.0, 128.0]);
    let r = |a, b, lanes| RoadDef { a, b, lanes };
    RoadNet {
        name: "town-a".into(),
        nodes,
        roads: vec![
            r(0, 1, 1),
            r(1, 2, 1),
            r(3, 4, 2),
            r(4, 5, 2),
            r(6, 7, 1),
            r(7, 8, 1),
            r(0, 3, 1),
            r(3, 6, 1),
            r(1, 4, 1),
            r(4, 7, 1),
            r(2, 5, 1),
            r(5, 8, 1),
        ],
    }
}

/// Held-out town: irregular spacing, four T-junctions, a straight-through node
/// and a two-lane connector in the lower middle.
pub fn town_b_net() -> RoadNet {
    let nodes = grid_nodes(&[0.0, 72.0, 132.0], &[0.0, 56.0, 128.0]);
    let r = |a, b, lanes| RoadDef { a, b, lanes };
    RoadNet {
        name: "town-b".into(),
        nodes,
        roads: vec![
            r(0, 1, 1),
            r(1, 2, 1),
            r(3, 4, 1),
            r(4, 5, 1),
            r(6, 7, 1),
            r(7, 8, 1),
            r(0, 3, 1),
            r(3, 6, 1),
            r(1, 4, 2),
            r(2, 5, 1),
            r(5, 8, 1),
        ],
    }
}

pub fn town_a() -> Town {
    build_town(&town_a_net()).expect("town-a is well formed")
}

pub fn town_b() -> Town {
    build_town(&town_b_net()).expect("town-b is well formed")
}

pub fn town_by_name(name: &str) -> Result<Town> {
    match name {
        "town-a" => Ok(town_a()),
        "town-b" => Ok(town_b()),
        other => Err(Error::Config(format!("unknown town '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn towns_have_signalised_junctions_and_lane_changes() {
        for town in [town_a(), town_b()] {
            let m = &town.map;
            assert!(m.lights.len() >= 6, "{} lights", m.lights.len());
            assert!(m.lanes.iter().any(|l| l.left.is_some()));
            assert!(m.lanes.iter().any(|l| l.kind == LaneKind::Left));
            assert!(m.lanes.iter().any(|l| l.kind == LaneKind::Right));
            for l in &m.lanes {
                assert!(!l.successors.is_empty(), "lane {} is a dead end", l.id);
            }
            let back = LaneMap::from_text(&m.to_text()).unwrap();
            assert_eq!(&back, m);
        }
    }

    #[test]
    fn connectors_join_lane_ends() {
        let town = town_a();
        for l in &town.map.lanes {
            for &s in &l.successors {
                let gap = crate::geom::dist(l.centerline.end(), town.map.lanes[s].centerline.start());
                assert!(gap < 1e-9);
            }
        }
    }
}
