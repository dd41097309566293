//! Lane graph, traffic-light timing and the `.map` text format.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point, Polyline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LaneKind {
    /// Ordinary road lane, including unsignalised corner connectors.
    Road,
    /// Junction connector going straight across.
    Straight,
    /// Junction connector turning left.
    Left,
    /// Junction connector turning right.
    Right,
}

impl LaneKind {
    fn as_str(self) -> &'static str {
        match self {
            LaneKind::Road => "road",
            LaneKind::Straight => "straight",
            LaneKind::Left => "left",
            LaneKind::Right => "right",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "road" => LaneKind::Road,
            "straight" => LaneKind::Straight,
            "left" => LaneKind::Left,
            "right" => LaneKind::Right,
            _ => return None,
        })
    }

    pub fn is_connector(self) -> bool {
        self != LaneKind::Road
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: usize,
    pub kind: LaneKind,
    pub width: f64,
    pub centerline: Polyline,
    pub successors: Vec<usize>,
    pub predecessors: Vec<usize>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    bounds: (Point, Point),
}

impl Lane {
    pub fn length(&self) -> f64 {
        self.centerline.length()
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.width
    }

    /// True when `p` lies within `margin` of the lane's bounding box.
    pub fn near(&self, p: Point, margin: f64) -> bool {
        let (lo, hi) = self.bounds;
        p[0] >= lo[0] - margin && p[0] <= hi[0] + margin && p[1] >= lo[1] - margin && p[1] <= hi[1] + margin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopLine {
    pub lane: usize,
    pub s: f64,
    pub light: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpawnPoint {
    pub lane: usize,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LightPhase {
    Red,
    Yellow,
    Green,
}

/// Fixed-cycle signal timing. The light is green for `green` seconds starting
/// at cycle position 0, then yellow for `yellow`, then red for the remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightTiming {
    pub cycle: f64,
    pub offset: f64,
    pub green: f64,
    pub yellow: f64,
}

impl LightTiming {
    pub fn phase_at(&self, time: f64) -> LightPhase {
        let u = (time + self.offset).rem_euclid(self.cycle);
        if u < self.green {
            LightPhase::Green
        } else if u < self.green + self.yellow {
            LightPhase::Yellow
        } else {
            LightPhase::Red
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneMap {
    pub id: String,
    pub lanes: Vec<Lane>,
    pub stop_lines: Vec<StopLine>,
    pub spawn_points: Vec<SpawnPoint>,
    pub lights: Vec<LightTiming>,
}

/// Plain description of a lane, used to assemble a [`LaneMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct LaneDef {
    pub kind: LaneKind,
    pub width: f64,
    pub points: Vec<Point>,
    pub successors: Vec<usize>,
    pub left: Option<usize>,
    pub right: Option<usize>,
}

const MAP_HEADER: &str = "lanemap 1";

impl LaneMap {
    /// Validates the definitions and derives predecessor lists.
    pub fn new(
        id: impl Into<String>,
        defs: Vec<LaneDef>,
        stop_lines: Vec<StopLine>,
        spawn_points: Vec<SpawnPoint>,
        lights: Vec<LightTiming>,
    ) -> Result<Self> {
        let n = defs.len();
        let check = |l: usize| if l < n { Ok(()) } else { Err(Error::UnknownLane(l)) };
        for (i, d) in defs.iter().enumerate() {
            if d.points.len() < 2 {
                return Err(Error::Config(format!("lane {i} has fewer than two points")));
            }
            if !(d.width > 0.0) {
                return Err(Error::Config(format!("lane {i} has non-positive width")));
            }
            for &s in &d.successors {
                check(s)?;
            }
            if let Some(l) = d.left {
                check(l)?;
            }
            if let Some(r) = d.right {
                check(r)?;
            }
        }
        let mut lanes: Vec<Lane> = defs
            .into_iter()
            .enumerate()
            .map(|(id, d)| {
                let centerline = Polyline::new(d.points);
                let bounds = centerline.bounds();
                Lane {
                    id,
                    kind: d.kind,
                    width: d.width,
                    centerline,
                    successors: d.successors,
                    predecessors: Vec::new(),
                    left: d.left,
                    right: d.right,
                    bounds,
                }
            })
            .collect();
        for i in 0..n {
            for s in lanes[i].successors.clone() {
                lanes[s].predecessors.push(i);
            }
        }
        for sl in &stop_lines {
            check(sl.lane)?;
            if sl.light >= lights.len() {
                return Err(Error::Config(format!("stop line references unknown light {}", sl.light)));
            }
            if sl.s < 0.0 || sl.s > lanes[sl.lane].length() {
                return Err(Error::Config(format!(
                    "stop line at s={} outside lane {} (length {})",
                    sl.s,
                    sl.lane,
                    lanes[sl.lane].length()
                )));
            }
        }
        for sp in &spawn_points {
            check(sp.lane)?;
            if sp.s < 0.0 || sp.s > lanes[sp.lane].length() {
                return Err(Error::Config(format!("spawn point outside lane {}", sp.lane)));
            }
        }
        for l in &lights {
            if !(l.cycle > 0.0) || l.green < 0.0 || l.yellow < 0.0 || l.green + l.yellow > l.cycle {
                return Err(Error::Config("inconsistent light timing".into()));
            }
        }
        Ok(Self {
            id: id.into(),
            lanes,
            stop_lines,
            spawn_points,
            lights,
        })
    }

    pub fn lane(&self, id: usize) -> Result<&Lane> {
        self.lanes.get(id).ok_or(Error::UnknownLane(id))
    }

    pub fn light_phases_at(&self, time: f64) -> Vec<LightPhase> {
        self.lights.iter().map(|l| l.phase_at(time)).collect()
    }

    pub fn stop_lines_on(&self, lane: usize) -> impl Iterator<Item = &StopLine> {
        self.stop_lines.iter().filter(move |s| s.lane == lane)
    }

    /// Lanes whose bounding box is within `margin` of `p`.
    pub fn lanes_near(&self, p: Point, margin: f64) -> impl Iterator<Item = &Lane> {
        self.lanes.iter().filter(move |l| l.near(p, margin))
    }

    /// Axis-aligned bounds of all lane geometry.
    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for l in &self.lanes {
            lo[0] = lo[0].min(l.bounds.0[0] - l.width);
            lo[1] = lo[1].min(l.bounds.0[1] - l.width);
            hi[0] = hi[0].max(l.bounds.1[0] + l.width);
            hi[1] = hi[1].max(l.bounds.1[1] + l.width);
        }
        (lo, hi)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let opt = |o: Option<usize>| o.map_or("-".to_string(), |v| v.to_string());
        writeln!(out, "{MAP_HEADER}").unwrap();
        writeln!(out, "id {}", self.id).unwrap();
        for l in &self.lights {
            writeln!(
                out,
                "light cycle {} offset {} green {} yellow {}",
                l.cycle, l.offset, l.green, l.yellow
            )
            .unwrap();
        }
        for lane in &self.lanes {
            let succ = if lane.successors.is_empty() {
                "-".to_string()
            } else {
                lane.successors
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            };
            writeln!(
                out,
                "lane {} kind {} width {} succ {} left {} right {}",
                lane.id,
                lane.kind.as_str(),
                lane.width,
                succ,
                opt(lane.left),
                opt(lane.right)
            )
            .unwrap();
            let pts: Vec<String> = lane
                .centerline
                .points()
                .iter()
                .map(|p| format!("{} {}", p[0], p[1]))
                .collect();
            writeln!(out, "points {}", pts.join(" ")).unwrap();
        }
        for s in &self.stop_lines {
            writeln!(out, "stop {} {} {}", s.lane, s.s, s.light).unwrap();
        }
        for s in &self.spawn_points {
            writeln!(out, "spawn {} {}", s.lane, s.s).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::format("map file", format!("line {}: {msg}", line + 1));
        let mut lines = text.lines().enumerate().filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        });
        match lines.next() {
            Some((_, h)) if h.trim() == MAP_HEADER => {}
            _ => return Err(Error::format("map file", format!("missing header '{MAP_HEADER}'"))),
        }
        let mut id = None;
        let mut lights = Vec::new();
        let mut defs: Vec<LaneDef> = Vec::new();
        let mut stops = Vec::new();
        let mut spawns = Vec::new();
        let mut pending_points = false;
        for (ln, line) in lines {
            let tok: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| -> Result<f64> {
                tok.get(i)
                    .and_then(|t| t.parse::<f64>().ok())
                    .ok_or_else(|| bad(ln, "expected number"))
            };
            let idx = |i: usize| -> Result<usize> {
                tok.get(i)
                    .and_then(|t| t.parse::<usize>().ok())
                    .ok_or_else(|| bad(ln, "expected index"))
            };
            let opt_idx = |i: usize| -> Result<Option<usize>> {
                match tok.get(i) {
                    Some(&"-") => Ok(None),
                    Some(t) => t.parse().map(Some).map_err(|_| bad(ln, "expected index or '-'")),
                    None => Err(bad(ln, "missing field")),
                }
            };
            if pending_points && tok[0] != "points" {
                return Err(bad(ln, "lane without points"));
            }
            match tok[0] {
                "id" => id = tok.get(1).map(|s| s.to_string()),
                "light" => {
                    if tok.len() != 9 {
                        return Err(bad(ln, "light needs cycle/offset/green/yellow"));
                    }
                    lights.push(LightTiming {
                        cycle: num(2)?,
                        offset: num(4)?,
                        green: num(6)?,
                        yellow: num(8)?,
                    });
                }
                "lane" => {
                    if tok.len() != 12 {
                        return Err(bad(ln, "lane needs kind/width/succ/left/right"));
                    }
                    if idx(1)? != defs.len() {
                        return Err(bad(ln, "lane ids must be consecutive from 0"));
                    }
                    let kind = LaneKind::parse(tok[3]).ok_or_else(|| bad(ln, "unknown lane kind"))?;
                    let successors = if tok[7] == "-" {
                        Vec::new()
                    } else {
                        tok[7]
                            .split(',')
                            .map(|t| t.parse::<usize>().map_err(|_| bad(ln, "bad successor")))
                            .collect::<Result<Vec<_>>>()?
                    };
                    defs.push(LaneDef {
                        kind,
                        width: num(5)?,
                        points: Vec::new(),
                        successors,
                        left: opt_idx(9)?,
                        right: opt_idx(11)?,
                    });
                    pending_points = true;
                }
                "points" => {
                    let def = defs.last_mut().ok_or_else(|| bad(ln, "points before lane"))?;
                    if !pending_points || (tok.len() - 1) % 2 != 0 {
                        return Err(bad(ln, "malformed point list"));
                    }
                    for i in (1..tok.len()).step_by(2) {
                        def.points.push([num(i)?, num(i + 1)?]);
                    }
                    pending_points = false;
                }
                "stop" => stops.push(StopLine {
                    lane: idx(1)?,
                    s: num(2)?,
                    light: idx(3)?,
                }),
                "spawn" => spawns.push(SpawnPoint {
                    lane: idx(1)?,
                    s: num(2)?,
                }),
                other => return Err(bad(ln, &format!("unknown record '{other}'"))),
            }
        }
        if pending_points {
            return Err(Error::format("map file", "last lane has no points"));
        }
        let id = id.ok_or_else(|| Error::format("map file", "missing id"))?;
        LaneMap::new(id, defs, stops, spawns, lights)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_lane_loop() -> LaneMap {
        LaneMap::new(
            "mini",
            vec![
                LaneDef {
                    kind: LaneKind::Road,
                    width: 3.5,
                    points: vec![[0.0, 0.0], [50.0, 0.0]],
                    successors: vec![1],
                    left: None,
                    right: None,
                },
                LaneDef {
                    kind: LaneKind::Straight,
                    width: 3.5,
                    points: vec![[50.0, 0.0], [60.0, 0.0]],
                    successors: vec![0],
                    left: None,
                    right: None,
                },
            ],
            vec![StopLine {
                lane: 0,
                s: 47.0,
                light: 0,
            }],
            vec![SpawnPoint { lane: 0, s: 5.0 }],
            vec![LightTiming {
                cycle: 20.0,
                offset: 0.0,
                green: 8.0,
                yellow: 2.0,
            }],
        )
        .unwrap()
    }

    #[test]
    fn text_round_trip() {
        let m = two_lane_loop();
        let back = LaneMap::from_text(&m.to_text()).unwrap();
        assert_eq!(m, back);
        assert_eq!(back.lanes[0].predecessors, vec![1]);
    }

    #[test]
    fn rejects_bad_successor_and_stop_line() {
        let mut text = two_lane_loop().to_text();
        text = text.replace("succ 1 ", "succ 7 ");
        assert!(matches!(LaneMap::from_text(&text), Err(Error::UnknownLane(7))));
        let text = two_lane_loop().to_text().replace("stop 0 47", "stop 0 99");
        assert!(LaneMap::from_text(&text).is_err());
        assert!(LaneMap::from_text("lanemap 2\n").is_err());
    }

    #[test]
    fn light_cycle_phases() {
        let t = LightTiming {
            cycle: 20.0,
            offset: 0.0,
            green: 8.0,
            yellow: 2.0,
        };
        assert_eq!(t.phase_at(0.0), LightPhase::Green);
        assert_eq!(t.phase_at(9.0), LightPhase::Yellow);
        assert_eq!(t.phase_at(15.0), LightPhase::Red);
        assert_eq!(t.phase_at(21.0), LightPhase::Green);
    }
}
