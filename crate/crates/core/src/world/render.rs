//! Ego-centric raster observations.
//!
//! Cells are 0.25 m with the ego at the raster center, forward pointing up
//! (decreasing row) and left pointing to decreasing column. Each cell is
//! supersampled 2x2 and stores how many of its four samples are covered.

use crate::geom::{Frame, Point};
use crate::reward::{RewardConfig, TargetPath};

use super::map::{LaneMap, LightPhase};
use super::{Command, EgoState, WorldSnapshot};

pub const RASTER_SIZE: usize = 64;
pub const RASTER_RESOLUTION: f64 = 0.25;
pub const RASTER_CHANNELS: usize = 4 + Command::COUNT;

pub const CH_DRIVABLE: usize = 0;
pub const CH_CENTERLINE: usize = 1;
pub const CH_NPC: usize = 2;
pub const CH_STOP_REGION: usize = 3;
/// First of the per-command target-lane channels, in [`Command::ALL`] order.
pub const CH_TARGET: usize = 4;

const SS: usize = 2;
const SAMPLES: usize = RASTER_SIZE * SS;
const SAMPLE_RES: f64 = RASTER_RESOLUTION / SS as f64;
const CENTERLINE_HALF_WIDTH: f64 = 0.25;

/// Channel-major occupancy raster with values in {0, 1/4, ..., 1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    counts: Vec<u8>,
}

impl Default for Raster {
    fn default() -> Self {
        Self {
            counts: vec![0; RASTER_CHANNELS * RASTER_SIZE * RASTER_SIZE],
        }
    }
}

impl Raster {
    pub fn from_counts(counts: Vec<u8>) -> Option<Self> {
        let ok = counts.len() == RASTER_CHANNELS * RASTER_SIZE * RASTER_SIZE && counts.iter().all(|&c| c as usize <= SS * SS);
        ok.then_some(Self { counts })
    }

    pub fn counts(&self) -> &[u8] {
        &self.counts
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.counts[(channel * RASTER_SIZE + row) * RASTER_SIZE + col] as f32 / (SS * SS) as f32
    }

    pub fn channel(&self, channel: usize) -> impl Iterator<Item = f32> + '_ {
        let n = RASTER_SIZE * RASTER_SIZE;
        self.counts[channel * n..(channel + 1) * n].iter().map(|&c| c as f32 / (SS * SS) as f32)
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.counts.iter().map(|&c| c as f32 / (SS * SS) as f32).collect()
    }

    /// World-frame position of a cell center under the rendering pose.
    pub fn cell_center(pose: &EgoState, row: usize, col: usize) -> Point {
        let c = (RASTER_SIZE as f64 - 1.0) / 2.0;
        let lx = (c - row as f64) * RASTER_RESOLUTION;
        let ly = (c - col as f64) * RASTER_RESOLUTION;
        Frame::new(pose.x, pose.y, pose.theta).to_world(lx, ly)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub raster: Raster,
    pub speed: f64,
    pub command: Command,
    /// Pose the raster was rendered from.
    pub pose: EgoState,
}

/// Boolean supersample mask for one channel.
struct Mask {
    bits: Vec<bool>,
}

impl Mask {
    fn new() -> Self {
        Self {
            bits: vec![false; SAMPLES * SAMPLES],
        }
    }

    /// Sample-grid coordinates (row, col) of a local point.
    #[inline]
    fn to_sample(l: Point) -> (f64, f64) {
        let c = (SAMPLES as f64 - 1.0) / 2.0;
        (c - l[0] / SAMPLE_RES, c - l[1] / SAMPLE_RES)
    }

    fn range(lo: f64, hi: f64) -> std::ops::Range<usize> {
        let a = lo.ceil().max(0.0);
        let b = (hi.floor() + 1.0).min(SAMPLES as f64);
        if b <= a {
            0..0
        } else {
            a as usize..b as usize
        }
    }

    /// Covers every sample within `hw` (meters) of the local polyline,
    /// with round joins and flat ends.
    fn stroke(&mut self, pts: &[Point], hw: f64) {
        let r = hw / SAMPLE_RES;
        let sp: Vec<(f64, f64)> = pts.iter().map(|&p| Self::to_sample(p)).collect();
        for (k, w) in sp.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            let d = (b.0 - a.0, b.1 - a.1);
            let len2 = d.0 * d.0 + d.1 * d.1;
            if len2 < 1e-18 {
                continue;
            }
            let round_a = k > 0;
            let round_b = k + 2 < sp.len();
            let rows = Self::range(a.0.min(b.0) - r, a.0.max(b.0) + r);
            let cols = Self::range(a.1.min(b.1) - r, a.1.max(b.1) + r);
            for i in rows {
                for j in cols.clone() {
                    let q = (i as f64 - a.0, j as f64 - a.1);
                    let t = (q.0 * d.0 + q.1 * d.1) / len2;
                    let inside = if (0.0..=1.0).contains(&t) {
                        let perp = (q.0 * d.1 - q.1 * d.0).abs() / len2.sqrt();
                        perp <= r
                    } else if t < 0.0 {
                        round_a && q.0 * q.0 + q.1 * q.1 <= r * r
                    } else {
                        let e = (i as f64 - b.0, j as f64 - b.1);
                        round_b && e.0 * e.0 + e.1 * e.1 <= r * r
                    };
                    if inside {
                        self.bits[i * SAMPLES + j] = true;
                    }
                }
            }
        }
    }

    /// Covers every sample inside a local oriented rectangle.
    fn rect(&mut self, center: Point, theta: f64, half_length: f64, half_width: f64) {
        let (s, c) = theta.sin_cos();
        let corners = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)].map(|(a, b)| {
            Self::to_sample([
                center[0] + a * half_length * c - b * half_width * s,
                center[1] + a * half_length * s + b * half_width * c,
            ])
        });
        let lo_r = corners.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi_r = corners.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let lo_c = corners.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let hi_c = corners.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let ctr = Self::to_sample(center);
        // local axes expressed in sample coordinates: row = -x, col = -y
        let u = (-c, -s);
        let v = (s, -c);
        for i in Self::range(lo_r, hi_r) {
            for j in Self::range(lo_c, hi_c) {
                let q = ((i as f64 - ctr.0) * SAMPLE_RES, (j as f64 - ctr.1) * SAMPLE_RES);
                if (q.0 * u.0 + q.1 * u.1).abs() <= half_length && (q.0 * v.0 + q.1 * v.1).abs() <= half_width {
                    self.bits[i * SAMPLES + j] = true;
                }
            }
        }
    }

    fn write(&self, raster: &mut Raster, channel: usize) {
        let base = channel * RASTER_SIZE * RASTER_SIZE;
        for r in 0..RASTER_SIZE {
            for c in 0..RASTER_SIZE {
                let mut n = 0u8;
                for di in 0..SS {
                    for dj in 0..SS {
                        n += self.bits[(r * SS + di) * SAMPLES + c * SS + dj] as u8;
                    }
                }
                raster.counts[base + r * RASTER_SIZE + c] = n;
            }
        }
    }
}

fn sub_polyline(line: &crate::geom::Polyline, s0: f64, s1: f64) -> Vec<Point> {
    let mut pts = vec![line.at(s0).0];
    let mut s = s0.floor() + 1.0;
    while s < s1 {
        pts.push(line.at(s).0);
        s += 1.0;
    }
    pts.push(line.at(s1).0);
    pts
}

/// Renders the observation for `pose`. Deterministic in its inputs.
pub fn render_observation(map: &LaneMap, snapshot: &WorldSnapshot, pose: &EgoState, command: Command) -> Observation {
    let frame = Frame::new(pose.x, pose.y, pose.theta);
    let local = |pts: &[Point]| -> Vec<Point> { pts.iter().map(|p| frame.to_local(p[0], p[1])).collect() };
    let view_radius = RASTER_SIZE as f64 * RASTER_RESOLUTION * std::f64::consts::FRAC_1_SQRT_2 + 1.0;
    let mut raster = Raster::default();

    let mut drivable = Mask::new();
    let mut center = Mask::new();
    for lane in map.lanes_near(pose.position(), view_radius) {
        let pts = local(lane.centerline.points());
        drivable.stroke(&pts, lane.half_width());
        if !lane.kind.is_connector() {
            center.stroke(&pts, CENTERLINE_HALF_WIDTH);
        }
    }
    drivable.write(&mut raster, CH_DRIVABLE);
    center.write(&mut raster, CH_CENTERLINE);

    let mut npcs = Mask::new();
    for n in &snapshot.npcs {
        if crate::geom::dist([n.x, n.y], pose.position()) > view_radius + n.disc_radius() {
            continue;
        }
        let c = frame.to_local(n.x, n.y);
        npcs.rect(c, n.theta - pose.theta, n.half_length, n.half_width);
    }
    npcs.write(&mut raster, CH_NPC);

    let zone = RewardConfig::default().red_zone_length;
    let mut stops = Mask::new();
    for sl in &map.stop_lines {
        if snapshot.light(sl.light) == LightPhase::Green {
            continue;
        }
        let lane = &map.lanes[sl.lane];
        if !lane.near(pose.position(), view_radius) {
            continue;
        }
        let pts = sub_polyline(&lane.centerline, (sl.s - zone).max(0.0), sl.s);
        stops.stroke(&local(&pts), lane.half_width());
    }
    stops.write(&mut raster, CH_STOP_REGION);

    for cmd in Command::ALL {
        let path = TargetPath::resolve(map, pose.x, pose.y, pose.theta, cmd);
        let mut m = Mask::new();
        m.stroke(&local(path.line().points()), path.half_width);
        m.write(&mut raster, CH_TARGET + cmd.index());
    }

    Observation {
        raster,
        speed: pose.v,
        command,
        pose: *pose,
    }
}
