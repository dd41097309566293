//! Deterministic 2D top-down driving world.

pub mod autopilot;
pub mod collect;
pub mod ego;
pub mod log;
pub mod map;
pub mod noise;
pub mod render;
pub mod route;
pub mod sim;
pub mod towns;

use serde::{Deserialize, Serialize};

use crate::geom::normalize_angle;

pub use map::{LaneKind, LaneMap, LightPhase, SpawnPoint, StopLine};
pub use render::{Observation, Raster};
pub use sim::{step_world, SimMode, World};

/// Simulator rate.
pub const TICK_RATE_HZ: u32 = 20;
pub const TICK_DT: f64 = 1.0 / TICK_RATE_HZ as f64;
/// Ticks per control decision.
pub const CONTROL_PERIOD: u32 = 5;
pub const DECISION_DT: f64 = CONTROL_PERIOD as f64 * TICK_DT;

pub const EGO_HALF_LENGTH: f64 = 2.25;
pub const EGO_HALF_WIDTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

impl EgoState {
    pub fn new(x: f64, y: f64, theta: f64, v: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
            v: v.max(0.0),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn footprint(&self) -> crate::geom::Obb {
        crate::geom::Obb {
            x: self.x,
            y: self.y,
            theta: self.theta,
            half_length: EGO_HALF_LENGTH,
            half_width: EGO_HALF_WIDTH,
        }
    }
}

/// Control input. Braking zeroes steering and throttle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub steer: f64,
    pub throttle: f64,
    pub brake: bool,
}

impl Action {
    pub fn new(steer: f64, throttle: f64, brake: bool) -> Self {
        if brake {
            Self::brake()
        } else {
            Self {
                steer: steer.clamp(-1.0, 1.0),
                throttle: throttle.clamp(0.0, 1.0),
                brake: false,
            }
        }
    }

    pub fn brake() -> Self {
        Self {
            steer: 0.0,
            throttle: 0.0,
            brake: true,
        }
    }

    pub fn is_valid(&self) -> bool {
        (-1.0..=1.0).contains(&self.steer)
            && (0.0..=1.0).contains(&self.throttle)
            && (!self.brake || (self.steer == 0.0 && self.throttle == 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Command {
    TurnLeft,
    TurnRight,
    GoStraight,
    FollowLane,
    ChangeLeft,
    ChangeRight,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::TurnLeft,
        Command::TurnRight,
        Command::GoStraight,
        Command::FollowLane,
        Command::ChangeLeft,
        Command::ChangeRight,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::TurnLeft => "turn-left",
            Command::TurnRight => "turn-right",
            Command::GoStraight => "go-straight",
            Command::FollowLane => "follow-lane",
            Command::ChangeLeft => "change-left",
            Command::ChangeRight => "change-right",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// NPC vehicle. `lane`/`s` locate it on the lane graph; the pose is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpcState {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub half_length: f64,
    pub half_width: f64,
    pub lane: usize,
    pub s: f64,
    pub desired_speed: f64,
}

impl NpcState {
    pub fn footprint(&self) -> crate::geom::Obb {
        crate::geom::Obb {
            x: self.x,
            y: self.y,
            theta: self.theta,
            half_length: self.half_length,
            half_width: self.half_width,
        }
    }

    pub fn disc_radius(&self) -> f64 {
        self.half_length.hypot(self.half_width)
    }
}

/// Everything in the world except the ego vehicle, at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub tick: u64,
    pub npcs: Vec<NpcState>,
    pub lights: Vec<LightPhase>,
    pub map_id: String,
}

impl WorldSnapshot {
    pub fn time(&self) -> f64 {
        self.tick as f64 * TICK_DT
    }

    pub fn light(&self, id: usize) -> LightPhase {
        self.lights.get(id).copied().unwrap_or(LightPhase::Green)
    }
}

/// One stored control decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub snapshot: WorldSnapshot,
    pub ego: EgoState,
    pub action: Action,
    pub observation: Observation,
}

/// A recorded driving log, one record per control decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub map_id: String,
    pub tick_rate_hz: u32,
    pub control_period: u32,
    pub records: Vec<Record>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records are equally spaced and aligned to the control period.
    pub fn ticks_consistent(&self) -> bool {
        self.records.windows(2).all(|w| {
            w[1].snapshot.tick > w[0].snapshot.tick
                && (w[1].snapshot.tick - w[0].snapshot.tick) % self.control_period as u64 == 0
                && w[1].snapshot.tick - w[0].snapshot.tick
                    == self.records[1].snapshot.tick - self.records[0].snapshot.tick
        })
    }
}
