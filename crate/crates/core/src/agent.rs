//! Common interface for anything that drives the ego vehicle.

use crate::world::{Action, Command, EgoState, LaneMap, WorldSnapshot};

/// What a driving agent gets to see at each decision.
#[derive(Debug, Clone, Copy)]
pub struct AgentInput<'a> {
    pub map: &'a LaneMap,
    /// Seed of the running world; privileged agents use it to forecast NPCs.
    pub world_seed: u64,
    pub snapshot: &'a WorldSnapshot,
    pub ego: EgoState,
    pub command: Command,
}

pub trait Agent: Send + Sync {
    fn name(&self) -> String;
    fn act(&self, input: &AgentInput<'_>) -> crate::Result<Action>;
}

/// Always brakes. Useful as a lower bound and in tests.
#[derive(Debug, Clone, Copy, Default)]
pub struct BrakeAgent;

impl Agent for BrakeAgent {
    fn name(&self) -> String {
        "brake".into()
    }

    fn act(&self, _input: &AgentInput<'_>) -> crate::Result<Action> {
        Ok(Action::brake())
    }
}
