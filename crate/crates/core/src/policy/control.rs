//! Turning head logits into continuous controls.

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentInput};
use crate::error::{Error, Result};
use crate::value::GridSpec;
use crate::world::render::render_observation;
use crate::world::{Action, Command};

use super::loss::{sigmoid, softmax};
use super::model::{PolicyModel, HEAD_WIDTH, N_STEER, N_THROTTLE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    /// Brake when the brake probability reaches this.
    pub brake_threshold: f64,
    /// Throttle is cut above this speed, m/s.
    pub speed_cap: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            brake_threshold: 0.5,
            speed_cap: 6.5,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.brake_threshold > 0.0 && self.brake_threshold < 1.0) || !(self.speed_cap > 0.0) {
            return Err(Error::Config("control needs 0 < brake threshold < 1 and a positive speed cap".into()));
        }
        Ok(())
    }
}

pub fn steer_values() -> [f64; N_STEER] {
    std::array::from_fn(|i| -1.0 + 2.0 * i as f64 / (N_STEER - 1) as f64)
}

pub fn throttle_values() -> [f64; N_THROTTLE] {
    std::array::from_fn(|i| i as f64 / (N_THROTTLE - 1) as f64)
}

/// Head logits linearly interpolated between the speed bins around `speed`
/// (clamped to the outermost bins).
pub fn head_at_speed(model: &PolicyModel, logits: &[f64], command: Command, speed: f64) -> [f64; HEAD_WIDTH] {
    let n = model.arch.speed_bins;
    let spec = GridSpec {
        n_v: n,
        ..Default::default()
    };
    let u = spec.v_axis().coord(speed).clamp(0.0, (n - 1) as f64);
    let i0 = (u.floor() as usize).min(n.saturating_sub(2));
    let i1 = (i0 + 1).min(n - 1);
    let w = u - i0 as f64;
    let a = model.head(logits, command, i0);
    let b = model.head(logits, command, i1);
    std::array::from_fn(|j| (1.0 - w) * a[j] + w * b[j])
}

/// Expected steering and throttle under the head's marginals, brake by threshold.
pub fn decode(head: &[f64], speed: f64, control: &ControlConfig) -> Action {
    if sigmoid(head[HEAD_WIDTH - 1]) >= control.brake_threshold {
        return Action::brake();
    }
    let ps = softmax(&head[..N_STEER]);
    let pt = softmax(&head[N_STEER..N_STEER + N_THROTTLE]);
    let steer: f64 = ps.iter().zip(steer_values()).map(|(p, s)| p * s).sum();
    let mut throttle: f64 = pt.iter().zip(throttle_values()).map(|(p, t)| p * t).sum();
    if speed > control.speed_cap {
        throttle = 0.0;
    }
    Action::new(steer.clamp(-1.0, 1.0), throttle.clamp(0.0, 1.0), false)
}

/// The distilled policy as a driving agent.
#[derive(Debug, Clone)]
pub struct PolicyAgent {
    pub model: PolicyModel,
    pub control: ControlConfig,
    pub label: String,
}

impl PolicyAgent {
    pub fn new(model: PolicyModel, control: ControlConfig) -> Self {
        Self {
            model,
            control,
            label: "policy".into(),
        }
    }

    pub fn act_on(&self, raster: &[f32], speed: f64, command: Command) -> Action {
        let logits = self.model.logits(raster, speed);
        decode(&head_at_speed(&self.model, &logits, command, speed), speed, &self.control)
    }
}

impl Agent for PolicyAgent {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn act(&self, input: &AgentInput<'_>) -> Result<Action> {
        let obs = render_observation(input.map, input.snapshot, &input.ego, input.command);
        Ok(self.act_on(&obs.raster.to_f32(), input.ego.v, input.command))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(steer: [f64; N_STEER], throttle: [f64; N_THROTTLE], brake: f64) -> Vec<f64> {
        steer.iter().chain(&throttle).copied().chain([brake]).collect()
    }

    #[test]
    fn one_hot_steering_decodes_to_its_value() {
        let mut s = [-1e3; N_STEER];
        s[3] = 0.0;
        let a = decode(&head(s, [0.0; 3], -10.0), 2.0, &ControlConfig::default());
        assert!((a.steer + 0.25).abs() < 1e-12);
        assert!(!a.brake);
    }

    #[test]
    fn uniform_steering_decodes_to_zero() {
        let a = decode(&head([0.7; N_STEER], [0.0; 3], -10.0), 2.0, &ControlConfig::default());
        assert!(a.steer.abs() < 1e-15);
        assert!((a.throttle - 0.5).abs() < 1e-12);
    }

    #[test]
    fn throttle_is_cut_above_the_cap() {
        let a = decode(&head([0.0; N_STEER], [-5.0, -5.0, 9.0], -10.0), 7.0, &ControlConfig::default());
        assert_eq!(a.throttle, 0.0);
    }

    #[test]
    fn brake_threshold() {
        let c = ControlConfig::default();
        assert!(decode(&head([0.0; N_STEER], [0.0; 3], 0.01), 1.0, &c).brake);
        assert!(!decode(&head([0.0; N_STEER], [0.0; 3], -0.01), 1.0, &c).brake);
    }
}
