//! Learnable kinematic bicycle model of the ego vehicle.

mod fit;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::normalize_angle;
use crate::world::{Action, EgoState};

pub use fit::{evaluate, fit, loss_and_gradient, FitConfig, FitReport, Window};

/// Steering command values at which the wheel-angle map has knots.
pub const STEER_KNOTS: [f64; 9] = [-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0];
/// Number of entries in [`BicycleParams::to_vec`].
pub const PARAM_COUNT: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicycleParams {
    pub front_base: f64,
    pub rear_base: f64,
    /// Wheel angle (rad) at each of [`STEER_KNOTS`]; linear in between.
    pub steer_map: [f64; 9],
    pub throttle_gain: f64,
    pub idle_accel: f64,
    pub drag: f64,
    pub brake_decel: f64,
}

impl Default for BicycleParams {
    /// A generic starting guess, not the simulator's vehicle.
    fn default() -> Self {
        Self {
            front_base: 1.5,
            rear_base: 1.5,
            steer_map: STEER_KNOTS.map(|s| 0.5 * s),
            throttle_gain: 2.0,
            idle_accel: 0.0,
            drag: 0.1,
            brake_decel: 6.0,
        }
    }
}

impl BicycleParams {
    pub fn validate(&self) -> Result<()> {
        let finite = self.to_vec().iter().all(|v| v.is_finite());
        if !finite || self.front_base <= 0.0 || self.rear_base <= 0.0 || self.brake_decel <= 0.0 {
            return Err(Error::Config("bicycle parameters out of range".into()));
        }
        Ok(())
    }

    pub fn is_odd_symmetric(&self) -> bool {
        (0..9).all(|k| (self.steer_map[k] + self.steer_map[8 - k]).abs() < 1e-12)
    }

    /// Projects the steering map onto odd-symmetric maps.
    pub fn symmetrize(&mut self) {
        let m = self.steer_map;
        for k in 0..9 {
            self.steer_map[k] = 0.5 * (m[k] - m[8 - k]);
        }
    }

    /// Wheel angle for a steering command, with the knot index and the
    /// interpolation weight of the upper knot.
    #[inline]
    pub fn wheel_angle(&self, steer: f64) -> (f64, usize, f64) {
        let u = (steer.clamp(-1.0, 1.0) + 1.0) * 4.0;
        let k = (u.floor() as usize).min(7);
        let w = u - k as f64;
        ((1.0 - w) * self.steer_map[k] + w * self.steer_map[k + 1], k, w)
    }

    /// `[f_b, r_b, steer_map.., throttle_gain, idle_accel, drag, brake_decel]`
    pub fn to_vec(&self) -> [f64; PARAM_COUNT] {
        let mut v = [0.0; PARAM_COUNT];
        v[0] = self.front_base;
        v[1] = self.rear_base;
        v[2..11].copy_from_slice(&self.steer_map);
        v[11] = self.throttle_gain;
        v[12] = self.idle_accel;
        v[13] = self.drag;
        v[14] = self.brake_decel;
        v
    }

    pub fn from_vec(v: &[f64; PARAM_COUNT]) -> Self {
        let mut steer_map = [0.0; 9];
        steer_map.copy_from_slice(&v[2..11]);
        Self {
            front_base: v[0],
            rear_base: v[1],
            steer_map,
            throttle_gain: v[11],
            idle_accel: v[12],
            drag: v[13],
            brake_decel: v[14],
        }
    }
}

/// One explicit Euler step of length `dt`.
pub fn predict(params: &BicycleParams, ego: &EgoState, action: &Action, dt: f64) -> EgoState {
    let (phi, accel) = if action.brake {
        (0.0, -params.brake_decel)
    } else {
        (
            params.wheel_angle(action.steer).0,
            params.throttle_gain * action.throttle + params.idle_accel - params.drag * ego.v,
        )
    };
    let rho = params.rear_base / (params.front_base + params.rear_base);
    let beta = (rho * phi.tan()).atan();
    let heading = ego.theta + beta;
    EgoState {
        x: ego.x + ego.v * heading.cos() * dt,
        y: ego.y + ego.v * heading.sin() * dt,
        theta: normalize_angle(ego.theta + ego.v / params.rear_base * beta.sin() * dt),
        v: (ego.v + accel * dt).max(0.0),
    }
}

/// Iterated [`predict`]; element k is the state after actions[..=k].
pub fn rollout(params: &BicycleParams, ego: &EgoState, actions: &[Action], dt: f64) -> Vec<EgoState> {
    let mut out = Vec::with_capacity(actions.len());
    let mut s = *ego;
    for a in actions {
        s = predict(params, &s, a, dt);
        out.push(s);
    }
    out
}

/// Bicycle parameters plus the number of Euler substeps used per decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoModel {
    pub substeps: u32,
    pub params: BicycleParams,
}

impl EgoModel {
    pub fn new(params: BicycleParams, substeps: u32) -> Self {
        Self {
            substeps: substeps.max(1),
            params,
        }
    }

    /// Advances one decision of length `dt`.
    pub fn step(&self, ego: &EgoState, action: &Action, dt: f64) -> EgoState {
        let h = dt / self.substeps as f64;
        let mut s = *ego;
        for _ in 0..self.substeps {
            s = predict(&self.params, &s, action, h);
        }
        s
    }

    pub fn rollout(&self, ego: &EgoState, actions: &[Action], dt: f64) -> Vec<EgoState> {
        let mut s = *ego;
        actions
            .iter()
            .map(|a| {
                s = self.step(&s, a, dt);
                s
            })
            .collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("ego model serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: EgoModel = toml::from_str(text).map_err(|e| Error::format("ego parameters", e.to_string()))?;
        m.params.validate()?;
        if m.substeps == 0 {
            return Err(Error::format("ego parameters", "substeps must be positive"));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn symmetric(fb: f64, rb: f64, phi_scale: f64) -> BicycleParams {
        BicycleParams {
            front_base: fb,
            rear_base: rb,
            steer_map: STEER_KNOTS.map(|s| phi_scale * s),
            ..Default::default()
        }
    }

    #[test]
    fn at_rest_pose_is_unchanged() {
        let p = BicycleParams::default();
        let e = EgoState::new(1.0, 2.0, 0.5, 0.0);
        for steer in [-1.0, 0.3, 1.0] {
            let n = predict(&p, &e, &Action::new(steer, 0.0, false), 0.25);
            assert_eq!((n.x, n.y, n.theta), (1.0, 2.0, 0.5));
        }
    }

    #[test]
    fn zero_steer_goes_straight() {
        let p = BicycleParams::default();
        let e = EgoState::new(0.0, 0.0, 0.7, 4.0);
        let n = predict(&p, &e, &Action::new(0.0, 0.5, false), 0.25);
        assert_eq!(n.theta, 0.7);
        assert!((n.x - 4.0 * 0.25 * 0.7f64.cos()).abs() < 1e-15);
        assert!((n.y - 4.0 * 0.25 * 0.7f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn hand_oracle() {
        // f_b = r_b = 1.5 and a steer command mapping to phi = 0.2
        let p = symmetric(1.5, 1.5, 0.4);
        let e = EgoState::new(0.0, 0.0, 0.0, 4.0);
        let a = Action::new(0.5, 0.0, false);
        let n = predict(&p, &e, &a, 0.25);
        let beta = (0.5f64 * 0.2f64.tan()).atan();
        let ex = 4.0 * beta.cos() * 0.25;
        let ey = 4.0 * beta.sin() * 0.25;
        let et = 4.0 / 1.5 * beta.sin() * 0.25;
        let ev = 4.0 + (0.0 - 0.1 * 4.0) * 0.25;
        assert!((n.x - ex).abs() < 1e-9);
        assert!((n.y - ey).abs() < 1e-9);
        assert!((n.theta - et).abs() < 1e-9);
        assert!((n.v - ev).abs() < 1e-9);
    }

    #[test]
    fn rollout_composes() {
        let p = symmetric(1.2, 1.7, 0.55);
        let e = EgoState::new(0.0, 1.0, -0.3, 2.0);
        let acts: Vec<Action> = (0..10)
            .map(|k| Action::new((k as f64 * 0.37).sin(), 0.1 * k as f64 % 1.0, k == 6))
            .collect();
        let full = rollout(&p, &e, &acts, 0.25);
        assert_eq!(full.len(), 10);
        let prefix = rollout(&p, &e, &acts[..9], 0.25);
        assert_eq!(&full[..9], &prefix[..]);
        assert_eq!(full[9], predict(&p, &prefix[8], &acts[9], 0.25));
        // naive loop oracle
        let mut s = e;
        for (k, a) in acts.iter().enumerate() {
            s = predict(&p, &s, a, 0.25);
            assert_eq!(s, full[k]);
        }
    }

    #[test]
    fn idle_rollout_from_rest_stays_put() {
        let mut p = BicycleParams::default();
        p.idle_accel = 0.0;
        let e = EgoState::new(3.0, 3.0, 1.0, 0.0);
        let acts = vec![Action::new(0.4, 0.0, false); 10];
        assert!(rollout(&p, &e, &acts, 0.25).iter().all(|s| *s == e));
    }

    #[test]
    fn toml_round_trip() {
        let m = EgoModel::new(symmetric(1.1, 1.9, 0.5), 5);
        let back = EgoModel::from_toml(&m.to_toml()).unwrap();
        assert_eq!(m, back);
        assert!(EgoModel::from_toml("substeps = 1").is_err());
    }

    #[test]
    fn substep_model_with_one_substep_is_predict() {
        let p = symmetric(1.3, 1.6, 0.5);
        let m = EgoModel::new(p, 1);
        let e = EgoState::new(0.0, 0.0, 0.2, 5.0);
        let a = Action::new(-0.4, 0.8, false);
        assert_eq!(m.step(&e, &a, 0.25), predict(&p, &e, &a, 0.25));
    }
}
