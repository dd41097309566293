//! Ground-truth ego dynamics used by the simulator. The learned forward model
//! never sees these constants; it has to recover an equivalent from logs.

use crate::geom::normalize_angle;

use super::{Action, EgoState};

const FRONT_BASE: f64 = 1.3;
const REAR_BASE: f64 = 1.6;
const MAX_WHEEL_ANGLE: f64 = 0.6;
const THROTTLE_GAIN: f64 = 2.8;
const IDLE_ACCEL: f64 = 0.15;
const LINEAR_DRAG: f64 = 0.12;
const QUADRATIC_DRAG: f64 = 0.006;
const BRAKE_DECEL: f64 = 7.5;

/// Wheel angle produced by a steering command; mildly nonlinear.
pub fn true_wheel_angle(steer: f64) -> f64 {
    let s = steer.clamp(-1.0, 1.0);
    MAX_WHEEL_ANGLE * (0.9 * s + 0.1 * s * s * s)
}

/// Inverse of [`true_wheel_angle`] by bisection; saturates at full lock.
pub fn steer_for_wheel_angle(phi: f64) -> f64 {
    if phi >= true_wheel_angle(1.0) {
        return 1.0;
    }
    if phi <= true_wheel_angle(-1.0) {
        return -1.0;
    }
    let (mut lo, mut hi) = (-1.0, 1.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if true_wheel_angle(mid) < phi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn true_wheelbase() -> f64 {
    FRONT_BASE + REAR_BASE
}

pub fn true_brake_decel() -> f64 {
    BRAKE_DECEL
}

/// One explicit Euler step of the hidden bicycle dynamics.
pub fn step_ego_ground_truth(ego: &EgoState, action: &Action, dt: f64) -> EgoState {
    debug_assert!(dt > 0.0);
    let (phi, accel) = if action.brake {
        (0.0, -BRAKE_DECEL)
    } else {
        let v = ego.v;
        (
            true_wheel_angle(action.steer),
            THROTTLE_GAIN * action.throttle.clamp(0.0, 1.0) + IDLE_ACCEL - LINEAR_DRAG * v - QUADRATIC_DRAG * v * v,
        )
    };
    let beta = (REAR_BASE / (FRONT_BASE + REAR_BASE) * phi.tan()).atan();
    let heading = ego.theta + beta;
    EgoState {
        x: ego.x + ego.v * heading.cos() * dt,
        y: ego.y + ego.v * heading.sin() * dt,
        theta: normalize_angle(ego.theta + ego.v / REAR_BASE * beta.sin() * dt),
        v: (ego.v + accel * dt).max(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn braking_at_rest_does_not_move() {
        let e = EgoState::new(3.0, 4.0, 0.3, 0.0);
        let n = step_ego_ground_truth(&e, &Action::brake(), 0.05);
        assert_eq!((n.x, n.y, n.theta, n.v), (3.0, 4.0, 0.3, 0.0));
    }

    #[test]
    fn straight_throttle_advances_along_x() {
        let e = EgoState::new(0.0, 0.0, 0.0, 2.0);
        let n = step_ego_ground_truth(&e, &Action::new(0.0, 0.7, false), 0.05);
        assert_eq!(n.y, 0.0);
        assert!(n.x > 0.0);
        assert_eq!(n.theta, 0.0);
    }

    #[test]
    fn matches_hand_applied_kinematics() {
        let e = EgoState::new(1.0, -2.0, 0.4, 3.0);
        let a = Action::new(0.5, 0.6, false);
        let n = step_ego_ground_truth(&e, &a, 0.05);
        // independent scalar evaluation
        let phi = 0.6 * (0.45 + 0.1 * 0.125);
        let beta = (1.6_f64 / 2.9 * f64::tan(phi)).atan();
        let ex = 1.0 + 3.0 * (0.4 + beta).cos() * 0.05;
        let ey = -2.0 + 3.0 * (0.4 + beta).sin() * 0.05;
        let et = 0.4 + 3.0 / 1.6 * beta.sin() * 0.05;
        let ev = 3.0 + (2.8 * 0.6 + 0.15 - 0.12 * 3.0 - 0.006 * 9.0) * 0.05;
        assert!((n.x - ex).abs() < 1e-12);
        assert!((n.y - ey).abs() < 1e-12);
        assert!((n.theta - et).abs() < 1e-12);
        assert!((n.v - ev).abs() < 1e-12);
    }

    #[test]
    fn steer_inverse() {
        for s in [-1.0, -0.3, 0.0, 0.42, 0.99] {
            assert!((steer_for_wheel_angle(true_wheel_angle(s)) - s).abs() < 1e-9);
        }
    }
}
