use std::sync::Arc;

use proptest::prelude::*;

use onrails::bench::{aggregate, Density, EpisodeResult, Failure, RouteKind};
use onrails::ego_model::{predict, BicycleParams};
use onrails::geom::{normalize_angle, Frame, Projection};
use onrails::policy::loss::softmax;
use onrails::policy::model::HEAD_WIDTH;
use onrails::policy::{decode, joint_distill_loss, ControlConfig, N_JOINT};
use onrails::reward::{drive_reward, reward, RewardConfig, RewardQuery, ZeroSpeedRegion};
use onrails::value::{backup, to_local_state, to_world_state, ActionGrid, GridSpec, ModelDynamics, ValueGrid};
use onrails::world::towns::town_a;
use onrails::world::{Action, Command, EgoState, World};
use onrails::ego_model::EgoModel;

fn small_spec() -> GridSpec {
    GridSpec {
        n_h: 12,
        n_w: 10,
        ..Default::default()
    }
}

fn zone_strategy() -> impl Strategy<Value = ZeroSpeedRegion> {
    prop_oneof![
        Just(ZeroSpeedRegion::None),
        Just(ZeroSpeedRegion::RedLight),
        Just(ZeroSpeedRegion::TrafficProximity),
    ]
}

fn result(success: bool, completion: f64, violations: usize, duration: f64) -> EpisodeResult {
    EpisodeResult {
        agent: "a".into(),
        route: "r".into(),
        map: "town-a".into(),
        kind: RouteKind::Straight,
        density: Density::Empty,
        seed: 0,
        success,
        completion,
        failure: if success { Failure::None } else { Failure::Timeout },
        red_light_violations: violations,
        duration,
        clock: duration,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reward_stays_in_bounds(
        x in -20.0..220.0f64,
        y in -20.0..220.0f64,
        theta in -3.2..3.2f64,
        v in 0.0..12.0f64,
        cmd in 0usize..6,
        brake in any::<bool>(),
        tick in 0u64..2000,
    ) {
        let town = town_a();
        let world = World::new(Arc::new(town.map.clone()), 3);
        let mut snapshot = world.spawn(6, &[]).snapshot;
        snapshot.tick = tick;
        snapshot.lights = town.map.light_phases_at(snapshot.time());
        let config = RewardConfig::default();
        let q = RewardQuery {
            ego: EgoState::new(x, y, theta, v),
            snapshot: &snapshot,
            action: if brake { Action::brake() } else { Action::new(0.0, 0.5, false) },
            command: Command::from_index(cmd).unwrap(),
        };
        let r = reward(&town.map, &q, &config);
        prop_assert!((0.0..=1.0).contains(&r.drive));
        prop_assert!(r.brake_bonus == 0.0 || r.brake_bonus == config.r_brake);
        if !brake {
            prop_assert_eq!(r.brake_bonus, 0.0);
        }
    }

    #[test]
    fn drive_reward_is_lipschitz_within_a_region(
        lat in -3.0..3.0f64,
        head in -1.5..1.5f64,
        v in 0.0..12.0f64,
        d in prop::array::uniform3(-0.05..0.05f64),
        zone in zone_strategy(),
    ) {
        let c = RewardConfig::default();
        let proj = |lateral: f64| Projection { segment: 0, s: 0.0, lateral, heading: 0.0 };
        let a = drive_reward(&proj(lat), head, v, zone, &c);
        let b = drive_reward(&proj(lat + d[0]), head + d[1], (v + d[2]).max(0.0), zone, &c);
        let lip = 1.0 / c.lateral_tolerance + 1.0 / c.heading_tolerance + 1.0 / c.speed_tolerance;
        let step = d[0].abs() + d[1].abs() + d[2].abs();
        prop_assert!((a - b).abs() <= lip * step + 1e-12);
    }

    #[test]
    fn predict_is_rigid_motion_equivariant(
        x in -50.0..50.0f64,
        y in -50.0..50.0f64,
        theta in -3.1..3.1f64,
        v in 0.0..10.0f64,
        steer in -1.0..1.0f64,
        throttle in 0.0..1.0f64,
        brake in any::<bool>(),
        tx in -30.0..30.0f64,
        ty in -30.0..30.0f64,
        rot in -3.1..3.1f64,
    ) {
        let p = BicycleParams::default();
        let a = Action::new(steer, throttle, brake);
        let frame = Frame::new(tx, ty, rot);
        let s = EgoState::new(x, y, theta, v);
        let w = frame.to_world(x, y);
        let moved = EgoState::new(w[0], w[1], normalize_angle(theta + rot), v);
        let n = predict(&p, &s, &a, 0.25);
        let nm = predict(&p, &moved, &a, 0.25);
        let expect = frame.to_world(n.x, n.y);
        prop_assert!((nm.x - expect[0]).abs() < 1e-9);
        prop_assert!((nm.y - expect[1]).abs() < 1e-9);
        prop_assert!(normalize_angle(nm.theta - n.theta - rot).abs() < 1e-9);
        prop_assert!((nm.v - n.v).abs() < 1e-12);
        prop_assert!(n.v >= 0.0);
    }

    #[test]
    fn interpolation_is_exact_for_separately_affine_functions(
        c in prop::collection::vec(-1.0..1.0f64, 16),
        u in prop::array::uniform4(0.0..1.0f64),
    ) {
        let spec = small_spec();
        let (xa, ya, ta, va) = (spec.x_axis(), spec.y_axis(), spec.theta_axis(), spec.v_axis());
        // product of per-axis affine factors in (x, y, theta, v)
        let f = |s: &EgoState| {
            (c[0] + c[1] * s.x) * (c[2] + c[3] * s.y) * (c[4] + c[5] * s.theta) * (c[6] + c[7] * s.v)
                + c[8] * s.x * s.y * s.theta * s.v
                + c[9] * s.x + c[10] * s.theta * s.v + c[11]
        };
        let mut g = ValueGrid::zeros(spec, EgoState::default(), 0);
        for i in 0..spec.n_h {
            for j in 0..spec.n_w {
                for k in 0..spec.n_theta {
                    for l in 0..spec.n_v {
                        g.set(i, j, k, l, f(&spec.cell_state(i, j, k, l)));
                    }
                }
            }
        }
        let lerp = |a: &onrails::value::Axis, t: f64| a.center(0) + t * (a.center(a.n - 1) - a.center(0));
        let s = EgoState {
            x: lerp(&xa, u[0]),
            y: lerp(&ya, u[1]),
            theta: lerp(&ta, u[2]),
            v: lerp(&va, u[3]),
        };
        prop_assert!((g.interpolate_local(&s) - f(&s)).abs() < 1e-9);
    }

    #[test]
    fn interpolation_is_zero_outside_the_grid(
        fill in 0.1..5.0f64,
        dx in 0.51..5.0f64,
        axis in 0usize..4,
    ) {
        let spec = small_spec();
        let mut g = ValueGrid::zeros(spec, EgoState::default(), 0);
        g.values.iter_mut().for_each(|v| *v = fill);
        let mut s = spec.cell_state(0, 0, 0, 0);
        let (step, lo) = match axis {
            0 => (spec.x_axis().step, &mut s.x),
            1 => (spec.y_axis().step, &mut s.y),
            2 => (spec.theta_axis().step, &mut s.theta),
            _ => (spec.v_axis().step, &mut s.v),
        };
        *lo -= dx * step;
        prop_assert_eq!(g.interpolate_local(&s), 0.0);
    }

    #[test]
    fn local_world_round_trip(
        a in prop::array::uniform4(-5.0..5.0f64),
        b in prop::array::uniform4(-5.0..5.0f64),
    ) {
        let anchor = EgoState::new(a[0] * 10.0, a[1] * 10.0, a[2] * 0.6, a[3].abs());
        let s = EgoState::new(b[0] * 10.0, b[1] * 10.0, b[2] * 0.6, b[3].abs());
        let back = to_world_state(&anchor, &to_local_state(&anchor, &s));
        prop_assert!((back.x - s.x).abs() < 1e-9 && (back.y - s.y).abs() < 1e-9);
        prop_assert!(normalize_angle(back.theta - s.theta).abs() < 1e-9);
    }

    #[test]
    fn decoded_controls_are_in_range(
        head in prop::collection::vec(-30.0..30.0f64, HEAD_WIDTH),
        speed in 0.0..15.0f64,
    ) {
        let a = decode(&head, speed, &ControlConfig::default());
        prop_assert!((-1.0..=1.0).contains(&a.steer));
        prop_assert!((0.0..=1.0).contains(&a.throttle));
        prop_assert!(a.is_valid());
    }

    #[test]
    fn distill_target_is_shift_invariant(
        q in prop::collection::vec(0.0..2.0f64, N_JOINT),
        logits in prop::collection::vec(-3.0..3.0f64, N_JOINT),
        shift in -10.0..10.0f64,
    ) {
        let shifted: Vec<f64> = q.iter().map(|v| v + shift).collect();
        let (_, g0) = joint_distill_loss(&logits, &q, 0.01).unwrap();
        let (_, g1) = joint_distill_loss(&logits, &shifted, 0.01).unwrap();
        for (a, b) in g0.iter().zip(&g1) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let p0 = softmax(&q.iter().map(|v| v / 0.01).collect::<Vec<_>>());
        let p1 = softmax(&shifted.iter().map(|v| v / 0.01).collect::<Vec<_>>());
        for (a, b) in p0.iter().zip(&p1) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn aggregate_over_a_split_is_the_weighted_union(
        eps in prop::collection::vec((any::<bool>(), 0.0..1.0f64, 0usize..3, 1.0..300.0f64), 2..20),
        cut in 1usize..19,
    ) {
        let results: Vec<EpisodeResult> = eps.iter().map(|&(s, c, v, d)| result(s, if s { 1.0 } else { c }, v, d)).collect();
        let cut = cut.min(results.len() - 1);
        let all = aggregate(&results);
        let a = aggregate(&results[..cut]);
        let b = aggregate(&results[cut..]);
        let n = results.len() as f64;
        let weighted = |x: f64, y: f64| (x * a.episodes as f64 + y * b.episodes as f64) / n;
        prop_assert!((all.success_rate - weighted(a.success_rate, b.success_rate)).abs() < 1e-9);
        prop_assert!((all.completion - weighted(a.completion, b.completion)).abs() < 1e-9);
        prop_assert_eq!(all.violations, a.violations + b.violations);
        prop_assert!((all.hours - a.hours - b.hours).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn raising_rewards_never_lowers_values(seed in any::<u64>(), eps in 0.0..0.5f64) {
        use rand::{Rng, SeedableRng};
        let spec = small_spec();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let anchor = EgoState::default();
        let next = ValueGrid {
            spec,
            anchor,
            t: 2,
            values: (0..spec.cells()).map(|_| rng.random_range(0.0..2.0)).collect(),
        };
        let rewards: Vec<f64> = (0..spec.cells()).map(|_| rng.random_range(0.0..1.0)).collect();
        let raised: Vec<f64> = rewards.iter().map(|r| r + eps * rng.random_range(0.0..1.0)).collect();
        let dynamics = ModelDynamics { model: EgoModel::new(BicycleParams::default(), 5), dt: 0.25 };
        let acts = ActionGrid::default();
        let v0 = backup(&next, &rewards, &anchor, &dynamics, &acts, 0.9).unwrap();
        let v1 = backup(&next, &raised, &anchor, &dynamics, &acts, 0.9).unwrap();
        let back = backup(&v0, &rewards, &anchor, &dynamics, &acts, 0.9).unwrap();
        let back_raised = backup(&v1, &raised, &anchor, &dynamics, &acts, 0.9).unwrap();
        prop_assert!(v0.values.iter().zip(&v1.values).all(|(a, b)| b >= a));
        prop_assert!(back.values.iter().zip(&back_raised.values).all(|(a, b)| b >= a));
    }
}
