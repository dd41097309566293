//! Bellman backups over the ego grid.
//!
//! The dynamics commute with translations, so for a fixed (orientation bin,
//! speed bin, action) every cell moves by the same displacement and lands
//! on the same next orientation and speed. Interpolating the next value grid
//! then reduces to blending at most four (orientation, speed) planes and
//! applying one separable 2D shift.

use rayon::prelude::*;

use crate::ego_model::EgoModel;
use crate::error::{Error, Result};
use crate::world::{Action, EgoState};

use super::grid::{ActionGrid, Axis, GridSpec, ValueGrid};

/// One decision step of the ego in the grid's local frame. Implementations
/// must commute with translations of (x, y).
pub trait EgoDynamics: Sync {
    fn step(&self, s: &EgoState, a: &Action) -> EgoState;
}

/// The fitted ego model stepped for one decision period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelDynamics {
    pub model: EgoModel,
    pub dt: f64,
}

impl EgoDynamics for ModelDynamics {
    fn step(&self, s: &EgoState, a: &Action) -> EgoState {
        self.model.step(s, a, self.dt)
    }
}

/// Reward of one stage of the planning window, in the grid's local frame.
pub trait StageReward: Sync {
    fn anchor(&self) -> &EgoState;

    /// Drive reward and whether the state lies in a zero-speed region.
    fn at(&self, s: &EgoState) -> (f64, bool);

    /// Drive reward at every cell center, in grid layout.
    fn fill(&self, spec: &GridSpec, out: &mut [f64]) {
        for k in 0..spec.n_theta {
            for l in 0..spec.n_v {
                for i in 0..spec.n_h {
                    for j in 0..spec.n_w {
                        out[spec.index(i, j, k, l)] = self.at(&spec.cell_state(i, j, k, l)).0;
                    }
                }
            }
        }
    }
}

/// Where one (orientation, speed, action) triple sends every cell.
#[derive(Debug, Clone, Copy)]
struct Transition {
    shift_x: f64,
    shift_y: f64,
    /// (plane orientation, plane speed, weight); `None` when the next
    /// orientation or speed falls outside the grid.
    planes: Option<[(usize, usize, f64); 4]>,
}

fn transition(spec: &GridSpec, dynamics: &dyn EgoDynamics, k: usize, l: usize, a: &Action) -> Transition {
    let s = EgoState {
        x: 0.0,
        y: 0.0,
        theta: spec.theta_axis().center(k),
        v: spec.v_axis().center(l),
    };
    let n = dynamics.step(&s, a);
    let th = spec.theta_axis();
    let va = spec.v_axis();
    let planes = match (th.weights(th.coord(n.theta)), va.weights(va.coord(n.v))) {
        (Some(wt), Some(wv)) => Some([
            (wt.0, wv.0, (1.0 - wt.2) * (1.0 - wv.2)),
            (wt.0, wv.1, (1.0 - wt.2) * wv.2),
            (wt.1, wv.0, wt.2 * (1.0 - wv.2)),
            (wt.1, wv.1, wt.2 * wv.2),
        ]),
        _ => None,
    };
    Transition {
        shift_x: n.x / spec.cell_size,
        shift_y: n.y / spec.cell_size,
        planes,
    }
}

/// Per-index interpolation table along one position axis for a uniform shift.
fn shift_table(axis: &Axis, shift: f64) -> Vec<Option<(usize, usize, f64)>> {
    (0..axis.n).map(|i| axis.weights(i as f64 + shift)).collect()
}

struct Scratch {
    blend: Vec<f64>,
    rows: Vec<f64>,
    best: Vec<f64>,
}

/// max over actions of the interpolated next value, for one (k, l) plane.
fn best_next_plane(spec: &GridSpec, next: &ValueGrid, transitions: &[Transition], scratch: &mut Scratch) {
    let (nh, nw) = (spec.n_h, spec.n_w);
    let xa = spec.x_axis();
    let ya = spec.y_axis();
    scratch.best.fill(f64::NEG_INFINITY);
    for tr in transitions {
        let Some(planes) = tr.planes else {
            scratch.best.iter_mut().for_each(|b| *b = b.max(0.0));
            continue;
        };
        // blend the (orientation, speed) planes
        let blend = &mut scratch.blend;
        blend.fill(0.0);
        for &(k, l, w) in &planes {
            if w == 0.0 {
                continue;
            }
            for (b, v) in blend.iter_mut().zip(next.plane(k, l)) {
                *b += w * v;
            }
        }
        // shift along x (rows)
        let rows = &mut scratch.rows;
        for (i, wx) in shift_table(&xa, tr.shift_x).into_iter().enumerate() {
            let out = &mut rows[i * nw..(i + 1) * nw];
            match wx {
                None => out.fill(0.0),
                Some((i0, i1, f)) => {
                    let r0 = &blend[i0 * nw..(i0 + 1) * nw];
                    let r1 = &blend[i1 * nw..(i1 + 1) * nw];
                    for ((o, a), b) in out.iter_mut().zip(r0).zip(r1) {
                        *o = (1.0 - f) * a + f * b;
                    }
                }
            }
        }
        // shift along y (columns) and reduce; the interior shares one
        // offset and weight, the borders go through the clamped table
        let cols = shift_table(&ya, tr.shift_y);
        let c = tr.shift_y.floor();
        let g = tr.shift_y - c;
        let c = c as isize;
        let lo = (-c).clamp(0, nw as isize) as usize;
        let hi = (nw as isize - 1 - c).clamp(lo as isize, nw as isize) as usize;
        for i in 0..nh {
            let row = &rows[i * nw..(i + 1) * nw];
            let best = &mut scratch.best[i * nw..(i + 1) * nw];
            for j in (0..lo).chain(hi..nw) {
                let v = match cols[j] {
                    None => 0.0,
                    Some((j0, j1, g)) => (1.0 - g) * row[j0] + g * row[j1],
                };
                if v > best[j] {
                    best[j] = v;
                }
            }
            if hi > lo {
                let a = &row[(lo as isize + c) as usize..(hi as isize + c) as usize];
                let b = &row[(lo as isize + c + 1) as usize..(hi as isize + c + 1) as usize];
                for ((o, x), y) in best[lo..hi].iter_mut().zip(a).zip(b) {
                    *o = o.max((1.0 - g) * x + g * y);
                }
            }
        }
    }
}

fn check_rewards(spec: &GridSpec, rewards: &[f64]) -> Result<()> {
    if rewards.len() != spec.cells() {
        return Err(Error::Config("reward grid does not match the grid spec".into()));
    }
    Ok(())
}

/// V_t(s) = R_t(s) + gamma * max_a V_{t+1}(step(s, a)) at every cell.
///
/// `rewards` is the drive reward in grid layout; it must not contain the
/// brake bonus, which never enters state values.
pub fn backup(
    next: &ValueGrid,
    rewards: &[f64],
    anchor: &EgoState,
    dynamics: &dyn EgoDynamics,
    actions: &ActionGrid,
    gamma: f64,
) -> Result<ValueGrid> {
    let spec = next.spec;
    check_rewards(&spec, rewards)?;
    if next.anchor != *anchor {
        return Err(Error::AnchorMismatch);
    }
    let plane = spec.plane();
    let mut out = ValueGrid {
        spec,
        anchor: *anchor,
        t: next.t.saturating_sub(1),
        values: rewards.to_vec(),
    };
    out.values.par_chunks_mut(plane).enumerate().for_each(|(kl, chunk)| {
        let (k, l) = (kl / spec.n_v, kl % spec.n_v);
        let transitions: Vec<Transition> = actions.actions().iter().map(|a| transition(&spec, dynamics, k, l, a)).collect();
        let mut scratch = Scratch {
            blend: vec![0.0; plane],
            rows: vec![0.0; plane],
            best: vec![0.0; plane],
        };
        best_next_plane(&spec, next, &transitions, &mut scratch);
        for (o, b) in chunk.iter_mut().zip(&scratch.best) {
            *o += gamma * b;
        }
    });
    Ok(out)
}

/// Reference backup: one point interpolation per cell and action.
pub fn backup_naive(
    next: &ValueGrid,
    rewards: &[f64],
    anchor: &EgoState,
    dynamics: &dyn EgoDynamics,
    actions: &ActionGrid,
    gamma: f64,
) -> Result<ValueGrid> {
    let spec = next.spec;
    check_rewards(&spec, rewards)?;
    if next.anchor != *anchor {
        return Err(Error::AnchorMismatch);
    }
    let mut out = ValueGrid {
        spec,
        anchor: *anchor,
        t: next.t.saturating_sub(1),
        values: rewards.to_vec(),
    };
    for k in 0..spec.n_theta {
        for l in 0..spec.n_v {
            for i in 0..spec.n_h {
                for j in 0..spec.n_w {
                    let s = spec.cell_state(i, j, k, l);
                    let best = actions
                        .actions()
                        .iter()
                        .map(|a| next.interpolate_local(&dynamics.step(&s, a)))
                        .fold(f64::NEG_INFINITY, f64::max);
                    out.values[spec.index(i, j, k, l)] += gamma * best;
                }
            }
        }
    }
    Ok(out)
}

/// Action values at one local-frame state: drive reward plus discounted
/// next value, with the brake bonus added to braking inside a zero-speed
/// region. `next = None` means the window ends after this stage.
pub fn q_values(
    state: &EgoState,
    next: Option<&ValueGrid>,
    reward: &dyn StageReward,
    dynamics: &dyn EgoDynamics,
    actions: &ActionGrid,
    gamma: f64,
    brake_bonus: f64,
) -> Vec<f64> {
    let (r, in_zone) = reward.at(state);
    actions
        .actions()
        .iter()
        .enumerate()
        .map(|(idx, a)| {
            let future = next.map_or(0.0, |v| v.interpolate_local(&dynamics.step(state, a)));
            let bonus = if in_zone && Some(idx) == actions.brake_index() {
                brake_bonus
            } else {
                0.0
            };
            r + gamma * future + bonus
        })
        .collect()
}

/// Lowest index among the maxima.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Table {
        anchor: EgoState,
        spec: GridSpec,
        values: Vec<f64>,
    }

    impl StageReward for Table {
        fn anchor(&self) -> &EgoState {
            &self.anchor
        }
        fn at(&self, s: &EgoState) -> (f64, bool) {
            let g = ValueGrid {
                spec: self.spec,
                anchor: self.anchor,
                t: 0,
                values: self.values.clone(),
            };
            (g.interpolate_local(s), false)
        }
    }

    fn model() -> ModelDynamics {
        ModelDynamics {
            model: EgoModel::new(crate::ego_model::BicycleParams::default(), 5),
            dt: 0.25,
        }
    }

    #[test]
    fn fast_backup_matches_naive_backup() {
        let spec = GridSpec {
            n_h: 20,
            n_w: 18,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let anchor = EgoState::new(1.0, 2.0, 0.3, 4.0);
        let next = ValueGrid {
            spec,
            anchor,
            t: 3,
            values: (0..spec.cells()).map(|_| rng.random_range(0.0..2.0)).collect(),
        };
        let rewards: Vec<f64> = (0..spec.cells()).map(|_| rng.random_range(0.0..1.0)).collect();
        let acts = ActionGrid::default();
        let fast = backup(&next, &rewards, &anchor, &model(), &acts, 0.9).unwrap();
        let slow = backup_naive(&next, &rewards, &anchor, &model(), &acts, 0.9).unwrap();
        let diff = fast.values.iter().zip(&slow.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "max diff {diff}");
        assert_eq!(fast.t, 2);
    }

    #[test]
    fn zero_inputs_give_zero_values() {
        let spec = GridSpec {
            n_h: 10,
            n_w: 10,
            ..Default::default()
        };
        let anchor = EgoState::default();
        let next = ValueGrid::zeros(spec, anchor, 1);
        let v = backup(&next, &vec![0.0; spec.cells()], &anchor, &model(), &ActionGrid::default(), 0.9).unwrap();
        assert!(v.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn anchor_mismatch_is_rejected() {
        let spec = GridSpec {
            n_h: 4,
            n_w: 4,
            ..Default::default()
        };
        let next = ValueGrid::zeros(spec, EgoState::default(), 1);
        let other = EgoState::new(1.0, 0.0, 0.0, 0.0);
        let r = backup(&next, &vec![0.0; spec.cells()], &other, &model(), &ActionGrid::default(), 0.9);
        assert!(matches!(r, Err(Error::AnchorMismatch)));
    }

    #[test]
    fn q_values_add_bonus_only_to_brake() {
        struct Zone(EgoState);
        impl StageReward for Zone {
            fn anchor(&self) -> &EgoState {
                &self.0
            }
            fn at(&self, _s: &EgoState) -> (f64, bool) {
                (0.01, true)
            }
        }
        let acts = ActionGrid::default();
        let q = q_values(&EgoState::default(), None, &Zone(EgoState::default()), &model(), &acts, 0.9, 5.0);
        assert_eq!(argmax(&q), 27);
        assert!((q[27] - 5.01).abs() < 1e-12);
        assert!(q[..27].iter().all(|&v| (v - 0.01).abs() < 1e-15));
        let t = Table {
            anchor: EgoState::default(),
            spec: GridSpec::default(),
            values: vec![0.0; GridSpec::default().cells()],
        };
        assert_eq!(argmax(&q_values(&EgoState::default(), None, &t, &model(), &acts, 0.9, 5.0)), 0);
    }
}
