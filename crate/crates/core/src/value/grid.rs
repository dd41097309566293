//! Ego-centric state grid, the discrete action set and tabular value grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{normalize_angle, Frame};
use crate::world::{Action, EgoState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    /// Forward bins.
    pub n_h: usize,
    /// Lateral bins.
    pub n_w: usize,
    /// Edge of a square position bin, meters.
    pub cell_size: f64,
    pub n_theta: usize,
    /// Orientation span relative to the anchor heading, degrees.
    pub theta_span_deg: f64,
    pub n_v: usize,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_h: 96,
            n_w: 96,
            cell_size: 1.0 / 3.0,
            n_theta: 5,
            theta_span_deg: 190.0,
            n_v: 4,
            v_min: 0.0,
            v_max: 8.0,
        }
    }
}

/// Regular bin centers along one dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub n: usize,
    /// Center of bin 0.
    pub origin: f64,
    pub step: f64,
}

impl Axis {
    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.step
    }

    /// Continuous bin coordinate; bin i is centered at i.
    #[inline]
    pub fn coord(&self, x: f64) -> f64 {
        (x - self.origin) / self.step
    }

    /// Linear interpolation weights at coordinate `u`: `(i0, i1, w1)`.
    /// `None` when `u` lies outside the span covered by the bins.
    #[inline]
    pub fn weights(&self, u: f64) -> Option<(usize, usize, f64)> {
        let hi = self.n as f64 - 0.5;
        if !(u >= -0.5 && u <= hi) {
            return None;
        }
        if self.n == 1 {
            return Some((0, 0, 0.0));
        }
        let uc = u.clamp(0.0, (self.n - 1) as f64);
        let i0 = (uc.floor() as usize).min(self.n - 2);
        Some((i0, i0 + 1, uc - i0 as f64))
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_h >= 1
            && self.n_w >= 1
            && self.n_theta >= 1
            && self.n_v >= 1
            && self.cell_size > 0.0
            && self.theta_span_deg > 0.0
            && self.theta_span_deg < 360.0
            && self.v_max > self.v_min;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid grid: sizes and spans must be positive".into()))
        }
    }

    pub fn cells(&self) -> usize {
        self.n_h * self.n_w * self.n_theta * self.n_v
    }

    pub fn plane(&self) -> usize {
        self.n_h * self.n_w
    }

    /// Forward axis; the anchor sits on the center of bin `n_h / 2`.
    pub fn x_axis(&self) -> Axis {
        Axis {
            n: self.n_h,
            origin: -((self.n_h / 2) as f64) * self.cell_size,
            step: self.cell_size,
        }
    }

    /// Lateral axis, left positive; the anchor sits on bin `n_w / 2`.
    pub fn y_axis(&self) -> Axis {
        Axis {
            n: self.n_w,
            origin: -((self.n_w / 2) as f64) * self.cell_size,
            step: self.cell_size,
        }
    }

    /// Relative heading axis in radians, symmetric about 0.
    pub fn theta_axis(&self) -> Axis {
        let step = self.theta_span_deg.to_radians() / self.n_theta as f64;
        Axis {
            n: self.n_theta,
            origin: -((self.n_theta - 1) as f64) / 2.0 * step,
            step,
        }
    }

    /// Speed axis with the end bins centered on `v_min` and `v_max`, so a
    /// stopped ego is a grid state.
    pub fn v_axis(&self) -> Axis {
        if self.n_v == 1 {
            return Axis {
                n: 1,
                origin: self.v_min,
                step: self.v_max - self.v_min,
            };
        }
        Axis {
            n: self.n_v,
            origin: self.v_min,
            step: (self.v_max - self.v_min) / (self.n_v - 1) as f64,
        }
    }

    /// Flat index of cell (i, j, k, l); planes of constant (k, l) are contiguous.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((k * self.n_v + l) * self.n_h + i) * self.n_w + j
    }

    /// Local-frame state at a cell center.
    pub fn cell_state(&self, i: usize, j: usize, k: usize, l: usize) -> EgoState {
        EgoState {
            x: self.x_axis().center(i),
            y: self.y_axis().center(j),
            theta: self.theta_axis().center(k),
            v: self.v_axis().center(l),
        }
    }

    /// Bin holding the anchor pose itself (heading 0, given speed bin).
    pub fn anchor_cell(&self) -> (usize, usize) {
        (self.n_h / 2, self.n_w / 2)
    }
}

/// Discrete actions: every (steer, throttle) pair plus one brake action.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    actions: Vec<Action>,
    brake: Option<usize>,
}

impl ActionGrid {
    /// `m_s` steering values uniform over [-1, 1] and `m_t` throttle values
    /// uniform over [0, 1], steering-major, followed by brake.
    pub fn standard(m_s: usize, m_t: usize) -> Result<Self> {
        if m_s < 2 || m_t < 2 {
            return Err(Error::Config("action grid needs at least 2 steering and 2 throttle values".into()));
        }
        let mut actions = Vec::with_capacity(m_s * m_t + 1);
        for si in 0..m_s {
            let s = -1.0 + 2.0 * si as f64 / (m_s - 1) as f64;
            for ti in 0..m_t {
                let t = ti as f64 / (m_t - 1) as f64;
                actions.push(Action::new(s, t, false));
            }
        }
        actions.push(Action::brake());
        Ok(Self {
            brake: Some(actions.len() - 1),
            actions,
        })
    }

    pub fn custom(actions: Vec<Action>) -> Result<Self> {
        if actions.is_empty() || actions.iter().any(|a| !a.is_valid()) {
            return Err(Error::Config("custom action grid must be non-empty and valid".into()));
        }
        let brake = actions.iter().position(|a| a.brake);
        Ok(Self { actions, brake })
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn brake_index(&self) -> Option<usize> {
        self.brake
    }
}

impl Default for ActionGrid {
    fn default() -> Self {
        Self::standard(9, 3).expect("standard grid")
    }
}

/// Tabular values over the ego-centric grid of one planning window.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub spec: GridSpec,
    /// World pose the grid is centered on.
    pub anchor: EgoState,
    /// Decision index this grid belongs to.
    pub t: usize,
    pub values: Vec<f64>,
}

impl ValueGrid {
    pub fn zeros(spec: GridSpec, anchor: EgoState, t: usize) -> Self {
        Self {
            values: vec![0.0; spec.cells()],
            spec,
            anchor,
            t,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.values[self.spec.index(i, j, k, l)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        let idx = self.spec.index(i, j, k, l);
        self.values[idx] = v;
    }

    /// Contiguous (i, j) plane for orientation bin k and speed bin l.
    pub fn plane(&self, k: usize, l: usize) -> &[f64] {
        let n = self.spec.plane();
        let off = (k * self.spec.n_v + l) * n;
        &self.values[off..off + n]
    }

    /// Multilinear interpolation at a state in the anchor frame; zero
    /// outside the grid. Headings do not wrap.
    pub fn interpolate_local(&self, s: &EgoState) -> f64 {
        let sp = &self.spec;
        let (Some(wx), Some(wy), Some(wt), Some(wv)) = (
            sp.x_axis().weights(sp.x_axis().coord(s.x)),
            sp.y_axis().weights(sp.y_axis().coord(s.y)),
            sp.theta_axis().weights(sp.theta_axis().coord(s.theta)),
            sp.v_axis().weights(sp.v_axis().coord(s.v)),
        ) else {
            return 0.0;
        };
        let mut acc = 0.0;
        for (k, fk) in [(wt.0, 1.0 - wt.2), (wt.1, wt.2)] {
            for (l, fl) in [(wv.0, 1.0 - wv.2), (wv.1, wv.2)] {
                let plane = self.plane(k, l);
                let mut p = 0.0;
                for (i, fi) in [(wx.0, 1.0 - wx.2), (wx.1, wx.2)] {
                    let row = &plane[i * sp.n_w..(i + 1) * sp.n_w];
                    p += fi * ((1.0 - wy.2) * row[wy.0] + wy.2 * row[wy.1]);
                }
                acc += fk * fl * p;
            }
        }
        acc
    }

    /// Interpolation at a world-frame state.
    pub fn interpolate(&self, ego: &EgoState) -> f64 {
        self.interpolate_local(&to_local_state(&self.anchor, ego))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Expresses a world-frame state in the frame of `anchor`.
pub fn to_local_state(anchor: &EgoState, ego: &EgoState) -> EgoState {
    let l = Frame::new(anchor.x, anchor.y, anchor.theta).to_local(ego.x, ego.y);
    EgoState {
        x: l[0],
        y: l[1],
        theta: normalize_angle(ego.theta - anchor.theta),
        v: ego.v,
    }
}

/// Inverse of [`to_local_state`].
pub fn to_world_state(anchor: &EgoState, local: &EgoState) -> EgoState {
    let w = Frame::new(anchor.x, anchor.y, anchor.theta).to_world(local.x, local.y);
    EgoState {
        x: w[0],
        y: w[1],
        theta: normalize_angle(local.theta + anchor.theta),
        v: local.v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_bins_match_the_layout() {
        let s = GridSpec::default();
        assert_eq!(s.cells(), 184_320);
        let th = s.theta_axis();
        let centers: Vec<f64> = (0..5).map(|k| th.center(k).to_degrees()).collect();
        for (c, e) in centers.iter().zip([-76.0, -38.0, 0.0, 38.0, 76.0]) {
            assert!((c - e).abs() < 1e-9);
        }
        assert_eq!(th.center(2), 0.0);
        let v = s.v_axis();
        assert_eq!((0..4).map(|l| v.center(l)).collect::<Vec<_>>(), vec![0.0, 8.0 / 3.0, 16.0 / 3.0, 8.0]);
        assert_eq!(s.x_axis().center(48), 0.0);
        assert_eq!(s.y_axis().center(48), 0.0);
        assert!((s.x_axis().center(0) + 16.0).abs() < 1e-12);
    }

    #[test]
    fn axis_weights_and_support() {
        let a = Axis {
            n: 4,
            origin: 1.0,
            step: 2.0,
        };
        assert_eq!(a.weights(a.coord(0.0)), Some((0, 1, 0.0)));
        assert_eq!(a.weights(a.coord(8.0)), Some((2, 3, 1.0)));
        assert_eq!(a.weights(a.coord(-0.01)), None);
        assert_eq!(a.weights(a.coord(8.01)), None);
        assert_eq!(a.weights(a.coord(4.0)), Some((1, 2, 0.5)));
        assert_eq!(a.weights(f64::NAN), None);
    }

    #[test]
    fn action_grid_layout() {
        let g = ActionGrid::default();
        assert_eq!(g.len(), 28);
        assert_eq!(g.brake_index(), Some(27));
        let steers: Vec<f64> = g.actions()[..27].iter().step_by(3).map(|a| a.steer).collect();
        assert_eq!(steers, vec![-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.actions()[13], Action::new(0.0, 0.5, false));
    }

    #[test]
    fn local_world_round_trip() {
        let anchor = EgoState::new(10.0, -4.0, 2.0, 3.0);
        let e = EgoState::new(12.0, -1.0, -2.5, 4.0);
        let back = to_world_state(&anchor, &to_local_state(&anchor, &e));
        assert!((back.x - e.x).abs() < 1e-12 && (back.y - e.y).abs() < 1e-12);
        assert!((back.theta - e.theta).abs() < 1e-12);
    }
}
