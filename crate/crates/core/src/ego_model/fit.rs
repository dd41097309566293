//! Autoregressive L1 fitting of the bicycle model with hand-derived gradients.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{Action, EgoState, Trajectory};

use super::{predict, BicycleParams, EgoModel, PARAM_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub horizon: usize,
    pub lr: f64,
    /// Learning rate reached at the end of the cosine schedule.
    pub lr_final: f64,
    pub batch: usize,
    pub iterations: usize,
    pub clip_norm: f64,
    pub substeps: u32,
    pub odd_symmetric: bool,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            lr: 1e-2,
            lr_final: 1e-4,
            batch: 128,
            iterations: 4000,
            clip_norm: 10.0,
            substeps: 5,
            odd_symmetric: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Mean per-window objective over all training windows.
    pub final_loss: f64,
    /// Mean position error (m) after k+1 decisions, k = 0..horizon.
    pub position_error: Vec<f64>,
    pub iterations: usize,
    pub wall_time_s: f64,
}

/// A start state, `horizon` actions and the states recorded after each.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: EgoState,
    pub actions: Vec<Action>,
    pub targets: Vec<EgoState>,
}

impl Window {
    /// All windows of `horizon` consecutive decisions, plus the decision period.
    pub fn collect(dataset: &[Trajectory], horizon: usize) -> Result<(Vec<Window>, f64)> {
        if horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        let mut dt = None;
        let mut out = Vec::new();
        for t in dataset {
            if t.tick_rate_hz == 0 || t.control_period == 0 || !t.ticks_consistent() {
                return Err(Error::Misaligned("log ticks are not evenly spaced".into()));
            }
            if t.len() < 2 {
                continue;
            }
            let spacing = (t.records[1].snapshot.tick - t.records[0].snapshot.tick) as f64;
            let this_dt = spacing / t.tick_rate_hz as f64;
            if dt.is_some_and(|d: f64| (d - this_dt).abs() > 1e-12) {
                return Err(Error::Misaligned("logs use different decision periods".into()));
            }
            dt = Some(this_dt);
            for s in 0..t.len().saturating_sub(horizon) {
                let recs = &t.records[s..=s + horizon];
                out.push(Window {
                    start: recs[0].ego,
                    actions: recs[..horizon].iter().map(|r| r.action).collect(),
                    targets: recs[1..].iter().map(|r| r.ego).collect(),
                });
            }
        }
        match dt {
            Some(dt) if !out.is_empty() => Ok((out, dt)),
            _ => Err(Error::EmptyDataset(format!("no window of {horizon} consecutive decisions"))),
        }
    }
}

#[inline]
fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Pose loss of one predicted state against its target.
#[inline]
fn pose_loss(s: &EgoState, g: &EgoState) -> f64 {
    (s.x - g.x).abs() + (s.y - g.y).abs() + (s.theta.cos() - g.theta.cos()).abs() + (s.theta.sin() - g.theta.sin()).abs()
}

/// Vector-Jacobian product of one Euler step. Takes the adjoint of the
/// next state, accumulates parameter gradients and returns the adjoint of
/// the current state.
fn step_vjp(p: &BicycleParams, s: &EgoState, a: &Action, h: f64, lam: [f64; 4], grad: &mut [f64; PARAM_COUNT]) -> [f64; 4] {
    let (x_l, y_l, t_l, v_l) = (lam[0], lam[1], lam[2], lam[3]);
    let v = s.v;
    let (phi, k, w, accel) = if a.brake {
        (0.0, 0, 0.0, -p.brake_decel)
    } else {
        let (phi, k, w) = p.wheel_angle(a.steer);
        (phi, k, w, p.throttle_gain * a.throttle + p.idle_accel - p.drag * v)
    };
    let (f, r) = (p.front_base, p.rear_base);
    let sum = f + r;
    let rho = r / sum;
    let tphi = phi.tan();
    let u = rho * tphi;
    let beta = u.atan();
    let (sb, cb) = beta.sin_cos();
    let (sn, c) = (s.theta + beta).sin_cos();

    let g_beta = x_l * (-v * sn * h) + y_l * (v * c * h) + t_l * (v * cb * h / r);
    grad[1] += t_l * (-v * sb * h / (r * r));
    let g_u = g_beta / (1.0 + u * u);
    grad[0] += g_u * tphi * (-r / (sum * sum));
    grad[1] += g_u * tphi * (f / (sum * sum));
    if !a.brake {
        let g_phi = g_u * rho * (1.0 + tphi * tphi);
        grad[2 + k] += g_phi * (1.0 - w);
        grad[3 + k] += g_phi * w;
    }

    let mut pv = x_l * (c * h) + y_l * (sn * h) + t_l * (sb * h / r);
    let pt = x_l * (-v * sn * h) + y_l * (v * c * h) + t_l;
    if v + accel * h > 0.0 {
        if a.brake {
            pv += v_l;
            grad[14] += v_l * (-h);
        } else {
            pv += v_l * (1.0 - p.drag * h);
            grad[11] += v_l * a.throttle * h;
            grad[12] += v_l * h;
            grad[13] += v_l * (-v * h);
        }
    }
    [x_l, y_l, pt, pv]
}

/// Loss of one window; adds its gradient into `grad`.
fn window_loss_grad(model: &EgoModel, w: &Window, dt: f64, grad: &mut [f64; PARAM_COUNT]) -> f64 {
    let n = model.substeps as usize;
    let h = dt / n as f64;
    let p = &model.params;
    let mut states = Vec::with_capacity(w.actions.len() * n + 1);
    states.push(w.start);
    for a in &w.actions {
        for _ in 0..n {
            let next = predict(p, states.last().unwrap(), a, h);
            states.push(next);
        }
    }
    let mut loss = 0.0;
    let mut lam = [0.0; 4];
    for t in (0..w.actions.len()).rev() {
        let s = &states[(t + 1) * n];
        let g = &w.targets[t];
        loss += pose_loss(s, g);
        let (st, ct) = s.theta.sin_cos();
        lam[0] += sgn(s.x - g.x);
        lam[1] += sgn(s.y - g.y);
        lam[2] += sgn(ct - g.theta.cos()) * (-st) + sgn(st - g.theta.sin()) * ct;
        for k in (0..n).rev() {
            lam = step_vjp(p, &states[t * n + k], &w.actions[t], h, lam, grad);
        }
    }
    loss
}

/// Mean loss over `windows` and its gradient in [`BicycleParams::to_vec`] order.
pub fn loss_and_gradient(model: &EgoModel, windows: &[&Window], dt: f64) -> (f64, [f64; PARAM_COUNT]) {
    let mut grad = [0.0; PARAM_COUNT];
    let mut loss = 0.0;
    for w in windows {
        loss += window_loss_grad(model, w, dt, &mut grad);
    }
    let n = windows.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

/// Mean position error after each of the first `horizon` decisions.
pub fn evaluate(model: &EgoModel, windows: &[Window], dt: f64) -> Vec<f64> {
    let horizon = windows.iter().map(|w| w.actions.len()).min().unwrap_or(0);
    let mut err = vec![0.0; horizon];
    for w in windows {
        let pred = model.rollout(&w.start, &w.actions[..horizon], dt);
        for (k, (p, g)) in pred.iter().zip(&w.targets).enumerate() {
            err[k] += (p.x - g.x).hypot(p.y - g.y);
        }
    }
    let n = windows.len().max(1) as f64;
    err.iter_mut().for_each(|e| *e /= n);
    err
}

/// Fits bicycle parameters to the logged ego motion by minibatch SGD on the
/// T-step autoregressive L1 pose loss.
pub fn fit(dataset: &[Trajectory], init: &BicycleParams, config: &FitConfig) -> Result<(EgoModel, FitReport)> {
    let started = Instant::now();
    init.validate()?;
    if config.batch == 0 || config.lr < 0.0 || config.substeps == 0 {
        return Err(Error::Config("invalid fit configuration".into()));
    }
    let (windows, dt) = Window::collect(dataset, config.horizon)?;
    let mut model = EgoModel::new(*init, config.substeps);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let batches_per_epoch = windows.len().div_ceil(config.batch);
    let lr_final = config.lr_final.min(config.lr);
    let mut batch: Vec<&Window> = Vec::with_capacity(config.batch);
    for it in 0..config.iterations {
        batch.clear();
        for _ in 0..config.batch {
            batch.push(&windows[rng.random_range(0..windows.len())]);
        }
        let (loss, mut grad) = loss_and_gradient(&model, &batch, dt);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                batch: it % batches_per_epoch,
                iteration: it,
            });
        }
        if config.lr == 0.0 {
            continue;
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > config.clip_norm {
            grad.iter_mut().for_each(|g| *g *= config.clip_norm / norm);
        }
        let progress = it as f64 / config.iterations as f64;
        let lr = lr_final + 0.5 * (config.lr - lr_final) * (1.0 + (std::f64::consts::PI * progress).cos());
        let mut v = model.params.to_vec();
        for (p, g) in v.iter_mut().zip(grad) {
            *p -= lr * g;
        }
        v[0] = v[0].max(0.05);
        v[1] = v[1].max(0.05);
        v[14] = v[14].max(0.1);
        model.params = BicycleParams::from_vec(&v);
        if config.odd_symmetric {
            model.params.symmetrize();
        }
    }
    let all: Vec<&Window> = windows.iter().collect();
    let (final_loss, _) = loss_and_gradient(&model, &all, dt);
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            batch: batches_per_epoch,
            iteration: config.iterations,
        });
    }
    let report = FitReport {
        final_loss,
        position_error: evaluate(&model, &windows, dt),
        iterations: config.iterations,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}
