//! Distillation of action-value labels into the policy network.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value::{GridSpec, QLabels};
use crate::world::render::{render_observation, Raster};
use crate::world::{Command, LaneMap, Trajectory};

use super::loss::{distill_loss, N_JOINT};
use super::model::{PolicyModel, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub alpha: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Supervise every speed bin instead of only the recorded speed's bin.
    pub speed_augmentation: bool,
    /// Include the perturbed-pose replicas.
    pub pose_augmentation: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-2,
            lr: 3e-4,
            batch: 128,
            epochs: 10,
            seed: 0,
            speed_augmentation: true,
            pose_augmentation: true,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.lr > 0.0) || self.batch == 0 {
            return Err(Error::Config("distillation needs alpha >= 0, lr > 0 and batch >= 1".into()));
        }
        Ok(())
    }
}

/// One supervised example: an observation and its labels for every
/// command and speed bin.
#[derive(Debug, Clone)]
pub struct DistillSample {
    pub raster: Raster,
    pub speed: f64,
    /// `[command][speed bin][action]`
    pub q: Vec<f64>,
    /// Bin nearest to the recorded speed.
    pub bin: usize,
    /// Frame index, for error messages.
    pub frame: usize,
}

/// Bin whose center is nearest to `v`.
pub fn nearest_bin(spec: &GridSpec, v: f64) -> usize {
    let u = spec.v_axis().coord(v).round();
    u.clamp(0.0, (spec.n_v - 1) as f64) as usize
}

/// Pairs each labeled frame (and pose replica) with its observation.
pub fn build_samples(map: &LaneMap, traj: &Trajectory, labels: &QLabels, pose_augmentation: bool) -> Result<Vec<DistillSample>> {
    if labels.frames.len() != traj.len() {
        return Err(Error::Misaligned(format!("{} label frames for {} log frames", labels.frames.len(), traj.len())));
    }
    if labels.n_actions != N_JOINT {
        return Err(Error::Misaligned(format!("labels have {} actions", labels.n_actions)));
    }
    let per_pose = Command::COUNT * labels.spec.n_v * labels.n_actions;
    let poses = if pose_augmentation { labels.poses.len() } else { 1 };
    let mut out = Vec::with_capacity(traj.len() * poses);
    for (t, (rec, lab)) in traj.records.iter().zip(&labels.frames).enumerate() {
        if rec.snapshot.tick != lab.tick {
            return Err(Error::Misaligned(format!("frame {t}: log tick {} vs label tick {}", rec.snapshot.tick, lab.tick)));
        }
        for (p, pose) in labels.poses.iter().enumerate().take(poses) {
            let raster = if *pose == crate::value::PoseOffset::IDENTITY {
                rec.observation.raster.clone()
            } else {
                render_observation(map, &rec.snapshot, &pose.world_pose(&rec.ego), rec.observation.command).raster
            };
            out.push(DistillSample {
                raster,
                speed: rec.ego.v,
                q: lab.values[p * per_pose..(p + 1) * per_pose].to_vec(),
                bin: nearest_bin(&labels.spec, rec.ego.v),
                frame: t,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-sample loss over each epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

/// Summed head losses for one sample and their logit gradient scaled by `scale`.
pub fn sample_loss(model: &PolicyModel, logits: &[f64], s: &DistillSample, cfg: &DistillConfig, scale: f64) -> Result<(f64, Vec<f64>)> {
    let nv = model.arch.speed_bins;
    if s.q.len() != Command::COUNT * nv * N_JOINT {
        return Err(Error::Misaligned(format!("frame {}: label size does not match the policy heads", s.frame)));
    }
    let mut dlogits = vec![0.0; logits.len()];
    let mut total = 0.0;
    for c in Command::ALL {
        let bins: Vec<usize> = if cfg.speed_augmentation { (0..nv).collect() } else { vec![s.bin] };
        for l in bins {
            let off = (c.index() * nv + l) * super::model::HEAD_WIDTH;
            let qo = (c.index() * nv + l) * N_JOINT;
            let (loss, g) = distill_loss(&logits[off..off + super::model::HEAD_WIDTH], &s.q[qo..qo + N_JOINT], cfg.alpha, s.frame)?;
            total += loss;
            for (d, gi) in dlogits[off..].iter_mut().zip(g) {
                *d = gi * scale;
            }
        }
    }
    Ok((total, dlogits))
}

/// Mean loss of `model` over `samples`.
pub fn mean_loss(model: &PolicyModel, samples: &[DistillSample], cfg: &DistillConfig) -> Result<f64> {
    let mut sum = 0.0;
    for s in samples {
        let logits = model.logits(&s.raster.to_f32(), s.speed);
        sum += sample_loss(model, &logits, s, cfg, 1.0)?.0;
    }
    Ok(sum / samples.len().max(1) as f64)
}

/// Adam state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[Tensor]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: shapes.iter().map(|t| vec![0.0; t.data.len()]).collect(),
            v: shapes.iter().map(|t| vec![0.0; t.data.len()]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for (i, (w, &gi)) in p.data.iter_mut().zip(&g.data).enumerate() {
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Minibatch Adam on the summed head losses. Deterministic in (model,
/// samples, config).
pub fn train(mut model: PolicyModel, samples: &[DistillSample], cfg: &DistillConfig) -> Result<(PolicyModel, TrainReport)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no distillation samples".into()));
    }
    let mut adam = Adam::new(cfg.lr, &model.params);
    let mut grads = model.zeros_like();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        steps: 0,
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for batch in order.chunks(cfg.batch) {
            for g in &mut grads {
                g.data.fill(0.0);
            }
            let scale = 1.0 / batch.len() as f64;
            let rasters: Vec<Vec<f32>> = batch.iter().map(|&i| samples[i].raster.to_f32()).collect();
            let views: Vec<&[f32]> = rasters.iter().map(|r| r.as_slice()).collect();
            let speeds: Vec<f64> = batch.iter().map(|&i| samples[i].speed).collect();
            let acts = model.forward_batch(&views, &speeds);
            let out = model.output_len();
            let mut dlogits = vec![0.0; batch.len() * out];
            for (b, &i) in batch.iter().enumerate() {
                let (loss, d) = sample_loss(&model, &acts.logits[b * out..(b + 1) * out], &samples[i], cfg, scale)?;
                epoch_sum += loss;
                dlogits[b * out..(b + 1) * out].copy_from_slice(&d);
            }
            model.backward(&acts, &dlogits, &mut grads);
            adam.step(&mut model.params, &grads);
            report.steps += 1;
            if !model.is_finite() {
                return Err(Error::Diverged {
                    batch: report.steps,
                    iteration: epoch,
                });
            }
        }
        let mean = epoch_sum / samples.len() as f64;
        log::info!("distill epoch {epoch}: loss {mean:.5}");
        report.epoch_loss.push(mean);
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::render::{RASTER_CHANNELS, RASTER_SIZE};
    use rand::Rng;

    fn random_sample(rng: &mut ChaCha8Rng, frame: usize) -> DistillSample {
        let counts = (0..RASTER_CHANNELS * RASTER_SIZE * RASTER_SIZE)
            .map(|_| if rng.random_bool(0.2) { rng.random_range(1..=4) } else { 0 })
            .collect();
        DistillSample {
            raster: Raster::from_counts(counts).unwrap(),
            speed: rng.random_range(0.0..8.0),
            q: (0..Command::COUNT * 4 * N_JOINT).map(|_| rng.random_range(0.0..2.0)).collect(),
            bin: rng.random_range(0..4),
            frame,
        }
    }

    fn small_arch() -> crate::policy::PolicyArch {
        crate::policy::PolicyArch {
            hidden: 32,
            ..Default::default()
        }
    }

    #[test]
    fn without_speed_augmentation_only_the_recorded_bin_has_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = PolicyModel::new(small_arch(), 0).unwrap();
        let s = random_sample(&mut rng, 0);
        let cfg = DistillConfig {
            speed_augmentation: false,
            ..Default::default()
        };
        let logits = m.logits(&s.raster.to_f32(), s.speed);
        let (_, d) = sample_loss(&m, &logits, &s, &cfg, 1.0).unwrap();
        for c in 0..Command::COUNT {
            for l in 0..4 {
                let off = (c * 4 + l) * crate::policy::model::HEAD_WIDTH;
                let nz = d[off..off + crate::policy::model::HEAD_WIDTH].iter().any(|&g| g != 0.0);
                assert_eq!(nz, l == s.bin);
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<DistillSample> = (0..12).map(|i| random_sample(&mut rng, i)).collect();
        let cfg = DistillConfig {
            batch: 4,
            epochs: 6,
            lr: 1e-3,
            ..Default::default()
        };
        let m = PolicyModel::new(small_arch(), 5).unwrap();
        let before = mean_loss(&m, &samples, &cfg).unwrap();
        let (a, ra) = train(m.clone(), &samples, &cfg).unwrap();
        let (b, _) = train(m, &samples, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(mean_loss(&a, &samples, &cfg).unwrap() < before);
        assert_eq!(ra.epoch_loss.len(), 6);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let m = PolicyModel::new(small_arch(), 0).unwrap();
        assert!(matches!(train(m, &[], &DistillConfig::default()), Err(Error::EmptyDataset(_))));
    }
}
