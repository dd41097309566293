//! Q-label files.
//!
//! A label file starts with the magic `WORQ1` and a header (grid dims and
//! spans, command and action counts, query poses, gamma, horizon, frame
//! count), followed per frame by the tick, the anchor pose and the action
//! values as little-endian f32 in `[pose][command][speed bin][action]`
//! order. A TOML sidecar records what is needed to recompute value grids.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ego_model::EgoModel;
use crate::error::{Error, Result};
use crate::reward::RewardConfig;
use crate::world::{Command, EgoState};

use super::grid::GridSpec;
use super::label::{FrameLabels, PlanConfig, PoseOffset, QLabels};

pub const LABEL_MAGIC: &[u8; 5] = b"WORQ1";
pub const LABEL_EXTENSION: &str = "worq";

pub fn encode_labels(labels: &QLabels) -> Vec<u8> {
    let s = &labels.spec;
    let mut b = Vec::with_capacity(128 + labels.frames.len() * (40 + 4 * labels.frame_len()));
    let u32 = |b: &mut Vec<u8>, v: usize| b.extend_from_slice(&(v as u32).to_le_bytes());
    let f64 = |b: &mut Vec<u8>, v: f64| b.extend_from_slice(&v.to_le_bytes());
    b.extend_from_slice(LABEL_MAGIC);
    for n in [s.n_h, s.n_w, s.n_theta, s.n_v] {
        u32(&mut b, n);
    }
    for x in [s.cell_size, s.theta_span_deg, s.v_min, s.v_max] {
        f64(&mut b, x);
    }
    u32(&mut b, Command::COUNT);
    u32(&mut b, labels.n_actions);
    u32(&mut b, labels.poses.len());
    for p in &labels.poses {
        f64(&mut b, p.lateral);
        f64(&mut b, p.yaw);
    }
    f64(&mut b, labels.gamma);
    u32(&mut b, labels.horizon);
    u32(&mut b, labels.frames.len());
    for f in &labels.frames {
        b.extend_from_slice(&f.tick.to_le_bytes());
        for x in [f.anchor.x, f.anchor.y, f.anchor.theta, f.anchor.v] {
            f64(&mut b, x);
        }
        for &v in &f.values {
            b.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    b
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| Error::format("label file", "truncated"))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_labels(data: &[u8]) -> Result<QLabels> {
    let mut r = Reader { data, pos: 0 };
    if r.take(LABEL_MAGIC.len())? != LABEL_MAGIC {
        return Err(Error::format("label file", "bad magic"));
    }
    let spec = GridSpec {
        n_h: r.u32()?,
        n_w: r.u32()?,
        n_theta: r.u32()?,
        n_v: r.u32()?,
        cell_size: r.f64()?,
        theta_span_deg: r.f64()?,
        v_min: r.f64()?,
        v_max: r.f64()?,
    };
    spec.validate().map_err(|e| Error::format("label file", e.to_string()))?;
    if r.u32()? != Command::COUNT {
        return Err(Error::format("label file", "unexpected command count"));
    }
    let n_actions = r.u32()?;
    let n_poses = r.u32()?;
    if n_actions == 0 || n_poses == 0 || n_poses > 64 {
        return Err(Error::format("label file", "bad action or pose count"));
    }
    let poses = (0..n_poses)
        .map(|_| Ok(PoseOffset { lateral: r.f64()?, yaw: r.f64()? }))
        .collect::<Result<Vec<_>>>()?;
    let gamma = r.f64()?;
    let horizon = r.u32()?;
    let n_frames = r.u32()?;
    let frame_len = n_poses * Command::COUNT * spec.n_v * n_actions;
    if n_frames.saturating_mul(40 + 4 * frame_len) > data.len() {
        return Err(Error::format("label file", "truncated"));
    }
    let mut frames = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let tick = r.u64()?;
        let anchor = EgoState {
            x: r.f64()?,
            y: r.f64()?,
            theta: r.f64()?,
            v: r.f64()?,
        };
        let values = (0..frame_len).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
        frames.push(FrameLabels { tick, anchor, values });
    }
    if r.pos != data.len() {
        return Err(Error::format("label file", "trailing bytes"));
    }
    Ok(QLabels {
        spec,
        n_actions,
        poses,
        gamma,
        horizon,
        frames,
    })
}

pub fn write_labels(path: &Path, labels: &QLabels) -> Result<()> {
    std::fs::write(path, encode_labels(labels)).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<QLabels> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_labels(&data)
}

/// Sidecar describing how a label file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMeta {
    /// Log file the labels belong to, relative to the sidecar when not absolute.
    pub log: PathBuf,
    pub map_id: String,
    pub grid: GridSpec,
    pub plan: PlanConfig,
    pub reward: RewardConfig,
    pub ego: EgoModel,
    /// Steering and throttle bins of the standard action grid.
    pub steer_bins: usize,
    pub throttle_bins: usize,
}

pub fn meta_path(label_path: &Path) -> PathBuf {
    let mut s = label_path.as_os_str().to_owned();
    s.push(".meta.toml");
    PathBuf::from(s)
}

impl LabelMeta {
    pub fn save(&self, label_path: &Path) -> Result<()> {
        let path = meta_path(label_path);
        let text = toml::to_string(self).map_err(|e| Error::format("label metadata", e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(label_path: &Path) -> Result<Self> {
        let path = meta_path(label_path);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::format("label metadata", e.to_string()))
    }

    /// The log path resolved against the label file's directory.
    pub fn log_path(&self, label_path: &Path) -> PathBuf {
        if self.log.is_absolute() {
            self.log.clone()
        } else {
            label_path.parent().unwrap_or(Path::new(".")).join(&self.log)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> QLabels {
        let spec = GridSpec {
            n_h: 4,
            n_w: 4,
            n_v: 2,
            ..Default::default()
        };
        let poses = PoseOffset::augmented();
        let len = poses.len() * Command::COUNT * 2 * 3;
        QLabels {
            spec,
            n_actions: 3,
            poses,
            gamma: 0.9,
            horizon: 5,
            frames: (0..3)
                .map(|f| FrameLabels {
                    tick: 5 * f,
                    anchor: EgoState::new(f as f64, 1.0, 0.2, 3.0),
                    values: (0..len).map(|i| (i as f64) * 0.25 + f as f64).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn round_trip_is_exact_for_f32_values() {
        let l = sample();
        let back = decode_labels(&encode_labels(&l)).unwrap();
        assert_eq!(back, l);
        assert_eq!(back.q(1, 2, Command::TurnLeft, 1).len(), 3);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut b = encode_labels(&sample());
        assert!(decode_labels(&b[..b.len() - 1]).is_err());
        b[0] = b'X';
        assert!(decode_labels(&b).is_err());
        let mut long = encode_labels(&sample());
        long.push(0);
        assert!(decode_labels(&long).is_err());
    }
}
