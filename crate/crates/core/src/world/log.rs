//! Binary driving logs.
//!
//! A log file starts with the magic `WORLOG1`, the tick rate, the control
//! period and the map id, followed by length-prefixed little-endian records.
//! A directory of logs carries an `index.txt` listing each file and its
//! frame count.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::map::LightPhase;
use super::render::Raster;
use super::{Action, Command, EgoState, NpcState, Observation, Record, Trajectory, WorldSnapshot};

pub const LOG_MAGIC: &[u8; 7] = b"WORLOG1";
pub const INDEX_FILE: &str = "index.txt";
pub const LOG_EXTENSION: &str = "worlog";

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
    }
    fn ego(&mut self, e: &EgoState) {
        for v in [e.x, e.y, e.theta, e.v] {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::format("log", format!("truncated at byte {}", self.pos)))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    fn ego(&mut self) -> Result<EgoState> {
        Ok(EgoState {
            x: self.f64()?,
            y: self.f64()?,
            theta: self.f64()?,
            v: self.f64()?,
        })
    }
}

fn phase_code(p: LightPhase) -> u8 {
    match p {
        LightPhase::Red => 0,
        LightPhase::Yellow => 1,
        LightPhase::Green => 2,
    }
}

fn phase_from(c: u8) -> Result<LightPhase> {
    Ok(match c {
        0 => LightPhase::Red,
        1 => LightPhase::Yellow,
        2 => LightPhase::Green,
        _ => return Err(Error::format("log", format!("bad light phase {c}"))),
    })
}

fn encode_record(r: &Record) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.u64(r.snapshot.tick);
    w.ego(&r.ego);
    w.f64(r.action.steer);
    w.f64(r.action.throttle);
    w.u8(r.action.brake as u8);
    w.u32(r.snapshot.lights.len() as u32);
    for &p in &r.snapshot.lights {
        w.u8(phase_code(p));
    }
    w.u32(r.snapshot.npcs.len() as u32);
    for n in &r.snapshot.npcs {
        w.u32(n.id);
        for v in [n.x, n.y, n.theta, n.v, n.half_length, n.half_width] {
            w.f64(v);
        }
        w.u32(n.lane as u32);
        w.f64(n.s);
        w.f64(n.desired_speed);
    }
    w.ego(&r.observation.pose);
    w.f64(r.observation.speed);
    w.u8(r.observation.command.index() as u8);
    w.bytes(r.observation.raster.counts());
    w.buf
}

fn decode_record(data: &[u8], map_id: &str) -> Result<Record> {
    let mut r = Reader { data, pos: 0 };
    let tick = r.u64()?;
    let ego = r.ego()?;
    let steer = r.f64()?;
    let throttle = r.f64()?;
    let brake = r.u8()? != 0;
    let action = Action { steer, throttle, brake };
    if !action.is_valid() {
        return Err(Error::format("log", format!("invalid action at tick {tick}")));
    }
    let nl = r.u32()? as usize;
    let lights = (0..nl).map(|_| phase_from(r.u8()?)).collect::<Result<Vec<_>>>()?;
    let nn = r.u32()? as usize;
    let mut npcs = Vec::with_capacity(nn);
    for _ in 0..nn {
        npcs.push(NpcState {
            id: r.u32()?,
            x: r.f64()?,
            y: r.f64()?,
            theta: r.f64()?,
            v: r.f64()?,
            half_length: r.f64()?,
            half_width: r.f64()?,
            lane: r.u32()? as usize,
            s: r.f64()?,
            desired_speed: r.f64()?,
        });
    }
    let pose = r.ego()?;
    let speed = r.f64()?;
    let cmd = r.u8()?;
    let command = Command::from_index(cmd as usize).ok_or_else(|| Error::format("log", format!("bad command {cmd}")))?;
    let raster = Raster::from_counts(r.bytes()?.to_vec()).ok_or_else(|| Error::format("log", "bad raster"))?;
    if r.pos != data.len() {
        return Err(Error::format("log", "trailing bytes in record"));
    }
    Ok(Record {
        snapshot: WorldSnapshot {
            tick,
            npcs,
            lights,
            map_id: map_id.to_string(),
        },
        ego,
        action,
        observation: Observation {
            raster,
            speed,
            command,
            pose,
        },
    })
}

pub fn encode_trajectory(t: &Trajectory) -> Vec<u8> {
    let mut w = Writer { buf: LOG_MAGIC.to_vec() };
    w.u32(t.tick_rate_hz);
    w.u32(t.control_period);
    w.bytes(t.map_id.as_bytes());
    w.u32(t.records.len() as u32);
    for r in &t.records {
        w.bytes(&encode_record(r));
    }
    w.buf
}

pub fn decode_trajectory(data: &[u8]) -> Result<Trajectory> {
    if data.len() < LOG_MAGIC.len() || &data[..LOG_MAGIC.len()] != LOG_MAGIC {
        return Err(Error::format("log", "missing WORLOG1 header"));
    }
    let mut r = Reader {
        data,
        pos: LOG_MAGIC.len(),
    };
    let tick_rate_hz = r.u32()?;
    let control_period = r.u32()?;
    let map_id = String::from_utf8(r.bytes()?.to_vec()).map_err(|_| Error::format("log", "map id is not utf-8"))?;
    let n = r.u32()? as usize;
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        records.push(decode_record(r.bytes()?, &map_id)?);
    }
    if r.pos != data.len() {
        return Err(Error::format("log", "trailing bytes after records"));
    }
    Ok(Trajectory {
        map_id,
        tick_rate_hz,
        control_period,
        records,
    })
}

pub fn write_trajectory(path: &Path, t: &Trajectory) -> Result<()> {
    fs::write(path, encode_trajectory(t)).map_err(|e| Error::io(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_trajectory(&data)
}

/// Writes `episode_NNNN.worlog` files plus the index; returns the file paths.
pub fn save_logs(dir: &Path, trajectories: &[Trajectory]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = String::new();
    let mut paths = Vec::new();
    for (i, t) in trajectories.iter().enumerate() {
        let name = format!("episode_{i:04}.{LOG_EXTENSION}");
        let path = dir.join(&name);
        write_trajectory(&path, t)?;
        index.push_str(&format!("{name} {}\n", t.len()));
        paths.push(path);
    }
    let ip = dir.join(INDEX_FILE);
    let mut f = fs::File::create(&ip).map_err(|e| Error::io(&ip, e))?;
    f.write_all(index.as_bytes()).map_err(|e| Error::io(&ip, e))?;
    Ok(paths)
}

/// Entries of a log directory index: (file name, frame count).
pub fn read_index(dir: &Path) -> Result<Vec<(String, usize)>> {
    let ip = dir.join(INDEX_FILE);
    let f = fs::File::open(&ip).map_err(|e| Error::io(&ip, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(&ip, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(name), Some(n), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::format("log index", format!("bad line {line:?}")));
        };
        let n = n
            .parse()
            .map_err(|_| Error::format("log index", format!("bad frame count in {line:?}")))?;
        out.push((name.to_string(), n));
    }
    Ok(out)
}

/// Loads every log listed in the directory index, checking frame counts.
pub fn load_logs(dir: &Path) -> Result<Vec<Trajectory>> {
    read_index(dir)?
        .into_iter()
        .map(|(name, n)| {
            let t = read_trajectory(&dir.join(&name))?;
            if t.len() != n {
                return Err(Error::format("log index", format!("{name}: index says {n} frames, file has {}", t.len())));
            }
            Ok(t)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::render::render_observation;
    use crate::world::sim::World;
    use crate::world::towns::town_a;
    use std::sync::Arc;

    fn sample() -> Trajectory {
        let town = town_a();
        let w = World::new(Arc::new(town.map.clone()), 5);
        let snap = w.spawn(5, &[]).snapshot;
        let ego = EgoState::new(3.0, 4.0, 0.2, 1.5);
        let obs = render_observation(&town.map, &snap, &ego, Command::GoStraight);
        Trajectory {
            map_id: town.map.id.clone(),
            tick_rate_hz: 20,
            control_period: 5,
            records: vec![Record {
                snapshot: snap,
                ego,
                action: Action::new(0.3, 0.6, false),
                observation: obs,
            }],
        }
    }

    #[test]
    fn round_trip() {
        let t = sample();
        let bytes = encode_trajectory(&t);
        assert_eq!(&bytes[..7], b"WORLOG1");
        assert_eq!(decode_trajectory(&bytes).unwrap(), t);
    }

    #[test]
    fn truncated_and_corrupt_logs_are_rejected() {
        let bytes = encode_trajectory(&sample());
        assert!(decode_trajectory(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_trajectory(&bad).is_err());
    }

    #[test]
    fn directory_with_index() {
        let dir = tempfile::tempdir().unwrap();
        let t = sample();
        save_logs(dir.path(), &[t.clone(), t.clone()]).unwrap();
        let idx = read_index(dir.path()).unwrap();
        assert_eq!(idx, vec![("episode_0000.worlog".to_string(), 1), ("episode_0001.worlog".to_string(), 1)]);
        assert_eq!(load_logs(dir.path()).unwrap(), vec![t.clone(), t]);
    }
}
