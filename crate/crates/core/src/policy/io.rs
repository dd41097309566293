//! Policy files: magic `WOPOL1`, a length-prefixed TOML header with the
//! architecture and the tensor names and shapes, then every tensor as
//! little-endian f32 in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::{PolicyArch, PolicyModel};

pub const POLICY_MAGIC: &[u8; 6] = b"WOPOL1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch: PolicyArch,
    tensors: Vec<TensorHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

pub fn encode_policy(model: &PolicyModel) -> Vec<u8> {
    let header = Header {
        arch: model.arch,
        tensors: model
            .params
            .iter()
            .map(|t| TensorHeader {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let text = toml::to_string(&header).expect("policy header serializes");
    let mut b = Vec::with_capacity(16 + text.len() + 4 * model.param_count());
    b.extend_from_slice(POLICY_MAGIC);
    b.extend_from_slice(&(text.len() as u32).to_le_bytes());
    b.extend_from_slice(text.as_bytes());
    for t in &model.params {
        for &v in &t.data {
            b.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    b
}

pub fn decode_policy(data: &[u8]) -> Result<PolicyModel> {
    let bad = |d: &str| Error::format("policy file", d);
    if data.len() < 10 || &data[..6] != POLICY_MAGIC {
        return Err(bad("bad magic"));
    }
    let hl = u32::from_le_bytes(data[6..10].try_into().unwrap()) as usize;
    let text = data.get(10..10 + hl).ok_or_else(|| bad("truncated header"))?;
    let text = std::str::from_utf8(text).map_err(|_| bad("header is not UTF-8"))?;
    let header: Header = toml::from_str(text).map_err(|e| bad(&e.to_string()))?;
    let mut model = PolicyModel::new(header.arch, 0)?;
    if model.params.len() != header.tensors.len() {
        return Err(bad("tensor count does not match the architecture"));
    }
    let mut pos = 10 + hl;
    for (t, h) in model.params.iter_mut().zip(&header.tensors) {
        if t.name != h.name || t.shape != h.shape {
            return Err(bad(&format!("tensor {} does not match the architecture", h.name)));
        }
        let n = t.data.len() * 4;
        let raw = data.get(pos..pos + n).ok_or_else(|| bad("truncated tensor data"))?;
        for (v, c) in t.data.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f64::from(f32::from_le_bytes(c.try_into().unwrap()));
        }
        pos += n;
    }
    if pos != data.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(model)
}

pub fn save_policy(path: &Path, model: &PolicyModel) -> Result<()> {
    std::fs::write(path, encode_policy(model)).map_err(|e| Error::io(path, e))
}

pub fn load_policy(path: &Path) -> Result<PolicyModel> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_policy(&data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_f32() {
        let arch = PolicyArch {
            hidden: 16,
            ..Default::default()
        };
        let m = PolicyModel::new(arch, 3).unwrap();
        let back = decode_policy(&encode_policy(&m)).unwrap();
        assert_eq!(back.arch, m.arch);
        for (a, b) in m.params.iter().zip(&back.params) {
            assert_eq!(a.name, b.name);
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| (*x as f32) as f64 == *y));
        }
        let again = encode_policy(&back);
        assert_eq!(again, encode_policy(&m));
        assert!(decode_policy(&again[..again.len() - 2]).is_err());
    }
}
