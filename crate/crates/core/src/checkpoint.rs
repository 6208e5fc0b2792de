//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   "DIORACKP"
//! version      u32       1
//! digest       32 bytes  SHA-256 of the config JSON
//! config_len   u32
//! config       config_len bytes of JSON (TrainConfig)
//! step         u64
//! has_best     u8        0 or 1
//! best_f1      f64       0.0 when has_best = 0
//! adam_t       u64
//! count        u32       number of tensors
//! count × {
//!   name_len   u32
//!   name       UTF-8, prefixed "param/", "adam_m/" or "adam_v/"
//!   rank       u32
//!   dims       rank × u64
//!   data       product(dims) × f64
//! }
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numeric::{ParamStore, Real, Tensor};
use crate::trainer::{Adam, TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"DIORACKP";
pub const VERSION: u32 = 1;

fn config_json(config: &TrainConfig) -> Result<Vec<u8>> {
    serde_json::to_vec(config).map_err(|e| Error::Checkpoint(format!("cannot encode config: {e}")))
}

pub fn config_digest(config: &TrainConfig) -> Result<[u8; 32]> {
    Ok(Sha256::digest(config_json(config)?).into())
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&(x as f64).to_le_bytes());
    }
}

pub fn encode(state: &TrainState) -> Result<Vec<u8>> {
    let json = config_json(&state.config)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&Sha256::digest(&json));
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&state.step.to_le_bytes());
    out.push(state.best_f1.is_some() as u8);
    out.extend_from_slice(&state.best_f1.unwrap_or(0.0).to_le_bytes());
    out.extend_from_slice(&state.adam.t.to_le_bytes());
    let store = &state.params.store;
    out.extend_from_slice(&(3 * store.len() as u32).to_le_bytes());
    for (prefix, tensors) in [
        ("param/", store.iter().map(|(_, _, t)| t).collect::<Vec<_>>()),
        ("adam_m/", state.adam.m.iter().collect()),
        ("adam_v/", state.adam.v.iter().collect()),
    ] {
        for (id, t) in store.ids().zip(tensors) {
            put_tensor(&mut out, &format!("{prefix}{}", store.name(id)), t);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let n = self.u32()? as usize;
        let name = String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = self.u32()? as usize;
        let shape = (0..rank)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} has an impossible shape")))?;
        let data = (0..numel)
            .map(|_| self.f64().map(|x| x as Real))
            .collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        Ok((name, t))
    }
}

pub fn decode(bytes: &[u8]) -> Result<TrainState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let digest: [u8; 32] = r.array()?;
    let n = r.u32()? as usize;
    let json = r.take(n)?;
    if <[u8; 32]>::from(Sha256::digest(json)) != digest {
        return Err(Error::Checkpoint("config digest mismatch".into()));
    }
    let config: TrainConfig =
        serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("bad config: {e}")))?;
    config.validate()?;
    let step = r.u64()?;
    let has_best = r.u8()?;
    let best = r.f64()?;
    let adam_t = r.u64()?;
    let count = r.u32()? as usize;

    let mut store = ParamStore::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for _ in 0..count {
        let (name, t) = r.tensor()?;
        if let Some(p) = name.strip_prefix("param/") {
            store.add(p, t);
        } else if name.starts_with("adam_m/") {
            m.push((name, t));
        } else if name.starts_with("adam_v/") {
            v.push((name, t));
        } else {
            return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after tensors".into()));
    }
    let moments = |prefix: &str, list: Vec<(String, Tensor)>| -> Result<Vec<Tensor>> {
        if list.len() != store.len() {
            return Err(Error::Checkpoint(format!("expected {} {prefix} tensors", store.len())));
        }
        store
            .ids()
            .zip(list)
            .map(|(id, (name, t))| {
                if name != format!("{prefix}{}", store.name(id)) || t.shape() != store.get(id).shape() {
                    return Err(Error::Checkpoint(format!("optimizer tensor {name} does not match")));
                }
                Ok(t)
            })
            .collect()
    };
    let m = moments("adam_m/", m)?;
    let v = moments("adam_v/", v)?;
    let params = ModelParams::from_store(&config.model, store)?;
    let mut adam = Adam::new(&params.store, config.learning_rate);
    adam.t = adam_t;
    adam.m = m;
    adam.v = v;
    Ok(TrainState {
        config,
        params,
        adam,
        step,
        best_f1: (has_best == 1).then_some(best),
    })
}

pub fn save(state: &TrainState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(state)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<TrainState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ComposeKind, ModelConfig};

    fn state(compose: ComposeKind, share: bool) -> TrainState {
        let cfg = TrainConfig {
            model: ModelConfig {
                input_dim: 5,
                hidden_dim: 3,
                compose,
                share,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        };
        let mut s = TrainState::init(&cfg).unwrap();
        s.step = 17;
        s.best_f1 = Some(0.25);
        s.adam.t = 17;
        s.adam.m[0].data_mut()[0] = 0.5;
        s.adam.v[1].data_mut()[0] = 1e-7;
        s
    }

    #[test]
    fn round_trip_is_identical() {
        for compose in [ComposeKind::Mlp, ComposeKind::TreeLstm] {
            for share in [true, false] {
                let s = state(compose, share);
                let bytes = encode(&s).unwrap();
                let back = decode(&bytes).unwrap();
                assert_eq!(back, s);
                assert_eq!(encode(&back).unwrap(), bytes);
            }
        }
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode(&state(ComposeKind::Mlp, true)).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[50] ^= 1;
        assert!(decode(&bad).is_err());
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode(&long).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let s = state(ComposeKind::TreeLstm, false);
        save(&s, &p).unwrap();
        assert_eq!(load(&p).unwrap(), s);
        assert!(matches!(load(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
