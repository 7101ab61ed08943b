//! `GGMP` parameter checkpoints.
//!
//! Layout, little-endian: magic `GGMP`, `u16` version, `u32` length of a
//! JSON metadata block (model config and topology) followed by the block,
//! `u32` record count, then per record: `u32` path length, UTF-8 path,
//! `u32` rank, one `u32` per dimension, and the `f32` payload.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::geom::tensor::Tensor;
use crate::model::{project_constraints, GgMotion, ModelConfig};
use crate::scalar::Scalar;
use crate::topology::SkeletonTopology;

pub const GGMP_MAGIC: &[u8; 4] = b"GGMP";
pub const GGMP_VERSION: u16 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub topology: SkeletonTopology,
}

pub fn encode<T: Scalar>(model: &GgMotion<T>) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&CheckpointMeta {
        config: model.config().clone(),
        topology: model.topology().clone(),
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(GGMP_MAGIC);
    out.extend_from_slice(&GGMP_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (path, p) in model.params.iter() {
        out.extend_from_slice(&(path.len() as u32).to_le_bytes());
        out.extend_from_slice(path.as_bytes());
        let shape = p.value.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in p.value.data() {
            out.extend_from_slice(&x.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn slice(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).ok_or_else(|| self.err("length overflow"))?;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.err(format!("truncated while reading {what}")))?;
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.slice(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.slice(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<GgMotion<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.slice(4, "magic")? != GGMP_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected GGMP".into(),
        });
    }
    let version = r.u16("version")?;
    if version != GGMP_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta_at = r.pos;
    let meta: CheckpointMeta = serde_json::from_slice(r.slice(meta_len, "metadata")?).map_err(|e| Error::Format {
        offset: meta_at as u64,
        message: format!("metadata: {e}"),
    })?;
    let count = r.u32("record count")?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let record_at = r.pos;
        let path_len = r.u32("path length")? as usize;
        let path = std::str::from_utf8(r.slice(path_len, "path")?)
            .map_err(|_| r.err("path is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")?;
        if rank != 3 {
            return Err(r.err(format!("parameter {path}: rank {rank}, expected 3")));
        }
        let mut shape = [0usize; 3];
        for d in &mut shape {
            *d = r.u32("dimension")? as usize;
        }
        let n = shape.iter().product::<usize>();
        let raw = r.slice(n.checked_mul(4).ok_or_else(|| r.err("payload overflow"))?, "payload")?;
        let data: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format {
                offset: record_at as u64,
                message: format!("parameter {path} has non-finite values"),
            });
        }
        params.insert(path, Tensor::from_vec(shape, data)?).map_err(|e| Error::Format {
            offset: record_at as u64,
            message: e.to_string(),
        })?;
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    project_constraints(&mut params);
    GgMotion::from_parts(meta.config, meta.topology, params)
}

pub fn save_checkpoint<T: Scalar>(model: &GgMotion<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(model)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<GgMotion<T>> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> GgMotion<f64> {
        let cfg = ModelConfig {
            t_h: 3,
            t_f: 2,
            channels: 3,
            hidden: 4,
            blocks: 1,
            seed: 9,
            ..Default::default()
        };
        GgMotion::new(cfg, SkeletonTopology::chain_grouped(5, 2).unwrap()).unwrap()
    }

    #[test]
    fn round_trip_is_single_precision_exact() {
        let m = model();
        let back: GgMotion<f64> = decode(&encode(&m).unwrap()).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.topology(), m.topology());
        for (path, p) in m.params.iter() {
            let q = back.params.get(path).unwrap();
            for (a, b) in p.value.data().iter().zip(q.data()) {
                if !path.ends_with("phi_c") {
                    assert_eq!(*a as f32 as f64, *b);
                } else {
                    assert!((a - b).abs() <= 1e-6);
                }
            }
        }
        let third: GgMotion<f64> = decode(&encode(&back).unwrap()).unwrap();
        for (path, p) in back.params.iter() {
            let q = third.params.get(path).unwrap();
            if path.ends_with("phi_c") {
                assert!(p.value.max_abs_diff(q) <= 1e-6);
            } else {
                assert_eq!(&p.value, q);
            }
        }
    }

    #[test]
    fn truncation_and_corruption_are_format_errors() {
        let b = encode(&model()).unwrap();
        for cut in [0, 2, 5, 9, 40, b.len() / 2, b.len() - 1] {
            assert!(matches!(decode::<f64>(&b[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
        let mut bad = b.clone();
        bad[4] = 9;
        assert!(matches!(decode::<f64>(&bad), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn incomplete_parameter_set_rejected() {
        let mut m = model();
        let mut p = ParamStore::new();
        for (path, v) in m.params.iter().skip(1) {
            p.insert(path, v.value.clone()).unwrap();
        }
        m.params = p;
        assert!(matches!(decode::<f64>(&encode(&m).unwrap()), Err(Error::Validation(_))));
    }
}
