//! `GGS1` binary sequences and JSON fixtures.
//!
//! Binary layout, little-endian: magic `GGS1`, `u32` joint count, `u32`
//! frame count, `f32` frame rate, then `f32` positions ordered by joint,
//! then frame, then coordinate.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::MotionSequence;
use crate::error::{Error, Result};
use crate::geom::tensor::Tensor;

pub const GGS1_MAGIC: &[u8; 4] = b"GGS1";
const HEADER_LEN: usize = 16;

pub fn write_ggs1(seq: &MotionSequence, w: &mut impl Write) -> Result<()> {
    let (n, t) = (seq.n_joints(), seq.n_frames());
    let mut buf = Vec::with_capacity(HEADER_LEN + n * t * 12);
    buf.extend_from_slice(GGS1_MAGIC);
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.fps() as f32).to_le_bytes());
    for j in 0..n {
        for f in 0..t {
            for x in seq.position(j, f) {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const K: usize>(&mut self, what: &str) -> Result<[u8; K]> {
        let end = self.pos + K;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| format_err(self.pos, format!("truncated while reading {what}")))?;
        self.pos = end;
        Ok(slice.try_into().expect("length checked"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.take::<4>(what).map(u32::from_le_bytes)
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        self.take::<4>(what).map(f32::from_le_bytes)
    }
}

pub fn read_ggs1(bytes: &[u8]) -> Result<MotionSequence> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take::<4>("magic")?;
    if &magic != GGS1_MAGIC {
        return Err(format_err(0, format!("bad magic {magic:?}, expected GGS1")));
    }
    let n = c.u32("joint count")? as usize;
    let t = c.u32("frame count")? as usize;
    let fps_at = c.pos;
    let fps = c.f32("frame rate")? as f64;
    if n == 0 || t == 0 {
        return Err(format_err(4, "joint and frame counts must be positive"));
    }
    if !(fps.is_finite() && fps > 0.0) {
        return Err(format_err(fps_at, format!("frame rate {fps} is not positive")));
    }
    let expected = n
        .checked_mul(t)
        .and_then(|v| v.checked_mul(12))
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| format_err(4, "declared size overflows"))?;
    if bytes.len() < expected {
        return Err(format_err(
            bytes.len(),
            format!("truncated: {n} joints x {t} frames need {expected} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(format_err(expected, format!("{} trailing bytes", bytes.len() - expected)));
    }
    let mut pos = Tensor::zeros([n, 3, t]);
    for j in 0..n {
        for f in 0..t {
            for d in 0..3 {
                let at = c.pos;
                let v = c.f32("position")?;
                if !v.is_finite() {
                    return Err(format_err(at, "non-finite position"));
                }
                pos.set(j, d, f, v as f64);
            }
        }
    }
    MotionSequence::new(fps, pos)
}

pub fn save_sequence(seq: &MotionSequence, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ggs1(seq, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<MotionSequence> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    read_ggs1(&bytes)
}

/// JSON form: positions indexed `[joint][frame][coordinate]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceFixture {
    pub fps: f64,
    pub parent: Vec<Option<usize>>,
    pub positions: Vec<Vec<[f64; 3]>>,
}

impl SequenceFixture {
    pub fn from_sequence(seq: &MotionSequence, parent: Vec<Option<usize>>) -> Self {
        let positions = (0..seq.n_joints())
            .map(|j| (0..seq.n_frames()).map(|f| seq.position(j, f)).collect())
            .collect();
        Self {
            fps: seq.fps(),
            parent,
            positions,
        }
    }

    pub fn to_sequence(&self) -> Result<MotionSequence> {
        let n = self.positions.len();
        let t = self.positions.first().map_or(0, Vec::len);
        if self.positions.iter().any(|p| p.len() != t) {
            return Err(Error::Validation("joints disagree on frame count".into()));
        }
        if self.parent.len() != n {
            return Err(Error::Validation(format!(
                "{} parent entries for {n} joints",
                self.parent.len()
            )));
        }
        MotionSequence::new(
            self.fps,
            Tensor::from_fn([n, 3, t], |j, d, f| self.positions[j][f][d]),
        )
    }
}

pub fn save_json_fixture(seq: &MotionSequence, parent: Vec<Option<usize>>, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string(&SequenceFixture::from_sequence(seq, parent))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Returns the sequence and its parent list.
pub fn load_json_fixture(path: impl AsRef<Path>) -> Result<(MotionSequence, Vec<Option<usize>>)> {
    let fx: SequenceFixture = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok((fx.to_sequence()?, fx.parent))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::rng::Rng;

    fn sample(seed: u64) -> MotionSequence {
        let mut rng = Rng::new(seed);
        MotionSequence::new(30.0, Tensor::from_fn([4, 3, 7], |_, _, _| rng.uniform(-900.0, 900.0))).unwrap()
    }

    fn bytes(seq: &MotionSequence) -> Vec<u8> {
        let mut out = Vec::new();
        write_ggs1(seq, &mut out).unwrap();
        out
    }

    #[test]
    fn round_trip_is_single_precision_exact() {
        let s = sample(1);
        let back = read_ggs1(&bytes(&s)).unwrap();
        for (a, b) in s.positions().data().iter().zip(back.positions().data()) {
            assert_eq!(*a as f32, *b as f32);
        }
        assert_eq!(read_ggs1(&bytes(&back)).unwrap(), back);
    }

    #[test]
    fn header_layout() {
        let b = bytes(&sample(2));
        assert_eq!(&b[..4], b"GGS1");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 7);
        assert_eq!(f32::from_le_bytes(b[12..16].try_into().unwrap()), 30.0);
        assert_eq!(b.len(), 16 + 4 * 7 * 12);
    }

    #[test]
    fn truncation_reports_offset() {
        let b = bytes(&sample(3));
        for cut in [0, 3, 10, 15, 16, 100, b.len() - 1] {
            match read_ggs1(&b[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_magic_and_trailing_bytes() {
        let mut b = bytes(&sample(4));
        b[0] = b'X';
        assert!(matches!(read_ggs1(&b), Err(Error::Format { offset: 0, .. })));
        let mut b = bytes(&sample(4));
        let n = b.len();
        b.push(0);
        assert!(matches!(read_ggs1(&b), Err(Error::Format { offset, .. }) if offset as usize == n));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let mut b = bytes(&sample(5));
        b[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_ggs1(&b), Err(Error::Format { offset: 20, .. })));
    }

    #[test]
    fn json_and_binary_agree() {
        let dir = tempfile::tempdir().unwrap();
        let s = read_ggs1(&bytes(&sample(6))).unwrap();
        let parent = vec![None, Some(0), Some(1), Some(1)];
        save_json_fixture(&s, parent.clone(), dir.path().join("s.json")).unwrap();
        save_sequence(&s, dir.path().join("s.ggs")).unwrap();
        let (from_json, p) = load_json_fixture(dir.path().join("s.json")).unwrap();
        assert_eq!(p, parent);
        assert_eq!(from_json, load_sequence(dir.path().join("s.ggs")).unwrap());
    }
}
