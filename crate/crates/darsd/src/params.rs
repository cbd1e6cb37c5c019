//! Named parameter storage and the binary checkpoint format.
//!
//! Checkpoint layout: magic `DARSDCKP`, version u32, entry count u32, then per
//! entry a length-prefixed name, a dimension-count-prefixed shape (u64 dims)
//! and the little-endian f64 payload.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DARSDCKP";
const VERSION: u32 = 1;

/// Ordered, named collection of learnable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    index: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        match self.index.get(name) {
            Some(&i) => self.entries[i].1 = t,
            None => {
                self.index.insert(name.to_string(), self.entries.len());
                self.entries.push((name.to_string(), t));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    /// Merge another set in; names must not collide.
    pub fn absorb(&mut self, other: ParamSet) {
        for (name, t) in other.entries {
            assert!(!self.index.contains_key(&name), "duplicate param {name}");
            self.insert(&name, t);
        }
    }

    /// Order-insensitive content checksum, used by stage-separation tests.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        };
        for (name, t) in &self.entries {
            for b in name.as_bytes() {
                mix(*b);
            }
            for v in t.data() {
                for b in v.to_le_bytes() {
                    mix(b);
                }
            }
        }
        h
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > buf.len() {
                return Err(Error::Checkpoint("truncated checkpoint".into()));
            }
            let s = &buf[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let ver = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if ver != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {ver}")));
        }
        let n = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut set = ParamSet::new();
        for _ in 0..n {
            let nl = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut pos, nl)?.to_vec())
                .map_err(|_| Error::Checkpoint("non-utf8 name".into()))?;
            let nd = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(nd);
            for _ in 0..nd {
                shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
            }
            let cnt: usize = shape.iter().product();
            let raw = take(&mut pos, cnt * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            set.insert(
                &name,
                Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?,
            );
        }
        Ok(set)
    }
}

/// Fan-in-scaled uniform initialization: U(−1/√fan_in, 1/√fan_in).
pub fn init_uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut set = ParamSet::new();
        set.insert("a.w", init_uniform(&mut rng, vec![3, 4], 3));
        set.insert("a.b", init_uniform(&mut rng, vec![4], 3));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        set.save(&path).unwrap();
        let back = ParamSet::load(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.get("a.w").unwrap(), set.get("a.w").unwrap());
        assert_eq!(back.get("a.b").unwrap(), set.get("a.b").unwrap());
        assert_eq!(back.checksum(), set.checksum());
    }

    #[test]
    fn load_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        std::fs::write(&path, b"NOTDARSD\x00\x00\x00\x00").unwrap();
        assert!(ParamSet::load(&path).is_err());
    }
}
