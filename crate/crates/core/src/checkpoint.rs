//! Binary checkpoint holding the three trained heads.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "DPCK" | u32 version | u32 len, fingerprint utf-8
//! u32 tensor count, then per tensor:
//!   u32 len, name utf-8 | u32 rank | u64 dims... | f64 values...
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Heads;
use crate::nn::{Linear, Mlp};

const MAGIC: &[u8; 4] = b"DPCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub heads: Heads,
    /// Fingerprint of the configuration that produced the heads.
    pub fingerprint: String,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.fingerprint);
        let tensors = self.heads.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, dims, values) in tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for d in dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let fingerprint = r.string()?;
        let count = r.u32()? as usize;
        let mut read = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len.filter(|&l| l <= r.remaining() / 8).ok_or_else(|| {
                Error::Checkpoint(format!(
                    "tensor {name} with shape {dims:?} overruns the file"
                ))
            })?;
            let values = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            read.push((name, dims, values));
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                r.remaining()
            )));
        }
        let heads = heads_from(&read)?;
        Ok(Checkpoint { heads, fingerprint })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn heads_from(read: &[(String, Vec<usize>, Vec<f64>)]) -> Result<Heads> {
    let dims_of = |name: &str| {
        read.iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, d, _)| d.clone())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    };
    let c = *dims_of("adapter.hidden.weight")?.first().unwrap_or(&0);
    let t = *dims_of("par.hidden.weight")?.first().unwrap_or(&0);
    let mut heads = Heads {
        adapter: Mlp::new(Linear::zeros(c, c), Linear::zeros(c, c)),
        cls: Linear::zeros(c, 1),
        par: Mlp::new(Linear::zeros(2 * t, t), Linear::zeros(t, 1)),
    };
    let expected: Vec<(&'static str, Vec<usize>)> = heads
        .tensors()
        .into_iter()
        .map(|(n, d, _)| (n, d))
        .collect();
    if read.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            expected.len(),
            read.len()
        )));
    }
    for (slot, ((name, dims), (rn, rd, rv))) in heads
        .tensors_mut()
        .into_iter()
        .zip(expected.iter().zip(read))
    {
        if name != rn || dims != rd {
            return Err(Error::Checkpoint(format!(
                "expected tensor {name} {dims:?}, found {rn} {rd:?}"
            )));
        }
        slot.copy_from_slice(rv);
    }
    Ok(heads)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
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

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
