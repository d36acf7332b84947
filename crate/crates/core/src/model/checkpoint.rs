//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "ANYSLEEP"
//! version  u32
//! config   u64 length + UTF-8 JSON of ModelConfig
//! count    u64
//! entries  count x { kind u8 (0 parameter, 1 buffer), name u32 length + UTF-8,
//!                    ndim u32, dims ndim x u64, values f64 x product(dims) }
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::params::Parameters;
use super::ModelError;
use crate::numkernel::Array;

pub const MAGIC: &[u8; 8] = b"ANYSLEEP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Parameters,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let json = serde_json::to_vec(&self.config).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let entries: Vec<(u8, &str, &Array)> = self
            .params
            .iter()
            .map(|(n, a)| (0u8, n, a))
            .chain(self.params.buffers().map(|(n, a)| (1u8, n, a)))
            .collect();
        out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
        for (kind, name, a) in entries {
            out.push(kind);
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(a.ndim() as u32).to_le_bytes());
            for &d in a.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in a.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(ModelError::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
        }
        let len = r.u64()? as usize;
        let config: ModelConfig =
            serde_json::from_slice(r.take(len)?).map_err(|e| ModelError::Checkpoint(format!("config: {e}")))?;
        config.validate()?;
        let count = r.u64()?;
        let mut values = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        for _ in 0..count {
            let kind = r.take(1)?[0];
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| ModelError::Checkpoint(format!("non-UTF-8 name at byte {}", r.pos)))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| ModelError::Checkpoint("array too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let a = Array::new(shape, data)?;
            let target = match kind {
                0 => &mut values,
                1 => &mut buffers,
                k => return Err(ModelError::Checkpoint(format!("unknown entry kind {k}"))),
            };
            if target.insert(name.clone(), a).is_some() {
                return Err(ModelError::Checkpoint(format!("duplicate entry {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(ModelError::Checkpoint(format!("trailing bytes at offset {}", r.pos)));
        }
        let params = Parameters::from_named(&config, values, buffers)?;
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            ModelError::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Fusion;

    #[test]
    fn round_trip_is_exact() {
        for fusion in [Fusion::Mid, Fusion::Early, Fusion::Late] {
            let config = ModelConfig::with_shape(2, 4, fusion);
            let ck = Checkpoint {
                params: Parameters::init(&config, 9).unwrap(),
                config,
            };
            let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            assert_eq!(back, ck);
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let config = ModelConfig::with_shape(2, 4, Fusion::Mid);
        let bytes = Checkpoint {
            params: Parameters::init(&config, 1).unwrap(),
            config,
        }
        .to_bytes()
        .unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut v2 = bytes;
        v2[8] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(ModelError::Checkpoint(m)) if m.contains("version")));
    }
}
