//! Binary weights container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "RVPW" | version: u16 | count: u32 |
//!   count × ( name_len: u32 | name: UTF-8 | rank: u8 | dims: rank × u32 | data: f32 × Πdims )
//! ```

use std::collections::HashSet;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"RVPW";
pub const VERSION: u16 = 1;

const MAX_RANK: usize = 8;
const MAX_NAME: usize = 1 << 12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeightsError {
    #[error("not a weights file (bad magic {0:02x?})")]
    BadMagic([u8; 4]),
    #[error("unsupported weights version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("weights file truncated at byte {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("tensor {index}: name is not valid UTF-8")]
    BadName { index: usize },
    #[error("tensor {index}: name of {len} bytes is too long")]
    NameTooLong { index: usize, len: usize },
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("tensor {name:?}: rank {rank} exceeds {MAX_RANK}")]
    Rank { name: String, rank: usize },
    #[error("tensor {name:?}: shape {dims:?} is too large")]
    TooLarge { name: String, dims: Vec<usize> },
    #[error("{0} trailing bytes after last tensor")]
    Trailing(usize),
    #[error("tensor {name:?}: {len} values do not fill shape {dims:?}")]
    Shape { name: String, dims: Vec<usize>, len: usize },
    #[error("missing tensor {0:?}")]
    Missing(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode(tensors: &[NamedTensor]) -> Result<Vec<u8>, WeightsError> {
    let mut seen = HashSet::new();
    let payload: usize = tensors.iter().map(|t| 4 + t.name.len() + 1 + 4 * t.dims.len() + 4 * t.data.len()).sum();
    let mut out = Vec::with_capacity(10 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (index, t) in tensors.iter().enumerate() {
        if !seen.insert(t.name.as_str()) {
            return Err(WeightsError::DuplicateName(t.name.clone()));
        }
        if t.name.len() > MAX_NAME {
            return Err(WeightsError::NameTooLong { index, len: t.name.len() });
        }
        if t.dims.len() > MAX_RANK {
            return Err(WeightsError::Rank { name: t.name.clone(), rank: t.dims.len() });
        }
        if t.dims.iter().product::<usize>() != t.data.len() {
            return Err(WeightsError::Shape { name: t.name.clone(), dims: t.dims.clone(), len: t.data.len() });
        }
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.dims.len() as u8);
        for &d in &t.dims {
            let d = u32::try_from(d).map_err(|_| WeightsError::TooLarge { name: t.name.clone(), dims: t.dims.clone() })?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightsError> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(WeightsError::Truncated { offset: self.pos, needed: n - remaining });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WeightsError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WeightsError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>, WeightsError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = match r.take(4) {
        Ok(m) => m.try_into().unwrap(),
        Err(_) => {
            let mut m = [0u8; 4];
            m[..bytes.len()].copy_from_slice(bytes);
            if &m[..bytes.len()] != &MAGIC[..bytes.len()] {
                return Err(WeightsError::BadMagic(m));
            }
            return Err(WeightsError::Truncated { offset: 0, needed: 4 - bytes.len() });
        }
    };
    if &magic != MAGIC {
        return Err(WeightsError::BadMagic(magic));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(WeightsError::Version { found: version, expected: VERSION });
    }
    let count = r.u32()? as usize;
    let mut seen = HashSet::new();
    // every record needs at least 5 bytes, so a huge count fails fast
    let mut out = Vec::with_capacity(count.min(bytes.len() / 5));
    for index in 0..count {
        let len = r.u32()? as usize;
        if len > MAX_NAME {
            return Err(WeightsError::NameTooLong { index, len });
        }
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| WeightsError::BadName { index })?
            .to_string();
        let rank = r.u8()? as usize;
        if rank > MAX_RANK {
            return Err(WeightsError::Rank { name, rank });
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4).map(|_| n))
            .ok_or_else(|| WeightsError::TooLarge { name: name.clone(), dims: dims.clone() })?;
        let raw = r.take(numel * 4)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if !seen.insert(name.clone()) {
            return Err(WeightsError::DuplicateName(name));
        }
        out.push(NamedTensor { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(WeightsError::Trailing(bytes.len() - r.pos));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<NamedTensor> {
        vec![
            NamedTensor { name: "a.w".into(), dims: vec![2, 1, 1, 1], data: vec![1.5, -2.0] },
            NamedTensor { name: "s".into(), dims: vec![1], data: vec![0.25] },
            NamedTensor { name: "empty".into(), dims: vec![0], data: vec![] },
        ]
    }

    #[test]
    fn round_trip() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"RVPW");
        assert_eq!(decode(&bytes).unwrap(), sample());
    }

    #[test]
    fn every_truncation_is_an_error() {
        let bytes = encode(&sample()).unwrap();
        for cut in 0..bytes.len() {
            let err = decode(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, WeightsError::Truncated { .. }), "cut {cut}: {err:?}");
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[4] = 9;
        assert_eq!(decode(&bytes), Err(WeightsError::Version { found: 9, expected: 1 }));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(WeightsError::BadMagic(_))));
        assert!(matches!(decode(b"XY"), Err(WeightsError::BadMagic(_))));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut t = sample();
        t[1].name = "a.w".into();
        assert!(matches!(encode(&t), Err(WeightsError::DuplicateName(_))));
    }

    #[test]
    fn huge_dims_do_not_allocate() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RVPW");
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(b'x');
        bytes.push(2);
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode(&bytes).is_err());
    }
}
