//! Flat named-tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     4 bytes  "CRCK"
//! version   u32
//! entries   u64
//! per entry:
//!   name_len  u32
//!   name      name_len bytes, UTF-8
//!   rank      u32
//!   dims      rank x u64
//!   data      prod(dims) x f64
//! ```

use std::io::{Read, Write};

use super::params::ParamStore;
use super::tensor::Tensor;
use super::AutodiffError;

pub const MAGIC: &[u8; 4] = b"CRCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
}

impl From<AutodiffError> for CheckpointError {
    fn from(e: AutodiffError) -> Self {
        CheckpointError::Malformed(e.to_string())
    }
}

pub fn write_entries<'a, W: Write>(
    mut w: W,
    entries: impl ExactSizeIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u64).to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_entries<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let count = read_u64(&mut r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Malformed("entry name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank == 0 || rank > 8 {
            return Err(CheckpointError::Malformed(format!("{name}: rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(&mut r)? as usize);
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&l| l > 0 && l < (1 << 32))
            .ok_or_else(|| CheckpointError::Malformed(format!("{name}: dims {dims:?}")))?;
        let mut data = Vec::with_capacity(len);
        let mut b = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        out.push((name, Tensor::new(dims, data)?));
    }
    Ok(out)
}

pub fn save_store<W: Write>(store: &ParamStore, w: W) -> Result<(), CheckpointError> {
    let entries: Vec<(&str, &Tensor)> = store.iter().collect();
    write_entries(w, entries.into_iter())
}

/// Overwrites every parameter of `store` from the entries; names and shapes
/// must match exactly, with no missing or extra entries.
pub fn load_into_store(store: &mut ParamStore, entries: Vec<(String, Tensor)>) -> Result<(), CheckpointError> {
    if entries.len() != store.len() {
        return Err(CheckpointError::Mismatch(format!(
            "checkpoint has {} tensors, model has {}",
            entries.len(),
            store.len()
        )));
    }
    for (name, t) in entries {
        let id = store
            .id(&name)
            .ok_or_else(|| CheckpointError::Mismatch(format!("unknown tensor {name}")))?;
        if store.value(id).shape() != t.shape() {
            return Err(CheckpointError::Mismatch(format!(
                "{name}: checkpoint shape {:?}, model shape {:?}",
                t.shape(),
                store.value(id).shape()
            )));
        }
        *store.value_mut(id) = t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_magic_and_version() {
        assert!(matches!(read_entries(&b"NOPE\x01\0\0\0"[..]), Err(CheckpointError::BadMagic)));
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&7u32.to_le_bytes());
        buf.extend_from_slice(&0u64.to_le_bytes());
        assert!(matches!(read_entries(&buf[..]), Err(CheckpointError::Version { found: 7 })));
    }

    #[test]
    fn truncated_input_is_an_error() {
        let t = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_entries(&mut buf, vec![("a", &t)].into_iter()).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_entries(&buf[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            entries in proptest::collection::vec(
                ("[a-z._]{1,12}", 1usize..4, 1usize..5, proptest::collection::vec(proptest::num::f64::ANY, 20)),
                0..5,
            )
        ) {
            let tensors: Vec<(String, Tensor)> = entries
                .into_iter()
                .map(|(n, r, c, vals)| (n, Tensor::matrix(r, c, vals[..r * c].to_vec()).unwrap()))
                .collect();
            let mut buf = Vec::new();
            write_entries(&mut buf, tensors.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
            let back = read_entries(&buf[..]).unwrap();
            prop_assert_eq!(back.len(), tensors.len());
            for ((n1, t1), (n2, t2)) in tensors.iter().zip(&back) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
                let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(b1, b2);
            }
        }
    }
}
