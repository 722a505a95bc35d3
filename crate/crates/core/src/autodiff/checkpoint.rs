//! Flat parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "BAETCKPT"
//! version  u32      currently 1
//! count    u32      number of tensors
//! count × {
//!   name_len u32, name (UTF-8, name_len bytes)
//!   rows u32, cols u32
//!   rows*cols × f32 values, row-major
//! }
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BAETCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("parameter name is not UTF-8")]
    BadName,
    #[error("checkpoint has no parameter {0}")]
    Missing(String),
    #[error("unknown parameter {0} in checkpoint")]
    Unknown(String),
    #[error("parameter {name}: checkpoint shape {found:?}, model expects {expected:?}")]
    Shape { name: String, expected: (usize, usize), found: (usize, usize) },
}

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut w: W) -> io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rows() as u32).to_le_bytes())?;
        w.write_all(&(t.cols() as u32).to_le_bytes())?;
        for &x in t.data() {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::BadName)?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut b = [0u8; 4];
        for _ in 0..rows * cols {
            r.read_exact(&mut b)?;
            data.push(f32::from_le_bytes(b) as f64);
        }
        out.push((name, Tensor::from_vec(rows, cols, data).expect("length checked")));
    }
    Ok(out)
}

impl ParamStore {
    /// Overwrites every parameter from checkpoint entries. Names and shapes must match exactly.
    pub fn load_entries(&mut self, entries: Vec<(String, Tensor)>) -> Result<(), CheckpointError> {
        let mut seen = vec![false; self.len()];
        for (name, t) in entries {
            let id = self.id(&name).ok_or_else(|| CheckpointError::Unknown(name.clone()))?;
            let expected = self.get(id).shape();
            if expected != t.shape() {
                return Err(CheckpointError::Shape { name, expected, found: t.shape() });
            }
            *self.get_mut(id) = t;
            seen[id.index()] = true;
        }
        if let Some(missing) = self.ids().find(|id| !seen[id.index()]) {
            return Err(CheckpointError::Missing(self.name(missing).to_string()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_f32() {
        let mut store = ParamStore::new();
        store.insert("a.w", Tensor::from_rows(&[vec![0.5, -0.25], vec![1.0, 2.0]]), true);
        store.insert("a.b", Tensor::row_vector(&[3.0]), false);
        let mut buf = Vec::new();
        write_checkpoint(&store, &mut buf).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        let entries = read_checkpoint(buf.as_slice()).unwrap();
        let mut other = store.clone();
        other.get_mut(other.id("a.b").unwrap()).data_mut()[0] = 0.0;
        other.load_entries(entries).unwrap();
        assert_eq!(other.by_name("a.b").unwrap().data(), &[3.0]);
        assert_eq!(other.by_name("a.w").unwrap(), store.by_name("a.w").unwrap());
    }

    #[test]
    fn rejects_bad_magic_and_shape() {
        assert!(matches!(read_checkpoint(&b"NOTACKPTxxxxxxxx"[..]), Err(CheckpointError::BadMagic)));
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros(2, 2), true);
        let err = store.load_entries(vec![("w".into(), Tensor::zeros(1, 2))]).unwrap_err();
        assert!(matches!(err, CheckpointError::Shape { .. }));
    }
}
