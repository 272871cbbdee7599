//! Self-describing binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!   magic        5 bytes (model family, e.g. b"FFSQ2")
//!   version      u16
//!   fingerprint  u32 length + utf8 bytes (vocabulary identity)
//!   dims         u32 count + count u32 values
//!   tensors      u32 count, then per tensor:
//!                  name (u32 length + utf8), u64 element count, f64 data
//!
//! f64 values round-trip bit-exactly; loading a checkpoint and saving it
//! again produces identical bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),
    #[error("vocabulary fingerprint mismatch: checkpoint has `{found}`, current is `{expected}`")]
    FingerprintMismatch { expected: String, found: String },
    #[error("tensor layout mismatch: {0}")]
    TensorMismatch(String),
    #[error("non-finite value in tensor {0}")]
    NonFinite(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Everything a checkpoint holds besides raw bytes bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub dims: Vec<u32>,
    pub tensors: Vec<(String, Vec<f64>)>,
}

pub fn save(
    path: impl AsRef<Path>,
    magic: &[u8; 5],
    fingerprint: &str,
    dims: &[u32],
    tensors: &[(String, &[f64])],
) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(io_err(path));

    write(magic)?;
    write(&FORMAT_VERSION.to_le_bytes())?;
    write(&(fingerprint.len() as u32).to_le_bytes())?;
    write(fingerprint.as_bytes())?;
    write(&(dims.len() as u32).to_le_bytes())?;
    for d in dims {
        write(&d.to_le_bytes())?;
    }
    write(&(tensors.len() as u32).to_le_bytes())?;
    for (name, data) in tensors {
        write(&(name.len() as u32).to_le_bytes())?;
        write(name.as_bytes())?;
        write(&(data.len() as u64).to_le_bytes())?;
        for v in data.iter() {
            write(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(io_err(path))
}

fn read_bytes(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<u8>, CheckpointError> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| CheckpointError::Truncated(what.to_string()))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32, CheckpointError> {
    let b = read_bytes(r, 4, what)?;
    Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
}

fn read_string(r: &mut impl Read, what: &str) -> Result<String, CheckpointError> {
    let len = read_u32(r, what)? as usize;
    let bytes = read_bytes(r, len, what)?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

pub fn load(path: impl AsRef<Path>, magic: &[u8; 5]) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);

    let found_magic = read_bytes(&mut r, 5, "magic")?;
    if found_magic != magic {
        return Err(CheckpointError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(&found_magic).into_owned(),
        });
    }
    let vb = read_bytes(&mut r, 2, "version")?;
    let version = u16::from_le_bytes(vb.try_into().expect("2 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }

    let fingerprint = read_string(&mut r, "fingerprint")?;
    let n_dims = read_u32(&mut r, "dim count")? as usize;
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(read_u32(&mut r, "dims")?);
    }

    let n_tensors = read_u32(&mut r, "tensor count")? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name = read_string(&mut r, "tensor name")?;
        let len_b = read_bytes(&mut r, 8, &name)?;
        let len = u64::from_le_bytes(len_b.try_into().expect("8 bytes")) as usize;
        let raw = read_bytes(&mut r, len * 8, &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((name, data));
    }

    Ok(Checkpoint {
        fingerprint,
        dims,
        tensors,
    })
}

/// Copy loaded tensors into a live parameter struct, insisting that names,
/// order, and sizes all match.
pub fn restore_into(
    checkpoint: &Checkpoint,
    tensors: Vec<(String, &mut [f64])>,
) -> Result<(), CheckpointError> {
    if checkpoint.tensors.len() != tensors.len() {
        return Err(CheckpointError::TensorMismatch(format!(
            "checkpoint has {} tensors, model expects {}",
            checkpoint.tensors.len(),
            tensors.len()
        )));
    }
    for ((saved_name, saved), (name, dst)) in checkpoint.tensors.iter().zip(tensors) {
        if *saved_name != name {
            return Err(CheckpointError::TensorMismatch(format!(
                "expected tensor `{name}`, found `{saved_name}`"
            )));
        }
        if saved.len() != dst.len() {
            return Err(CheckpointError::TensorMismatch(format!(
                "tensor `{name}`: {} values saved, {} expected",
                saved.len(),
                dst.len()
            )));
        }
        if saved.iter().any(|v| !v.is_finite()) {
            return Err(CheckpointError::NonFinite(name));
        }
        dst.copy_from_slice(saved);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAGIC: &[u8; 5] = b"FFTST";

    fn sample_tensors() -> Vec<(String, Vec<f64>)> {
        vec![
            ("alpha".to_string(), vec![1.0, -2.5, 3.25e-300, f64::MIN]),
            ("beta".to_string(), vec![0.1 + 0.2]),
        ]
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let tensors = sample_tensors();
        let refs: Vec<(String, &[f64])> = tensors
            .iter()
            .map(|(n, d)| (n.clone(), d.as_slice()))
            .collect();
        save(&path, MAGIC, "v1:nf=3;ops=add", &[3, 64], &refs).unwrap();
        let loaded = load(&path, MAGIC).unwrap();
        assert_eq!(loaded.fingerprint, "v1:nf=3;ops=add");
        assert_eq!(loaded.dims, vec![3, 64]);
        for ((n1, d1), (n2, d2)) in tensors.iter().zip(&loaded.tensors) {
            assert_eq!(n1, n2);
            assert_eq!(d1.len(), d2.len());
            for (a, b) in d1.iter().zip(d2) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let tensors = sample_tensors();
        let refs: Vec<(String, &[f64])> = tensors
            .iter()
            .map(|(n, d)| (n.clone(), d.as_slice()))
            .collect();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save(&p1, MAGIC, "fp", &[1], &refs).unwrap();
        save(&p2, MAGIC, "fp", &[1], &refs).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, MAGIC, "fp", &[], &[]).unwrap();
        let err = load(&path, b"OTHER").unwrap_err();
        assert!(matches!(err, CheckpointError::BadMagic { .. }));
    }

    #[test]
    fn truncation_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let tensors = sample_tensors();
        let refs: Vec<(String, &[f64])> = tensors
            .iter()
            .map(|(n, d)| (n.clone(), d.as_slice()))
            .collect();
        save(&path, MAGIC, "fp", &[2], &refs).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 6]).unwrap();
        let err = load(&path, MAGIC).unwrap_err();
        assert!(matches!(err, CheckpointError::Truncated(_)));
    }

    #[test]
    fn restore_checks_names_and_shapes() {
        let ckpt = Checkpoint {
            fingerprint: "fp".into(),
            dims: vec![],
            tensors: vec![("alpha".into(), vec![1.0, 2.0])],
        };
        let mut buf = vec![0.0; 2];
        restore_into(&ckpt, vec![("alpha".into(), buf.as_mut_slice())]).unwrap();
        assert_eq!(buf, vec![1.0, 2.0]);

        let mut wrong_size = vec![0.0; 3];
        let err = restore_into(&ckpt, vec![("alpha".into(), wrong_size.as_mut_slice())])
            .unwrap_err();
        assert!(matches!(err, CheckpointError::TensorMismatch(_)));

        let mut wrong_name = vec![0.0; 2];
        let err = restore_into(&ckpt, vec![("beta".into(), wrong_name.as_mut_slice())])
            .unwrap_err();
        assert!(matches!(err, CheckpointError::TensorMismatch(_)));
    }
}
