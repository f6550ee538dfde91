//! Binary tensor snapshot format.
//!
//! Layout, all fields little-endian:
//!   magic "PNSN" | u32 version = 1 | u32 blob count
//!   per blob: u32 rank | u32 extents... | raw f32 payload
//!
//! Round-trips are bitwise lossless.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor, MAX_RANK};

pub const MAGIC: [u8; 4] = *b"PNSN";
pub const VERSION: u32 = 1;

pub fn save_tensors(path: &Path, tensors: &[&Tensor]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        let dims = t.shape().dims();
        out.write_all(&(dims.len() as u32).to_le_bytes())?;
        for &d in dims {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<Vec<Tensor>> {
    let mut input = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact(&mut input, &mut magic)?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported snapshot version {version}"
        )));
    }
    let count = read_u32(&mut input)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = read_u32(&mut input)? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format(format!("blob rank {rank} out of range")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&mut input)? as usize);
        }
        let shape =
            Shape::new(&dims).map_err(|e| Error::Format(format!("bad blob shape: {e}")))?;
        let mut data = vec![0.0f32; shape.count()];
        let mut buf = [0u8; 4];
        for slot in &mut data {
            read_exact(&mut input, &mut buf)?;
            *slot = f32::from_le_bytes(buf);
        }
        tensors.push(Tensor::from_vec(&dims, data).expect("shape/count agree by construction"));
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after last blob".into()));
    }
    Ok(tensors)
}

/// Single-tensor convenience used for the dataset mean image.
pub fn save_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    save_tensors(path, &[tensor])
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let mut tensors = load_tensors(path)?;
    match tensors.len() {
        1 => Ok(tensors.remove(0)),
        n => Err(Error::Format(format!("expected a single blob, found {n}"))),
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format("truncated snapshot".into())
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Pcg32;

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.pnsn");
        let mut rng = Pcg32::new(5, 0);
        let a = Tensor::from_vec(&[2, 3], (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .unwrap();
        let b = Tensor::from_vec(&[4], vec![0.0, -0.0, f32::MIN_POSITIVE, 1e30]).unwrap();
        save_tensors(&path, &[&a, &b]).unwrap();
        let loaded = load_tensors(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].shape().dims(), &[2, 3]);
        assert!(loaded[0]
            .data()
            .iter()
            .zip(a.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(loaded[1]
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn header_bytes_are_pinned() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.pnsn");
        let t = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        save_tensors(&path, &[&t]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // "PNSN", version 1, one blob, rank 1, extent 2, payload 1.0f32 2.0f32
        assert_eq!(&bytes[0..4], b"PNSN");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &2u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[24..28], &2.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 28);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.pnsn");
        let t = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        save_tensors(&path, &[&t]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        match load_tensors(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("truncated")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.pnsn");
        std::fs::write(&path, b"XXXX\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(matches!(load_tensors(&path), Err(Error::Format(_))));
    }
}
