//! Binary checkpoints: magic `ADMM`, u32 version, u32 tensor count, then per
//! tensor a u32 name length, UTF-8 name, u8 rank, u32 dims and little-endian
//! f32 data. All integers are little-endian.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{ParamStore, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ADMM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar, W: Write>(mut w: W, params: &ParamStore<T>) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(tensor.rank())
            .map_err(|_| Error::Format(format!("{name} has rank {}", tensor.rank())))?;
        buf.push(rank);
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.data() {
            let v = v.to_f32().expect("scalar converts to f32");
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamStore<f32>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let shape = (0..rank[0])
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        store.add(name, Tensor::new(shape, data)?)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout() {
        let mut p = ParamStore::<f32>::new();
        p.add("w", Tensor::new(vec![2], vec![1.0, -0.5]).unwrap()).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &p).unwrap();
        let mut expected = b"ADMM".to_vec();
        expected.extend([1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, b'w', 1, 2, 0, 0, 0]);
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-0.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(read_checkpoint(bytes.as_slice()).unwrap(), p);
    }

    #[test]
    fn truncated_or_foreign_files_fail() {
        assert!(read_checkpoint(&b"ADMX\x01\0\0\0\0\0\0\0"[..]).is_err());
        assert!(read_checkpoint(&b"ADMM\x01\0\0\0\x01\0\0\0\x05\0\0\0ab"[..]).is_err());
    }
}
