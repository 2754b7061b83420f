//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//! `b"TXIMCKPT"`, `u32` version, `u32` tensor count, then per tensor
//! `u32` name length, UTF-8 name, `u32` rank, `u64` per dimension, and the
//! row-major `f64` payload.

use std::io::{Read, Write};

use super::{NnError, ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"TXIMCKPT";
pub const VERSION: u32 = 1;

pub fn encode_tensors(tensors: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn encode_store(store: &ParamStore) -> Vec<u8> {
    let tensors: Vec<_> = store.iter().map(|(_, p)| (p.name.as_str(), &p.value)).collect();
    encode_tensors(&tensors)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.bytes.len() - self.pos < n {
            return Err(NnError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, NnError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| NnError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32()? as usize;
        let shape = (0..rank)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let payload = c.take(
            n.checked_mul(8)
                .ok_or_else(|| NnError::Checkpoint("tensor too large".into()))?,
        )?;
        let data = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if c.pos != bytes.len() {
        return Err(NnError::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

pub fn write_store<W: Write>(store: &ParamStore, mut w: W) -> Result<(), NnError> {
    w.write_all(&encode_store(store))?;
    Ok(())
}

pub fn read_into_store<R: Read>(store: &mut ParamStore, mut r: R) -> Result<(), NnError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    store.load_named(decode_tensors(&bytes)?)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            tensors in prop::collection::vec(
                (prop::collection::vec(1usize..5, 1..4), any::<u64>()),
                0..6,
            )
        ) {
            let mut store = ParamStore::new();
            for (i, (shape, seed)) in tensors.iter().enumerate() {
                let n: usize = shape.iter().product();
                let data = (0..n)
                    .map(|k| f64::from_bits(seed.wrapping_mul(k as u64 + 1) >> 2))
                    .collect();
                store.add(format!("t{i}"), Tensor::new(shape.clone(), data).unwrap());
            }
            let bytes = encode_store(&store);
            let mut loaded = store.clone();
            loaded.zero_grad();
            read_into_store(&mut loaded, bytes.as_slice()).unwrap();
            prop_assert_eq!(encode_store(&loaded), bytes);
        }
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::row_vector(vec![1.0, 2.0]));
        let bytes = encode_store(&store);
        assert!(decode_tensors(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_tensors(&bad).is_err());
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut a = ParamStore::new();
        a.add("w", Tensor::row_vector(vec![1.0, 2.0]));
        let mut b = ParamStore::new();
        b.add("w", Tensor::row_vector(vec![1.0, 2.0, 3.0]));
        assert!(read_into_store(&mut b, encode_store(&a).as_slice()).is_err());
    }
}
