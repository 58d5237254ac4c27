//! Named-tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "LASSTNSR"
//! version   u32      1
//! count     u32
//! count × {
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims (u64 × ndim)
//!   data     f32 × product(dims)
//! }
//! ```
//!
//! Values are stored as 32-bit floats, so a save/load round trip rounds
//! each f64 to the nearest f32.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"LASSTNSR";
const VERSION: u32 = 1;

pub fn encode_tensors<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in &t.data {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_tensors(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a tensor container".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let bytes = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        out.push((name, Tensor { shape, data }));
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

pub fn write_tensors<'a>(
    path: &Path,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    fs::write(path, encode_tensors(tensors))?;
    Ok(())
}

pub fn read_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let buf = fs::read(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })?;
    decode_tensors(&buf)
}

/// Copies tensors read from a container into `dst` by name; every
/// destination tensor must be present with the same shape.
pub fn assign_by_name(dst: Vec<(String, &mut Tensor)>, src: Vec<(String, Tensor)>) -> Result<()> {
    let mut src: std::collections::HashMap<String, Tensor> = src.into_iter().collect();
    for (name, t) in dst {
        let s = src
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if s.shape != t.shape {
            return Err(Error::Checkpoint(format!(
                "{name}: checkpoint shape {:?} does not match {:?}",
                s.shape, t.shape
            )));
        }
        *t = s;
    }
    if let Some(extra) = src.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_through_f32(
            rows in 1usize..5,
            cols in 1usize..5,
            vals in proptest::collection::vec(-1e6f32..1e6, 25),
            name in "[a-z.0-9_]{1,20}",
        ) {
            let data: Vec<f64> = vals[..rows * cols].iter().map(|&v| v as f64).collect();
            let t = Tensor { shape: vec![rows, cols], data };
            let bytes = encode_tensors([(name.as_str(), &t)]);
            let back = decode_tensors(&bytes).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(&back[0].0, &name);
            prop_assert_eq!(&back[0].1, &t);
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let t = Tensor::filled(&[2], 1.5);
        let bytes = encode_tensors([("x", &t)]);
        assert!(decode_tensors(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_tensors(b"NOTMAGIC\x01\0\0\0\0\0\0\0").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_tensors(&extra).is_err());
    }

    #[test]
    fn assign_checks_names_and_shapes() {
        let mut a = Tensor::zeros(&[2]);
        let src = vec![("a".to_string(), Tensor::filled(&[3], 1.0))];
        assert!(assign_by_name(vec![("a".into(), &mut a)], src).is_err());
        let src = vec![("b".to_string(), Tensor::filled(&[2], 1.0))];
        assert!(assign_by_name(vec![("a".into(), &mut a)], src).is_err());
        let src = vec![("a".to_string(), Tensor::filled(&[2], 1.0))];
        assign_by_name(vec![("a".into(), &mut a)], src).unwrap();
        assert_eq!(a.data, vec![1.0, 1.0]);
    }
}
