//! CGMB weight blob.
//!
//! All integers little-endian:
//!
//! ```text
//! "CGMB"  u32 version  u32 count
//! count x { u32 name_len, name (UTF-8), u8 dtype (0 = f32),
//!           u32 ndim, ndim x u32 dim, u64 offset }
//! u64 payload_len  payload (f32 LE, entries back to back)
//! u32 CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Entries are sorted by name and offsets count bytes from the payload start,
//! so a given weight set always serializes to the same bytes.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BLOB_MAGIC: &[u8; 4] = b"CGMB";
pub const BLOB_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BlobEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

pub fn write_blob(weights: &BTreeMap<String, Tensor<f32>>) -> (Vec<u8>, Vec<BlobEntry>) {
    let mut out = Vec::new();
    out.extend_from_slice(BLOB_MAGIC);
    out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    out.extend_from_slice(&(weights.len() as u32).to_le_bytes());
    let mut entries = Vec::with_capacity(weights.len());
    let mut offset = 0u64;
    for (name, t) in weights {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        entries.push(BlobEntry { name: name.clone(), dtype: "f32".into(), shape: t.shape().to_vec(), offset });
        offset += 4 * t.len() as u64;
    }
    out.extend_from_slice(&offset.to_le_bytes());
    for t in weights.values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    (out, entries)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Shape("blob header runs past the end of the file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Weight table in file order plus the tensors by name.
pub type BlobContents = (Vec<BlobEntry>, BTreeMap<String, Tensor<f32>>);

/// Parses and verifies a blob, returning its table and tensors.
pub fn read_blob(bytes: &[u8]) -> Result<BlobContents> {
    if bytes.len() < 4 || &bytes[..4] != BLOB_MAGIC {
        return Err(Error::Magic { what: "weight blob".into(), expected: "CGMB".into() });
    }
    if bytes.len() < 12 + 8 + 4 {
        return Err(Error::Checksum(format!("blob of {} bytes is truncated", bytes.len())));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Checksum(format!("blob CRC-32 {actual:08x} does not match stored {stored:08x}")));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != BLOB_VERSION {
        return Err(Error::Version { expected: BLOB_VERSION, found: version });
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Shape("weight name is not UTF-8".into()))?;
        let dtype = r.take(1)?[0];
        if dtype != DTYPE_F32 {
            return Err(Error::Shape(format!("weight `{name}` has unsupported dtype code {dtype}")));
        }
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let offset = r.u64()?;
        entries.push(BlobEntry { name, dtype: "f32".into(), shape, offset });
    }
    let payload_len = r.u64()? as usize;
    let payload = r.take(payload_len)?;
    if r.pos != body.len() {
        return Err(Error::Shape("trailing bytes after blob payload".into()));
    }
    let mut tensors = BTreeMap::new();
    let mut expected_offset = 0u64;
    for e in &entries {
        let len: usize = e.shape.iter().product();
        if e.offset != expected_offset {
            return Err(Error::Shape(format!(
                "weight `{}` at offset {} overlaps or leaves a gap (expected {expected_offset})",
                e.name, e.offset
            )));
        }
        let start = e.offset as usize;
        let end = start + 4 * len;
        if end > payload.len() {
            return Err(Error::Shape(format!("weight `{}` extends past the payload", e.name)));
        }
        let data = payload[start..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        if tensors.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?).is_some() {
            return Err(Error::Shape(format!("weight `{}` appears twice", e.name)));
        }
        expected_offset = end as u64;
    }
    if expected_offset as usize != payload.len() {
        return Err(Error::Shape("payload has unreferenced bytes".into()));
    }
    Ok((entries, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BTreeMap<String, Tensor<f32>> {
        let mut w = BTreeMap::new();
        w.insert("b".to_string(), Tensor::new(vec![2], vec![1.5, -0.0]).unwrap());
        w.insert("a".to_string(), Tensor::new(vec![1, 3], vec![f32::MIN_POSITIVE, 2.0, 3.0]).unwrap());
        w
    }

    #[test]
    fn round_trip_preserves_bits() {
        let (bytes, entries) = write_blob(&sample());
        assert_eq!(entries[0].name, "a");
        assert_eq!(entries[1].offset, 12);
        let (read_entries, tensors) = read_blob(&bytes).unwrap();
        assert_eq!(read_entries, entries);
        for (k, t) in sample() {
            let got = &tensors[&k];
            assert!(got.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn truncation_and_corruption_fail_the_checksum() {
        let (bytes, _) = write_blob(&sample());
        assert!(matches!(read_blob(&bytes[..bytes.len() - 5]), Err(Error::Checksum(_))));
        let mut bad = bytes.clone();
        bad[20] ^= 1;
        assert!(matches!(read_blob(&bad), Err(Error::Checksum(_))));
    }

    #[test]
    fn version_mismatch() {
        let (mut bytes, _) = write_blob(&sample());
        bytes[4] = 9;
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(read_blob(&bytes), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn empty_blob() {
        let (bytes, entries) = write_blob(&BTreeMap::new());
        assert!(entries.is_empty());
        assert!(read_blob(&bytes).unwrap().1.is_empty());
    }
}
