//! EIMS: a stack of elementary influence maps.
//!
//! ```text
//! "EIMS"  u32 version  u32 name_len  layer name
//! u32 C  u32 H  u32 W  u64 seed  u64 n_pairs
//! C*H*W f32, row-major [C, H, W]
//! ```
//!
//! All integers and floats little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::influence::EimStack;

pub const EIMS_MAGIC: &[u8; 4] = b"EIMS";
pub const EIMS_VERSION: u32 = 1;

pub fn encode_eims(stack: &EimStack<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(48 + stack.layer.len() + 4 * stack.data.len());
    out.extend_from_slice(EIMS_MAGIC);
    out.extend_from_slice(&EIMS_VERSION.to_le_bytes());
    out.extend_from_slice(&(stack.layer.len() as u32).to_le_bytes());
    out.extend_from_slice(stack.layer.as_bytes());
    for d in [stack.channels, stack.height, stack.width] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&stack.seed.to_le_bytes());
    out.extend_from_slice(&(stack.n_pairs as u64).to_le_bytes());
    for v in &stack.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_eims(bytes: &[u8]) -> Result<EimStack<f32>> {
    let short = || Error::Shape("EIMS file is truncated".into());
    if bytes.len() < 4 || &bytes[..4] != EIMS_MAGIC {
        return Err(Error::Magic { what: "influence map stack".into(), expected: "EIMS".into() });
    }
    let mut pos = 4;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(short)?;
        pos += n;
        Ok(s)
    };
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
    let version = u32_at(take(4)?);
    if version != EIMS_VERSION {
        return Err(Error::Version { expected: EIMS_VERSION, found: version });
    }
    let name_len = u32_at(take(4)?) as usize;
    let layer = String::from_utf8(take(name_len)?.to_vec()).map_err(|_| Error::Shape("layer name is not UTF-8".into()))?;
    let c = u32_at(take(4)?) as usize;
    let h = u32_at(take(4)?) as usize;
    let w = u32_at(take(4)?) as usize;
    let seed = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    let n_pairs = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
    let len = c.checked_mul(h).and_then(|v| v.checked_mul(w)).ok_or_else(short)?;
    let data: Vec<f32> = take(4 * len)?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
    if pos != bytes.len() {
        return Err(Error::Shape(format!("{} trailing bytes in EIMS file", bytes.len() - pos)));
    }
    let mut stack = EimStack::new(&layer, c, h, w, data)?;
    stack.seed = seed;
    stack.n_pairs = n_pairs;
    Ok(stack)
}

pub fn write_eims(path: &Path, stack: &EimStack<f32>) -> Result<()> {
    fs::write(path, encode_eims(stack))?;
    Ok(())
}

pub fn read_eims(path: &Path) -> Result<EimStack<f32>> {
    decode_eims(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack() -> EimStack<f32> {
        let mut s = EimStack::new("deconv1", 2, 1, 3, vec![0.0, 1.0, 2.5, -0.0, 1e-30, 7.0]).unwrap();
        s.seed = u64::MAX - 3;
        s.n_pairs = 256;
        s
    }

    #[test]
    fn round_trip() {
        let s = stack();
        let bytes = encode_eims(&s);
        assert_eq!(bytes.len(), 4 * 3 + 7 + 12 + 16 + 24);
        let back = decode_eims(&bytes).unwrap();
        assert_eq!(back.layer, "deconv1");
        assert_eq!((back.seed, back.n_pairs), (s.seed, 256));
        assert!(back.data.iter().zip(&s.data).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn bad_inputs() {
        let bytes = encode_eims(&stack());
        assert!(matches!(decode_eims(&bytes[..bytes.len() - 1]), Err(Error::Shape(_))));
        assert!(matches!(decode_eims(b"XXXX"), Err(Error::Magic { .. })));
        let mut v = bytes.clone();
        v[4] = 2;
        assert!(matches!(decode_eims(&v), Err(Error::Version { found: 2, .. })));
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_eims(&extra).is_err());
    }
}
