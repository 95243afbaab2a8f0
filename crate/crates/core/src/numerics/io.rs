//! GDVT tensor files.
//!
//! Layout: `b"GDVT"`, version `u8 = 1`, rank `u8`, `rank` dims as `u32` LE,
//! then the payload as row-major `f32` LE. Values are narrowed to `f32` on
//! write and widened back to `f64` on read.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"GDVT";
pub const VERSION: u8 = 1;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(bad("missing GDVT magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(bad(format!("unsupported version {}", bytes[4])));
    }
    let rank = bytes[5] as usize;
    let header = 6 + 4 * rank;
    if bytes.len() < header {
        return Err(bad("truncated header".into()));
    }
    let shape: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let n: usize = shape.iter().product();
    let payload = &bytes[header..];
    if payload.len() != 4 * n {
        return Err(bad(format!(
            "payload holds {} bytes, shape {:?} needs {}",
            payload.len(),
            shape,
            4 * n
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new(&shape, data).map_err(|e| bad(e.to_string()))
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_bytes_are_exact() {
        let t = Tensor::new(&[2, 1], vec![1.0, -0.5]).unwrap();
        let b = encode(&t);
        let mut want = b"GDVT".to_vec();
        want.extend([1, 2, 2, 0, 0, 0, 1, 0, 0, 0]);
        want.extend(1.0f32.to_le_bytes());
        want.extend((-0.5f32).to_le_bytes());
        assert_eq!(b, want);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let t = Tensor::zeros(&[3, 3]);
        let b = encode(&t);
        let err = decode(&b[..b.len() - 1], Path::new("x.gdvt")).unwrap_err();
        assert!(err.to_string().contains("x.gdvt"));
        assert!(decode(b"GDVX\x01\x00", Path::new("y")).is_err());
    }

    proptest! {
        #[test]
        fn f32_representable_values_round_trip(
            dims in proptest::collection::vec(1usize..5, 1..4),
            seed in any::<u32>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n)
                .map(|i| ((i as u32).wrapping_mul(2654435761).wrapping_add(seed) as f32 / 1e6) as f64)
                .collect();
            let t = Tensor::new(&dims, data).unwrap();
            let back = decode(&encode(&t), Path::new("p")).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
