//! NDT1 tensor files.
//!
//! Layout: the magic `NDT1`, a little-endian `u32` header length, a UTF-8 JSON
//! header `{"dtype":"f32","shape":[...]}`, then the raw little-endian payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{numel, Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NDT1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    shape: Vec<usize>,
}

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        dtype: T::DTYPE.to_string(),
        shape: t.shape().to_vec(),
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(8 + header.len() + t.len() * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for &x in t.data() {
        x.write_le(&mut out);
    }
    out
}

/// Decodes a tensor, converting between `f32` and `f64` payloads if needed.
pub fn decode<T: Scalar>(bytes: &[u8], origin: &Path) -> Result<Tensor<T>> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::format(origin, "missing NDT1 magic"));
    }
    let hlen = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let body = 8 + hlen;
    if bytes.len() < body {
        return Err(Error::format(origin, "truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[8..body])
        .map_err(|e| Error::format(origin, format!("bad header: {e}")))?;
    let n = numel(&header.shape);
    let payload = &bytes[body..];
    let data: Vec<T> = match header.dtype.as_str() {
        "f32" => read_payload::<f32>(payload, n, origin)?
            .into_iter()
            .map(|x| T::of(x as f64))
            .collect(),
        "f64" => read_payload::<f64>(payload, n, origin)?
            .into_iter()
            .map(T::of)
            .collect(),
        other => return Err(Error::format(origin, format!("unsupported dtype {other}"))),
    };
    Tensor::new(&header.shape, data).map_err(|e| Error::format(origin, e.to_string()))
}

fn read_payload<S: Scalar>(payload: &[u8], n: usize, origin: &Path) -> Result<Vec<S>> {
    if payload.len() != n * S::BYTES {
        return Err(Error::format(
            origin,
            format!("payload has {} bytes, expected {}", payload.len(), n * S::BYTES),
        ));
    }
    Ok(payload.chunks_exact(S::BYTES).map(S::read_le).collect())
}

pub fn write<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::new(&[2], vec![1.0, -2.5]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..4], b"NDT1");
        let hlen = u32::from_le_bytes([b[4], b[5], b[6], b[7]]) as usize;
        let header = std::str::from_utf8(&b[8..8 + hlen]).unwrap();
        assert_eq!(header, r#"{"dtype":"f32","shape":[2]}"#);
        assert_eq!(&b[8 + hlen..8 + hlen + 4], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 8 + hlen + 8);
    }

    #[test]
    fn rejects_truncated_payload() {
        let t = Tensor::<f32>::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut b = encode(&t);
        b.pop();
        assert!(decode::<f32>(&b, Path::new("x.ndt")).is_err());
        assert!(decode::<f32>(b"NOPE0000", Path::new("x.ndt")).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(shape in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n).map(|i| ((seed as f64 * 1e-9 + i as f64).sin()) as f32).collect();
            let t = Tensor::new(&shape, data).unwrap();
            let back: Tensor<f32> = decode(&encode(&t), Path::new("mem")).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
