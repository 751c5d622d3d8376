//! Tensor wire format: a JSON header {shape, dtype} with a u32
//! little-endian length prefix, followed by a flat little-endian f64
//! payload. Checkpoints concatenate these blocks.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    shape: Vec<usize>,
    dtype: String,
}

/// Serialize one tensor at the writer's current position.
pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    let header = serde_json::to_vec(&Header {
        shape: t.shape().to_vec(),
        dtype: "f64".into(),
    })
    .expect("header serialization cannot fail");
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Read one tensor block. `offset` is the reader's absolute position, used
/// to report where a malformed or truncated stream failed.
pub fn read_tensor<R: Read>(r: &mut R, offset: &mut u64) -> Result<Tensor> {
    let mut len_buf = [0u8; 4];
    read_exact_at(r, &mut len_buf, offset, "tensor header length")?;
    let header_len = u32::from_le_bytes(len_buf) as usize;
    if header_len > 1 << 20 {
        return Err(Error::Format {
            offset: *offset,
            msg: format!("implausible header length {header_len}"),
        });
    }
    let mut header_buf = vec![0u8; header_len];
    read_exact_at(r, &mut header_buf, offset, "tensor header")?;
    let header: Header = serde_json::from_slice(&header_buf).map_err(|e| Error::Format {
        offset: *offset,
        msg: format!("bad tensor header: {e}"),
    })?;
    if header.dtype != "f64" {
        return Err(Error::Format {
            offset: *offset,
            msg: format!("unsupported dtype {:?}", header.dtype),
        });
    }
    let n: usize = header.shape.iter().product();
    let mut data = vec![0.0f64; n];
    let mut buf = [0u8; 8];
    for v in data.iter_mut() {
        read_exact_at(r, &mut buf, offset, "tensor payload")?;
        *v = f64::from_le_bytes(buf);
    }
    Tensor::from_vec(header.shape, data)
}

fn read_exact_at<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    offset: &mut u64,
    what: &str,
) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::Format {
        offset: *offset,
        msg: format!("truncated while reading {what}: {e}"),
    })?;
    *offset += buf.len() as u64;
    Ok(())
}
