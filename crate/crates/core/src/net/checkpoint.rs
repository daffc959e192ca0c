//! Binary network checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "CSL1"                      4 bytes
//! layer count                 u32
//! per layer:
//!   d_in, d_out               u32, u32
//!   activation tag            u8   (0 relu, 1 elu, 2 sine, 3 linear)
//!   omega0                    f64
//!   weights                   d_out * d_in f64, row-major
//!   biases                    d_out f64
//! crc32 of all bytes above    u32
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::mlp::{Activation, Layer, MlpNetwork};

pub const MAGIC: &[u8; 4] = b"CSL1";

pub fn encode(net: &MlpNetwork) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * net.param_count() + 32 * net.layers.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    for layer in &net.layers {
        out.extend_from_slice(&(layer.d_in() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.d_out() as u32).to_le_bytes());
        out.push(layer.activation.tag());
        out.extend_from_slice(&layer.omega0.to_le_bytes());
        for i in 0..layer.d_out() {
            for j in 0..layer.d_in() {
                out.extend_from_slice(&layer.weights[(i, j)].to_le_bytes());
            }
        }
        for b in layer.bias.iter() {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + len > self.bytes.len() {
            return Err("truncated checkpoint".into());
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<MlpNetwork, String> {
    if bytes.len() < 12 {
        return Err("truncated checkpoint".into());
    }
    let (body, footer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(footer.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(format!("CRC mismatch (stored {stored:08x}, computed {actual:08x})"));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("bad magic".into());
    }
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let d_in = r.u32()? as usize;
        let d_out = r.u32()? as usize;
        let tag = r.take(1)?[0];
        let activation = Activation::from_tag(tag).ok_or_else(|| format!("unknown activation tag {tag}"))?;
        let omega0 = r.f64()?;
        let mut layer = Layer::zeros(d_in, d_out, activation, omega0);
        for i in 0..d_out {
            for j in 0..d_in {
                layer.weights[(i, j)] = r.f64()?;
            }
        }
        for i in 0..d_out {
            layer.bias[i] = r.f64()?;
        }
        layers.push(layer);
    }
    if r.pos != body.len() {
        return Err("trailing bytes after last layer".into());
    }
    MlpNetwork::new(layers).map_err(|e| e.to_string())
}

pub fn save(net: &MlpNetwork, path: &Path) -> Result<()> {
    fs::write(path, encode(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<MlpNetwork> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|msg| Error::Checkpoint {
        path: path.to_path_buf(),
        msg,
    })
}
