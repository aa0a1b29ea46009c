//! Binary model checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic          8 bytes  "ICCLNET\0"
//! version        u32      1
//! input_len      u32      N
//! input_width    u32      2 (pairwise) or 1 (positional)
//! n_convs        u32
//!   per conv     u32 filters, u32 kernel_height, u32 pool
//! n_hidden       u32
//!   per hidden   u32 units
//! outputs        u32
//! db_floor       f64
//! mean_db        f64
//! std_db         f64
//! output_scale   f64
//! n_params       u64
//! params         n_params x f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::model::{NetworkModel, Normalization};
use super::network::{Architecture, ConvSpec};

const MAGIC: &[u8; 8] = b"ICCLNET\0";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode(model: &NetworkModel) -> Vec<u8> {
    let arch = model.architecture();
    let mut out = Vec::with_capacity(128 + 8 * model.weights().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, arch.input_len);
    put_u32(&mut out, arch.input_width);
    put_u32(&mut out, arch.convs.len());
    for c in &arch.convs {
        put_u32(&mut out, c.filters);
        put_u32(&mut out, c.kernel_height);
        put_u32(&mut out, c.pool);
    }
    put_u32(&mut out, arch.hidden.len());
    for &h in &arch.hidden {
        put_u32(&mut out, h);
    }
    put_u32(&mut out, arch.outputs);
    let n = model.normalization();
    for v in [n.db_floor, n.mean_db, n.std_db, n.output_scale] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(model.weights().len() as u64).to_le_bytes());
    for w in model.weights() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("unexpected end of data")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_inner(buf: &[u8]) -> std::result::Result<NetworkModel, String> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err("not a model checkpoint (bad magic)".into());
    }
    let version = c.u32()?;
    if version as u32 != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let input_len = c.u32()?;
    let input_width = c.u32()?;
    let n_convs = c.u32()?;
    if n_convs > 64 {
        return Err(format!("implausible conv layer count {n_convs}"));
    }
    let mut convs = Vec::with_capacity(n_convs);
    for _ in 0..n_convs {
        convs.push(ConvSpec { filters: c.u32()?, kernel_height: c.u32()?, pool: c.u32()? });
    }
    let n_hidden = c.u32()?;
    if n_hidden > 64 {
        return Err(format!("implausible dense layer count {n_hidden}"));
    }
    let hidden = (0..n_hidden).map(|_| c.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
    let outputs = c.u32()?;
    let normalization = Normalization { db_floor: c.f64()?, mean_db: c.f64()?, std_db: c.f64()?, output_scale: c.f64()? };
    let n_params = c.u64()? as usize;
    if n_params > (buf.len() - c.pos) / 8 {
        return Err("parameter blob is truncated".into());
    }
    let weights: Vec<f64> = c.take(8 * n_params)?.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    if c.pos != buf.len() {
        return Err("trailing bytes after parameter blob".into());
    }
    let arch = Architecture { input_len, input_width, convs, hidden, outputs };
    NetworkModel::new(arch, normalization, weights).map_err(|e| e.to_string())
}

pub fn decode(buf: &[u8]) -> Result<NetworkModel> {
    decode_inner(buf).map_err(|reason| Error::Format { path: "<memory>".into(), reason })
}

pub fn save(model: &NetworkModel, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<NetworkModel> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_inner(&buf).map_err(|reason| Error::Format { path: path.to_path_buf(), reason })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regressor::network::Network;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let arch = Architecture::pairwise(20);
        let w = Network::new(arch.clone()).unwrap().init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let norm = Normalization { db_floor: -150.0, mean_db: -91.25, std_db: 13.5, output_scale: 37.0 };
        let model = NetworkModel::new(arch, norm, w).unwrap();
        let bytes = encode(&model);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.architecture(), model.architecture());
        assert_eq!(back.normalization(), model.normalization());
        assert_eq!(back.weights(), model.weights());
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let model = NetworkModel::zeros(Architecture::tiny_pairwise(), Normalization::default()).unwrap();
        let bytes = encode(&model);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode(&long).is_err());
    }
}
