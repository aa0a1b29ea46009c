//! Labelled CSI datasets and their on-disk formats.
//!
//! CSV (canonical, diffable):
//!
//! ```text
//! # iccl-csi v1
//! # n_waypoints=<N>
//! # n_nodes=<M0>
//! # scene_hash=<64 hex chars>
//! # noise_power=<sigma^2, W>
//! x,y,g0,g1,...,g<N-1>
//! <x>,<y>,<gain>,...
//! ```
//!
//! Binary, little-endian: magic `ICCLCSI\0`, `u32` version 1, `u64` N,
//! `u64` M0, 32-byte scene hash, `f64` noise power, then M0 rows of
//! `f64` x, `f64` y and N `f64` gains.
//!
//! Floats are written in shortest round-trip form, so both formats
//! reproduce the data bit-exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::propagation::{corrupt_gains, true_gains, ChannelModel, CsiVector};
use crate::regressor::{PairDataset, Record};
use crate::scene::{Point2, Point3, Scene, Trajectory};
use crate::scenefile;

const MAGIC: &[u8; 8] = b"ICCLCSI\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CsiDataset {
    pub n_waypoints: usize,
    /// SHA-256 of the canonical scene file, lowercase hex.
    pub scene_hash: String,
    pub noise_power: f64,
    pub records: Vec<Record>,
}

impl CsiDataset {
    pub fn into_pairs(self) -> Result<PairDataset> {
        PairDataset::new(self.records)
    }

    fn validate(&self) -> Result<()> {
        if self.scene_hash.len() != 64 || !self.scene_hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(invalid("scene hash must be 64 hex characters"));
        }
        if let Some(i) = self.records.iter().position(|r| r.csi.len() != self.n_waypoints) {
            return Err(invalid(format!("record {i} does not have {} gains", self.n_waypoints)));
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "# iccl-csi v1")?;
        writeln!(out, "# n_waypoints={}", self.n_waypoints)?;
        writeln!(out, "# n_nodes={}", self.records.len())?;
        writeln!(out, "# scene_hash={}", self.scene_hash)?;
        writeln!(out, "# noise_power={:?}", self.noise_power)?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["x".to_string(), "y".to_string()];
        header.extend((0..self.n_waypoints).map(|n| format!("g{n}")));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![format!("{:?}", r.position.x), format!("{:?}", r.position.y)];
            row.extend(r.csi.gains().iter().map(|g| format!("{g:?}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let fmt = |reason: String| Error::Format { path: path.to_path_buf(), reason };
        let mut reader = BufReader::new(File::open(path)?);
        let mut meta = std::collections::BTreeMap::new();
        let mut line = String::new();
        let mut first = true;
        loop {
            line.clear();
            let peek = reader.fill_buf()?;
            if peek.first() != Some(&b'#') {
                break;
            }
            reader.read_line(&mut line)?;
            let body = line.trim_start_matches('#').trim();
            if first {
                if body != "iccl-csi v1" {
                    return Err(fmt(format!("unexpected header line '{body}'")));
                }
                first = false;
                continue;
            }
            if let Some((k, v)) = body.split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        if first {
            return Err(fmt("missing '# iccl-csi v1' header".into()));
        }
        let get = |k: &str| meta.get(k).cloned().ok_or_else(|| fmt(format!("missing '{k}' in header")));
        let n_waypoints: usize = get("n_waypoints")?.parse().map_err(|e| fmt(format!("n_waypoints: {e}")))?;
        let n_nodes: usize = get("n_nodes")?.parse().map_err(|e| fmt(format!("n_nodes: {e}")))?;
        let noise_power: f64 = get("noise_power")?.parse().map_err(|e| fmt(format!("noise_power: {e}")))?;
        let scene_hash = get("scene_hash")?;

        let mut rdr = csv::Reader::from_reader(reader);
        let mut records = Vec::with_capacity(n_nodes);
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            if row.len() != n_waypoints + 2 {
                return Err(fmt(format!("row {i} has {} fields, expected {}", row.len(), n_waypoints + 2)));
            }
            let vals = row
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| fmt(format!("row {i}: {e}")))?;
            records.push(Record {
                position: Point2::new(vals[0], vals[1]),
                csi: CsiVector::new(vals[2..].to_vec()).map_err(|e| fmt(format!("row {i}: {e}")))?,
            });
        }
        if records.len() != n_nodes {
            return Err(fmt(format!("header announces {n_nodes} nodes, found {}", records.len())));
        }
        let ds = Self { n_waypoints, scene_hash, noise_power, records };
        ds.validate().map_err(|e| fmt(e.to_string()))?;
        Ok(ds)
    }

    pub fn encode_binary(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::with_capacity(64 + self.records.len() * (self.n_waypoints + 2) * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n_waypoints as u64).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        out.extend_from_slice(&hex_to_bytes(&self.scene_hash)?);
        out.extend_from_slice(&self.noise_power.to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&r.position.x.to_le_bytes());
            out.extend_from_slice(&r.position.y.to_le_bytes());
            for g in r.csi.gains() {
                out.extend_from_slice(&g.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode_binary(buf: &[u8]) -> std::result::Result<Self, String> {
        let header = 8 + 4 + 8 + 8 + 32 + 8;
        if buf.len() < header || &buf[..8] != MAGIC {
            return Err("not a binary CSI dataset".into());
        }
        let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
        let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(format!("unsupported dataset version {version}"));
        }
        let n = u64_at(12) as usize;
        let m = u64_at(20) as usize;
        let scene_hash: String = buf[28..60].iter().map(|b| format!("{b:02x}")).collect();
        let noise_power = f64::from_le_bytes(buf[60..68].try_into().unwrap());
        let row = (n + 2).checked_mul(8).ok_or("row size overflows")?;
        if m.checked_mul(row).and_then(|s| s.checked_add(header)) != Some(buf.len()) {
            return Err("payload size does not match header".into());
        }
        let floats: Vec<f64> = buf[header..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let records = floats
            .chunks_exact(n + 2)
            .map(|r| Ok(Record { position: Point2::new(r[0], r[1]), csi: CsiVector::new(r[2..].to_vec()).map_err(|e| e.to_string())? }))
            .collect::<std::result::Result<Vec<_>, String>>()?;
        Ok(Self { n_waypoints: n, scene_hash, noise_power, records })
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        File::create(path)?.write_all(&self.encode_binary()?)?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        File::open(path)?.read_to_end(&mut buf)?;
        Self::decode_binary(&buf).map_err(|reason| Error::Format { path: path.to_path_buf(), reason })
    }

    /// Reads either format, choosing by the leading magic bytes.
    pub fn read(path: &Path) -> Result<Self> {
        let mut head = [0u8; 8];
        let n = File::open(path)?.read(&mut head)?;
        if n == 8 && &head == MAGIC {
            Self::read_binary(path)
        } else {
            Self::read_csv(path)
        }
    }
}

fn hex_to_bytes(s: &str) -> Result<[u8; 32]> {
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| invalid("scene hash is not hex"))?;
    }
    Ok(out)
}

/// Measures CSI at every position (ground level, `z = 0`).
pub fn generate_dataset<R: Rng>(
    scene: &Scene,
    model: &ChannelModel,
    trajectory: &Trajectory,
    positions: &[Point2],
    rng: &mut R,
) -> Result<CsiDataset> {
    model.validate()?;
    let records = positions
        .iter()
        .map(|p| {
            let g = true_gains(scene, model, trajectory, &Point3::new(p.x, p.y, 0.0))?;
            Ok(Record { csi: corrupt_gains(&g, model, rng), position: *p })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CsiDataset {
        n_waypoints: trajectory.len(),
        scene_hash: scenefile::scene_hash(scene),
        noise_power: model.noise_power,
        records,
    })
}
