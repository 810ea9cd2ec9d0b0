//! Snapshot sinks: JSONL summary records and the `LLAB` binary block format.
//!
//! A binary block is a 32-byte little-endian header
//!
//! | bytes  | field                    |
//! |--------|--------------------------|
//! | 0..4   | magic `b"LLAB"`          |
//! | 4..8   | format version (`u32`)   |
//! | 8..16  | rows (`u64`)             |
//! | 16..24 | columns `d` (`u64`)      |
//! | 24..32 | time `t` (`f64`)         |
//!
//! followed by `rows * d` little-endian `f64` values in row-major order.
//! Grid fields use the same layout with one row per node, and a sidecar block
//! holds the node coordinates.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sde_sim::EnsembleSnapshot;
use crate::stats::compensated_sum;

pub const MAGIC: [u8; 4] = *b"LLAB";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;
/// Full positions are embedded in JSONL records only up to this many values.
pub const JSONL_POSITION_LIMIT: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum SnapshotIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("data length {got} does not match rows * d = {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One JSONL line per snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub t: f64,
    pub step: u64,
    pub n_paths: usize,
    pub dim: usize,
    pub seed: u64,
    pub diverged: bool,
    pub mean: Vec<f64>,
    pub mean_sq_norm: f64,
    pub max_sup_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<f64>>,
}

impl SnapshotRecord {
    pub fn from_snapshot(snap: &EnsembleSnapshot, include_positions: bool) -> Self {
        let n = snap.n_paths();
        let d = snap.dim;
        let mean = (0..d).map(|j| compensated_sum(snap.rows().map(|r| r[j])) / n as f64).collect();
        let mean_sq_norm = compensated_sum(snap.rows().map(|r| r.iter().map(|x| x * x).sum::<f64>())) / n as f64;
        let max_sup_norm = snap.sup_norm.iter().copied().fold(0.0, f64::max);
        let positions = (include_positions && n * d <= JSONL_POSITION_LIMIT).then(|| snap.positions.clone());
        Self {
            t: snap.t,
            step: snap.step,
            n_paths: n,
            dim: d,
            seed: snap.seed,
            diverged: snap.diverged,
            mean,
            mean_sq_norm,
            max_sup_norm,
            positions,
        }
    }
}

pub fn write_jsonl_record<W: Write>(
    out: &mut W,
    snap: &EnsembleSnapshot,
    include_positions: bool,
) -> Result<(), SnapshotIoError> {
    serde_json::to_writer(&mut *out, &SnapshotRecord::from_snapshot(snap, include_positions))?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_jsonl_records<R: io::BufRead>(input: R) -> Result<Vec<SnapshotRecord>, SnapshotIoError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// A decoded binary block.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryBlock {
    pub rows: usize,
    pub d: usize,
    pub t: f64,
    pub data: Vec<f64>,
}

pub fn write_binary_block<W: Write>(
    out: &mut W,
    rows: usize,
    d: usize,
    t: f64,
    data: &[f64],
) -> Result<(), SnapshotIoError> {
    if data.len() != rows * d {
        return Err(SnapshotIoError::LengthMismatch { expected: rows * d, got: data.len() });
    }
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(&MAGIC);
    header[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    header[8..16].copy_from_slice(&(rows as u64).to_le_bytes());
    header[16..24].copy_from_slice(&(d as u64).to_le_bytes());
    header[24..32].copy_from_slice(&t.to_le_bytes());
    out.write_all(&header)?;
    let mut buf = Vec::with_capacity(data.len() * 8);
    for x in data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn write_snapshot_binary<W: Write>(out: &mut W, snap: &EnsembleSnapshot) -> Result<(), SnapshotIoError> {
    write_binary_block(out, snap.n_paths(), snap.dim, snap.t, &snap.positions)
}

pub fn read_binary_block<R: Read>(input: &mut R) -> Result<BinaryBlock, SnapshotIoError> {
    let mut header = [0u8; HEADER_LEN];
    input.read_exact(&mut header)?;
    let magic: [u8; 4] = header[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(SnapshotIoError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(SnapshotIoError::UnsupportedVersion(version));
    }
    let rows = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes")) as usize;
    let d = u64::from_le_bytes(header[16..24].try_into().expect("8 bytes")) as usize;
    let t = f64::from_le_bytes(header[24..32].try_into().expect("8 bytes"));
    let mut bytes = vec![0u8; rows * d * 8];
    input.read_exact(&mut bytes)?;
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(BinaryBlock { rows, d, t, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap() -> EnsembleSnapshot {
        EnsembleSnapshot {
            t: 0.25,
            step: 25,
            dim: 2,
            positions: vec![1.0, -2.0, 3.0, 0.5, f64::MIN_POSITIVE, 1e100],
            sup_norm: vec![3.0, 4.0, 1e100],
            diverged: false,
            seed: 9,
        }
    }

    #[test]
    fn binary_roundtrip_and_header_layout() {
        let s = snap();
        let mut buf = Vec::new();
        write_snapshot_binary(&mut buf, &s).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + 6 * 8);
        assert_eq!(&buf[0..4], b"LLAB");
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(buf[24..32].try_into().unwrap()), 0.25);
        assert_eq!(f64::from_le_bytes(buf[32 + 8..32 + 16].try_into().unwrap()), -2.0);
        let b = read_binary_block(&mut buf.as_slice()).unwrap();
        assert_eq!(b, BinaryBlock { rows: 3, d: 2, t: 0.25, data: s.positions.clone() });
    }

    #[test]
    fn binary_rejects_corruption() {
        let mut buf = Vec::new();
        write_snapshot_binary(&mut buf, &snap()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_binary_block(&mut bad.as_slice()), Err(SnapshotIoError::BadMagic(_))));
        let mut bad = buf.clone();
        bad[4] = 7;
        assert!(matches!(read_binary_block(&mut bad.as_slice()), Err(SnapshotIoError::UnsupportedVersion(7))));
        let short = &buf[..buf.len() - 1];
        assert!(matches!(read_binary_block(&mut &short[..]), Err(SnapshotIoError::Io(_))));
        assert!(write_binary_block(&mut Vec::new(), 2, 2, 0.0, &[1.0]).is_err());
    }

    #[test]
    fn jsonl_roundtrip() {
        let s = snap();
        let mut buf = Vec::new();
        write_jsonl_record(&mut buf, &s, true).unwrap();
        write_jsonl_record(&mut buf, &s, false).unwrap();
        let recs = read_jsonl_records(buf.as_slice()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].positions.as_deref(), Some(s.positions.as_slice()));
        assert_eq!(recs[1].positions, None);
        assert_eq!(recs[0].mean[0], (1.0 + 3.0 + f64::MIN_POSITIVE) / 3.0);
        assert_eq!(recs[0].max_sup_norm, 1e100);
        assert_eq!(recs[0].step, 25);
    }
}
