//! Binary collection file.
//!
//! ```text
//! magic        8 bytes  "TOTRCOLL"
//! version      u32
//! header_len   u32
//! header       header_len bytes of UTF-8 JSON {"config": .., "joints": [..]}
//! entry_count  u64
//! per entry:
//!   time_index    u64
//!   input_count   u32
//!   output_count  u32
//!   per factor (inputs, then outputs):
//!     rows u32, cols u32, rows * cols f64 in row-major order
//! ```
//!
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{CoefficientCollection, CollectionEntry, PipelineConfig};
use crate::error::{Error, Result};
use crate::tensor::CpFactors;

const MAGIC: &[u8; 8] = b"TOTRCOLL";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: PipelineConfig,
    joints: Vec<String>,
}

fn format_err(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("collection file: {e}"))
}

fn write_matrix(w: &mut impl Write, m: &DMatrix<f64>) -> std::io::Result<()> {
    w.write_u32::<LE>(m.nrows() as u32)?;
    w.write_u32::<LE>(m.ncols() as u32)?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_f64::<LE>(m[(i, j)])?;
        }
    }
    Ok(())
}

fn read_matrix(r: &mut impl Read) -> Result<DMatrix<f64>> {
    let rows = r.read_u32::<LE>().map_err(format_err)? as usize;
    let cols = r.read_u32::<LE>().map_err(format_err)? as usize;
    if rows.saturating_mul(cols) > 1 << 24 {
        return Err(format_err(format!("implausible factor size {rows}x{cols}")));
    }
    let mut values = vec![0.0; rows * cols];
    r.read_f64_into::<LE>(&mut values).map_err(format_err)?;
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

impl CoefficientCollection {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let header = serde_json::to_vec(&Header { config: self.config.clone(), joints: self.joints.clone() })
            .map_err(format_err)?;
        let io = |e: std::io::Error| format_err(e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_u32::<LE>(VERSION).map_err(io)?;
        w.write_u32::<LE>(header.len() as u32).map_err(io)?;
        w.write_all(&header).map_err(io)?;
        w.write_u64::<LE>(self.entries.len() as u64).map_err(io)?;
        for e in &self.entries {
            w.write_u64::<LE>(e.time_index as u64).map_err(io)?;
            w.write_u32::<LE>(e.factors.input().len() as u32).map_err(io)?;
            w.write_u32::<LE>(e.factors.output().len() as u32).map_err(io)?;
            for m in e.factors.all() {
                write_matrix(w, m).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(format_err)?;
        if &magic != MAGIC {
            return Err(format_err("not a coefficient collection (bad magic)"));
        }
        let version = r.read_u32::<LE>().map_err(format_err)?;
        if version != VERSION {
            return Err(format_err(format!("unsupported version {version}")));
        }
        let len = r.read_u32::<LE>().map_err(format_err)? as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header).map_err(format_err)?;
        let header: Header = serde_json::from_slice(&header).map_err(format_err)?;
        let count = r.read_u64::<LE>().map_err(format_err)?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let time_index = r.read_u64::<LE>().map_err(format_err)? as usize;
            let n_in = r.read_u32::<LE>().map_err(format_err)? as usize;
            let n_out = r.read_u32::<LE>().map_err(format_err)? as usize;
            if n_in > 64 || n_out > 64 {
                return Err(format_err(format!("implausible factor count {n_in}+{n_out}")));
            }
            let input = (0..n_in).map(|_| read_matrix(r)).collect::<Result<Vec<_>>>()?;
            let output = (0..n_out).map(|_| read_matrix(r)).collect::<Result<Vec<_>>>()?;
            entries.push(CollectionEntry { time_index, factors: CpFactors::new(input, output)? });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(format_err)? != 0 {
            return Err(format_err("trailing bytes after the last entry"));
        }
        CoefficientCollection::new(header.config, header.joints, entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::RootPolicy;
    use crate::regression::RegressionConfig;

    fn sample() -> CoefficientCollection {
        let config = PipelineConfig {
            past_seconds: 1.0,
            future_seconds: 0.3,
            model_stride_frames: 3,
            update_stride_frames: 1,
            regression: RegressionConfig { rank: 2, penalty: 0.1 + 0.2, ..Default::default() },
            frame_rate: 10.0,
            root_policy: RootPolicy::LinearExtrapolation,
        };
        let m = |seed: f64, rows| DMatrix::from_fn(rows, 2, |i, j| seed / (1.0 + i as f64 * 3.0 + j as f64));
        let entries = (0..3)
            .map(|k| CollectionEntry {
                time_index: 9 + 3 * k,
                factors: CpFactors::new(
                    vec![m(1.0 / 3.0 + k as f64, 2), m(-0.7, 3)],
                    vec![m(std::f64::consts::PI, 2), m(1e-300, 3)],
                )
                .unwrap(),
            })
            .collect();
        CoefficientCollection::new(config, vec!["a".into(), "b".into()], entries).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let coll = sample();
        let mut buf = Vec::new();
        coll.write_to(&mut buf).unwrap();
        let back = CoefficientCollection::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, coll);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn layout_is_row_major_with_headers() {
        let coll = sample();
        let mut buf = Vec::new();
        coll.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let hlen = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
        let mut at = 16 + hlen;
        assert_eq!(u64::from_le_bytes(buf[at..at + 8].try_into().unwrap()), 3);
        at += 8;
        assert_eq!(u64::from_le_bytes(buf[at..at + 8].try_into().unwrap()), 9);
        at += 16;
        assert_eq!(u32::from_le_bytes(buf[at..at + 4].try_into().unwrap()), 2);
        at += 8;
        let f = &coll.entries()[0].factors.input()[0];
        let second = f64::from_le_bytes(buf[at + 8..at + 16].try_into().unwrap());
        assert_eq!(second, f[(0, 1)]);
    }

    #[test]
    fn corrupt_files_rejected() {
        let coll = sample();
        let mut buf = Vec::new();
        coll.write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(CoefficientCollection::read_from(&mut bad.as_slice()), Err(Error::Format(_))));
        let short = &buf[..buf.len() - 3];
        assert!(CoefficientCollection::read_from(&mut &short[..]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(CoefficientCollection::read_from(&mut long.as_slice()).is_err());
        let mut version = buf;
        version[8] = 9;
        assert!(CoefficientCollection::read_from(&mut version.as_slice()).is_err());
    }
}
