//! Binary flow cache.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic    4 bytes  "RPLF"
//! version  u32      1
//! T        u32      frame count (the file holds T - 1 fields)
//! H        u32
//! W        u32
//! fields   for t in 0..T-1: dx as H*W f32 (row-major), then dy as H*W f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{FlowError, FlowField, FlowVolume};
use crate::grid::Grid;

pub const MAGIC: &[u8; 4] = b"RPLF";
pub const VERSION: u32 = 1;

pub fn write_flow_cache(flow: &FlowVolume, path: &Path) -> Result<(), FlowError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_to(flow, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_to<W: Write>(flow: &FlowVolume, out: &mut W) -> Result<(), FlowError> {
    out.write_all(MAGIC)?;
    for v in [VERSION, flow.frames() as u32, flow.height() as u32, flow.width() as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(flow.width() * flow.height() * 4);
    for f in flow.fields() {
        for g in [&f.dx, &f.dy] {
            buf.clear();
            for &v in g.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
    }
    Ok(())
}

pub fn read_flow_cache(path: &Path) -> Result<FlowVolume, FlowError> {
    read_from(&mut BufReader::new(File::open(path)?))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, FlowError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_from<R: Read>(r: &mut R) -> Result<FlowVolume, FlowError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FlowError::Cache(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(FlowError::Cache(format!("unsupported version {version}")));
    }
    let t = read_u32(r)? as usize;
    let h = read_u32(r)? as usize;
    let w = read_u32(r)? as usize;
    if t < 2 || w == 0 || h == 0 {
        return Err(FlowError::Cache(format!("bad header T={t} H={h} W={w}")));
    }
    let n = w * h;
    let mut bytes = vec![0u8; n * 4];
    let mut read_grid = |r: &mut R| -> Result<Grid, FlowError> {
        r.read_exact(&mut bytes)
            .map_err(|e| FlowError::Cache(format!("truncated field data: {e}")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Grid::from_vec(w, h, data))
    };
    let mut fields = Vec::with_capacity(t - 1);
    for i in 0..t - 1 {
        let dx = read_grid(r)?;
        let dy = read_grid(r)?;
        fields.push(FlowField { t: i, dx, dy });
    }
    FlowVolume::new(fields)
}
