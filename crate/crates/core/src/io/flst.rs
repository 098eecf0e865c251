//! `FLST v1` per-model delta-statistics cache files.
//!
//! Layout: magic `FLST`, u32 h, u32 width, f64 mu[], f64 sigma[],
//! u64 n_frames.

use std::path::Path;

use super::{Reader, Writer};
use crate::attack::a1::DeltaStats;
use crate::error::Result;

const MAGIC: &[u8; 4] = b"FLST";

pub fn save_stats(path: &Path, stats: &DeltaStats) -> Result<()> {
    let mut w = Writer::new(MAGIC);
    w.u32(stats.layer_index as u32);
    w.u32(stats.mu.len() as u32);
    w.f64_slice(&stats.mu);
    w.f64_slice(&stats.sigma);
    w.u64(stats.n_frames);
    w.save(path)
}

pub fn load_stats(path: &Path) -> Result<DeltaStats> {
    let mut r = Reader::open(path)?;
    r.expect_magic(MAGIC)?;
    let layer_index = r.u32()? as usize;
    let width = r.u32()? as usize;
    let mu = r.f64_vec(width)?;
    let sigma = r.f64_vec(width)?;
    let n_frames = r.u64()?;
    r.finish()?;
    Ok(DeltaStats {
        layer_index,
        mu,
        sigma,
        n_frames,
    })
}
