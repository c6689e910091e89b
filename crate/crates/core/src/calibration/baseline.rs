//! Binary container for no-attack residual baselines.
//!
//! Layout, all little-endian: magic `WMBT`, version `u32`, `p`, `q`, `m`,
//! `n_steps`, `seed`, spec fingerprint (each `u64`), watermark flag `u8`, then
//! `n_steps` records of `q + m` `f64` values (`r̄_n` followed by `e_n`).

use std::io::{self, Read, Write};

use super::CalibrationError;
use crate::lti_sim::ResidualTrace;

pub const BASELINE_MAGIC: &[u8; 4] = b"WMBT";
pub const BASELINE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineHeader {
    pub version: u32,
    pub p: u64,
    pub q: u64,
    pub m: u64,
    pub n_steps: u64,
    pub seed: u64,
    pub fingerprint: u64,
    pub watermark_on: bool,
}

pub fn write_baseline<W: Write>(mut w: W, trace: &ResidualTrace, p: usize) -> io::Result<()> {
    w.write_all(BASELINE_MAGIC)?;
    w.write_all(&BASELINE_VERSION.to_le_bytes())?;
    for v in [p as u64, trace.q as u64, trace.m as u64, trace.len() as u64, trace.seed, trace.fingerprint] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&[trace.watermark_on as u8])?;
    let mut buf = Vec::with_capacity(8 * (trace.q + trace.m) * 4096);
    for n in 0..trace.len() {
        for v in trace.r_bar(n).iter().chain(trace.e(n)) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        if buf.len() >= 8 * (trace.q + trace.m) * 4096 {
            w.write_all(&buf)?;
            buf.clear();
        }
    }
    w.write_all(&buf)?;
    w.flush()
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_baseline<R: Read>(mut r: R) -> Result<(BaselineHeader, ResidualTrace), CalibrationError> {
    let io_err = |e: io::Error| CalibrationError::Baseline(e.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != BASELINE_MAGIC {
        return Err(CalibrationError::Baseline("bad magic".into()));
    }
    let mut vb = [0u8; 4];
    r.read_exact(&mut vb).map_err(io_err)?;
    let version = u32::from_le_bytes(vb);
    if version != BASELINE_VERSION {
        return Err(CalibrationError::Baseline(format!("unsupported version {version}")));
    }
    let mut f = [0u64; 6];
    for v in f.iter_mut() {
        *v = read_u64(&mut r).map_err(io_err)?;
    }
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag).map_err(io_err)?;
    let header = BaselineHeader {
        version,
        p: f[0],
        q: f[1],
        m: f[2],
        n_steps: f[3],
        seed: f[4],
        fingerprint: f[5],
        watermark_on: flag[0] != 0,
    };
    let (q, m) = (header.q as usize, header.m as usize);
    if q == 0 || q > 1 << 16 || m > 1 << 16 {
        return Err(CalibrationError::Baseline(format!("implausible dimensions q={q}, m={m}")));
    }
    let mut trace = ResidualTrace::new(header.fingerprint, header.watermark_on, header.seed, q, m);
    let width = q + m;
    let mut rec = vec![0u8; 8 * width];
    let mut vals = vec![0.0; width];
    for _ in 0..header.n_steps {
        r.read_exact(&mut rec).map_err(io_err)?;
        for (k, v) in vals.iter_mut().enumerate() {
            *v = f64::from_le_bytes(rec[8 * k..8 * k + 8].try_into().expect("8 bytes"));
        }
        trace.push(&vals[..q], &vals[q..]);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(io_err)? != 0 {
        return Err(CalibrationError::Baseline("trailing bytes after last record".into()));
    }
    Ok((header, trace))
}
