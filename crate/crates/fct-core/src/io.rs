//! Binary tensor file format "FCTT".
//!
//! Layout: magic bytes `FCTT`, u8 dtype tag (0 = f64, 1 = f32), u8 rank,
//! little-endian u64 dims, then the raw little-endian payload. Used for
//! fixtures, checkpoints and attention-map dumps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{FctError, Result};
use crate::tensor::RealTensor;

const MAGIC: &[u8; 4] = b"FCTT";

pub fn write_tensor(path: &Path, t: &RealTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[0u8])?; // f64
    let rank = t.shape().len() as u8;
    w.write_all(&[rank])?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Write with the f32 dtype tag. Precision loss is the caller's choice.
pub fn write_tensor_f32(path: &Path, t: &RealTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[1u8])?;
    let rank = t.shape().len() as u8;
    w.write_all(&[rank])?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read either dtype; f32 payloads are widened to f64.
pub fn read_tensor(path: &Path) -> Result<RealTensor> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FctError::Format(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)?;
    let (dtype, rank) = (head[0], head[1] as usize);
    if dtype > 1 {
        return Err(FctError::Format(format!("unknown dtype tag {dtype}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        shape.push(u64::from_le_bytes(b) as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    if dtype == 0 {
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
    } else {
        let mut b = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut b)?;
            data.push(f32::from_le_bytes(b) as f64);
        }
    }
    RealTensor::new(shape, data)
}
