//! Named-array container shared by parameter checkpoints and extractor
//! weight files.
//!
//! Layout (little-endian): 4-byte magic, `u32` format version, `u32` array
//! count, then per array a `u16` name length, the UTF-8 name, a `u8` rank,
//! `u64` extents and the raw `f64` data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::array::Array;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SFCK";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_arrays<W: Write>(mut w: W, magic: [u8; 4], arrays: &[(String, Array)]) -> std::io::Result<()> {
    w.write_all(&magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for (name, a) in arrays {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "array name too long"))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[a.rank() as u8])?;
        for &e in a.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for x in a.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_exact<const N: usize>(r: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Parses a container, checking magic and version. Fails on truncation.
pub fn read_arrays<R: Read>(mut r: R, magic: [u8; 4]) -> std::result::Result<Vec<(String, Array)>, String> {
    let io = |e: std::io::Error| format!("truncated or unreadable: {e}");
    let found: [u8; 4] = read_exact(&mut r).map_err(io)?;
    if found != magic {
        return Err(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&found),
            String::from_utf8_lossy(&magic)
        ));
    }
    let version = u32::from_le_bytes(read_exact(&mut r).map_err(io)?);
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let count = u32::from_le_bytes(read_exact(&mut r).map_err(io)?);
    let mut out = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let len = u16::from_le_bytes(read_exact(&mut r).map_err(io)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(io)?;
        let name = String::from_utf8(name).map_err(|_| "array name is not UTF-8".to_string())?;
        let rank = read_exact::<1>(&mut r).map_err(io)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(read_exact(&mut r).map_err(io)?) as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| format!("array `{name}` has overflowing extents {shape:?}"))?;
        let mut raw = Vec::new();
        (&mut r).take(n as u64 * 8).read_to_end(&mut raw).map_err(io)?;
        if raw.len() != n * 8 {
            return Err(format!("truncated data for array `{name}`"));
        }
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let a = Array::new(&shape, data).map_err(|e| e.to_string())?;
        out.push((name, a));
    }
    Ok(out)
}

pub fn save(path: &Path, magic: [u8; 4], arrays: &[(String, Array)]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io("diffcore", path, e))?;
    write_arrays(BufWriter::new(f), magic, arrays).map_err(|e| Error::io("diffcore", path, e))
}

pub fn load(path: &Path, magic: [u8; 4]) -> Result<Vec<(String, Array)>> {
    let f = File::open(path).map_err(|e| Error::io("diffcore", path, e))?;
    read_arrays(BufReader::new(f), magic).map_err(|msg| Error::format("diffcore", path, msg))
}
