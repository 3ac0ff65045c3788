//! Little-endian binary primitives shared by the dataset container and the
//! checkpoint format. All multi-byte values are written little-endian so
//! files round-trip bit-exactly across platforms.

use std::io::{self, Read, Write};
use std::path::Path;

use crate::nn_core::DenseMatrix;

/// Writes `bytes` to a temporary file in the target directory and renames it
/// into place, so a failed write never leaves a partial file behind.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub(crate) fn write_u8<W: Write>(w: &mut W, v: u8) -> io::Result<()> {
    w.write_all(&[v])
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_u128<W: Write>(w: &mut W, v: u128) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_i64<W: Write>(w: &mut W, v: i64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f64<W: Write>(w: &mut W, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    let bytes = s.as_bytes();
    write_u32(w, bytes.len() as u32)?;
    w.write_all(bytes)
}

pub(crate) fn write_matrix<W: Write>(w: &mut W, m: &DenseMatrix) -> io::Result<()> {
    write_u32(w, m.rows() as u32)?;
    write_u32(w, m.cols() as u32)?;
    for &v in m.data() {
        write_f64(w, v)?;
    }
    Ok(())
}

pub(crate) fn read_exact_array<R: Read, const N: usize>(r: &mut R) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub(crate) fn read_u8<R: Read>(r: &mut R) -> io::Result<u8> {
    Ok(read_exact_array::<R, 1>(r)?[0])
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    Ok(u32::from_le_bytes(read_exact_array(r)?))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    Ok(u64::from_le_bytes(read_exact_array(r)?))
}

pub(crate) fn read_u128<R: Read>(r: &mut R) -> io::Result<u128> {
    Ok(u128::from_le_bytes(read_exact_array(r)?))
}

pub(crate) fn read_i64<R: Read>(r: &mut R) -> io::Result<i64> {
    Ok(i64::from_le_bytes(read_exact_array(r)?))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    Ok(f64::from_le_bytes(read_exact_array(r)?))
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> io::Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 24 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "string length field out of range",
        ));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

pub(crate) fn read_matrix<R: Read>(r: &mut R) -> io::Result<DenseMatrix> {
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    if rows.saturating_mul(cols) > 1 << 28 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "matrix size field out of range",
        ));
    }
    let mut data = vec![0.0; rows * cols];
    for v in &mut data {
        *v = read_f64(r)?;
    }
    DenseMatrix::from_vec(rows, cols, data)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
}
