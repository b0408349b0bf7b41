//! HJF1: a little-endian binary container for one scalar field.
//!
//! Layout: the magic `HJF1`, `u32` dimension count, then per axis `f64 min`,
//! `f64 max`, `u64 count`, `u8 periodic`, then `u64` value count followed by
//! the values as `f64` in row-major order (last axis fastest).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::grid::{Axis, Grid, ScalarField, MAX_DIM};

use super::IoError;

pub const MAGIC: &[u8; 4] = b"HJF1";

pub fn write_hjf<W: Write>(mut w: W, field: &ScalarField) -> Result<(), IoError> {
    let grid = field.grid();
    w.write_all(MAGIC)?;
    w.write_all(&(grid.ndim() as u32).to_le_bytes())?;
    for a in grid.axes() {
        w.write_all(&a.min.to_le_bytes())?;
        w.write_all(&a.max.to_le_bytes())?;
        w.write_all(&(a.count as u64).to_le_bytes())?;
        w.write_all(&[a.periodic as u8])?;
    }
    w.write_all(&(field.values().len() as u64).to_le_bytes())?;
    for v in field.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], IoError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => IoError::Format("truncated file".into()),
        _ => IoError::Io(e),
    })?;
    Ok(buf)
}

pub fn read_hjf<R: Read>(mut r: R) -> Result<ScalarField, IoError> {
    if &read_array::<4, _>(&mut r)? != MAGIC {
        return Err(IoError::Format("bad magic, expected HJF1".into()));
    }
    let ndim = u32::from_le_bytes(read_array(&mut r)?) as usize;
    if ndim == 0 || ndim > MAX_DIM {
        return Err(IoError::Format(format!("unsupported dimension count {ndim}")));
    }
    let mut axes = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let min = f64::from_le_bytes(read_array(&mut r)?);
        let max = f64::from_le_bytes(read_array(&mut r)?);
        let count = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let periodic = match read_array::<1, _>(&mut r)?[0] {
            0 => false,
            1 => true,
            b => return Err(IoError::Format(format!("bad periodic flag {b}"))),
        };
        axes.push(Axis { min, max, count, periodic });
    }
    let grid = Grid::shared(axes)?;
    let n = u64::from_le_bytes(read_array(&mut r)?) as usize;
    if n != grid.len() {
        return Err(IoError::Format(format!("value count {n} does not match grid size {}", grid.len())));
    }
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(f64::from_le_bytes(read_array(&mut r)?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(IoError::Format("trailing bytes after values".into()));
    }
    Ok(ScalarField::new(grid, values)?)
}

pub fn save_hjf(path: &Path, field: &ScalarField) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| IoError::path(path, e))?;
    write_hjf(BufWriter::new(file), field)
}

pub fn load_hjf(path: &Path) -> Result<ScalarField, IoError> {
    let file = File::open(path).map_err(|e| IoError::path(path, e))?;
    read_hjf(BufReader::new(file))
}
