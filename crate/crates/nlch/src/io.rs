//! Field snapshot format and CSV writers.
//!
//! Snapshot format `CHF1`: magic bytes `CHF1`, little-endian `u32` dimension,
//! `u32` cells per axis, `f64` side length, then `n^d` little-endian `f64`
//! cell values in row-major order. Files may stack several records
//! back-to-back.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};

const MAGIC: &[u8; 4] = b"CHF1";

/// Append one snapshot record to a writer.
pub fn write_field(w: &mut impl Write, field: &Field) -> Result<()> {
    let g = field.grid();
    w.write_all(MAGIC)?;
    w.write_all(&(g.d as u32).to_le_bytes())?;
    w.write_all(&(g.n as u32).to_le_bytes())?;
    w.write_all(&g.length.to_le_bytes())?;
    for v in field.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Read one snapshot record from a reader.
pub fn read_field(r: &mut impl Read) -> Result<Field> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("bad snapshot magic (expected CHF1)".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let d = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let length = f64::from_le_bytes(b8);
    if d != 2 {
        return Err(Error::Parse(format!("snapshot dimension {d} not supported")));
    }
    let grid = GridSpec::square(n, length)
        .map_err(|e| Error::Parse(format!("snapshot grid invalid: {e}")))?;
    let mut values = Vec::with_capacity(grid.cells());
    for _ in 0..grid.cells() {
        r.read_exact(&mut b8)?;
        values.push(f64::from_le_bytes(b8));
    }
    Field::from_values(grid, values)
}

/// Write one snapshot per file path.
pub fn save_field(path: impl AsRef<Path>, field: &Field) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field(&mut w, field)?;
    w.flush()?;
    Ok(())
}

/// Read the first snapshot of a file.
pub fn load_field(path: impl AsRef<Path>) -> Result<Field> {
    let mut r = BufReader::new(File::open(path)?);
    read_field(&mut r)
}

/// Write a series of fields stacked into one file.
pub fn save_stacked(path: impl AsRef<Path>, fields: &[Field]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for f in fields {
        write_field(&mut w, f)?;
    }
    w.flush()?;
    Ok(())
}

/// Read all stacked records of a file.
pub fn load_stacked(path: impl AsRef<Path>) -> Result<Vec<Field>> {
    let bytes = std::fs::read(path)?;
    let mut cursor = std::io::Cursor::new(bytes);
    let mut out = Vec::new();
    while (cursor.position() as usize) < cursor.get_ref().len() {
        out.push(read_field(&mut cursor)?);
    }
    Ok(out)
}

/// Minimal CSV writer: header row once, then value rows. Floats are written
/// in shortest round-trip form, so byte-identical output follows from
/// bit-identical values.
pub struct CsvWriter {
    w: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: impl AsRef<Path>, header: &[&str]) -> Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{}", header.join(","))?;
        Ok(CsvWriter { w })
    }

    pub fn row(&mut self, cells: &[CsvCell]) -> Result<()> {
        let rendered: Vec<String> = cells.iter().map(|c| c.render()).collect();
        writeln!(self.w, "{}", rendered.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

pub enum CsvCell {
    Int(usize),
    Float(f64),
}

impl CsvCell {
    fn render(&self) -> String {
        match self {
            CsvCell::Int(v) => v.to_string(),
            CsvCell::Float(v) => format!("{v}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_roundtrip() {
        let g = GridSpec::square(8, 2.5).unwrap();
        let f = Field::from_fn(g, |x, y| x * 3.0 - y.sin());
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        assert_eq!(&buf[..4], b"CHF1");
        assert_eq!(buf.len(), 4 + 4 + 4 + 8 + 8 * 64);
        let back = read_field(&mut buf.as_slice()).unwrap();
        assert_eq!(back.grid(), g);
        assert_eq!(back.values(), f.values());
    }

    #[test]
    fn stacked_roundtrip() {
        let g = GridSpec::square(6, 1.0).unwrap();
        let fields: Vec<Field> =
            (0..3).map(|k| Field::constant(g, k as f64)).collect();
        let dir = std::env::temp_dir().join("nlch_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("stacked.chf1");
        save_stacked(&path, &fields).unwrap();
        let back = load_stacked(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in back.iter().zip(&fields) {
            assert_eq!(a.values(), b.values());
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = b"NOPE\x02\x00\x00\x00".to_vec();
        assert!(read_field(&mut buf.as_slice()).is_err());
    }
}
