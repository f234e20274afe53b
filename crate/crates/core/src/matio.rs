//! Dense matrix files.
//!
//! Two formats are read and written:
//!
//! * binary: the 8-byte magic `MSRXMAT1`, then `rows` and `cols` as
//!   little-endian `u64`, then `rows * cols` little-endian `f64` values in
//!   row-major order;
//! * JSON: a nested array of rows, `[[x11, x12, ...], [x21, ...], ...]`.
//!
//! [`read_matrix`] picks the format from the file contents.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{invalid, Result};
use crate::spectral::Matrix;

pub const MAGIC: &[u8; 8] = b"MSRXMAT1";

pub fn write_binary<W: Write>(mut w: W, m: &Matrix) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Matrix> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid("not a binary matrix file"));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| invalid("matrix dimensions overflow"))?;
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)?;
    let values: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Matrix::from_row_slice(rows, cols, &values))
}

pub fn to_json_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_json_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(invalid("ragged matrix rows"));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn write_matrix(path: &Path, m: &Matrix, binary: bool) -> Result<()> {
    if binary {
        let f = fs::File::create(path)?;
        write_binary(std::io::BufWriter::new(f), m)
    } else {
        fs::write(path, serde_json::to_vec(&to_json_rows(m))?)?;
        Ok(())
    }
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(MAGIC) {
        read_binary(bytes.as_slice())
    } else {
        let rows: Vec<Vec<f64>> = serde_json::from_slice(&bytes)?;
        from_json_rows(&rows)
    }
}

/// Serde adapter storing a matrix as nested JSON rows.
pub mod json_rows {
    use super::{from_json_rows, to_json_rows, Matrix};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        to_json_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_json_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for an optional matrix stored as nested JSON rows.
pub mod opt_json_rows {
    use super::{from_json_rows, to_json_rows, Matrix};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<Matrix>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(to_json_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Matrix>, D::Error> {
        let rows = Option::<Vec<Vec<f64>>>::deserialize(d)?;
        rows.map(|r| from_json_rows(&r).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_formats_roundtrip() {
        let m = Matrix::from_fn(3, 5, |i, j| (i as f64) - 0.25 * j as f64 + 1e-17);
        let dir = tempfile::tempdir().unwrap();
        for binary in [true, false] {
            let p = dir.path().join(if binary { "m.bin" } else { "m.json" });
            write_matrix(&p, &m, binary).unwrap();
            assert_eq!(read_matrix(&p).unwrap(), m);
        }
    }

    #[test]
    fn binary_layout_is_row_major() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let mut buf = Vec::new();
        write_binary(&mut buf, &m).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[32..40].try_into().unwrap()), 2.0);
    }

    #[test]
    fn ragged_json_rejected() {
        assert!(from_json_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
