//! Little-endian binary files for matrices and vectors.
//!
//! Matrix file:
//!
//! ```text
//! offset  size  field
//! 0       8     magic  "MVLNCSR\0"
//! 8       4     version (u32, currently 1)
//! 12      8     n_rows (u64)
//! 20      8     nnz (u64)
//! 28      ...   row_ptr  (n_rows + 1) x u64   -- Ar
//!               col_idx  nnz x u64            -- Ac
//!               values   nnz x f64            -- Av
//! ```
//!
//! Vector file: magic `"MVLNVEC\0"`, version (u32), len (u64), then `len` f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{CgError, CsrMatrix};

pub const MATRIX_MAGIC: [u8; 8] = *b"MVLNCSR\0";
pub const VECTOR_MAGIC: [u8; 8] = *b"MVLNVEC\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_matrix<W: Write>(mut w: W, a: &CsrMatrix) -> std::io::Result<()> {
    w.write_all(&MATRIX_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(a.n_rows as u64).to_le_bytes())?;
    w.write_all(&(a.nnz() as u64).to_le_bytes())?;
    for v in a.row_ptr.iter().chain(&a.col_idx) {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in &a.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], CgError> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => CgError::Truncated { offset: self.offset },
            _ => CgError::Io(e.to_string()),
        })?;
        self.offset += N as u64;
        Ok(buf)
    }

    fn u64(&mut self) -> Result<u64, CgError> {
        self.bytes::<8>().map(u64::from_le_bytes)
    }

    fn header(&mut self, magic: [u8; 8]) -> Result<(), CgError> {
        if self.bytes::<8>()? != magic {
            return Err(CgError::BadMagic);
        }
        let version = u32::from_le_bytes(self.bytes::<4>()?);
        if version != FORMAT_VERSION {
            return Err(CgError::Version(version));
        }
        Ok(())
    }
}

pub fn read_matrix<R: Read>(r: R) -> Result<CsrMatrix, CgError> {
    let mut c = Cursor { inner: r, offset: 0 };
    c.header(MATRIX_MAGIC)?;
    let n_rows = c.u64()? as usize;
    let nnz = c.u64()? as usize;
    let row_ptr = (0..=n_rows).map(|_| c.u64()).collect::<Result<Vec<_>, _>>()?;
    let col_idx = (0..nnz).map(|_| c.u64()).collect::<Result<Vec<_>, _>>()?;
    let values = (0..nnz)
        .map(|_| c.u64().map(f64::from_bits))
        .collect::<Result<Vec<_>, _>>()?;
    let a = CsrMatrix {
        n_rows,
        row_ptr,
        col_idx,
        values,
    };
    a.validate()?;
    Ok(a)
}

pub fn write_vector<W: Write>(mut w: W, v: &[f64]) -> std::io::Result<()> {
    w.write_all(&VECTOR_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(v.len() as u64).to_le_bytes())?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_vector<R: Read>(r: R) -> Result<Vec<f64>, CgError> {
    let mut c = Cursor { inner: r, offset: 0 };
    c.header(VECTOR_MAGIC)?;
    let len = c.u64()? as usize;
    (0..len).map(|_| c.u64().map(f64::from_bits)).collect()
}

pub fn save_matrix(path: &Path, a: &CsrMatrix) -> Result<(), CgError> {
    let f = File::create(path).map_err(|e| CgError::Io(format!("{}: {e}", path.display())))?;
    write_matrix(BufWriter::new(f), a).map_err(|e| CgError::Io(e.to_string()))
}

pub fn load_matrix(path: &Path) -> Result<CsrMatrix, CgError> {
    let f = File::open(path).map_err(|e| CgError::Io(format!("{}: {e}", path.display())))?;
    read_matrix(BufReader::new(f))
}
