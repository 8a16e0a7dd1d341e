//! Little-endian binary containers.
//!
//! * `RISY`: complex vector: magic, u32 version, u64 length, then
//!   interleaved real/imaginary f64 values.
//! * `RISM`: complex matrix: magic, u32 version, u64 rows, u64 cols, then
//!   row-major interleaved entries.
//!
//! The operator cache and model checkpoints build on the same primitives.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const VECTOR_MAGIC: &[u8; 4] = b"RISY";
pub const MATRIX_MAGIC: &[u8; 4] = b"RISM";
pub const FORMAT_VERSION: u32 = 1;

pub struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b)?;
        Ok(())
    }

    pub fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) -> Result<()> {
        for v in vs {
            self.f64(*v)?;
        }
        Ok(())
    }

    pub fn complexes<'a>(&mut self, vs: impl IntoIterator<Item = &'a Complex64>) -> Result<()> {
        for v in vs {
            self.f64(v.re)?;
            self.f64(v.im)?;
        }
        Ok(())
    }

    pub fn header(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        self.bytes(magic)?;
        self.u32(version)
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("unexpected end of file".into()),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    /// Reads a u64 length field, refusing sizes that cannot be allocated.
    pub fn length(&mut self) -> Result<usize> {
        let n = self.u64()?;
        if n > (1 << 34) {
            return Err(Error::Format(format!("implausible length {n}")));
        }
        Ok(n as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn complexes(&mut self, n: usize) -> Result<Vec<Complex64>> {
        (0..n).map(|_| Ok(Complex64::new(self.f64()?, self.f64()?))).collect()
    }

    /// Checks the magic and returns the version, which must not exceed
    /// `max_version`.
    pub fn header(&mut self, magic: &[u8; 4], max_version: u32) -> Result<u32> {
        let got = self.array::<4>()?;
        if &got != magic {
            return Err(Error::Format(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&got)
            )));
        }
        let version = self.u32()?;
        if version == 0 || version > max_version {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        Ok(version)
    }
}

/// Writes `bytes` to `path` via a temporary file and rename, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn encode_vector(v: &Array1<Complex64>) -> Vec<u8> {
    let mut w = Writer::new(Vec::with_capacity(16 + 16 * v.len()));
    // Vec<u8> writes are infallible
    w.header(VECTOR_MAGIC, FORMAT_VERSION).unwrap();
    w.u64(v.len() as u64).unwrap();
    w.complexes(v.iter()).unwrap();
    w.finish().unwrap()
}

pub fn decode_vector(bytes: &[u8]) -> Result<Array1<Complex64>> {
    let mut r = Reader::new(bytes);
    r.header(VECTOR_MAGIC, FORMAT_VERSION)?;
    let n = r.length()?;
    if bytes.len() != 16 + 16 * n {
        return Err(Error::Format(format!("vector of length {n} has {} bytes", bytes.len())));
    }
    Ok(Array1::from(r.complexes(n)?))
}

pub fn write_vector(path: impl AsRef<Path>, v: &Array1<Complex64>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_vector(v))
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<Array1<Complex64>> {
    decode_vector(&std::fs::read(path)?)
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Array2<Complex64>) -> Result<()> {
    let mut w = Writer::new(Vec::with_capacity(24 + 16 * m.len()));
    w.header(MATRIX_MAGIC, FORMAT_VERSION)?;
    w.u64(m.nrows() as u64)?;
    w.u64(m.ncols() as u64)?;
    w.complexes(m.iter())?;
    write_atomic(path.as_ref(), &w.finish()?)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Array2<Complex64>> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(bytes.as_slice());
    r.header(MATRIX_MAGIC, FORMAT_VERSION)?;
    let rows = r.length()?;
    let cols = r.length()?;
    if bytes.len() != 24 + 16 * rows * cols {
        return Err(Error::Format(format!("{rows}x{cols} matrix has {} bytes", bytes.len())));
    }
    Array2::from_shape_vec((rows, cols), r.complexes(rows * cols)?)
        .map_err(|e| Error::Format(e.to_string()))
}
