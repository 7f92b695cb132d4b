//! Little-endian binary encoding shared by the store and model snapshots.

use std::io::{Read, Write};

use faer::Mat;

use crate::error::{Error, Result};

pub(crate) struct Writer<W: Write> {
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

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn usize(&mut self, v: usize) -> Result<()> {
        self.u64(v as u64)
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    /// Length-prefixed float array.
    pub fn f64s(&mut self, v: &[f64]) -> Result<()> {
        self.usize(v.len())?;
        for &x in v {
            self.f64(x)?;
        }
        Ok(())
    }

    pub fn mat(&mut self, m: &Mat<f64>) -> Result<()> {
        self.usize(m.nrows())?;
        self.usize(m.ncols())?;
        for j in 0..m.ncols() {
            for &v in m.col_as_slice(j) {
                self.f64(v)?;
            }
        }
        Ok(())
    }

    pub fn usizes(&mut self, v: &[usize]) -> Result<()> {
        self.usize(v.len())?;
        for &x in v {
            self.usize(x)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub(crate) struct Reader<R: Read> {
    inner: R,
}

/// Upper bound on any length prefix, to fail fast on corrupt input.
const MAX_LEN: usize = usize::MAX >> usize::BITS.saturating_sub(34);

impl<R: Read> Reader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }

    pub fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = vec![0; n];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| Error::Snapshot(format!("truncated snapshot: {e}")))?;
        Ok(b)
    }

    fn word(&mut self) -> Result<[u8; 8]> {
        let mut b = [0; 8];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| Error::Snapshot(format!("truncated snapshot: {e}")))?;
        Ok(b)
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.word()?))
    }

    pub fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Snapshot(format!("length {v} does not fit")))
    }

    pub fn len(&mut self) -> Result<usize> {
        let v = self.usize()?;
        if v > MAX_LEN {
            return Err(Error::Snapshot(format!("implausible length {v}")));
        }
        Ok(v)
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.word()?))
    }

    /// Dimensions followed by the entries in column-major order.
    pub fn mat(&mut self) -> Result<Mat<f64>> {
        let rows = self.len()?;
        let cols = self.len()?;
        if rows.saturating_mul(cols) > MAX_LEN {
            return Err(Error::Snapshot(format!("implausible matrix {rows} x {cols}")));
        }
        let mut m = Mat::zeros(rows, cols);
        for j in 0..cols {
            for v in m.col_as_slice_mut(j) {
                *v = self.f64()?;
            }
        }
        Ok(m)
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.len()?;
        (0..n).map(|_| self.usize()).collect()
    }

    pub fn expect_magic(&mut self, magic: &[u8]) -> Result<()> {
        let got = self.bytes(magic.len())?;
        if got != magic {
            return Err(Error::Snapshot(format!(
                "bad magic: expected {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&got)
            )));
        }
        Ok(())
    }
}
