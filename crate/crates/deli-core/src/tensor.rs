//! Dense tensor storage with simple text and binary file formats.
//!
//! Indices are 0-based everywhere in code; the file formats carry only shapes
//! and values, so no convention leaks out.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::DeliError;
use crate::Result;

/// Magic bytes of the binary tensor format.
pub const BINARY_MAGIC: &[u8; 4] = b"TDL1";

/// A multi-index into an order-d tensor, 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexTuple(pub Vec<usize>);

impl IndexTuple {
    pub fn new(coords: Vec<usize>) -> Self {
        IndexTuple(coords)
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn in_bounds(&self, shape: &[usize]) -> bool {
        self.0.len() == shape.len() && self.0.iter().zip(shape).all(|(&i, &n)| i < n)
    }
}

impl std::ops::Index<usize> for IndexTuple {
    type Output = usize;
    fn index(&self, k: usize) -> &usize {
        &self.0[k]
    }
}

impl From<Vec<usize>> for IndexTuple {
    fn from(v: Vec<usize>) -> Self {
        IndexTuple(v)
    }
}

/// Order-d dense tensor, row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.len() < 2 {
            return Err(DeliError::ShapeMismatch(format!(
                "tensor order must be at least 2, got {}",
                shape.len()
            )));
        }
        if shape.iter().any(|&n| n == 0) {
            return Err(DeliError::ShapeMismatch(format!("zero-length mode in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(DeliError::ShapeMismatch(format!(
                "shape {:?} implies {} values, got {}",
                shape,
                expected,
                values.len()
            )));
        }
        Ok(DenseTensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        DenseTensor::new(shape, vec![0.0; len])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row-major linear offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.shape.len() || idx.iter().zip(&self.shape).any(|(&i, &n)| i >= n) {
            return Err(DeliError::IndexOutOfBounds {
                index: idx.to_vec(),
                shape: self.shape.clone(),
            });
        }
        let mut off = 0;
        for (&i, &n) in idx.iter().zip(&self.shape) {
            off = off * n + i;
        }
        Ok(off)
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.values[self.offset(idx)?])
    }

    pub fn set(&mut self, idx: &[usize], v: f64) -> Result<()> {
        let off = self.offset(idx)?;
        self.values[off] = v;
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Iterate all multi-indices in row-major order.
    pub fn indices(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        index_iter(&self.shape)
    }

    /// Text format: header `dims: n1 n2 ... nd`, then whitespace-separated values.
    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        let dims: Vec<String> = self.shape.iter().map(|n| n.to_string()).collect();
        writeln!(w, "dims: {}", dims.join(" "))?;
        for chunk in self.values.chunks(8) {
            let line: Vec<String> = chunk.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_text<R: Read>(r: R) -> Result<Self> {
        let mut reader = BufReader::new(r);
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let header = header.trim();
        let rest = header.strip_prefix("dims:").ok_or_else(|| DeliError::Parse {
            line: 1,
            message: format!("expected `dims:` header, got {header:?}"),
        })?;
        let shape: Vec<usize> = rest
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>().map_err(|e| DeliError::Parse {
                    line: 1,
                    message: format!("bad dimension {t:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        let expected: usize = shape.iter().product();
        let mut values = Vec::with_capacity(expected);
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            for tok in line.split_whitespace() {
                let v = tok.parse::<f64>().map_err(|e| DeliError::Parse {
                    line: lineno + 2,
                    message: format!("bad value {tok:?}: {e}"),
                })?;
                values.push(v);
            }
        }
        if values.len() != expected {
            return Err(DeliError::Parse {
                line: 0,
                message: format!("expected {} values for shape {:?}, got {}", expected, shape, values.len()),
            });
        }
        DenseTensor::new(shape, values)
    }

    /// Binary format: magic `TDL1`, little-endian u64 order, u64 dims, f64 values.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.shape.len() as u64).to_le_bytes())?;
        for &n in &self.shape {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for &v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(DeliError::Parse {
                line: 0,
                message: format!("bad magic bytes {magic:?}"),
            });
        }
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let d = u64::from_le_bytes(buf8) as usize;
        let mut shape = Vec::with_capacity(d);
        for _ in 0..d {
            r.read_exact(&mut buf8)?;
            shape.push(u64::from_le_bytes(buf8) as usize);
        }
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut buf8)?;
            values.push(f64::from_le_bytes(buf8));
        }
        DenseTensor::new(shape, values)
    }

    pub fn save_text<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_text(&mut w)
    }

    pub fn load_text<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::read_text(std::fs::File::open(path)?)
    }

    pub fn save_binary<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_binary(&mut w)
    }

    pub fn load_binary<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::read_binary(BufReader::new(std::fs::File::open(path)?))
    }
}

/// Row-major iteration over all multi-indices of `shape`.
pub fn index_iter(shape: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let total: usize = shape.iter().product();
    let d = shape.len();
    (0..total).map(move |mut off| {
        let mut idx = vec![0usize; d];
        for k in (0..d).rev() {
            idx[k] = off % shape[k];
            off /= shape[k];
        }
        idx
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_row_major() {
        let t = DenseTensor::new(vec![2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.get(&[0, 0]).unwrap(), 0.0);
        assert_eq!(t.get(&[0, 2]).unwrap(), 2.0);
        assert_eq!(t.get(&[1, 0]).unwrap(), 3.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(DenseTensor::new(vec![4], vec![0.0; 4]).is_err());
        assert!(DenseTensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(matches!(
            DenseTensor::zeros(vec![2, 2]).unwrap().get(&[2, 0]),
            Err(DeliError::IndexOutOfBounds { .. })
        ));
    }

    #[test]
    fn text_round_trip() {
        let t = DenseTensor::new(vec![2, 2, 2], (0..8).map(|v| v as f64 * 0.25).collect()).unwrap();
        let mut buf = Vec::new();
        t.write_text(&mut buf).unwrap();
        let back = DenseTensor::read_text(&buf[..]).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn binary_round_trip() {
        let t = DenseTensor::new(vec![3, 2], vec![1.5, -2.0, 0.0, 3.25, 1e-300, 7.0]).unwrap();
        let mut buf = Vec::new();
        t.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], BINARY_MAGIC);
        let back = DenseTensor::read_binary(&buf[..]).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn malformed_header_is_a_parse_error() {
        let res = DenseTensor::read_text("dms: 2 2\n1 2 3 4\n".as_bytes());
        assert!(matches!(res, Err(DeliError::Parse { line: 1, .. })));
    }

    #[test]
    fn index_iter_covers_all() {
        let idx: Vec<_> = index_iter(&[2, 2]).collect();
        assert_eq!(idx, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }
}
