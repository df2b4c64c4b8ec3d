//! Samples, datasets and the `FMDT1` binary format.
//!
//! `FMDT1` layout (all integers little-endian):
//!
//! ```text
//! b"FMDT1\0" | u32 n | u32 d | u8 has_shape | [u32 c, u32 h, u32 w] | n*d f32 row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, FmError, Result};

pub const FMDT1_MAGIC: &[u8; 6] = b"FMDT1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// A single point of `R^d`, optionally tagged with an image shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    values: Vec<f64>,
    shape: Option<ImageShape>,
}

impl Sample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        Ok(Self {
            values,
            shape: None,
        })
    }

    pub fn with_shape(values: Vec<f64>, shape: ImageShape) -> Result<Self> {
        check_finite(&values)?;
        check_dim(shape.numel(), values.len())?;
        Ok(Self {
            values,
            shape: Some(shape),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> Option<ImageShape> {
        self.shape
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(FmError::NonFinite(format!("sample entry {i}"))),
        None => Ok(()),
    }
}

/// `n >= 1` points of a common dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    dim: usize,
    shape: Option<ImageShape>,
    data: Vec<f64>,
}

impl Dataset {
    pub fn from_rows(
        name: impl Into<String>,
        rows: Vec<Vec<f64>>,
        shape: Option<ImageShape>,
    ) -> Result<Self> {
        let first = rows.first().ok_or(FmError::Empty("dataset"))?;
        let dim = first.len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            check_dim(dim, row.len())?;
            data.extend_from_slice(row);
        }
        Self::from_flat(name, dim, data, shape)
    }

    pub fn from_flat(
        name: impl Into<String>,
        dim: usize,
        data: Vec<f64>,
        shape: Option<ImageShape>,
    ) -> Result<Self> {
        if dim == 0 || data.is_empty() {
            return Err(FmError::Empty("dataset"));
        }
        if data.len() % dim != 0 {
            return Err(FmError::Format(format!(
                "{} values do not split into rows of {dim}",
                data.len()
            )));
        }
        if let Some(s) = shape {
            check_dim(s.numel(), dim)?;
        }
        check_finite(&data)?;
        Ok(Self {
            name: name.into(),
            dim,
            shape,
            data,
        })
    }

    pub fn from_samples(name: impl Into<String>, samples: &[Sample]) -> Result<Self> {
        let first = samples.first().ok_or(FmError::Empty("dataset"))?;
        if samples.iter().any(|s| s.shape() != first.shape()) {
            return Err(FmError::InvalidArgument(
                "samples do not share an image shape".into(),
            ));
        }
        let rows = samples.iter().map(|s| s.values().to_vec()).collect();
        Self::from_rows(name, rows, first.shape())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> Option<ImageShape> {
        self.shape
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample {
            values: self.row(i).to_vec(),
            shape: self.shape,
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for row in self.rows() {
            for (acc, v) in m.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// `(min, max)` over every stored value.
    pub fn value_range(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Index and squared distance of the stored point closest to `x`
    /// (lowest index on ties).
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, row) in self.rows().enumerate() {
            let d2 = sq_dist(row, x);
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        best
    }

    pub fn write_fmdt1<W: Write>(&self, mut w: W) -> Result<()> {
        let n = u32::try_from(self.len())
            .map_err(|_| FmError::Format("too many points for FMDT1".into()))?;
        let d = u32::try_from(self.dim)
            .map_err(|_| FmError::Format("dimension too large for FMDT1".into()))?;
        w.write_all(FMDT1_MAGIC)?;
        w.write_all(&n.to_le_bytes())?;
        w.write_all(&d.to_le_bytes())?;
        match self.shape {
            Some(s) => {
                w.write_all(&[1u8])?;
                for v in [s.channels, s.height, s.width] {
                    w.write_all(&(v as u32).to_le_bytes())?;
                }
            }
            None => w.write_all(&[0u8])?,
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_fmdt1<R: Read>(mut r: R, name: impl Into<String>) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != FMDT1_MAGIC {
            return Err(FmError::Format("bad FMDT1 magic".into()));
        }
        let n = read_u32(&mut r)? as usize;
        let d = read_u32(&mut r)? as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let shape = match flag[0] {
            0 => None,
            1 => {
                let c = read_u32(&mut r)? as usize;
                let h = read_u32(&mut r)? as usize;
                let w = read_u32(&mut r)? as usize;
                Some(ImageShape::new(c, h, w))
            }
            other => return Err(FmError::Format(format!("bad has_shape byte {other}"))),
        };
        let mut bytes = vec![0u8; n * d * 4];
        r.read_exact(&mut bytes)?;
        let mut tail = [0u8; 1];
        if r.read(&mut tail)? != 0 {
            return Err(FmError::Format("trailing bytes after FMDT1 payload".into()));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::from_flat(name, d, data, shape)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_fmdt1(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Loads `FMDT1`, or CSV when the extension is `.csv`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let f = std::fs::File::open(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            Self::read_csv(f, name)
        } else {
            Self::read_fmdt1(std::io::BufReader::new(f), name)
        }
    }

    /// One sample per row. A first row that does not parse as numbers is
    /// treated as a header.
    pub fn read_csv<R: Read>(r: R, name: impl Into<String>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(r);
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let parsed: std::result::Result<Vec<f64>, _> =
                record.iter().map(str::parse::<f64>).collect();
            match parsed {
                Ok(row) => rows.push(row),
                Err(_) if i == 0 => continue,
                Err(e) => return Err(FmError::Format(format!("csv row {i}: {e}"))),
            }
        }
        Self::from_rows(name, rows, None)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record((0..self.dim).map(|j| format!("x{j}")))?;
        for row in self.rows() {
            writer.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmdt1_layout_is_bit_exact() {
        let ds = Dataset::from_rows(
            "t",
            vec![vec![1.0, -2.0, 0.5, 0.25]],
            Some(ImageShape::new(1, 2, 2)),
        )
        .unwrap();
        let mut buf = Vec::new();
        ds.write_fmdt1(&mut buf).unwrap();
        let mut expected = b"FMDT1\0".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&4u32.to_le_bytes());
        expected.push(1);
        for v in [1u32, 2, 2] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        for v in [1.0f32, -2.0, 0.5, 0.25] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(buf, expected);
        let back = Dataset::read_fmdt1(buf.as_slice(), "t").unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn fmdt1_rejects_garbage() {
        assert!(Dataset::read_fmdt1(&b"FMDT2\0xxxxxxxxx"[..], "x").is_err());
        let ds = Dataset::from_rows("t", vec![vec![1.0]], None).unwrap();
        let mut buf = Vec::new();
        ds.write_fmdt1(&mut buf).unwrap();
        buf.push(0);
        assert!(Dataset::read_fmdt1(buf.as_slice(), "t").is_err());
        buf.truncate(buf.len() - 3);
        assert!(Dataset::read_fmdt1(buf.as_slice(), "t").is_err());
    }

    #[test]
    fn csv_with_and_without_header() {
        let with = "a,b\n1,2\n3,4\n";
        let without = "1,2\n3,4\n";
        let a = Dataset::read_csv(with.as_bytes(), "a").unwrap();
        let b = Dataset::read_csv(without.as_bytes(), "a").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_eq!(a.row(1), &[3.0, 4.0]);
        assert!(Dataset::read_csv("1,2\n3,x\n".as_bytes(), "bad").is_err());
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(Dataset::from_rows("e", vec![], None).is_err());
        assert!(Dataset::from_rows("r", vec![vec![1.0], vec![1.0, 2.0]], None).is_err());
        assert!(Dataset::from_rows("s", vec![vec![1.0, 2.0]], Some(ImageShape::new(1, 3, 1))).is_err());
        assert!(Dataset::from_rows("n", vec![vec![f64::NAN]], None).is_err());
        assert!(Sample::with_shape(vec![0.0; 3], ImageShape::new(1, 2, 2)).is_err());
    }

    #[test]
    fn mean_range_nearest() {
        let ds = Dataset::from_rows("m", vec![vec![0.0, 2.0], vec![2.0, -2.0]], None).unwrap();
        assert_eq!(ds.mean(), vec![1.0, 0.0]);
        assert_eq!(ds.value_range(), (-2.0, 2.0));
        assert_eq!(ds.nearest(&[1.9, -1.0]).0, 1);
        assert_eq!(ds.nearest(&[1.0, 0.0]).0, 0);
    }
}
