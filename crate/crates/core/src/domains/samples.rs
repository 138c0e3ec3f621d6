use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Anything that maps points to points: networks, closed-form targets,
/// compositions.
pub trait Mapping {
    fn map_point(&self, x: &[f64]) -> Vec<f64>;
}

impl<F: Fn(&[f64]) -> Vec<f64>> Mapping for F {
    fn map_point(&self, x: &[f64]) -> Vec<f64> {
        self(x)
    }
}

/// `n x dim` matrix of samples, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dim: usize,
    data: Vec<f64>,
}

impl SampleSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<SampleSet> {
        if dim == 0 {
            return Err(Error::contract("sample dimension must be positive"));
        }
        if data.len() % dim != 0 {
            return Err(Error::contract(format!(
                "{} values do not form rows of length {dim}",
                data.len()
            )));
        }
        Ok(SampleSet { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<SampleSet> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::contract("cannot infer dimension of an empty sample set"))?;
        let mut data = Vec::with_capacity(dim * rows.len());
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::contract("rows have differing lengths"));
            }
            data.extend_from_slice(r);
        }
        SampleSet::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Apply a mapping row-wise. The output dimension is taken from the
    /// first mapped row.
    pub fn map(&self, f: &dyn Mapping) -> SampleSet {
        let mut data = Vec::with_capacity(self.data.len());
        let mut dim = self.dim;
        for (i, r) in self.rows().enumerate() {
            let y = f.map_point(r);
            if i == 0 {
                dim = y.len();
            }
            data.extend(y);
        }
        SampleSet { dim, data }
    }

    pub fn select(&self, indices: &[usize]) -> SampleSet {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        SampleSet { dim: self.dim, data }
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> SampleSet {
        let n = n.min(self.len());
        SampleSet {
            dim: self.dim,
            data: self.data[..n * self.dim].to_vec(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Uncentered second moment `E[z zᵀ]`, row-major `dim x dim`.
    pub fn second_moment(&self) -> Vec<f64> {
        let d = self.dim;
        let mut s = vec![0.0; d * d];
        for r in self.rows() {
            for i in 0..d {
                for j in 0..d {
                    s[i * d + j] += r[i] * r[j];
                }
            }
        }
        let n = self.len().max(1) as f64;
        s.iter_mut().for_each(|a| *a /= n);
        s
    }

    pub fn max_norm(&self) -> f64 {
        self.rows().map(norm).fold(0.0, f64::max)
    }

    /// CSV with header `x1,...,xd`, one row per sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for r in self.rows() {
            let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", cells.join(",")).expect("writing to a String cannot fail");
        }
        out
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `(1/|S|) Σ ‖f1(x) − f2(x)‖²` over the rows of `samples`.
pub fn mean_squared_gap(f1: &dyn Mapping, f2: &dyn Mapping, samples: &SampleSet) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let total: f64 = samples
        .rows()
        .map(|x| squared_distance(&f1.map_point(x), &f2.map_point(x)))
        .sum();
    total / samples.len() as f64
}
