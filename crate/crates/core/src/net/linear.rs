use crate::error::{check_finite, check_len, Error, Result};

/// A bias-free linear map `z -> A z`, with `A` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    rows: usize,
    cols: usize,
    a: Vec<f64>,
}

impl LinearMap {
    pub fn new(rows: usize, cols: usize, a: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidConfig("linear map dimensions must be positive".into()));
        }
        check_len("linear map entries", rows * cols, a.len())?;
        check_finite("linear map entries", &a)?;
        Ok(Self { rows, cols, a })
    }

    pub fn identity(n: usize) -> Self {
        Self::padded_identity(n, n)
    }

    /// `rows x cols` matrix with ones on the main diagonal and zeros elsewhere.
    pub fn padded_identity(rows: usize, cols: usize) -> Self {
        let mut a = vec![0.0; rows * cols];
        for i in 0..rows.min(cols) {
            a[i * cols + i] = 1.0;
        }
        Self { rows, cols, a }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut a = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_len("matrix row", cols, r.len())?;
            a.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, a)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.a
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.a
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.a[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.a[r * self.cols..(r + 1) * self.cols]
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("linear input", self.cols, z.len())?;
        check_finite("linear input", z)?;
        Ok(self.apply(z))
    }

    pub(crate) fn apply(&self, z: &[f64]) -> Vec<f64> {
        self.a
            .chunks_exact(self.cols)
            .map(|row| super::layer::dot(row, z))
            .collect()
    }

    /// `A^T v`.
    pub(crate) fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.add_transpose(v, &mut out);
        out
    }

    fn add_transpose(&self, v: &[f64], out: &mut [f64]) {
        for (row, &vr) in self.a.chunks_exact(self.cols).zip(v) {
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * vr;
            }
        }
    }

    /// Returns `(upstream z^T, A^T upstream)`.
    pub fn backward(&self, z: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("linear input", self.cols, z.len())?;
        check_len("linear upstream gradient", self.rows, upstream.len())?;
        check_finite("linear upstream gradient", upstream)?;
        let mut ga = vec![0.0; self.a.len()];
        let mut gz = vec![0.0; self.cols];
        self.backward_cached(z, upstream, Some(&mut ga), Some(&mut gz));
        Ok((ga, gz))
    }

    pub(crate) fn backward_cached(
        &self,
        z: &[f64],
        upstream: &[f64],
        grad_a: Option<&mut [f64]>,
        grad_z: Option<&mut [f64]>,
    ) {
        if let Some(ga) = grad_a {
            for (grow, &u) in ga.chunks_exact_mut(self.cols).zip(upstream) {
                for (g, &x) in grow.iter_mut().zip(z) {
                    *g += u * x;
                }
            }
        }
        if let Some(gz) = grad_z {
            self.add_transpose(upstream, gz);
        }
    }

    pub fn transpose(&self) -> Self {
        let mut a = vec![0.0; self.a.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                a[c * self.rows + r] = self.a[r * self.cols + c];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            a,
        }
    }

    pub fn num_params(&self) -> usize {
        self.a.len()
    }
}
