//! Per-cell Gaussian detector scored by Mahalanobis distance.

use crate::error::{HiadError, Result};
use crate::fusion::CellBlock;
use crate::store::{take_f64, ArrayData, NamedArray};

pub const DEFAULT_EPSILON: f64 = 0.01;

/// One Gaussian per cell position: mean and the Cholesky factor of the
/// regularized covariance, packed row-major lower-triangular.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDetector {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub epsilon: f64,
    means: Vec<f64>,
    chol: Vec<f64>,
}

fn tri_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

#[inline]
fn tri(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

/// In-place Cholesky of a symmetric matrix given as its packed lower triangle.
fn cholesky_packed(a: &mut [f64], dim: usize) -> bool {
    for i in 0..dim {
        for j in 0..=i {
            let mut s = a[tri(i, j)];
            for k in 0..j {
                s -= a[tri(i, k)] * a[tri(j, k)];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return false;
                }
                a[tri(i, i)] = s.sqrt();
            } else {
                a[tri(i, j)] = s / a[tri(j, j)];
            }
        }
    }
    true
}

impl GaussianDetector {
    /// Fits one Gaussian per cell position from equally shaped cell blocks.
    /// Covariances use the unbiased `N - 1` divisor plus `epsilon * I`.
    pub fn fit(samples: &[&CellBlock], epsilon: f64) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| HiadError::Fit("gaussian detector needs samples".into()))?;
        let (rows, cols, dim) = (first.rows, first.cols, first.dim);
        if samples.len() < 2 {
            return Err(HiadError::Fit(format!(
                "gaussian detector needs at least 2 samples per cell, got {}",
                samples.len()
            )));
        }
        if let Some(b) = samples.iter().find(|b| (b.rows, b.cols, b.dim) != (rows, cols, dim)) {
            return Err(HiadError::Contract(format!(
                "cell block {}x{}x{} differs from {rows}x{cols}x{dim}",
                b.rows, b.cols, b.dim
            )));
        }
        if !(epsilon >= 0.0) {
            return Err(HiadError::Config(format!("epsilon must be non-negative, got {epsilon}")));
        }
        let cells = rows * cols;
        let n = samples.len() as f64;
        let tl = tri_len(dim);
        let mut means = vec![0f64; cells * dim];
        let mut chol = vec![0f64; cells * tl];
        let mut centered = vec![0f64; dim];
        for cell in 0..cells {
            let mu = &mut means[cell * dim..(cell + 1) * dim];
            for b in samples {
                for (m, &v) in mu.iter_mut().zip(b.cell(cell)) {
                    *m += v as f64;
                }
            }
            mu.iter_mut().for_each(|m| *m /= n);
            let cov = &mut chol[cell * tl..(cell + 1) * tl];
            for b in samples {
                for ((c, &v), &m) in centered.iter_mut().zip(b.cell(cell)).zip(mu.iter()) {
                    *c = v as f64 - m;
                }
                for i in 0..dim {
                    let ci = centered[i];
                    let row = &mut cov[tri(i, 0)..=tri(i, i)];
                    for (r, &cj) in row.iter_mut().zip(&centered[..=i]) {
                        *r += ci * cj;
                    }
                }
            }
            cov.iter_mut().for_each(|c| *c /= n - 1.0);
            for i in 0..dim {
                cov[tri(i, i)] += epsilon;
            }
            if !cholesky_packed(cov, dim) {
                return Err(HiadError::Numeric(format!(
                    "covariance of cell ({}, {}) is not positive definite after regularization",
                    cell / cols,
                    cell % cols
                )));
            }
        }
        Ok(GaussianDetector {
            rows,
            cols,
            dim,
            epsilon,
            means,
            chol,
        })
    }

    pub fn mean(&self, cell: usize) -> &[f64] {
        &self.means[cell * self.dim..(cell + 1) * self.dim]
    }

    /// Regularized covariance `L L^T` of one cell, row-major.
    pub fn covariance(&self, cell: usize) -> Vec<f64> {
        let d = self.dim;
        let l = &self.chol[cell * tri_len(d)..(cell + 1) * tri_len(d)];
        let mut out = vec![0f64; d * d];
        for i in 0..d {
            for j in 0..=i {
                let s: f64 = (0..=j).map(|k| l[tri(i, k)] * l[tri(j, k)]).sum();
                out[i * d + j] = s;
                out[j * d + i] = s;
            }
        }
        out
    }

    /// Mahalanobis distance of `f` to the Gaussian of `cell`.
    pub fn distance(&self, cell: usize, f: &[f32]) -> f64 {
        let d = self.dim;
        let mu = self.mean(cell);
        let l = &self.chol[cell * tri_len(d)..(cell + 1) * tri_len(d)];
        let mut y = vec![0f64; d];
        let mut q = 0f64;
        for i in 0..d {
            let row = &l[tri(i, 0)..=tri(i, i)];
            let mut s = f[i] as f64 - mu[i];
            for k in 0..i {
                s -= row[k] * y[k];
            }
            y[i] = s / row[i];
            q += y[i] * y[i];
        }
        q.sqrt()
    }

    pub fn score_cells(&self, block: &CellBlock) -> Result<Vec<f32>> {
        if (block.rows, block.cols, block.dim) != (self.rows, self.cols, self.dim) {
            return Err(HiadError::Contract(format!(
                "cell block {}x{}x{} does not match fitted {}x{}x{}",
                block.rows, block.cols, block.dim, self.rows, self.cols, self.dim
            )));
        }
        Ok((0..block.len())
            .map(|k| self.distance(k, block.cell(k)) as f32)
            .collect())
    }

    pub fn to_arrays(&self) -> Vec<NamedArray> {
        let cells = self.rows * self.cols;
        vec![
            NamedArray::new("mean", vec![cells, self.dim], ArrayData::F64(self.means.clone())),
            NamedArray::new("cholesky", vec![cells, tri_len(self.dim)], ArrayData::F64(self.chol.clone())),
        ]
    }

    pub fn from_arrays(rows: usize, cols: usize, dim: usize, epsilon: f64, arrays: &[NamedArray]) -> Result<Self> {
        let cells = rows * cols;
        let means = take_f64(arrays, "mean", &[cells, dim])?;
        let chol = take_f64(arrays, "cholesky", &[cells, tri_len(dim)])?;
        Ok(GaussianDetector {
            rows,
            cols,
            dim,
            epsilon,
            means,
            chol,
        })
    }
}
