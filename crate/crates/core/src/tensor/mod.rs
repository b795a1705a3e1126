//! Dense `f32` tensors and the deterministic primitives the model is built on.
//!
//! Shape mismatches here are caller bugs and panic; the model layers above
//! validate shapes once when weights are loaded.

mod kernel;

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

pub use kernel::{gemm, PackedMatrix, PANEL};

/// Row-major `rows × cols` matrix of `f32`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "Matrix::from_vec: {rows}x{cols} needs {} values", rows * cols);
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "Matrix::from_rows: ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Columns `start..start + width` as a new matrix.
    pub fn columns(&self, start: usize, width: usize) -> Self {
        assert!(start + width <= self.cols, "Matrix::columns out of range");
        let mut data = Vec::with_capacity(self.rows * width);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..start + width]);
        }
        Self { rows: self.rows, cols: width, data }
    }

    /// Rows `start..start + count` as a new matrix.
    pub fn row_range(&self, start: usize, count: usize) -> Self {
        assert!(start + count <= self.rows, "Matrix::row_range out of range");
        Self::from_vec(count, self.cols, self.data[start * self.cols..(start + count) * self.cols].to_vec())
    }

    /// Stacks matrices of equal width vertically.
    pub fn vstack(parts: &[Matrix]) -> Self {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            assert_eq!(p.cols, cols, "vstack: width mismatch");
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Self { rows, cols, data }
    }

    /// Concatenates matrices of equal height horizontally.
    pub fn hstack(parts: &[Matrix]) -> Self {
        let rows = parts.first().map_or(0, |m| m.rows);
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                assert_eq!(p.rows, rows, "hstack: height mismatch");
                data.extend_from_slice(p.row(i));
            }
        }
        Self { rows, cols, data }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "add_assign: shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn add_row_vector(&mut self, v: &[f32]) {
        assert_eq!(v.len(), self.cols, "add_row_vector: width mismatch");
        for row in self.data.chunks_exact_mut(self.cols) {
            for (a, b) in row.iter_mut().zip(v) {
                *a += *b;
            }
        }
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Matrix) -> f32 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff: shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max)
    }
}

/// Boolean (query, key) admission table for attention.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                allowed.push(f(i, j));
            }
        }
        Self { rows, cols, allowed }
    }

    /// Lower-triangular mask: query `i` sees keys `0..=i`.
    pub fn causal(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| j <= i)
    }

    /// Causal within consecutive blocks of `block` rows, nothing across blocks.
    pub fn block_causal(block: usize, blocks: usize) -> Self {
        let n = block * blocks;
        Self::from_fn(n, n, |i, j| i / block == j / block && j <= i)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.cols..(i + 1) * self.cols]
    }

    /// Every query admits at least one key.
    pub fn is_well_formed(&self) -> bool {
        (0..self.rows).all(|i| self.row(i).iter().any(|&a| a))
    }
}

/// `a · b`. Each output element accumulates its products in index order.
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.rows, "matmul: {}x{} by {}x{}", a.rows, a.cols, b.rows, b.cols);
    matmul_packed(a, &PackedMatrix::pack(b.rows, b.cols, &b.data))
}

/// `a · b` for a pre-packed right operand.
pub fn matmul_packed(a: &Matrix, b: &PackedMatrix) -> Matrix {
    assert_eq!(a.cols, b.rows(), "matmul: {}x{} by {}x{}", a.rows, a.cols, b.rows(), b.cols());
    let mut out = Matrix::zeros(a.rows, b.cols());
    gemm(&a.data, a.rows, b, &mut out.data);
    out
}

/// `a · bᵀ`.
pub fn matmul_transposed(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.cols, "matmul_transposed: widths {} and {}", a.cols, b.cols);
    matmul_packed(a, &PackedMatrix::pack_transposed(b.rows, b.cols, &b.data))
}

/// Row softmax of `logits / scale`. Masked-out entries are excluded from the
/// normalizer and come back as exactly `0.0`.
pub fn masked_row_softmax(logits: &Matrix, mask: Option<&AttentionMask>, scale: f32) -> Matrix {
    let mut out = logits.clone();
    softmax_rows_in_place(&mut out, mask, scale);
    out
}

pub fn softmax_rows_in_place(x: &mut Matrix, mask: Option<&AttentionMask>, scale: f32) {
    assert!(scale > 0.0, "softmax scale must be positive");
    if let Some(m) = mask {
        assert_eq!((m.rows, m.cols), x.shape(), "softmax: mask shape mismatch");
    }
    let cols = x.cols;
    for i in 0..x.rows {
        let allowed = mask.map(|m| m.row(i));
        let ok = |j: usize| allowed.map_or(true, |a| a[j]);
        let row = &mut x.data[i * cols..(i + 1) * cols];
        let mut max = f32::NEG_INFINITY;
        for (j, v) in row.iter().enumerate() {
            if ok(j) {
                max = max.max(*v / scale);
            }
        }
        assert!(max > f32::NEG_INFINITY, "softmax: row {i} admits no key");
        let mut sum = 0f64;
        for (j, v) in row.iter_mut().enumerate() {
            if ok(j) {
                let e = libm::expf(*v / scale - max);
                *v = e;
                sum += e as f64;
            } else {
                *v = 0.0;
            }
        }
        let inv = 1.0 / sum;
        for (j, v) in row.iter_mut().enumerate() {
            if ok(j) {
                *v = (*v as f64 * inv) as f32;
            }
        }
    }
}

/// Per-row standardization followed by `gain`/`bias`.
pub fn layer_normalize(x: &Matrix, gain: &[f32], bias: &[f32], epsilon: f32) -> Matrix {
    assert_eq!(gain.len(), x.cols, "layer_normalize: gain width");
    assert_eq!(bias.len(), x.cols, "layer_normalize: bias width");
    let n = x.cols as f64;
    let mut out = Matrix::zeros(x.rows, x.cols);
    for i in 0..x.rows {
        let row = x.row(i);
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = row.iter().map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>() / n;
        let inv = 1.0 / libm::sqrt(var + epsilon as f64);
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = ((row[j] as f64 - mean) * inv) as f32 * gain[j] + bias[j];
        }
    }
    out
}

pub fn relu(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    relu_in_place(&mut out);
    out
}

pub fn relu_in_place(x: &mut Matrix) {
    for v in &mut x.data {
        *v = v.max(0.0);
    }
}

/// Classic transformer sinusoids: `sin` on even channels, `cos` on odd ones.
pub fn sinusoidal_positions(length: usize, dim: usize) -> Matrix {
    assert!(dim % 2 == 0, "sinusoidal_positions: dim {dim} must be even");
    Matrix::from_fn(length, dim, |pos, ch| {
        let i = (ch / 2) as f64;
        let angle = pos as f64 / libm::pow(10000.0, 2.0 * i / dim as f64);
        if ch % 2 == 0 {
            libm::sin(angle) as f32
        } else {
            libm::cos(angle) as f32
        }
    })
}

/// Column-wise mean, summed in row order.
pub fn mean_pool_rows(x: &Matrix) -> Vec<f32> {
    assert!(x.rows >= 1, "mean_pool_rows: empty input");
    let mut acc = vec![0f64; x.cols];
    for i in 0..x.rows {
        for (a, &v) in acc.iter_mut().zip(x.row(i)) {
            *a += v as f64;
        }
    }
    let n = x.rows as f64;
    acc.into_iter().map(|s| (s / n) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_examples() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(matmul(&a, &Matrix::identity(2)), a);
        let z = matmul(&Matrix::zeros(2, 3), &Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f32));
        assert_eq!(z, Matrix::zeros(2, 4));
        let dot = matmul(&Matrix::from_rows(&[[1.0, 2.0]]), &Matrix::from_rows(&[[3.0], [4.0]]));
        assert_eq!(dot.data(), &[11.0]);
    }

    #[test]
    #[should_panic(expected = "matmul")]
    fn matmul_dimension_mismatch_panics() {
        matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3));
    }

    #[test]
    fn softmax_examples() {
        let u = masked_row_softmax(&Matrix::zeros(1, 4), None, 1.0);
        assert_eq!(u.data(), &[0.25; 4]);

        let p = masked_row_softmax(&Matrix::from_rows(&[[0.0, 10.0]]), None, 1.0);
        let e10 = 10f64.exp();
        assert!((p.get(0, 0) as f64 - 1.0 / (1.0 + e10)).abs() < 1e-9);
        assert!((p.get(0, 1) as f64 - e10 / (1.0 + e10)).abs() < 1e-7);

        let a = masked_row_softmax(&Matrix::from_rows(&[[0.5, 1.5, -2.0]]), None, 1.0);
        let b = masked_row_softmax(&Matrix::from_rows(&[[0.5 - 3.0, 1.5 - 3.0, -2.0 - 3.0]]), None, 1.0);
        assert!(a.max_abs_diff(&b) < 1e-7);
    }

    #[test]
    fn masked_entries_are_exact_zero() {
        let logits = Matrix::from_fn(4, 4, |i, j| (i as f32) - (j as f32) * 0.3);
        let p = masked_row_softmax(&logits, Some(&AttentionMask::causal(4)), 2.0);
        for i in 0..4 {
            for j in i + 1..4 {
                assert_eq!(p.get(i, j).to_bits(), 0);
            }
            let s: f32 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert_eq!(p.get(0, 0), 1.0);
    }

    #[test]
    #[should_panic(expected = "admits no key")]
    fn softmax_rejects_empty_row() {
        let mask = AttentionMask::from_fn(2, 2, |i, _| i == 0);
        masked_row_softmax(&Matrix::zeros(2, 2), Some(&mask), 1.0);
    }

    #[test]
    fn layer_norm_examples() {
        let c = layer_normalize(&Matrix::from_rows(&[[3.0; 5]]), &[1.0; 5], &[0.0; 5], 1e-5);
        assert_eq!(c.data(), &[0.0; 5]);
        let pm = layer_normalize(&Matrix::from_rows(&[[1.0, -1.0]]), &[1.0; 2], &[0.0; 2], 1e-5);
        assert!((pm.get(0, 0) - 1.0).abs() < 1e-5 && (pm.get(0, 1) + 1.0).abs() < 1e-5);
        let b = layer_normalize(&Matrix::from_rows(&[[0.3, 7.0, -2.0]]), &[0.0; 3], &[1.0, 2.0, 3.0], 1e-5);
        assert_eq!(b.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&Matrix::from_rows(&[[-1.0, 0.0, 2.0]])).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&Matrix::zeros(2, 2)), Matrix::zeros(2, 2));
        assert_eq!(relu(&Matrix::from_rows(&[[3.5]])).data(), &[3.5]);
    }

    #[test]
    fn sinusoid_examples() {
        let p = sinusoidal_positions(4, 4);
        assert_eq!(p.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((p.get(1, 0) - 0.841_470_96).abs() < 1e-6);
        assert!(sinusoidal_positions(50, 16).data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    #[should_panic(expected = "must be even")]
    fn sinusoid_rejects_odd_dim() {
        sinusoidal_positions(2, 3);
    }

    #[test]
    fn mean_pool_examples() {
        assert_eq!(mean_pool_rows(&Matrix::from_rows(&[[1.5, -2.0]])), vec![1.5, -2.0]);
        assert_eq!(mean_pool_rows(&Matrix::from_rows(&[[1.0, 3.0], [3.0, 1.0]])), vec![2.0, 2.0]);
    }

    #[test]
    #[should_panic(expected = "empty input")]
    fn mean_pool_rejects_empty() {
        mean_pool_rows(&Matrix::zeros(0, 3));
    }
}
