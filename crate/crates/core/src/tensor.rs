//! Dense row-major matrices of f64.
//!
//! Everything in the model is two-dimensional: batches of activations are
//! `batch x dim`, weight matrices are `in_dim x out_dim`, bias rows and
//! learned scalars are `1 x n` and `1 x 1`. All arithmetic is IEEE 754
//! double precision so results are reproducible bit for bit.

use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Matrix sizes above this many multiply-adds are split across threads.
const PAR_THRESHOLD: usize = 1 << 17;

fn worker_count() -> usize {
    use std::sync::OnceLock;
    static WORKERS: OnceLock<usize> = OnceLock::new();
    *WORKERS.get_or_init(|| {
        std::thread::available_parallelism()
            .map(|n| n.get().min(8))
            .unwrap_or(1)
    })
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape does not match data length");
        Tensor { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor { rows: r, cols: c, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    /// Uniform entries in [lo, hi), drawn row-major.
    pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.uniform(lo, hi)).collect();
        Tensor { rows, cols, data }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Tensor { rows, cols, data: vec![v; rows * cols] }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// self += other, same shape.
    pub fn add_in_place(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape(), "add_in_place shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// self += s * other, same shape.
    pub fn add_scaled_in_place(&mut self, other: &Tensor, s: f64) {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * *b;
        }
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// self (m x k) times other (k x n).
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Tensor::zeros(m, n);
        let work = m * k * n;
        if work >= PAR_THRESHOLD && worker_count() > 1 && m > 1 {
            par_rows(&mut out.data, n, worker_count(), |i, row| {
                gemm_row(row, self.row(i), &other.data, n);
            });
        } else {
            for i in 0..m {
                gemm_row(&mut out.data[i * n..(i + 1) * n], self.row(i), &other.data, n);
            }
        }
        out
    }

    /// self (m x n) times other^T (k x n), yielding m x k.
    pub fn matmul_nt(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.cols, "matmul_nt dimension mismatch");
        let (m, n, k) = (self.rows, self.cols, other.rows);
        let mut out = Tensor::zeros(m, k);
        let work = m * n * k;
        if work >= PAR_THRESHOLD && worker_count() > 1 && m > 1 {
            par_rows(&mut out.data, k, worker_count(), |i, row| {
                let a_row = self.row(i);
                for (p, slot) in row.iter_mut().enumerate() {
                    *slot = dot(a_row, other.row(p));
                }
            });
        } else {
            for i in 0..m {
                let a_row = self.row(i);
                for p in 0..k {
                    out.data[i * k + p] = dot(a_row, other.row(p));
                }
            }
        }
        out
    }

    /// self^T (m x k) times other (m x n), yielding k x n.
    pub fn matmul_tn(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.rows, other.rows, "matmul_tn dimension mismatch");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Tensor::zeros(k, n);
        let work = m * k * n;
        if work >= PAR_THRESHOLD && worker_count() > 1 && k > 1 {
            par_rows(&mut out.data, n, worker_count(), |p, row| {
                for i in 0..m {
                    let a_ip = self.data[i * k + p];
                    if a_ip != 0.0 {
                        axpy(row, a_ip, other.row(i));
                    }
                }
            });
        } else {
            // i-outer order streams both operands once.
            for i in 0..m {
                let o_row = other.row(i);
                let a_row = self.row(i);
                for p in 0..k {
                    let a_ip = a_row[p];
                    if a_ip != 0.0 {
                        axpy(&mut out.data[p * n..(p + 1) * n], a_ip, o_row);
                    }
                }
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four lanes break the serial dependency on one accumulator.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let (x, y) = (&a[i * 4..i * 4 + 4], &b[i * 4..i * 4 + 4]);
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// One output row of a plain GEMM: row_out += a_row[k] * b_row_k for all k.
fn gemm_row(out: &mut [f64], a_row: &[f64], b_data: &[f64], n: usize) {
    for (p, &a_ip) in a_row.iter().enumerate() {
        if a_ip != 0.0 {
            axpy(out, a_ip, &b_data[p * n..(p + 1) * n]);
        }
    }
}

/// Run `f(row_index, row_slice)` over all rows of `data`, splitting the rows
/// into contiguous chunks across threads. Each row is written by exactly one
/// thread and the per-row arithmetic order is fixed, so results are identical
/// to the sequential loop.
fn par_rows(
    data: &mut [f64],
    row_len: usize,
    workers: usize,
    f: impl Fn(usize, &mut [f64]) + Sync,
) {
    let rows = data.len() / row_len.max(1);
    let chunk_rows = rows.div_ceil(workers);
    std::thread::scope(|scope| {
        for (c, chunk) in data.chunks_mut(chunk_rows * row_len).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (r, row) in chunk.chunks_mut(row_len).enumerate() {
                    f(c * chunk_rows + r, row);
                }
            });
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_variants_agree_with_transpose() {
        let mut rng = Rng::new(5);
        let a = Tensor::uniform(7, 4, -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(4, 6, -1.0, 1.0, &mut rng);
        let c = a.matmul(&b);

        let via_nt = a.matmul_nt(&b.transpose());
        let via_tn = a.transpose().matmul_tn(&b);
        for i in 0..c.len() {
            assert!((c.data()[i] - via_nt.data()[i]).abs() < 1e-12);
            assert!((c.data()[i] - via_tn.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_matmul_matches_sequential() {
        // Big enough to cross PAR_THRESHOLD.
        let mut rng = Rng::new(9);
        let a = Tensor::uniform(96, 64, -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(64, 80, -1.0, 1.0, &mut rng);
        let par = a.matmul(&b);
        let mut seq = Tensor::zeros(96, 80);
        for i in 0..96 {
            gemm_row(&mut seq.data_mut()[i * 80..(i + 1) * 80], a.row(i), b.data(), 80);
        }
        assert_eq!(par.data(), seq.data());
    }

    #[test]
    fn uniform_respects_bounds() {
        let mut rng = Rng::new(1);
        let t = Tensor::uniform(10, 10, -0.1, 0.1, &mut rng);
        assert!(t.data().iter().all(|&v| (-0.1..0.1).contains(&v)));
    }
}
