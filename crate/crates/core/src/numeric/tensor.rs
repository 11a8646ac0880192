//! Dense row-major f64 matrices. Vectors are 1×n or n×1 tensors.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Tensor { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Tensor { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Tensor { rows: 1, cols: data.len(), data }
    }

    pub fn col_vector(data: Vec<f64>) -> Self {
        Tensor { rows: data.len(), cols: 1, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// C = A · B.
    pub fn matmul(&self, b: &Tensor) -> Tensor {
        assert_eq!(self.cols, b.rows, "matmul inner dimension mismatch");
        let mut out = Tensor::zeros(self.rows, b.cols);
        matmul_into(self, b, &mut out);
        out
    }
}

/// ikj loop order keeps the inner loop contiguous over both B and C rows.
fn matmul_into(a: &Tensor, b: &Tensor, c: &mut Tensor) {
    let n = b.cols;
    for i in 0..a.rows {
        let a_row = a.row(i);
        let c_row = c.row_mut(i);
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * n..(k + 1) * n];
            for j in 0..n {
                c_row[j] += aik * b_row[j];
            }
        }
    }
}

/// C = Aᵀ · B without materialising the transpose.
pub fn matmul_at_b(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows, b.rows, "matmul_at_b dimension mismatch");
    let mut c = Tensor::zeros(a.cols, b.cols);
    let n = b.cols;
    for k in 0..a.rows {
        let a_row = a.row(k);
        let b_row = b.row(k);
        for (i, &aki) in a_row.iter().enumerate() {
            if aki == 0.0 {
                continue;
            }
            let c_row = &mut c.data[i * n..(i + 1) * n];
            for j in 0..n {
                c_row[j] += aki * b_row[j];
            }
        }
    }
    c
}

/// C = A · Bᵀ.
pub fn matmul_a_bt(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.cols, "matmul_a_bt dimension mismatch");
    let mut c = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let c_row = c.row_mut(i);
        for j in 0..b.rows {
            let b_row = b.row(j);
            let mut acc = 0.0;
            for k in 0..a.cols {
                acc += a_row[k] * b_row[k];
            }
            c_row[j] = acc;
        }
    }
    c
}
