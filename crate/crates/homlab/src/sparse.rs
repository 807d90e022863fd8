//! Compressed-row sparse matrices for the FEM pencils.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Square CSR matrix: rows sorted by column, duplicates summed, entries that
/// sum to exact zero dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix<F> {
    pub size: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<F>,
}

impl<F: Scalar> SparseMatrix<F> {
    pub fn from_triplets(size: usize, triplets: &mut Vec<(usize, usize, F)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; size + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut it = triplets.iter().peekable();
        for row in 0..size {
            while let Some(&&(r, c, v)) = it.peek() {
                if r != row {
                    break;
                }
                it.next();
                let mut acc = v;
                while let Some(&&(r2, c2, v2)) = it.peek() {
                    if r2 == row && c2 == c {
                        acc += v2;
                        it.next();
                    } else {
                        break;
                    }
                }
                if acc != F::zero() {
                    col_idx.push(c);
                    values.push(acc);
                }
            }
            row_ptr[row + 1] = col_idx.len();
        }
        SparseMatrix {
            size,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(size: usize) -> Self {
        SparseMatrix {
            size,
            row_ptr: (0..=size).collect(),
            col_idx: (0..size).collect(),
            values: vec![F::one(); size],
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn matvec(&self, x: &[F], y: &mut [F]) {
        debug_assert_eq!(x.len(), self.size);
        debug_assert_eq!(y.len(), self.size);
        for row in 0..self.size {
            let mut acc = F::zero();
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[row] = acc;
        }
    }

    pub fn matvec_alloc(&self, x: &[F]) -> Vec<F> {
        let mut y = vec![F::zero(); self.size];
        self.matvec(x, &mut y);
        y
    }

    pub fn get(&self, i: usize, j: usize) -> F {
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            if self.col_idx[k] == j {
                return self.values[k];
            }
        }
        F::zero()
    }

    pub fn diagonal(&self) -> Vec<F> {
        (0..self.size).map(|i| self.get(i, i)).collect()
    }

    /// Quadratic form `x^T A x`.
    pub fn quad_form(&self, x: &[F]) -> F {
        let mut acc = F::zero();
        for row in 0..self.size {
            let mut rowacc = F::zero();
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                rowacc += self.values[k] * x[self.col_idx[k]];
            }
            acc += x[row] * rowacc;
        }
        acc
    }

    /// Bilinear form `x^T A y`.
    pub fn bilinear(&self, x: &[F], y: &[F]) -> F {
        let mut acc = F::zero();
        for row in 0..self.size {
            let mut rowacc = F::zero();
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                rowacc += self.values[k] * y[self.col_idx[k]];
            }
            acc += x[row] * rowacc;
        }
        acc
    }

    /// Largest absolute asymmetry `max |A_ij - A_ji|`.
    pub fn max_asymmetry(&self) -> F {
        let mut m = F::zero();
        for i in 0..self.size {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                m = m.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        m
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.size != other.size {
            return Err(Error::SizeMismatch(format!(
                "sparse add: {} vs {}",
                self.size, other.size
            )));
        }
        let mut triplets: Vec<(usize, usize, F)> = Vec::with_capacity(self.nnz() + other.nnz());
        for m in [self, other] {
            for i in 0..m.size {
                for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                    triplets.push((i, m.col_idx[k], m.values[k]));
                }
            }
        }
        Ok(Self::from_triplets(self.size, &mut triplets))
    }

    pub fn scale(&self, c: F) -> Self {
        let mut out = self.clone();
        for v in out.values.iter_mut() {
            *v = *v * c;
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> F {
        let mut m = F::zero();
        for i in 0..self.size {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                m = m.max((self.values[k] - other.get(i, j)).abs());
            }
        }
        for i in 0..other.size {
            for k in other.row_ptr[i]..other.row_ptr[i + 1] {
                let j = other.col_idx[k];
                m = m.max((other.values[k] - self.get(i, j)).abs());
            }
        }
        m
    }

    pub fn to_dense(&self) -> Vec<F> {
        let n = self.size;
        let mut out = vec![F::zero(); n * n];
        for i in 0..n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[i * n + self.col_idx[k]] = self.values[k];
            }
        }
        out
    }

    /// Triplet text dump (row, col, value per line), for debugging.
    pub fn to_triplet_text(&self) -> String {
        let mut s = String::new();
        for i in 0..self.size {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s.push_str(&format!("{} {} {:e}\n", i, self.col_idx[k], self.values[k].to_f64_lossy()));
            }
        }
        s
    }
}
