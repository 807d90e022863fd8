//! Small dense linear algebra: packed symmetric d x d matrices (d <= 3),
//! a cyclic Jacobi eigensolver, Cholesky, and a symmetric tridiagonal QL
//! solver. These back the coefficient maps, the Rayleigh-Ritz steps of the
//! iterative eigensolvers, and the spectral-inversion oracle.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Symmetric d x d matrix (d <= 3), packed lower triangle row by row:
/// `[a00]`, `[a00 a10 a11]`, `[a00 a10 a11 a20 a21 a22]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymMat<F> {
    pub dim: usize,
    packed: [F; 6],
}

impl<F: Scalar> SymMat<F> {
    pub fn zero(dim: usize) -> Self {
        SymMat {
            dim,
            packed: [F::zero(); 6],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, F::one())
    }

    pub fn scaled_identity(dim: usize, c: F) -> Self {
        let mut m = Self::zero(dim);
        for i in 0..dim {
            m.set(i, i, c);
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut m = Self::zero(dim);
        for i in 0..dim {
            for j in 0..=i {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    #[inline]
    fn pidx(i: usize, j: usize) -> usize {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        r * (r + 1) / 2 + c
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> F {
        self.packed[Self::pidx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: F) {
        self.packed[Self::pidx(i, j)] = v;
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut m = *self;
        for k in 0..6 {
            m.packed[k] = m.packed[k] + other.packed[k];
        }
        m
    }

    pub fn scale(&self, c: F) -> Self {
        let mut m = *self;
        for k in 0..6 {
            m.packed[k] = m.packed[k] * c;
        }
        m
    }

    #[inline]
    pub fn matvec(&self, v: &[F; 3]) -> [F; 3] {
        let mut out = [F::zero(); 3];
        for i in 0..self.dim {
            let mut acc = F::zero();
            for j in 0..self.dim {
                acc += self.get(i, j) * v[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn quad_form(&self, v: &[F; 3]) -> F {
        let av = self.matvec(v);
        let mut acc = F::zero();
        for i in 0..self.dim {
            acc += v[i] * av[i];
        }
        acc
    }

    /// Eigenvalues in ascending order (closed form for d <= 2, Jacobi for 3).
    pub fn eigenvalues(&self) -> [F; 3] {
        match self.dim {
            1 => [self.get(0, 0), F::zero(), F::zero()],
            2 => {
                let a = self.get(0, 0);
                let b = self.get(1, 1);
                let c = self.get(1, 0);
                let tr = a + b;
                let half = F::cast(0.5);
                let disc = ((a - b) * (a - b) + F::cast(4.0) * c * c).sqrt();
                [(tr - disc) * half, (tr + disc) * half, F::zero()]
            }
            _ => {
                let dense = self.to_dense();
                let (vals, _) = sym_eig_jacobi(&dense, 3);
                [vals[0], vals[1], vals[2]]
            }
        }
    }

    /// Clamp eigenvalues into `[lo, hi]`; returns the clamped matrix and
    /// whether any eigenvalue was moved.
    pub fn clamp_spectrum(&self, lo: F, hi: F) -> (Self, bool) {
        let d = self.dim;
        let dense = self.to_dense();
        let (vals, vecs) = sym_eig_jacobi(&dense, d);
        let mut clamped = false;
        let mut newvals = vals.clone();
        for v in newvals.iter_mut() {
            let c = v.min(hi).max(lo);
            if c != *v {
                clamped = true;
            }
            *v = c;
        }
        if !clamped {
            return (*self, false);
        }
        let mut m = Self::zero(d);
        for i in 0..d {
            for j in 0..=i {
                let mut acc = F::zero();
                for k in 0..d {
                    acc += vecs[i * d + k] * newvals[k] * vecs[j * d + k];
                }
                m.set(i, j, acc);
            }
        }
        (m, true)
    }

    pub fn to_dense(&self) -> Vec<F> {
        let d = self.dim;
        let mut out = vec![F::zero(); d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = self.get(i, j);
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> F {
        let mut m = F::zero();
        for k in 0..6 {
            m = m.max((self.packed[k] - other.packed[k]).abs());
        }
        m
    }
}

/// Cyclic Jacobi eigensolver for a dense symmetric matrix (row-major,
/// `n x n`). Returns eigenvalues ascending and eigenvectors as columns
/// (`vecs[i*n + k]` = component i of eigenvector k).
pub fn sym_eig_jacobi<F: Scalar>(a: &[F], n: usize) -> (Vec<F>, Vec<F>) {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut v = vec![F::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = F::one();
    }
    let eps = F::epsilon() * F::cast(n as f64);
    for _sweep in 0..100 {
        let mut off = F::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        let norm: F = (0..n * n).map(|k| m[k] * m[k]).sum::<F>().sqrt();
        if off.sqrt() <= eps * norm.max(F::one()) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == F::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (F::cast(2.0) * apq);
                let t = {
                    let s = if theta >= F::zero() { F::one() } else { -F::one() };
                    s / (theta.abs() + (F::one() + theta * theta).sqrt())
                };
                let c = F::one() / (F::one() + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<F> = (0..n).map(|i| m[i * n + i]).collect();
    order.sort_by(|&x, &y| diag[x].partial_cmp(&diag[y]).unwrap());
    let vals: Vec<F> = order.iter().map(|&i| diag[i]).collect();
    let mut vecs = vec![F::zero(); n * n];
    for (new, &old) in order.iter().enumerate() {
        for i in 0..n {
            vecs[i * n + new] = v[i * n + old];
        }
    }
    (vals, vecs)
}

/// In-place dense Cholesky `A = L L^T` (row-major). Errors on non-SPD input.
pub fn cholesky<F: Scalar>(a: &[F], n: usize) -> Result<Vec<F>> {
    let mut l = vec![F::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut acc = a[i * n + j];
            for k in 0..j {
                acc -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if acc <= F::zero() {
                    return Err(Error::Numerical(format!(
                        "cholesky pivot {} non-positive: {acc}",
                        i
                    )));
                }
                l[i * n + i] = acc.sqrt();
            } else {
                l[i * n + j] = acc / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Solve `L y = b` then `L^T x = y` for dense lower-triangular `L`.
pub fn cholesky_solve<F: Scalar>(l: &[F], n: usize, b: &[F]) -> Vec<F> {
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            let t = l[i * n + k] * y[k];
            y[i] = y[i] - t;
        }
        y[i] = y[i] / l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let t = l[k * n + i] * y[k];
            y[i] = y[i] - t;
        }
        y[i] = y[i] / l[i * n + i];
    }
    y
}

/// Dense symmetric generalized eigenproblem `A x = lambda B x` with SPD `B`,
/// via Cholesky reduction and Jacobi. Eigenvectors are B-orthonormal columns.
pub fn sym_gen_eig<F: Scalar>(a: &[F], b: &[F], n: usize) -> Result<(Vec<F>, Vec<F>)> {
    let l = cholesky(b, n)?;
    // C = L^-1 A L^-T
    let mut c = vec![F::zero(); n * n];
    // first W = L^-1 A  (solve L W = A column-wise)
    let mut w = a.to_vec();
    for col in 0..n {
        for i in 0..n {
            let mut acc = w[i * n + col];
            for k in 0..i {
                acc -= l[i * n + k] * w[k * n + col];
            }
            w[i * n + col] = acc / l[i * n + i];
        }
    }
    // C = W L^-T: solve L C^T = W^T, i.e. rows of C via L solve
    for row in 0..n {
        for j in 0..n {
            let mut acc = w[row * n + j];
            for k in 0..j {
                acc -= l[j * n + k] * c[row * n + k];
            }
            c[row * n + j] = acc / l[j * n + j];
        }
    }
    let (vals, y) = sym_eig_jacobi(&c, n);
    // x = L^-T y per column
    let mut x = vec![F::zero(); n * n];
    for col in 0..n {
        let mut v: Vec<F> = (0..n).map(|i| y[i * n + col]).collect();
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let t = l[k * n + i] * v[k];
                v[i] = v[i] - t;
            }
            v[i] = v[i] / l[i * n + i];
        }
        for i in 0..n {
            x[i * n + col] = v[i];
        }
    }
    Ok((vals, x))
}

/// Eigenvalues and eigenvectors of a symmetric tridiagonal matrix by the
/// implicit QL method. `diag` has length n, `off` length n-1.
pub fn tridiag_eig<F: Scalar>(diag: &[F], off: &[F]) -> (Vec<F>, Vec<F>) {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut e = off.to_vec();
    e.push(F::zero());
    let mut z = vec![F::zero(); n * n];
    for i in 0..n {
        z[i * n + i] = F::one();
    }
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= F::epsilon() * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter < 100, "tridiagonal QL failed to converge");
            let mut g = (d[l + 1] - d[l]) / (F::cast(2.0) * e[l]);
            let mut r = (g * g + F::one()).sqrt();
            let sign_r = if g >= F::zero() { r } else { -r };
            g = d[m] - d[l] + e[l] / (g + sign_r);
            let (mut s, mut c) = (F::one(), F::one());
            let mut p = F::zero();
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = (f * f + g * g).sqrt();
                e[i + 1] = r;
                if r == F::zero() {
                    d[i + 1] = d[i + 1] - p;
                    e[m] = F::zero();
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + F::cast(2.0) * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    f = z[k * n + i + 1];
                    z[k * n + i + 1] = s * z[k * n + i] + c * f;
                    z[k * n + i] = c * z[k * n + i] - s * f;
                }
            }
            if r == F::zero() && m > l {
                continue;
            }
            d[l] = d[l] - p;
            e[l] = g;
            e[m] = F::zero();
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| d[x].partial_cmp(&d[y]).unwrap());
    let vals: Vec<F> = order.iter().map(|&i| d[i]).collect();
    let mut vecs = vec![F::zero(); n * n];
    for (new, &old) in order.iter().enumerate() {
        for i in 0..n {
            vecs[i * n + new] = z[i * n + old];
        }
    }
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // A = Q diag(1,2,5) Q^T with a simple rotation
        let (c, s) = (0.8, 0.6);
        let q = [c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0];
        let d = [1.0, 2.0, 5.0];
        let mut a = [0.0f64; 9];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    a[i * 3 + j] += q[i * 3 + k] * d[k] * q[j * 3 + k];
                }
            }
        }
        let (vals, vecs) = sym_eig_jacobi(&a, 3);
        for (v, expect) in vals.iter().zip(&d) {
            assert!((v - expect).abs() < 1e-12);
        }
        // residual check A v = lambda v
        for k in 0..3 {
            for i in 0..3 {
                let mut av = 0.0;
                for j in 0..3 {
                    av += a[i * 3 + j] * vecs[j * 3 + k];
                }
                assert!((av - vals[k] * vecs[i * 3 + k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clamp_spectrum_enforces_bounds() {
        let m = SymMat::<f64>::from_fn(2, |i, j| if i == j { 1.8 } else { 0.9 });
        // eigenvalues 0.9 and 2.7
        let (c, changed) = m.clamp_spectrum(0.25, 1.0);
        assert!(changed);
        let ev = c.eigenvalues();
        assert!(ev[0] >= 0.25 - 1e-12 && ev[1] <= 1.0 + 1e-12);
    }

    #[test]
    fn gen_eig_small_identity_mass() {
        let a = vec![2.0, 1.0, 1.0, 3.0];
        let b = vec![1.0, 0.0, 0.0, 1.0];
        let (vals, vecs) = sym_gen_eig(&a, &b, 2).unwrap();
        let disc = (0.5f64 * 0.5 + 1.0).sqrt();
        assert!((vals[0] - (2.5 - disc)).abs() < 1e-12);
        assert!((vals[1] - (2.5 + disc)).abs() < 1e-12);
        // B-orthonormal
        let dot = vecs[0] * vecs[1] + vecs[2] * vecs[3];
        assert!(dot.abs() < 1e-12);
    }

    #[test]
    fn tridiag_eig_matches_sine_modes() {
        let n = 9;
        let diag = vec![2.0f64; n];
        let off = vec![-1.0f64; n - 1];
        let (vals, _) = tridiag_eig(&diag, &off);
        for k in 0..n {
            let expect = 2.0 - 2.0 * (std::f64::consts::PI * (k as f64 + 1.0) / (n as f64 + 1.0)).cos();
            assert!((vals[k] - expect).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn cholesky_solve_roundtrip() {
        let a = vec![4.0, 2.0, 0.5, 2.0, 5.0, 1.0, 0.5, 1.0, 3.0];
        let l = cholesky(&a, 3).unwrap();
        let b = vec![1.0f64, -2.0, 0.3];
        let x = cholesky_solve(&l, 3, &b);
        for i in 0..3 {
            let mut acc = 0.0;
            for j in 0..3 {
                acc += a[i * 3 + j] * x[j];
            }
            assert!((acc - b[i]).abs() < 1e-12);
        }
    }
}
