//! Periodic lattice (torus) grids, multi-component fields on them, and the
//! discrete calculus used by the cell problems.
//!
//! The discrete gradient is the forward difference `(D_g u)(x) = (u(x+h e_g) -
//! u(x))/h` and the discrete divergence is its negative adjoint, the backward
//! difference. The composite `-div grad` is then a Fourier multiplier with
//! symbol `sum_g (2 - 2 cos(2 pi k_g/n))/h^2`, which is what the spectral
//! Poisson solves in [`crate::corrector`] rely on.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::FftNd;
use crate::scalar::{kmean, Scalar};

/// Periodic cubic lattice: `n^d` cells of size `h = period / n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid<F> {
    dim: usize,
    cells_per_axis: usize,
    period: F,
}

impl<F: Scalar> TorusGrid<F> {
    pub fn new(dim: usize, cells_per_axis: usize, period: F) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::DimOutOfRange(dim));
        }
        if cells_per_axis < 4 || !cells_per_axis.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(cells_per_axis));
        }
        if period <= F::zero() {
            return Err(Error::validation("grid.period", "must be positive"));
        }
        // total cell count must stay addressable
        let _ = cells_per_axis
            .checked_pow(dim as u32)
            .ok_or_else(|| Error::validation("grid", "cell count overflows usize"))?;
        Ok(TorusGrid {
            dim,
            cells_per_axis,
            period,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    pub fn period(&self) -> F {
        self.period
    }

    pub fn cell_size(&self) -> F {
        self.period / F::cast(self.cells_per_axis as f64)
    }

    pub fn num_cells(&self) -> usize {
        self.cells_per_axis.pow(self.dim as u32)
    }

    /// Row-major stride of `axis` (axis 0 slowest, axis d-1 contiguous).
    pub fn stride(&self, axis: usize) -> usize {
        self.cells_per_axis.pow((self.dim - 1 - axis) as u32)
    }

    pub fn index_of(&self, coords: &[usize]) -> usize {
        let mut idx = 0usize;
        for a in 0..self.dim {
            idx = idx * self.cells_per_axis + (coords[a] & (self.cells_per_axis - 1));
        }
        idx
    }

    pub fn coords_of(&self, mut index: usize) -> [usize; 3] {
        let mut c = [0usize; 3];
        for a in (0..self.dim).rev() {
            c[a] = index % self.cells_per_axis;
            index /= self.cells_per_axis;
        }
        c
    }

    /// Index of the cell shifted by +1 along `axis` (periodic).
    #[inline]
    pub fn shift_up(&self, index: usize, axis: usize) -> usize {
        let n = self.cells_per_axis;
        let stride = self.stride(axis);
        let block = stride * n;
        let base = index - index % block;
        let rem = index - base;
        let pos = rem / stride;
        let off = rem % stride;
        base + ((pos + 1) & (n - 1)) * stride + off
    }

    /// Index of the cell shifted by -1 along `axis` (periodic).
    #[inline]
    pub fn shift_down(&self, index: usize, axis: usize) -> usize {
        let n = self.cells_per_axis;
        let stride = self.stride(axis);
        let block = stride * n;
        let base = index - index % block;
        let rem = index - base;
        let pos = rem / stride;
        let off = rem % stride;
        base + ((pos + n - 1) & (n - 1)) * stride + off
    }

    /// Cell containing the physical point `y` (periodic wrap), the
    /// nearest-cell rule used when evaluating torus fields at mesh points.
    pub fn cell_containing(&self, y: &[F]) -> usize {
        let n = self.cells_per_axis;
        let h = self.cell_size();
        let mut coords = [0usize; 3];
        for a in 0..self.dim {
            let mut t = (y[a] / h).floor().to_f64_lossy() as i64;
            t %= n as i64;
            if t < 0 {
                t += n as i64;
            }
            coords[a] = t as usize;
        }
        self.index_of(&coords[..self.dim])
    }

    /// Minimal-image displacement (in physical units) of lattice offset `z`.
    pub fn minimal_image(&self, z: &[i64]) -> [F; 3] {
        let n = self.cells_per_axis as i64;
        let h = self.cell_size();
        let mut r = [F::zero(); 3];
        for a in 0..self.dim {
            let mut t = z[a] % n;
            if t > n / 2 {
                t -= n;
            }
            if t < -n / 2 {
                t += n;
            }
            r[a] = F::cast(t as f64) * h;
        }
        r
    }
}

/// Multi-component scalar data on a torus grid, component-major layout.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusField<F> {
    pub grid: TorusGrid<F>,
    comps: usize,
    data: Vec<F>,
}

impl<F: Scalar> TorusField<F> {
    pub fn zeros(grid: TorusGrid<F>, comps: usize) -> Self {
        let len = comps * grid.num_cells();
        TorusField {
            grid,
            comps,
            data: vec![F::zero(); len],
        }
    }

    pub fn from_data(grid: TorusGrid<F>, comps: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != comps * grid.num_cells() {
            return Err(Error::SizeMismatch(format!(
                "field data length {} != comps {} x cells {}",
                data.len(),
                comps,
                grid.num_cells()
            )));
        }
        Ok(TorusField { grid, comps, data })
    }

    pub fn comps(&self) -> usize {
        self.comps
    }

    pub fn comp(&self, c: usize) -> &[F] {
        let n = self.grid.num_cells();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn comp_mut(&mut self, c: usize) -> &mut [F] {
        let n = self.grid.num_cells();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn comp_mean(&self, c: usize) -> F {
        kmean(self.comp(c))
    }
}

/// Forward difference of `u` along `axis`, divided by the cell size.
pub fn forward_diff<F: Scalar>(grid: &TorusGrid<F>, u: &[F], axis: usize, out: &mut [F]) {
    let h = grid.cell_size();
    for i in 0..u.len() {
        out[i] = (u[grid.shift_up(i, axis)] - u[i]) / h;
    }
}

/// Backward difference of `u` along `axis`, divided by the cell size.
pub fn backward_diff<F: Scalar>(grid: &TorusGrid<F>, u: &[F], axis: usize, out: &mut [F]) {
    let h = grid.cell_size();
    for i in 0..u.len() {
        out[i] = (u[i] - u[grid.shift_down(i, axis)]) / h;
    }
}

/// Spectral solver for the discrete periodic Poisson problem
/// `-div grad u = f` (forward/backward-difference Laplacian), zero-mean
/// solution. Also provides the forward-difference symbols used to assemble
/// curl-type right-hand sides directly in Fourier space.
pub struct TorusPoisson<F> {
    pub grid: TorusGrid<F>,
    fft: FftNd<F>,
    /// `sum_g |D_g|^2 (k)`, zero at k = 0
    symbol: Vec<F>,
    /// forward-difference symbol per axis
    diff_symbols: Vec<Vec<Complex<F>>>,
}

impl<F: Scalar> TorusPoisson<F> {
    pub fn new(grid: TorusGrid<F>) -> Self {
        let d = grid.dim();
        let n = grid.cells_per_axis();
        let h = grid.cell_size();
        let fft = FftNd::new(d, n);
        let total = grid.num_cells();
        // per-axis 1D symbols
        let mut axis_sym: Vec<Vec<Complex<F>>> = Vec::with_capacity(d);
        for _ in 0..d {
            let mut v = Vec::with_capacity(n);
            for k in 0..n {
                let ang = 2.0 * std::f64::consts::PI * (k as f64) / (n as f64);
                let e = Complex::new(F::cast(ang.cos()), F::cast(ang.sin()));
                // (exp(i theta) - 1)/h
                v.push((e - Complex::new(F::one(), F::zero())) / h);
            }
            axis_sym.push(v);
        }
        let mut symbol = vec![F::zero(); total];
        let mut diff_symbols = vec![Vec::with_capacity(total); d];
        for idx in 0..total {
            let c = grid.coords_of(idx);
            let mut s = F::zero();
            for a in 0..d {
                let w = axis_sym[a][c[a]];
                s += w.norm_sqr();
                diff_symbols[a].push(w);
            }
            symbol[idx] = s;
        }
        TorusPoisson {
            grid,
            fft,
            symbol,
            diff_symbols,
        }
    }

    pub fn fft(&self) -> &FftNd<F> {
        &self.fft
    }

    pub fn forward_symbol(&self, axis: usize) -> &[Complex<F>] {
        &self.diff_symbols[axis]
    }

    /// Laplacian symbol `sum_g |D_g(k)|^2`.
    pub fn laplace_symbol(&self) -> &[F] {
        &self.symbol
    }

    /// Solve `-div grad u = f` with zero-mean `u`; `f` must have zero mean
    /// (tolerance `mean_tol` relative to its rms), otherwise an error is
    /// returned.
    pub fn solve(&self, f: &[F], mean_tol: F) -> Result<Vec<F>> {
        let total = self.grid.num_cells();
        assert_eq!(f.len(), total);
        let mean = kmean(f);
        let rms = (f.iter().map(|&x| x * x).sum::<F>() / F::cast(total as f64)).sqrt();
        if mean.abs() > mean_tol * rms.max(F::one()) {
            return Err(Error::NonzeroMeanRhs(mean.to_f64_lossy()));
        }
        let mut spec = self.fft.forward_real(f);
        self.divide_by_symbol(&mut spec);
        Ok(self.fft.inverse_real(spec))
    }

    /// Divide a spectrum by the Laplacian symbol, zeroing the mean mode.
    pub fn divide_by_symbol(&self, spec: &mut [Complex<F>]) {
        spec[0] = Complex::new(F::zero(), F::zero());
        for (i, v) in spec.iter_mut().enumerate().skip(1) {
            let s = self.symbol[i];
            *v = Complex::new(v.re / s, v.im / s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(TorusGrid::<f64>::new(2, 48, 1.0).is_err());
        assert!(TorusGrid::<f64>::new(2, 2, 1.0).is_err());
        assert!(TorusGrid::<f64>::new(0, 16, 1.0).is_err());
        assert!(TorusGrid::<f64>::new(4, 16, 1.0).is_err());
        assert!(TorusGrid::<f64>::new(2, 16, 0.0).is_err());
        assert!(TorusGrid::<f64>::new(3, 16, 2.0).is_ok());
    }

    #[test]
    fn shifts_are_inverse_of_each_other() {
        let g = TorusGrid::<f64>::new(3, 8, 1.0).unwrap();
        for idx in [0usize, 5, 63, 300, 511] {
            for axis in 0..3 {
                assert_eq!(g.shift_down(g.shift_up(idx, axis), axis), idx);
                // consistency with coordinate arithmetic
                let c = g.coords_of(idx);
                let mut cu = c;
                cu[axis] = (cu[axis] + 1) % 8;
                assert_eq!(g.shift_up(idx, axis), g.index_of(&cu[..3]));
            }
        }
    }

    #[test]
    fn forward_diff_telescopes_to_zero_mean() {
        use rand::{Rng, SeedableRng};
        let g = TorusGrid::<f64>::new(2, 32, 2.0).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(4);
        let u: Vec<f64> = (0..g.num_cells()).map(|_| rng.gen::<f64>()).collect();
        let mut d = vec![0.0; u.len()];
        for axis in 0..2 {
            forward_diff(&g, &u, axis, &mut d);
            assert!(kmean(&d).abs() < 1e-13);
        }
    }

    #[test]
    fn poisson_solver_inverts_discrete_laplacian() {
        use rand::{Rng, SeedableRng};
        let g = TorusGrid::<f64>::new(2, 16, 1.0).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let mut f: Vec<f64> = (0..g.num_cells()).map(|_| rng.gen::<f64>() - 0.5).collect();
        let m = kmean(&f);
        for v in f.iter_mut() {
            *v -= m;
        }
        let p = TorusPoisson::new(g.clone());
        let u = p.solve(&f, 1e-10).unwrap();
        // apply -div grad by differences and compare
        let mut residual: f64 = 0.0;
        let mut grad = vec![0.0; u.len()];
        let mut lap = vec![0.0; u.len()];
        let mut tmp = vec![0.0; u.len()];
        for axis in 0..2 {
            forward_diff(&g, &u, axis, &mut grad);
            backward_diff(&g, &grad, axis, &mut tmp);
            for i in 0..lap.len() {
                lap[i] += tmp[i];
            }
        }
        for i in 0..lap.len() {
            residual = residual.max((-lap[i] - f[i]).abs());
        }
        assert!(residual < 1e-10, "residual {residual}");
        assert!(kmean(&u).abs() < 1e-12);
    }

    #[test]
    fn forward_symbol_matches_real_space_difference() {
        use rand::{Rng, SeedableRng};
        let g = TorusGrid::<f64>::new(2, 8, 1.0).unwrap();
        let p = TorusPoisson::new(g.clone());
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(6);
        let u: Vec<f64> = (0..g.num_cells()).map(|_| rng.gen::<f64>()).collect();
        for axis in 0..2 {
            let mut expected = vec![0.0; u.len()];
            forward_diff(&g, &u, axis, &mut expected);
            let mut spec = p.fft().forward_real(&u);
            for (i, v) in spec.iter_mut().enumerate() {
                *v *= p.forward_symbol(axis)[i];
            }
            let got = p.fft().inverse_real(spec);
            for i in 0..u.len() {
                assert!((got[i] - expected[i]).abs() < 1e-10);
            }
        }
    }
}
