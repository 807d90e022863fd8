//! Radix-2 complex FFT, multi-dimensional transforms on torus data, and the
//! DST-I used to invert constant-coefficient stiffness matrices.
//!
//! Grid sizes in this crate are powers of two by construction, so a plain
//! iterative Cooley-Tukey kernel is all that is needed.

use num_complex::Complex;

use crate::scalar::Scalar;

/// Precomputed twiddles and bit-reversal table for one transform length.
pub struct FftPlan<F> {
    pub len: usize,
    // twiddles for the forward transform (negative exponent), per stage use
    twiddles: Vec<Complex<F>>,
    bitrev: Vec<u32>,
}

impl<F: Scalar> FftPlan<F> {
    pub fn new(len: usize) -> Self {
        assert!(len.is_power_of_two() && len >= 2, "fft length must be a power of two");
        let mut twiddles = Vec::with_capacity(len / 2);
        for k in 0..len / 2 {
            let angle = -2.0 * std::f64::consts::PI * (k as f64) / (len as f64);
            twiddles.push(Complex::new(F::cast(angle.cos()), F::cast(angle.sin())));
        }
        let bits = len.trailing_zeros();
        let bitrev = (0..len as u32)
            .map(|i| i.reverse_bits() >> (32 - bits))
            .collect();
        FftPlan {
            len,
            twiddles,
            bitrev,
        }
    }

    /// In-place forward transform: `X[k] = sum_j x[j] exp(-2 pi i j k / n)`.
    pub fn forward(&self, data: &mut [Complex<F>]) {
        self.transform(data, false);
    }

    /// In-place inverse transform including the `1/n` factor.
    pub fn inverse(&self, data: &mut [Complex<F>]) {
        self.transform(data, true);
        let scale = F::one() / F::cast(self.len as f64);
        for v in data.iter_mut() {
            *v = Complex::new(v.re * scale, v.im * scale);
        }
    }

    fn transform(&self, data: &mut [Complex<F>], inverse: bool) {
        let n = self.len;
        assert_eq!(data.len(), n);
        for i in 0..n {
            let j = self.bitrev[i] as usize;
            if j > i {
                data.swap(i, j);
            }
        }
        let mut half = 1usize;
        while half < n {
            let step = n / (2 * half);
            for start in (0..n).step_by(2 * half) {
                for k in 0..half {
                    let mut w = self.twiddles[k * step];
                    if inverse {
                        w = w.conj();
                    }
                    let a = data[start + k];
                    let b = data[start + k + half] * w;
                    data[start + k] = a + b;
                    data[start + k + half] = a - b;
                }
            }
            half *= 2;
        }
    }
}

/// Plans for a d-dimensional transform on an `n^d` torus array (cubic).
pub struct FftNd<F> {
    pub dim: usize,
    pub n: usize,
    plan: FftPlan<F>,
}

impl<F: Scalar> FftNd<F> {
    pub fn new(dim: usize, n: usize) -> Self {
        FftNd {
            dim,
            n,
            plan: FftPlan::new(n),
        }
    }

    fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// In-place d-dimensional transform. Axis 0 is the slowest index
    /// (row-major layout, axis d-1 contiguous).
    pub fn forward(&self, data: &mut [Complex<F>]) {
        self.apply(data, false)
    }

    pub fn inverse(&self, data: &mut [Complex<F>]) {
        self.apply(data, true);
        let scale = F::one() / F::cast(self.len() as f64);
        for v in data.iter_mut() {
            *v = Complex::new(v.re * scale, v.im * scale);
        }
    }

    fn apply(&self, data: &mut [Complex<F>], inverse: bool) {
        let n = self.n;
        let total = self.len();
        assert_eq!(data.len(), total);
        let mut line = vec![Complex::new(F::zero(), F::zero()); n];
        for axis in 0..self.dim {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            let lines = total / n;
            for l in 0..lines {
                // base index of the l-th line along `axis`
                let block = l / stride;
                let offset = l % stride;
                let base = block * stride * n + offset;
                for (i, v) in line.iter_mut().enumerate() {
                    *v = data[base + i * stride];
                }
                if inverse {
                    self.plan.transform(&mut line, true);
                } else {
                    self.plan.transform(&mut line, false);
                }
                for (i, v) in line.iter().enumerate() {
                    data[base + i * stride] = *v;
                }
            }
        }
    }

    /// Forward transform of a real array into a fresh complex buffer.
    pub fn forward_real(&self, data: &[F]) -> Vec<Complex<F>> {
        let mut buf: Vec<Complex<F>> = data
            .iter()
            .map(|&x| Complex::new(x, F::zero()))
            .collect();
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform, returning the real part.
    pub fn inverse_real(&self, mut data: Vec<Complex<F>>) -> Vec<F> {
        self.inverse(&mut data);
        data.into_iter().map(|c| c.re).collect()
    }
}

/// DST-I of length `n` (interior sine transform): for input `x[0..n]`,
/// `S[k] = sum_{j=0}^{n-1} x[j] sin(pi (j+1)(k+1)/(n+1))`.
///
/// Applying it twice multiplies by `(n+1)/2`. Realized through a complex FFT
/// of the odd extension of length `2(n+1)`, so `n+1` must be a power of two.
pub struct Dst1<F> {
    pub len: usize,
    plan: FftPlan<F>,
}

impl<F: Scalar> Dst1<F> {
    /// `len + 1` must be a power of two.
    pub fn new(len: usize) -> Self {
        assert!((len + 1).is_power_of_two(), "DST-I length + 1 must be a power of two");
        Dst1 {
            len,
            plan: FftPlan::new(2 * (len + 1)),
        }
    }

    pub fn apply(&self, x: &[F], out: &mut [F]) {
        let n = self.len;
        assert_eq!(x.len(), n);
        assert_eq!(out.len(), n);
        let m = 2 * (n + 1);
        let mut buf = vec![Complex::new(F::zero(), F::zero()); m];
        for j in 0..n {
            buf[j + 1] = Complex::new(x[j], F::zero());
            buf[m - 1 - j] = Complex::new(-x[j], F::zero());
        }
        self.plan.forward(&mut buf);
        let half = F::cast(-0.5);
        for k in 0..n {
            // imaginary part carries -2 S[k]
            out[k] = buf[k + 1].im * half;
        }
    }
}
