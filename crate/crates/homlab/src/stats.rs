//! Shared scalar statistics: moments, jackknife errors, least-squares fits,
//! and the normal quantile function used by the Wasserstein diagnostics.

use crate::error::{Error, Result};
use crate::scalar::{kmean, Scalar};

pub fn mean<F: Scalar>(xs: &[F]) -> F {
    kmean(xs)
}

/// Unbiased sample variance.
pub fn variance<F: Scalar>(xs: &[F]) -> F {
    let n = xs.len();
    if n < 2 {
        return F::zero();
    }
    let m = kmean(xs);
    let ss: F = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    ss / F::cast((n - 1) as f64)
}

pub fn std_dev<F: Scalar>(xs: &[F]) -> F {
    variance(xs).sqrt()
}

/// Standard error of the mean.
pub fn sem<F: Scalar>(xs: &[F]) -> F {
    if xs.len() < 2 {
        return F::zero();
    }
    (variance(xs) / F::cast(xs.len() as f64)).sqrt()
}

/// Moment-based skewness `m3 / m2^{3/2}`.
pub fn skewness<F: Scalar>(xs: &[F]) -> F {
    let n = F::cast(xs.len() as f64);
    let m = kmean(xs);
    let m2: F = xs.iter().map(|&x| (x - m) * (x - m)).sum::<F>() / n;
    let m3: F = xs.iter().map(|&x| (x - m).powi(3)).sum::<F>() / n;
    if m2 <= F::zero() {
        return F::zero();
    }
    m3 / m2.powf(F::cast(1.5))
}

/// Moment-based excess kurtosis `m4 / m2^2 - 3`.
pub fn excess_kurtosis<F: Scalar>(xs: &[F]) -> F {
    let n = F::cast(xs.len() as f64);
    let m = kmean(xs);
    let m2: F = xs.iter().map(|&x| (x - m) * (x - m)).sum::<F>() / n;
    let m4: F = xs.iter().map(|&x| (x - m).powi(4)).sum::<F>() / n;
    if m2 <= F::zero() {
        return F::zero();
    }
    m4 / (m2 * m2) - F::cast(3.0)
}

/// Jackknife standard error of an arbitrary statistic.
pub fn jackknife_se<F: Scalar>(xs: &[F], stat: impl Fn(&[F]) -> F) -> F {
    let n = xs.len();
    if n < 2 {
        return F::zero();
    }
    let mut loo = Vec::with_capacity(n);
    let mut buf = Vec::with_capacity(n - 1);
    for i in 0..n {
        buf.clear();
        buf.extend(xs.iter().take(i).copied());
        buf.extend(xs.iter().skip(i + 1).copied());
        loo.push(stat(&buf));
    }
    let m = kmean(&loo);
    let ss: F = loo.iter().map(|&t| (t - m) * (t - m)).sum();
    (ss * F::cast((n - 1) as f64) / F::cast(n as f64)).sqrt()
}

/// Ordinary least squares `y ~ a + b x`; returns `(slope, intercept, r2)`.
pub fn linear_fit<F: Scalar>(x: &[F], y: &[F]) -> Result<(F, F, F)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::SizeMismatch("linear fit needs >= 2 matched points".into()));
    }
    let n = F::cast(x.len() as f64);
    let mx = kmean(x);
    let my = kmean(y);
    let mut sxx = F::zero();
    let mut sxy = F::zero();
    let mut syy = F::zero();
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
        syy += (yi - my) * (yi - my);
    }
    if sxx <= F::zero() {
        return Err(Error::Numerical("degenerate abscissa in linear fit".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > F::zero() {
        (sxy * sxy) / (sxx * syy)
    } else {
        F::one()
    };
    let _ = n;
    Ok((slope, intercept, r2))
}

/// Inverse standard normal CDF (Acklam's rational approximation, ~1e-9
/// absolute accuracy, refined below with one Halley step against `erfc`-free
/// forward evaluation is unnecessary at the tolerances used here).
pub fn normal_quantile<F: Scalar>(p: F) -> F {
    let p64 = p.to_f64_lossy();
    assert!((0.0..=1.0).contains(&p64), "quantile argument outside [0,1]");
    if p64 == 0.0 {
        return F::neg_infinity();
    }
    if p64 == 1.0 {
        return F::infinity();
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    let x = if p64 < P_LOW {
        let q = (-2.0 * p64.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p64 <= 1.0 - P_LOW {
        let q = p64 - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p64).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    F::cast(x)
}

/// Standard normal density.
pub fn normal_pdf<F: Scalar>(z: F) -> F {
    let inv_sqrt_2pi = F::cast(0.3989422804014327);
    inv_sqrt_2pi * (-z * z / F::cast(2.0)).exp()
}

/// Standard normal CDF through the complementary error function.
pub fn normal_cdf<F: Scalar>(z: F) -> F {
    let x = z.to_f64_lossy() / std::f64::consts::SQRT_2;
    F::cast(0.5 * erfc_f64(-x))
}

fn erfc_f64(x: f64) -> f64 {
    let ax = x.abs();
    let val = if ax <= 2.5 {
        1.0 - erf_series(ax)
    } else {
        // continued-fraction tail: erfc(x) = e^{-x^2}/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
        let x2 = ax * ax;
        let mut frac = 0.0;
        for k in (1..80).rev() {
            frac = 0.5 * k as f64 / (ax + frac);
        }
        (-x2).exp() / ((ax + frac) * std::f64::consts::PI.sqrt())
    };
    if x < 0.0 {
        2.0 - val
    } else {
        val
    }
}

fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    for k in 1..300 {
        term *= -x2 / k as f64;
        let add = term / (2 * k + 1) as f64;
        sum += add;
        if add.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_exact_line() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 1.0).collect();
        let (s, i, r2) = linear_fit(&x, &y).unwrap();
        assert!((s - 2.5).abs() < 1e-12);
        assert!((i + 1.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quantile_and_cdf_are_consistent() {
        for &p in &[0.001, 0.01, 0.2, 0.5, 0.9, 0.975, 0.9999] {
            let z: f64 = normal_quantile(p);
            let back: f64 = normal_cdf(z);
            assert!((back - p).abs() < 2e-8, "p={p} z={z} back={back}");
        }
        let z0: f64 = normal_quantile(0.5);
        assert!(z0.abs() < 1e-12);
    }

    #[test]
    fn moments_on_known_sample() {
        let xs = vec![1.0f64, 2.0, 3.0, 4.0];
        assert!((mean(&xs) - 2.5).abs() < 1e-15);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-14);
        assert!(skewness(&xs).abs() < 1e-14);
    }

    #[test]
    fn jackknife_of_mean_matches_sem() {
        let xs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.77).sin()).collect();
        let jk = jackknife_se(&xs, |v| mean(v));
        let direct = sem(&xs);
        assert!((jk - direct).abs() < 1e-12);
    }
}
