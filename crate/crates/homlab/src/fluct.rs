//! Monte Carlo fluctuation statistics: ensembles of eigenvalue
//! realizations, the pathwise commutator residual, the Green-Kubo tensor of
//! the commutator, the predicted Gaussian covariance of rescaled eigenvalue
//! fluctuations, and Wasserstein-based normality diagnostics.

use num_complex::Complex;
use rayon::prelude::*;

use crate::corrector::{commutator_field, solve_correctors, CommutatorField};
use crate::error::{Error, Result};
use crate::experiment::{run_realization, HomogenizedContext, RealizationParams, RealizationResult};
use crate::fft::FftNd;
use crate::field::{apply_coefficient_map, sample_gaussian_field};
use crate::grid::TorusGrid;
use crate::io::derive_seed;
use crate::scalar::{KahanSum, Scalar};
use crate::stats::{
    excess_kurtosis, jackknife_se, linear_fit, mean, normal_pdf, normal_quantile, skewness,
    std_dev, variance,
};

/// Monte Carlo table of one `(eps, N)` ensemble; every row is a full
/// realization (the per-row identity checks run on all of them).
#[derive(Clone, Debug)]
pub struct EnsembleTable<F> {
    pub eps: F,
    pub dim: usize,
    pub k_set: Vec<usize>,
    pub rows: Vec<RealizationResult<F>>,
    pub failures: usize,
}

impl<F: Scalar> EnsembleTable<F> {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn lambda_column(&self, pos: usize) -> Vec<F> {
        self.rows.iter().map(|r| r.lambda_eps[pos]).collect()
    }

    pub fn commutator_column(&self, pos: usize) -> Vec<F> {
        self.rows.iter().map(|r| r.commutator_integral[pos]).collect()
    }

    /// `eps^{-d/2} (lambda - mean lambda)` per sample.
    pub fn rescaled_fluctuations(&self, pos: usize) -> Vec<F> {
        let lam = self.lambda_column(pos);
        let m = mean(&lam);
        let scale = self.eps.powf(-F::cast(self.dim as f64) / F::cast(2.0));
        lam.iter().map(|&l| scale * (l - m)).collect()
    }

    /// Pathwise residual `eps^{-d/2} (lambda - mean lambda - I)` per sample.
    pub fn pathwise_residuals(&self, pos: usize) -> Vec<F> {
        let lam = self.lambda_column(pos);
        let com = self.commutator_column(pos);
        let m = mean(&lam);
        let scale = self.eps.powf(-F::cast(self.dim as f64) / F::cast(2.0));
        lam.iter()
            .zip(&com)
            .map(|(&l, &i)| scale * (l - m - i))
            .collect()
    }

    /// Rescaled leading term `eps^{-d/2} I` per sample.
    pub fn rescaled_leading(&self, pos: usize) -> Vec<F> {
        let com = self.commutator_column(pos);
        let scale = self.eps.powf(-F::cast(self.dim as f64) / F::cast(2.0));
        com.iter().map(|&i| scale * i).collect()
    }

    /// Unbiased covariance matrix of the rescaled fluctuations across the
    /// index set (row-major n x n).
    pub fn fluctuation_covariance(&self) -> Vec<F> {
        let nk = self.k_set.len();
        let cols: Vec<Vec<F>> = (0..nk).map(|p| self.rescaled_fluctuations(p)).collect();
        let n = self.n();
        let mut cov = vec![F::zero(); nk * nk];
        for i in 0..nk {
            for j in 0..=i {
                let mut acc = KahanSum::new();
                for s in 0..n {
                    acc.add(cols[i][s] * cols[j][s]);
                }
                let v = acc.value() / F::cast((n - 1) as f64);
                cov[i * nk + j] = v;
                cov[j * nk + i] = v;
            }
        }
        cov
    }
}

/// Run `n` independent realizations at fixed `eps`. Seeds derive from
/// `(master_seed, stream, sample index)`; the table is deterministic for a
/// fixed master seed regardless of thread count.
pub fn run_ensemble<F: Scalar>(
    params: &RealizationParams<F>,
    ctx: &HomogenizedContext<F>,
    master_seed: u64,
    stream: &str,
    eps: F,
    n: usize,
) -> Result<EnsembleTable<F>> {
    if n < 2 {
        return Err(Error::validation("n", "ensembles need N >= 2"));
    }
    let outcomes: Vec<(usize, Result<RealizationResult<F>>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(master_seed, stream, i as u64);
            (i, run_realization(params, ctx, seed, eps))
        })
        .collect();
    let mut sorted = outcomes;
    sorted.sort_by_key(|(i, _)| *i);
    let mut rows = Vec::with_capacity(n);
    let mut failures = 0usize;
    for (i, r) in sorted {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                failures += 1;
                log::warn!("ensemble sample {i} failed: {e}");
            }
        }
    }
    if failures * 10 > n {
        return Err(Error::TooManyFailures {
            failed: failures,
            total: n,
        });
    }
    Ok(EnsembleTable {
        eps,
        dim: ctx.mesh.dim(),
        k_set: params.k_set.clone(),
        rows,
        failures,
    })
}

/// Pathwise residual diagnostics for one eigen index.
#[derive(Clone, Debug)]
pub struct PathwiseStat<F> {
    pub k: usize,
    pub resid_std: F,
    pub resid_se: F,
    pub lead_std: F,
    pub lead_se: F,
    /// `std(residual) / std(leading term)`; `None` when the leading term
    /// has no variance while the residual does
    pub ratio: Option<F>,
    pub ratio_se: F,
}

/// Sample standard deviations of the pathwise residual and the rescaled
/// commutator term, with jackknife errors, per eigen index.
pub fn pathwise_residual_stats<F: Scalar>(table: &EnsembleTable<F>) -> Vec<PathwiseStat<F>> {
    let mut out = Vec::new();
    for (pos, &k) in table.k_set.iter().enumerate() {
        let resid = table.pathwise_residuals(pos);
        let lead = table.rescaled_leading(pos);
        let resid_std = std_dev(&resid);
        let lead_std = std_dev(&lead);
        let resid_se = jackknife_se(&resid, |v| std_dev(v));
        let lead_se = jackknife_se(&lead, |v| std_dev(v));
        let floor = F::cast(1e-14);
        let (ratio, ratio_se) = if lead_std <= floor {
            (
                if resid_std <= floor { Some(F::zero()) } else { None },
                F::zero(),
            )
        } else {
            // jackknife the ratio over paired samples
            let n = resid.len();
            let mut loo = Vec::with_capacity(n);
            for i in 0..n {
                let r: Vec<F> = resid
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, &v)| v)
                    .collect();
                let l: Vec<F> = lead
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, &v)| v)
                    .collect();
                loo.push(std_dev(&r) / std_dev(&l));
            }
            let m = mean(&loo);
            let ss: F = loo.iter().map(|&t| (t - m) * (t - m)).sum();
            let se = (ss * F::cast((n - 1) as f64) / F::cast(n as f64)).sqrt();
            (Some(resid_std / lead_std), se)
        };
        out.push(PathwiseStat {
            k,
            resid_std,
            resid_se,
            lead_std,
            lead_se,
            ratio,
            ratio_se,
        });
    }
    out
}

/// Raw log-log slope of `Var(lambda_eps^k)` against `eps` across ensembles.
pub fn variance_scaling_slope<F: Scalar>(
    tables: &[EnsembleTable<F>],
    pos: usize,
) -> Result<(F, F)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for t in tables {
        let v = variance(&t.lambda_column(pos));
        if v <= F::zero() {
            return Err(Error::Numerical("zero variance in scaling fit".into()));
        }
        xs.push(t.eps.ln());
        ys.push(v.ln());
    }
    let (slope, _, r2) = linear_fit(&xs, &ys)?;
    Ok((slope, r2))
}

/// One radial bin of the commutator covariance decay profile.
#[derive(Clone, Debug)]
pub struct DecayBin<F> {
    pub r: F,
    pub value: F,
    pub se: F,
}

/// Green-Kubo tensor estimate at one cutoff scale.
#[derive(Clone, Debug)]
pub struct GkEstimate<F> {
    pub dim: usize,
    pub chi_scale: F,
    /// row-major `d^2 x d^2` tensor, index `alpha*d+beta`
    pub tensor: Vec<F>,
    pub tensor_se: Vec<F>,
    pub decay: Vec<DecayBin<F>>,
    /// log-log slope of the Frobenius covariance over the decay bins
    pub decay_slope: F,
    pub samples: usize,
}

impl<F: Scalar> GkEstimate<F> {
    pub fn exchange_asymmetry(&self) -> F {
        let m = self.tensor.len();
        let n = (m as f64).sqrt() as usize;
        let mut worst = F::zero();
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.tensor[i * n + j] - self.tensor[j * n + i]).abs());
            }
        }
        worst
    }

    pub fn frobenius(&self) -> F {
        self.tensor.iter().map(|&v| v * v).sum::<F>().sqrt()
    }
}

/// Streaming accumulator of commutator cross-correlations; samples are
/// assigned to deterministic batches (by index) so jackknife-style errors
/// survive merging.
pub struct GkAccumulator<F: Scalar> {
    pub grid: TorusGrid<F>,
    dim: usize,
    n_batches: usize,
    count: usize,
    batch_counts: Vec<usize>,
    /// spatial-mean sums per batch and component
    mean_sums: Vec<Vec<KahanSum<F>>>,
    /// cross-power spectra per batch and unordered component pair
    cross: Vec<Vec<Vec<Complex<F>>>>,
    pairs: Vec<(usize, usize)>,
    fft: FftNd<F>,
}

impl<F: Scalar> GkAccumulator<F> {
    pub fn new(grid: TorusGrid<F>, n_batches: usize) -> Self {
        let dim = grid.dim();
        let ncomp = dim * dim;
        let mut pairs = Vec::new();
        for i in 0..ncomp {
            for j in i..ncomp {
                pairs.push((i, j));
            }
        }
        let total = grid.num_cells();
        let fft = FftNd::new(dim, grid.cells_per_axis());
        GkAccumulator {
            grid,
            dim,
            n_batches,
            count: 0,
            batch_counts: vec![0; n_batches],
            mean_sums: vec![vec![KahanSum::new(); ncomp]; n_batches],
            cross: vec![
                vec![vec![Complex::new(F::zero(), F::zero()); total]; pairs.len()];
                n_batches
            ],
            pairs,
            fft,
        }
    }

    pub fn add_sample(&mut self, index: usize, xi: &CommutatorField<F>) -> Result<()> {
        if xi.grid != self.grid {
            return Err(Error::GridMismatch("gk accumulator".into()));
        }
        let b = index % self.n_batches;
        let ncomp = self.dim * self.dim;
        let specs: Vec<Vec<Complex<F>>> = (0..ncomp)
            .map(|c| self.fft.forward_real(xi.data.comp(c)))
            .collect();
        for c in 0..ncomp {
            self.mean_sums[b][c].add(crate::scalar::kmean(xi.data.comp(c)));
        }
        for (pidx, &(i, j)) in self.pairs.iter().enumerate() {
            let dst = &mut self.cross[b][pidx];
            for (k, d) in dst.iter_mut().enumerate() {
                *d += specs[i][k].conj() * specs[j][k];
            }
        }
        self.batch_counts[b] += 1;
        self.count += 1;
        Ok(())
    }

    /// Finalize at the given cutoff scales (shared correlation data).
    pub fn finalize(&self, chi_scales: &[F]) -> Result<Vec<GkEstimate<F>>> {
        if self.count < 50 {
            return Err(Error::validation("samples", "green-kubo needs >= 50 samples"));
        }
        for &l in chi_scales {
            if self.grid.period() < F::cast(4.0) * l {
                return Err(Error::validation(
                    "chi_scale",
                    "torus period must be at least 4 x cutoff scale",
                ));
            }
        }
        let d = self.dim;
        let ncomp = d * d;
        let total = self.grid.num_cells();
        let hd = self.grid.cell_size().powi(d as i32);
        // total means
        let means: Vec<F> = (0..ncomp)
            .map(|c| {
                let mut acc = KahanSum::new();
                for b in 0..self.n_batches {
                    acc.add(self.mean_sums[b][c].value());
                }
                acc.value() / F::cast(self.count as f64)
            })
            .collect();
        // covariance fields: total and per batch
        let mut cov_total: Vec<Vec<F>> = Vec::with_capacity(self.pairs.len());
        let mut cov_batch: Vec<Vec<Vec<F>>> = vec![Vec::new(); self.n_batches];
        for (pidx, &(i, j)) in self.pairs.iter().enumerate() {
            let mut spec_total = vec![Complex::new(F::zero(), F::zero()); total];
            for b in 0..self.n_batches {
                for k in 0..total {
                    spec_total[k] += self.cross[b][pidx][k];
                }
                if self.batch_counts[b] > 0 {
                    let mut s = self.cross[b][pidx].clone();
                    let norm = F::one() / (F::cast(self.batch_counts[b] as f64) * F::cast(total as f64));
                    for v in s.iter_mut() {
                        *v = Complex::new(v.re * norm, v.im * norm);
                    }
                    let corr = self.fft.inverse_real(s);
                    let centered: Vec<F> =
                        corr.into_iter().map(|v| v - means[i] * means[j]).collect();
                    cov_batch[b].push(centered);
                } else {
                    cov_batch[b].push(Vec::new());
                }
            }
            let norm = F::one() / (F::cast(self.count as f64) * F::cast(total as f64));
            for v in spec_total.iter_mut() {
                *v = Complex::new(v.re * norm, v.im * norm);
            }
            let corr = self.fft.inverse_real(spec_total);
            cov_total.push(corr.into_iter().map(|v| v - means[i] * means[j]).collect());
        }
        // lag distances (minimal image)
        let mut lag_r = Vec::with_capacity(total);
        for cell in 0..total {
            let c = self.grid.coords_of(cell);
            let z: Vec<i64> = (0..d).map(|a| c[a] as i64).collect();
            let disp = self.grid.minimal_image(&z);
            let mut r2 = F::zero();
            for a in 0..d {
                r2 += disp[a] * disp[a];
            }
            lag_r.push(r2.sqrt());
        }
        let pair_index = |i: usize, j: usize| -> (usize, bool) {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            (
                self.pairs.iter().position(|&(x, y)| (x, y) == (a, b)).unwrap(),
                i <= j,
            )
        };
        let chi = |s: F| -> F {
            if s >= F::one() {
                F::zero()
            } else {
                (F::one() - s).powi(5)
            }
        };

        let mut out = Vec::with_capacity(chi_scales.len());
        for &lchi in chi_scales {
            // tensor: Q_IJ = h^d sum_x chi(|x|/L) cov_IJ(x)
            let mut tensor = vec![F::zero(); ncomp * ncomp];
            let mut tensor_batches: Vec<Vec<F>> =
                vec![vec![F::zero(); ncomp * ncomp]; self.n_batches];
            for i in 0..ncomp {
                for j in 0..ncomp {
                    let (pidx, _) = pair_index(i, j);
                    // cov_IJ(x) = cov_JI(-x); chi weights are even in x, so
                    // the packed pair covariance serves both orders
                    let mut acc = KahanSum::new();
                    for cell in 0..total {
                        let w = chi(lag_r[cell] / lchi);
                        if w > F::zero() {
                            acc.add(w * cov_total[pidx][cell]);
                        }
                    }
                    tensor[i * ncomp + j] = acc.value() * hd;
                    for b in 0..self.n_batches {
                        if cov_batch[b][pidx].is_empty() {
                            continue;
                        }
                        let mut accb = KahanSum::new();
                        for cell in 0..total {
                            let w = chi(lag_r[cell] / lchi);
                            if w > F::zero() {
                                accb.add(w * cov_batch[b][pidx][cell]);
                            }
                        }
                        tensor_batches[b][i * ncomp + j] = accb.value() * hd;
                    }
                }
            }
            let mut tensor_se = vec![F::zero(); ncomp * ncomp];
            let active: Vec<usize> = (0..self.n_batches)
                .filter(|&b| self.batch_counts[b] > 0)
                .collect();
            if active.len() >= 2 {
                for e in 0..ncomp * ncomp {
                    let vals: Vec<F> = active.iter().map(|&b| tensor_batches[b][e]).collect();
                    tensor_se[e] =
                        (variance(&vals) / F::cast(vals.len() as f64)).sqrt();
                }
            }
            // decay profile: log-spaced radial bins over the resolved lags
            let h = self.grid.cell_size();
            let r_min = h * F::cast(2.0);
            let r_max = self.grid.period() / F::cast(4.0);
            let nbins = 8usize;
            let log_min = r_min.ln();
            let log_step = (r_max.ln() - log_min) / F::cast(nbins as f64);
            let mut bins: Vec<Vec<usize>> = vec![Vec::new(); nbins];
            for cell in 0..total {
                let r = lag_r[cell];
                if r < r_min || r > r_max {
                    continue;
                }
                let b = (((r.ln() - log_min) / log_step).to_f64_lossy() as usize).min(nbins - 1);
                bins[b].push(cell);
            }
            let mut decay = Vec::new();
            let mut fit_x = Vec::new();
            let mut fit_y = Vec::new();
            for (bidx, cells) in bins.iter().enumerate() {
                if cells.is_empty() {
                    continue;
                }
                let r_center = (log_min + log_step * F::cast(bidx as f64 + 0.5)).exp();
                // Frobenius norm over the full tensor of components
                let frob_of = |cov: &dyn Fn(usize, usize) -> F| -> F {
                    let mut acc = F::zero();
                    for i in 0..ncomp {
                        for j in 0..ncomp {
                            let v = cov(i, j);
                            acc += v * v;
                        }
                    }
                    acc.sqrt()
                };
                let mut cell_vals = Vec::with_capacity(cells.len());
                for &cell in cells {
                    let v = frob_of(&|i, j| {
                        let (pidx, _) = pair_index(i, j);
                        cov_total[pidx][cell]
                    });
                    cell_vals.push(v);
                }
                let value = mean(&cell_vals);
                // batch spread of the bin mean
                let mut batch_vals = Vec::new();
                for &b in &active {
                    let mut acc = Vec::with_capacity(cells.len());
                    for &cell in cells {
                        let v = frob_of(&|i, j| {
                            let (pidx, _) = pair_index(i, j);
                            cov_batch[b][pidx][cell]
                        });
                        acc.push(v);
                    }
                    batch_vals.push(mean(&acc));
                }
                let se = if batch_vals.len() >= 2 {
                    (variance(&batch_vals) / F::cast(batch_vals.len() as f64)).sqrt()
                } else {
                    F::zero()
                };
                if value > F::zero() {
                    fit_x.push(r_center.ln());
                    fit_y.push(value.ln());
                }
                decay.push(DecayBin {
                    r: r_center,
                    value,
                    se,
                });
            }
            let decay_slope = if fit_x.len() >= 3 {
                linear_fit(&fit_x, &fit_y).map(|(s, _, _)| s).unwrap_or(F::nan())
            } else {
                F::nan()
            };
            out.push(GkEstimate {
                dim: d,
                chi_scale: lchi,
                tensor,
                tensor_se,
                decay,
                decay_slope,
                samples: self.count,
            });
        }
        Ok(out)
    }
}

/// Convenience wrapper: estimate the Green-Kubo tensor from a finished
/// sequence of commutator fields at each cutoff scale.
pub fn green_kubo_estimate<F: Scalar, I>(samples: I, chi_scales: &[F]) -> Result<Vec<GkEstimate<F>>>
where
    I: IntoIterator<Item = CommutatorField<F>>,
{
    let mut iter = samples.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::validation("samples", "empty sample sequence"))?;
    let mut acc = GkAccumulator::new(first.grid.clone(), 8);
    acc.add_sample(0, &first)?;
    for (i, xi) in iter.enumerate() {
        acc.add_sample(i + 1, &xi)?;
    }
    acc.finalize(chi_scales)
}

/// Generate `n` commutator samples (field -> correctors -> commutator
/// against `abar`) in deterministic parallel chunks and accumulate them.
pub fn commutator_ensemble_gk<F: Scalar>(
    params: &RealizationParams<F>,
    abar: &crate::dense::SymMat<F>,
    master_seed: u64,
    stream: &str,
    n: usize,
    chi_scales: &[F],
) -> Result<Vec<GkEstimate<F>>> {
    let mut acc = GkAccumulator::new(params.grid.clone(), 8);
    let chunk = 8usize;
    let mut idx = 0usize;
    while idx < n {
        let hi = (idx + chunk).min(n);
        let fields: Vec<(usize, Result<CommutatorField<F>>)> = (idx..hi)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(master_seed, stream, i as u64);
                let xi = (|| {
                    let g = sample_gaussian_field(seed, &params.kernel, &params.grid)?;
                    let a = apply_coefficient_map(&g, &params.map)?;
                    let cs = solve_correctors(&a, &params.solver)?;
                    commutator_field(&a, &cs, abar)
                })();
                (i, xi)
            })
            .collect();
        let mut sorted = fields;
        sorted.sort_by_key(|(i, _)| *i);
        for (i, xi) in sorted {
            acc.add_sample(i, &xi?)?;
        }
        idx = hi;
    }
    acc.finalize(chi_scales)
}

/// Quadrature of the quartic contraction
/// `int (grad g_i x grad g_i) : Q (grad g_j x grad g_j)` for the index set;
/// exact symmetry in `(i, j)` by construction.
pub fn predicted_covariance<F: Scalar>(
    q_tensor: &[F],
    ctx: &HomogenizedContext<F>,
    k_set: &[usize],
) -> Result<Vec<F>> {
    let d = ctx.mesh.dim();
    let ncomp = d * d;
    if q_tensor.len() != ncomp * ncomp {
        return Err(Error::SizeMismatch("green-kubo tensor size".into()));
    }
    for &k in k_set {
        if ctx.bar.degenerate[k - 1] {
            return Err(Error::DegenerateIndex(k));
        }
    }
    let nk = k_set.len();
    let mesh = ctx.mesh.as_ref();
    let mut cov = vec![F::zero(); nk * nk];
    for i in 0..nk {
        for j in 0..=i {
            let ki = k_set[i] - 1;
            let kj = k_set[j] - 1;
            let mut acc = KahanSum::new();
            for e in 0..mesh.num_elements() {
                let vol = mesh.element_volume(e);
                let gi = ctx.bar_grads[ki][e];
                let gj = ctx.bar_grads[kj][e];
                let mut contraction = F::zero();
                for a1 in 0..d {
                    for b1 in 0..d {
                        for a2 in 0..d {
                            for b2 in 0..d {
                                contraction += gi[a1]
                                    * gi[b1]
                                    * q_tensor[(a1 * d + b1) * ncomp + (a2 * d + b2)]
                                    * gj[a2]
                                    * gj[b2];
                            }
                        }
                    }
                }
                acc.add(vol * contraction);
            }
            cov[i * nk + j] = acc.value();
            cov[j * nk + i] = acc.value();
        }
    }
    Ok(cov)
}

/// Quantile-coupling squared 2-Wasserstein distance between the empirical
/// distribution of `samples` and `N(mu, sigma^2)`, integrated in closed form
/// per order-statistic interval.
pub fn w2_to_normal<F: Scalar>(samples: &[F], mu: F, sigma: F) -> F {
    let n = samples.len();
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let nn = F::cast(n as f64);
    let mut acc = KahanSum::new();
    let mut z_prev = F::neg_infinity();
    for (i, &x) in xs.iter().enumerate() {
        let t_hi = F::cast((i + 1) as f64) / nn;
        let z_hi = if i + 1 == n {
            F::infinity()
        } else {
            normal_quantile(t_hi)
        };
        let c = x - mu;
        // A = int Phi^{-1}, B = int (Phi^{-1})^2 over (t_lo, t_hi)
        let pdf_lo = if z_prev.is_finite() { normal_pdf(z_prev) } else { F::zero() };
        let pdf_hi = if z_hi.is_finite() { normal_pdf(z_hi) } else { F::zero() };
        let a_int = pdf_lo - pdf_hi;
        let zb = if z_hi.is_finite() { z_hi * pdf_hi } else { F::zero() };
        let za = if z_prev.is_finite() { z_prev * pdf_lo } else { F::zero() };
        let b_int = F::one() / nn - (zb - za);
        acc.add(c * c / nn - F::cast(2.0) * c * sigma * a_int + sigma * sigma * b_int);
        z_prev = z_hi;
    }
    acc.value().max(F::zero()).sqrt()
}

/// W2 distance to the normal fitted to the sample (matched mean and
/// variance); zero-variance samples return distance 0 with the flag set.
pub fn w2_to_gaussian<F: Scalar>(samples: &[F]) -> Result<(F, bool)> {
    if samples.len() < 20 {
        return Err(Error::validation("samples", "w2 needs at least 20 samples"));
    }
    let m = mean(samples);
    let v = variance(samples);
    if v <= F::zero() {
        return Ok((F::zero(), true));
    }
    Ok((w2_to_normal(samples, m, v.sqrt()), false))
}

/// Monte Carlo `q`-quantile of the fitted-normal W2 under the Gaussian null
/// at sample size `n` (`reps` replicates, deterministic in `seed`).
pub fn w2_gaussian_null_quantile<F: Scalar>(n: usize, reps: usize, q: F, seed: u64) -> F {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let mut vals = Vec::with_capacity(reps);
    for _ in 0..reps {
        let xs: Vec<F> = (0..n).map(|_| F::standard_normal(&mut rng)).collect();
        let (w, _) = w2_to_gaussian(&xs).expect("null replicate");
        vals.push(w);
    }
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((F::cast(reps as f64) * q).to_f64_lossy() as usize).min(reps - 1);
    vals[idx]
}

/// Closed-form 2-Wasserstein distance between centered Gaussians with
/// covariances `c1` and `c2` (row-major n x n):
/// `W2^2 = tr(c1 + c2 - 2 (c2^{1/2} c1 c2^{1/2})^{1/2})`.
pub fn gaussian_w2<F: Scalar>(c1: &[F], c2: &[F], n: usize) -> Result<F> {
    use crate::dense::sym_eig_jacobi;
    let sqrt_psd = |m: &[F]| -> Result<Vec<F>> {
        let (vals, vecs) = sym_eig_jacobi(m, n);
        let scale = vals[n - 1].abs().max(F::cast(1e-300));
        if vals[0] < -F::cast(1e-10) * scale {
            return Err(Error::SingularCovariance(vals[0].to_f64_lossy()));
        }
        let mut out = vec![F::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = F::zero();
                for k in 0..n {
                    acc += vecs[i * n + k] * vals[k].max(F::zero()).sqrt() * vecs[j * n + k];
                }
                out[i * n + j] = acc;
            }
        }
        Ok(out)
    };
    let s2 = sqrt_psd(c2)?;
    // m = s2 c1 s2
    let mut tmp = vec![F::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = F::zero();
            for k in 0..n {
                acc += s2[i * n + k] * c1[k * n + j];
            }
            tmp[i * n + j] = acc;
        }
    }
    let mut m = vec![F::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = F::zero();
            for k in 0..n {
                acc += tmp[i * n + k] * s2[k * n + j];
            }
            m[i * n + j] = acc;
        }
    }
    // exact symmetrization against roundoff
    for i in 0..n {
        for j in 0..i {
            let s = (m[i * n + j] + m[j * n + i]) * F::cast(0.5);
            m[i * n + j] = s;
            m[j * n + i] = s;
        }
    }
    let sm = sqrt_psd(&m)?;
    let mut tr = F::zero();
    for i in 0..n {
        tr += c1[i * n + i] + c2[i * n + i] - F::cast(2.0) * sm[i * n + i];
    }
    Ok(tr.max(F::zero()).sqrt())
}

/// Marginal normality diagnostics for one eigen index.
#[derive(Clone, Debug)]
pub struct MarginalFit<F> {
    pub k: usize,
    pub skewness: F,
    pub excess_kurtosis: F,
    pub w2: F,
    pub degenerate: bool,
}

/// Joint Gaussian diagnostics of rescaled eigenvalue fluctuations.
#[derive(Clone, Debug)]
pub struct GaussianFit<F> {
    pub marginals: Vec<MarginalFit<F>>,
    /// row-major empirical covariance of the rescaled fluctuation vector
    pub empirical_cov: Vec<F>,
    pub predicted_cov: Vec<F>,
    /// Gaussian-coupling W2 between N(0, empirical) and N(0, predicted)
    pub gaussian_w2: F,
}

pub fn joint_gaussian_check<F: Scalar>(
    table: &EnsembleTable<F>,
    predicted: &[F],
) -> Result<GaussianFit<F>> {
    let nk = table.k_set.len();
    if predicted.len() != nk * nk {
        return Err(Error::SizeMismatch("predicted covariance".into()));
    }
    let mut marginals = Vec::with_capacity(nk);
    for (pos, &k) in table.k_set.iter().enumerate() {
        let xs = table.rescaled_fluctuations(pos);
        let (w2, degenerate) = w2_to_gaussian(&xs)?;
        marginals.push(MarginalFit {
            k,
            skewness: skewness(&xs),
            excess_kurtosis: excess_kurtosis(&xs),
            w2,
            degenerate,
        });
    }
    let empirical = table.fluctuation_covariance();
    // conditioning guard
    let (vals, _) = crate::dense::sym_eig_jacobi(&empirical, nk);
    if vals[0] <= F::cast(1e-12) * vals[nk - 1].abs().max(F::cast(1e-300)) {
        return Err(Error::SingularCovariance(
            (vals[0] / vals[nk - 1].max(F::cast(1e-300))).to_f64_lossy(),
        ));
    }
    let w2 = gaussian_w2(&empirical, predicted, nk)?;
    Ok(GaussianFit {
        marginals,
        empirical_cov: empirical,
        predicted_cov: predicted.to_vec(),
        gaussian_w2: w2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn w2_translation_property() {
        // exact normal quantiles of N(m, 1) at midpoints, against N(0,1)
        let n = 10_000;
        let m = 2.0f64;
        let xs: Vec<f64> = (0..n)
            .map(|i| m + normal_quantile::<f64>((i as f64 + 0.5) / n as f64))
            .collect();
        let w = w2_to_normal(&xs, 0.0, 1.0);
        assert!((w - m).abs() < 0.01, "w2 = {w}");
        // and ~0 against the matched normal
        let w0 = w2_to_normal(&xs, m, 1.0);
        assert!(w0 < 0.02, "w0 = {w0}");
    }

    #[test]
    fn w2_degenerate_flag_and_guard() {
        let xs = vec![1.5f64; 30];
        let (w, flag) = w2_to_gaussian(&xs).unwrap();
        assert_eq!(w, 0.0);
        assert!(flag);
        assert!(w2_to_gaussian(&xs[..5]).is_err());
    }

    #[test]
    fn w2_detects_uniform_samples() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let (w, _) = w2_to_gaussian(&xs).unwrap();
        // null calibration: distance should exceed 5 standard errors of the
        // same-size Gaussian null
        let null95 = w2_gaussian_null_quantile::<f64>(n, 60, 0.5, 7);
        let spread = w2_gaussian_null_quantile::<f64>(n, 60, 0.975, 7)
            - w2_gaussian_null_quantile::<f64>(n, 60, 0.025, 7);
        assert!(
            w > null95 + 5.0 * spread / 4.0,
            "w = {w}, null median = {null95}, spread = {spread}"
        );
    }

    #[test]
    fn gaussian_w2_scalar_case() {
        let c1 = [4.0f64];
        let c2 = [4.0f64 * 0.49];
        let w = gaussian_w2(&c1, &c2, 1).unwrap();
        // |sigma| |1 - c| with sigma = 2, c = 0.7
        assert!((w - 2.0 * 0.3).abs() < 1e-12, "w = {w}");
        let w0 = gaussian_w2(&c1, &c1, 1).unwrap();
        assert!(w0.abs() < 1e-12);
    }

    #[test]
    fn gaussian_w2_matches_commuting_case() {
        // diagonal covariances: W2^2 = sum (sqrt(a_i) - sqrt(b_i))^2
        let c1 = [1.0, 0.0, 0.0, 4.0];
        let c2 = [2.25, 0.0, 0.0, 0.25];
        let w = gaussian_w2(&c1, &c2, 2).unwrap();
        let expect = ((1.0f64 - 1.5).powi(2) + (2.0f64 - 0.5).powi(2)).sqrt();
        assert!((w - expect).abs() < 1e-12);
    }

    #[test]
    fn synthetic_gaussian_ensemble_passes_moment_bands() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(123);
        let n = 2000;
        let xs: Vec<f64> = (0..n).map(|_| f64::standard_normal(&mut rng)).collect();
        assert!(skewness(&xs).abs() < 0.15);
        assert!(excess_kurtosis(&xs).abs() < 0.3);
    }
}
