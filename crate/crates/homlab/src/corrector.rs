//! Periodized corrector problems on the torus lattice.
//!
//! The cell problem `-div(a (grad phi_a + e_a)) = 0` is discretized with the
//! forward-difference gradient / backward-difference divergence pair, so the
//! flux-corrector Poisson problems can be solved exactly by fast transforms
//! in the same discrete calculus and the identity `div sigma_a = q_a` holds
//! down to solver tolerance. In 1D this discretization reproduces the
//! analytic harmonic-mean homogenization exactly.

use num_complex::Complex;

use crate::dense::SymMat;
use crate::error::{Error, Result};
use crate::field::CoefficientField;
use crate::grid::{backward_diff, forward_diff, TorusField, TorusGrid, TorusPoisson};
use crate::scalar::{kmean, KahanSum, Scalar};
use crate::solver::SolverConfig;

/// Diagnostics from the corrector and flux-corrector solves.
#[derive(Clone, Debug, Default)]
pub struct CorrectorResiduals<F> {
    /// relative CG residual of each cell problem
    pub cell_problem: Vec<F>,
    /// per direction: `max |div sigma_a - q_a| / rms(q_a)`
    pub sigma_divergence: Vec<F>,
}

/// Correctors, fluxes, flux correctors and the per-sample effective tensor.
#[derive(Clone, Debug)]
pub struct CorrectorSet<F> {
    pub grid: TorusGrid<F>,
    pub dim: usize,
    pub nu: F,
    /// potentials `phi_a`, zero torus mean
    pub potentials: Vec<Vec<F>>,
    /// forward-difference gradients, one d-component field per direction
    pub gradients: Vec<TorusField<F>>,
    /// fluxes `q_a = a (grad phi_a + e_a) - abar e_a`, zero mean per cell
    pub fluxes: Vec<TorusField<F>>,
    /// flux correctors: for each direction, the packed components
    /// `sigma_{a, beta gamma}` with `beta < gamma` (lexicographic)
    pub sigma: Option<Vec<TorusField<F>>>,
    /// torus average of the flux `a (grad phi_a + e_a)` (columns), raw
    pub effective_raw: [[F; 3]; 3],
    /// symmetrized effective tensor
    pub effective_tensor: SymMat<F>,
    pub residuals: CorrectorResiduals<F>,
}

pub(crate) fn skew_pairs(d: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for b in 0..d {
        for g in (b + 1)..d {
            out.push((b, g));
        }
    }
    out
}

impl<F: Scalar> CorrectorSet<F> {
    /// Maximum asymmetry of the raw effective tensor.
    pub fn effective_asymmetry(&self) -> F {
        let mut m = F::zero();
        for i in 0..self.dim {
            for j in 0..self.dim {
                m = m.max((self.effective_raw[i][j] - self.effective_raw[j][i]).abs());
            }
        }
        m
    }

    /// Largest deviation of any torus-mean corrector gradient from zero.
    pub fn gradient_mean_defect(&self) -> F {
        let mut worst = F::zero();
        for gf in &self.gradients {
            for c in 0..self.dim {
                worst = worst.max(kmean(gf.comp(c)).abs());
            }
        }
        worst
    }

    /// `sigma_{a beta gamma}` for `beta != gamma`: packed component plus the
    /// sign from skew symmetry (see [`CorrectorSet::sigma_sign`]).
    pub fn sigma_component(&self, alpha: usize, beta: usize, gamma: usize) -> Option<&[F]> {
        let sigma = self.sigma.as_ref()?;
        if beta == gamma {
            return None;
        }
        let pairs = skew_pairs(self.dim);
        let (b, g) = if beta < gamma { (beta, gamma) } else { (gamma, beta) };
        let idx = pairs.iter().position(|&(x, y)| (x, y) == (b, g))?;
        Some(sigma[alpha].comp(idx))
    }

    pub fn sigma_sign(beta: usize, gamma: usize) -> f64 {
        if beta < gamma {
            1.0
        } else {
            -1.0
        }
    }
}

struct CellOperator<'a, F: Scalar> {
    field: &'a CoefficientField<F>,
    grid: TorusGrid<F>,
    grad: Vec<Vec<F>>,
    flux: Vec<Vec<F>>,
    tmp: Vec<F>,
}

impl<'a, F: Scalar> CellOperator<'a, F> {
    fn new(field: &'a CoefficientField<F>) -> Self {
        let grid = field.grid.clone();
        let d = field.dim();
        let n = grid.num_cells();
        CellOperator {
            field,
            grid,
            grad: vec![vec![F::zero(); n]; d],
            flux: vec![vec![F::zero(); n]; d],
            tmp: vec![F::zero(); n],
        }
    }

    /// `out = -div(a grad phi)` (SPD on mean-zero data).
    fn apply(&mut self, phi: &[F], out: &mut [F]) {
        let d = self.field.dim();
        let n = self.grid.num_cells();
        for axis in 0..d {
            let mut g = std::mem::take(&mut self.grad[axis]);
            forward_diff(&self.grid, phi, axis, &mut g);
            self.grad[axis] = g;
        }
        for cell in 0..n {
            let a = self.field.cell_matrix(cell);
            let mut gv = [F::zero(); 3];
            for axis in 0..d {
                gv[axis] = self.grad[axis][cell];
            }
            let f = a.matvec(&gv);
            for axis in 0..d {
                self.flux[axis][cell] = f[axis];
            }
        }
        for v in out.iter_mut() {
            *v = F::zero();
        }
        for axis in 0..d {
            let mut t = std::mem::take(&mut self.tmp);
            backward_diff(&self.grid, &self.flux[axis], axis, &mut t);
            for (o, &ti) in out.iter_mut().zip(t.iter()) {
                *o -= ti;
            }
            self.tmp = t;
        }
    }

    /// Right-hand side `div(a e_alpha)` of the cell problem.
    fn rhs(&mut self, alpha: usize) -> Vec<F> {
        let d = self.field.dim();
        let n = self.grid.num_cells();
        let mut out = vec![F::zero(); n];
        for cell in 0..n {
            let a = self.field.cell_matrix(cell);
            for beta in 0..d {
                self.flux[beta][cell] = a.get(beta, alpha);
            }
        }
        for axis in 0..d {
            let mut t = std::mem::take(&mut self.tmp);
            backward_diff(&self.grid, &self.flux[axis], axis, &mut t);
            for (o, &ti) in out.iter_mut().zip(t.iter()) {
                *o += ti;
            }
            self.tmp = t;
        }
        out
    }
}

fn project_mean<F: Scalar>(v: &mut [F]) {
    let m = kmean(v);
    for x in v.iter_mut() {
        *x -= m;
    }
}

/// CG on the mean-zero subspace with an FFT constant-coefficient
/// preconditioner. Returns `(phi, relative_residual)`.
fn cell_cg<F: Scalar>(
    op: &mut CellOperator<'_, F>,
    poisson: &TorusPoisson<F>,
    mean_diag: F,
    b: &[F],
    tol: F,
    max_iter: usize,
) -> Result<(Vec<F>, F)> {
    let n = b.len();
    let mut bb = b.to_vec();
    project_mean(&mut bb);
    let bnorm = bb.iter().map(|&x| x * x).sum::<F>().sqrt();
    if bnorm == F::zero() {
        return Ok((vec![F::zero(); n], F::zero()));
    }
    let precond = |r: &[F]| -> Vec<F> {
        let mut spec = poisson.fft().forward_real(r);
        poisson.divide_by_symbol(&mut spec);
        let scale = F::one() / mean_diag;
        for v in spec.iter_mut() {
            *v = Complex::new(v.re * scale, v.im * scale);
        }
        poisson.fft().inverse_real(spec)
    };
    let mut x = vec![F::zero(); n];
    let mut r = bb.clone();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz: F = r.iter().zip(&z).map(|(&a, &b)| a * b).sum();
    let mut ap = vec![F::zero(); n];
    for it in 1..=max_iter {
        op.apply(&p, &mut ap);
        let pap: F = p.iter().zip(&ap).map(|(&a, &b)| a * b).sum();
        if pap <= F::zero() {
            return Err(Error::Numerical("cell problem lost positivity".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|&v| v * v).sum::<F>().sqrt();
        if rnorm <= tol * bnorm {
            project_mean(&mut x);
            return Ok((x, rnorm / bnorm));
        }
        if it % 64 == 0 {
            project_mean(&mut r);
        }
        z = precond(&r);
        let rz_new: F = r.iter().zip(&z).map(|(&a, &b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::CgNoConvergence {
        residual: (r.iter().map(|&v| v * v).sum::<F>().sqrt() / bnorm).to_f64_lossy(),
        iterations: max_iter,
    })
}

/// Solve the periodic cell problems for all directions; the returned set has
/// no flux correctors yet (see [`solve_flux_correctors`]).
pub fn solve_correctors<F: Scalar>(
    field: &CoefficientField<F>,
    cfg: &SolverConfig<F>,
) -> Result<CorrectorSet<F>> {
    cfg.validate()?;
    let d = field.dim();
    let grid = field.grid.clone();
    let n = grid.num_cells();
    let poisson = TorusPoisson::new(grid.clone());
    // mean diagonal scale for the constant-coefficient preconditioner
    let mut tr = KahanSum::new();
    for cell in 0..n {
        let a = field.cell_matrix(cell);
        let mut t = F::zero();
        for i in 0..d {
            t += a.get(i, i);
        }
        tr.add(t / F::cast(d as f64));
    }
    let mean_diag = (tr.value() / F::cast(n as f64)).max(field.nu);

    let mut op = CellOperator::new(field);
    let mut potentials = Vec::with_capacity(d);
    let mut gradients = Vec::with_capacity(d);
    let mut fluxes = Vec::with_capacity(d);
    let mut effective_raw = [[F::zero(); 3]; 3];
    let mut cell_residuals = Vec::with_capacity(d);

    for alpha in 0..d {
        let b = op.rhs(alpha);
        let (phi, rel) = cell_cg(&mut op, &poisson, mean_diag, &b, cfg.cg_tol, cfg.cg_max_iter)?;
        cell_residuals.push(rel);
        let mut grad = TorusField::zeros(grid.clone(), d);
        for axis in 0..d {
            let mut g = vec![F::zero(); n];
            forward_diff(&grid, &phi, axis, &mut g);
            grad.comp_mut(axis).copy_from_slice(&g);
        }
        let mut flux = TorusField::zeros(grid.clone(), d);
        let mut flux_mean = vec![KahanSum::<F>::new(); d];
        for cell in 0..n {
            let a = field.cell_matrix(cell);
            let mut gv = [F::zero(); 3];
            for axis in 0..d {
                gv[axis] = grad.comp(axis)[cell];
            }
            gv[alpha] += F::one();
            let f = a.matvec(&gv);
            for axis in 0..d {
                flux.comp_mut(axis)[cell] = f[axis];
                flux_mean[axis].add(f[axis]);
            }
        }
        for beta in 0..d {
            let mean = flux_mean[beta].value() / F::cast(n as f64);
            effective_raw[beta][alpha] = mean;
            // q = flux - abar e_alpha has exactly zero mean by construction
            let comp = flux.comp_mut(beta);
            for v in comp.iter_mut() {
                *v -= mean;
            }
        }
        potentials.push(phi);
        gradients.push(grad);
        fluxes.push(flux);
    }

    let effective_tensor = SymMat::from_fn(d, |i, j| {
        (effective_raw[i][j] + effective_raw[j][i]) * F::cast(0.5)
    });

    Ok(CorrectorSet {
        grid,
        dim: d,
        nu: field.nu,
        potentials,
        gradients,
        fluxes,
        sigma: None,
        effective_raw,
        effective_tensor,
        residuals: CorrectorResiduals {
            cell_problem: cell_residuals,
            sigma_divergence: Vec::new(),
        },
    })
}

/// Solve the Coulomb-gauge Poisson problems
/// `-lap sigma_{a bg} = D_b (q_a)_g - D_g (q_a)_b` spectrally and attach the
/// flux correctors to the set.
pub fn solve_flux_correctors<F: Scalar>(mut cs: CorrectorSet<F>) -> Result<CorrectorSet<F>> {
    let d = cs.dim;
    let grid = cs.grid.clone();
    let n = grid.num_cells();
    let pairs = skew_pairs(d);
    let poisson = TorusPoisson::new(grid.clone());
    let mut sigma_fields = Vec::with_capacity(d);
    for alpha in 0..d {
        // mean-zero check on the flux
        let q = &cs.fluxes[alpha];
        for c in 0..d {
            let mean = kmean(q.comp(c));
            let comp_rms =
                (q.comp(c).iter().map(|&x| x * x).sum::<F>() / F::cast(n as f64)).sqrt();
            if mean.abs() > F::cast(1e-12) * comp_rms.max(F::one()) {
                return Err(Error::NonzeroMeanRhs(mean.to_f64_lossy()));
            }
        }
        let qspec: Vec<Vec<Complex<F>>> = (0..d)
            .map(|c| poisson.fft().forward_real(q.comp(c)))
            .collect();
        let mut sf = TorusField::zeros(grid.clone(), pairs.len());
        for (pidx, &(b, g)) in pairs.iter().enumerate() {
            let sb = poisson.forward_symbol(b);
            let sg = poisson.forward_symbol(g);
            let mut spec: Vec<Complex<F>> = (0..n)
                .map(|i| sb[i] * qspec[g][i] - sg[i] * qspec[b][i])
                .collect();
            poisson.divide_by_symbol(&mut spec);
            let vals = poisson.fft().inverse_real(spec);
            sf.comp_mut(pidx).copy_from_slice(&vals);
        }
        sigma_fields.push(sf);
    }
    cs.sigma = Some(sigma_fields);
    // divergence identity check in the same discrete calculus
    let mut resid = Vec::with_capacity(d);
    for alpha in 0..d {
        let q = &cs.fluxes[alpha];
        let mut worst = F::zero();
        let mut qss = F::zero();
        for c in 0..d {
            qss += q.comp(c).iter().map(|&x| x * x).sum::<F>();
        }
        let qrms = (qss / F::cast((n * d) as f64)).sqrt().max(F::cast(1e-300));
        let mut tmp = vec![F::zero(); n];
        for beta in 0..d {
            let mut div = vec![F::zero(); n];
            for gamma in 0..d {
                if gamma == beta {
                    continue;
                }
                let comp = cs
                    .sigma_component(alpha, beta, gamma)
                    .expect("skew component");
                let sign = F::cast(CorrectorSet::<F>::sigma_sign(beta, gamma));
                let signed: Vec<F> = comp.iter().map(|&v| v * sign).collect();
                backward_diff(&grid, &signed, gamma, &mut tmp);
                for (o, &t) in div.iter_mut().zip(&tmp) {
                    *o += t;
                }
            }
            for cell in 0..n {
                worst = worst.max((div[cell] - q.comp(beta)[cell]).abs());
            }
        }
        resid.push(worst / qrms);
    }
    cs.residuals.sigma_divergence = resid;
    Ok(cs)
}

/// The standard homogenization commutator
/// `X_{ab} = e_b . (a - abar)(grad phi_a + e_a)` evaluated cell-wise against
/// a fixed reference tensor `abar` (the canonical ensemble tensor, not the
/// per-sample average, so the torus mean carries the sample fluctuation).
#[derive(Clone, Debug)]
pub struct CommutatorField<F> {
    pub grid: TorusGrid<F>,
    pub dim: usize,
    /// component `alpha * d + beta`
    pub data: TorusField<F>,
}

impl<F: Scalar> CommutatorField<F> {
    pub fn comp(&self, alpha: usize, beta: usize) -> &[F] {
        self.data.comp(alpha * self.dim + beta)
    }

    pub fn spatial_mean(&self, alpha: usize, beta: usize) -> F {
        kmean(self.comp(alpha, beta))
    }
}

pub fn commutator_field<F: Scalar>(
    field: &CoefficientField<F>,
    cs: &CorrectorSet<F>,
    abar: &SymMat<F>,
) -> Result<CommutatorField<F>> {
    if field.grid != cs.grid {
        return Err(Error::GridMismatch(
            "commutator needs matching coefficient and corrector grids".into(),
        ));
    }
    let d = cs.dim;
    let grid = cs.grid.clone();
    let n = grid.num_cells();
    let mut data = TorusField::zeros(grid.clone(), d * d);
    for alpha in 0..d {
        let grad = &cs.gradients[alpha];
        for cell in 0..n {
            let a = field.cell_matrix(cell);
            let mut gv = [F::zero(); 3];
            for axis in 0..d {
                gv[axis] = grad.comp(axis)[cell];
            }
            gv[alpha] += F::one();
            let fa = a.matvec(&gv);
            let fb = abar.matvec(&gv);
            for beta in 0..d {
                data.comp_mut(alpha * d + beta)[cell] = fa[beta] - fb[beta];
            }
        }
    }
    Ok(CommutatorField { grid, dim: d, data })
}

/// Row of the corrector sublinearity table.
#[derive(Clone, Debug)]
pub struct SublinearityRow<F> {
    pub radius: F,
    /// ensemble standard deviation of the recentred ball average of phi_1
    pub stddev: F,
    /// stddev relative to the first radius in the table
    pub relative: F,
}

/// Ensemble spread of ball averages of `phi_1 - phi_1(anchor)` around a
/// fixed anchor cell, per radius. The spread grows with the radius the way
/// the corrector grows away from its anchoring.
pub fn sublinearity_profile<F: Scalar>(
    samples: &[CorrectorSet<F>],
    radii: &[F],
) -> Result<Vec<SublinearityRow<F>>> {
    if samples.len() < 30 {
        return Err(Error::validation("samples", "need at least 30 corrector samples"));
    }
    if radii.is_empty() {
        return Err(Error::validation("radii", "need at least one radius"));
    }
    let grid = samples[0].grid.clone();
    for s in samples {
        if s.grid != grid {
            return Err(Error::GridMismatch("sublinearity profile".into()));
        }
    }
    let half = grid.period() / F::cast(2.0);
    for &r in radii {
        if r > half {
            return Err(Error::validation(
                "radii",
                format!("radius {} exceeds half period", r.to_f64_lossy()),
            ));
        }
    }
    let n = grid.num_cells();
    let d = grid.dim();
    // ball membership per radius around the anchor cell 0
    let mut balls: Vec<Vec<usize>> = vec![Vec::new(); radii.len()];
    for cell in 0..n {
        let c = grid.coords_of(cell);
        let z: Vec<i64> = (0..d).map(|a| c[a] as i64).collect();
        let disp = grid.minimal_image(&z);
        let mut r2 = F::zero();
        for a in 0..d {
            r2 += disp[a] * disp[a];
        }
        let dist = r2.sqrt();
        for (i, &r) in radii.iter().enumerate() {
            if dist <= r {
                balls[i].push(cell);
            }
        }
    }
    let mut per_radius: Vec<Vec<F>> = vec![Vec::with_capacity(samples.len()); radii.len()];
    for s in samples {
        let phi = &s.potentials[0];
        let anchor = phi[0];
        for (i, ball) in balls.iter().enumerate() {
            let mut acc = KahanSum::new();
            for &cell in ball {
                acc.add(phi[cell] - anchor);
            }
            per_radius[i].push(acc.value() / F::cast(ball.len() as f64));
        }
    }
    let stds: Vec<F> = per_radius.iter().map(|v| crate::stats::std_dev(v)).collect();
    let reference = stds[0];
    let mut rows = Vec::with_capacity(radii.len());
    for (i, &r) in radii.iter().enumerate() {
        let relative = if reference > F::zero() {
            stds[i] / reference
        } else {
            F::zero()
        };
        rows.push(SublinearityRow {
            radius: r,
            stddev: stds[i],
            relative,
        });
    }
    Ok(rows)
}

/// Ensemble mean of per-sample effective tensors.
pub fn mean_effective_tensor<F: Scalar>(samples: &[CorrectorSet<F>]) -> SymMat<F> {
    let d = samples[0].dim;
    let scale = F::one() / F::cast(samples.len() as f64);
    let mut acc = SymMat::zero(d);
    for s in samples {
        acc = acc.add(&s.effective_tensor.scale(scale));
    }
    acc
}

/// Voigt-Reuss check: largest violation of
/// `harmonic mean <= abar <= arithmetic mean` in quadratic form over the
/// coordinate directions and `n_random` random unit vectors.
pub fn voigt_reuss_violation<F: Scalar>(
    field: &CoefficientField<F>,
    cs: &CorrectorSet<F>,
    n_random: usize,
    seed: u64,
) -> F {
    use rand::SeedableRng;
    let d = cs.dim;
    let n = field.grid.num_cells();
    let mut arith = SymMat::zero(d);
    let mut harm_inv = SymMat::zero(d);
    let scale = F::one() / F::cast(n as f64);
    for cell in 0..n {
        let a = field.cell_matrix(cell);
        arith = arith.add(&a.scale(scale));
        let dense = a.to_dense();
        let (vals, vecs) = crate::dense::sym_eig_jacobi(&dense, d);
        let inv = SymMat::from_fn(d, |i, j| {
            let mut acc = F::zero();
            for k in 0..d {
                acc += vecs[i * d + k] * vecs[j * d + k] / vals[k];
            }
            acc
        });
        harm_inv = harm_inv.add(&inv.scale(scale));
    }
    let hd = harm_inv.to_dense();
    let (hvals, hvecs) = crate::dense::sym_eig_jacobi(&hd, d);
    let harmonic = SymMat::from_fn(d, |i, j| {
        let mut acc = F::zero();
        for k in 0..d {
            acc += hvecs[i * d + k] * hvecs[j * d + k] / hvals[k];
        }
        acc
    });
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let mut dirs: Vec<[F; 3]> = Vec::new();
    for a in 0..d {
        let mut e = [F::zero(); 3];
        e[a] = F::one();
        dirs.push(e);
    }
    for _ in 0..n_random {
        let mut e = [F::zero(); 3];
        let mut nn = F::zero();
        for v in e.iter_mut().take(d) {
            *v = F::standard_normal(&mut rng);
            nn += *v * *v;
        }
        let nn = nn.sqrt();
        for v in e.iter_mut().take(d) {
            *v = *v / nn;
        }
        dirs.push(e);
    }
    let mut worst = F::zero();
    for e in &dirs {
        let qa = cs.effective_tensor.quad_form(e);
        let qh = harmonic.quad_form(e);
        let qar = arith.quad_form(e);
        worst = worst.max(qh - qa).max(qa - qar);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{
        apply_coefficient_map, sample_gaussian_field, CoefficientMapSpec, KernelFamily,
        KernelSpec, MapFamily,
    };

    fn cfg() -> SolverConfig<f64> {
        SolverConfig {
            cg_tol: 1e-12,
            ..Default::default()
        }
    }

    fn two_phase_1d(n: usize) -> CoefficientField<f64> {
        let grid = TorusGrid::new(1, n, 1.0).unwrap();
        CoefficientField::from_cells(grid, 1, 0.25, |cell| {
            let v = if cell < n / 2 { 1.0 } else { 0.25 };
            SymMat::scaled_identity(1, v)
        })
    }

    #[test]
    fn constant_coefficient_has_zero_correctors() {
        let grid = TorusGrid::new(2, 16, 1.0).unwrap();
        let field = CoefficientField::constant(grid, SymMat::identity(2), 1.0);
        let cs = solve_correctors(&field, &cfg()).unwrap();
        for alpha in 0..2 {
            assert!(cs.potentials[alpha].iter().all(|&v| v.abs() < 1e-14));
        }
        assert!(cs.effective_tensor.max_abs_diff(&SymMat::identity(2)) < 1e-14);
        let cs = solve_flux_correctors(cs).unwrap();
        let s = cs.sigma.as_ref().unwrap();
        for alpha in 0..2 {
            assert!(s[alpha].comp(0).iter().all(|&v| v.abs() < 1e-13));
        }
    }

    #[test]
    fn one_d_two_phase_matches_harmonic_mean_exactly() {
        let field = two_phase_1d(64);
        let cs = solve_correctors(&field, &cfg()).unwrap();
        let abar = cs.effective_tensor.get(0, 0);
        assert!((abar - 0.4).abs() < 1e-10, "abar = {abar}");
        // cellwise gradient identity: D phi = abar / a - 1
        for cell in 0..64 {
            let a = field.cell_matrix(cell).get(0, 0);
            let expect = abar / a - 1.0;
            let got = cs.gradients[0].comp(0)[cell];
            assert!((got - expect).abs() < 1e-9, "cell {cell}: {got} vs {expect}");
        }
        assert!(cs.gradient_mean_defect() < 1e-12);
        // 1D has no nontrivial skew 2-tensor
        let cs = solve_flux_correctors(cs).unwrap();
        assert_eq!(cs.sigma.as_ref().unwrap()[0].comps(), 0);
    }

    #[test]
    fn two_d_laminate_mixes_harmonic_and_arithmetic_means() {
        let n = 32;
        let grid = TorusGrid::new(2, n, 1.0).unwrap();
        // laminate along axis 0: a = diag(alpha(x0), beta(x0))
        let field = CoefficientField::from_cells(grid, 2, 0.2, |cell| {
            let x0 = cell / n;
            let (a, b) = if x0 < n / 2 { (1.0, 0.5) } else { (0.25, 0.75) };
            SymMat::from_fn(2, |i, j| {
                if i != j {
                    0.0
                } else if i == 0 {
                    a
                } else {
                    b
                }
            })
        });
        let cs = solve_correctors(&field, &cfg()).unwrap();
        let harmonic = 2.0 / (1.0 / 1.0 + 1.0 / 0.25);
        let arithmetic = (0.5 + 0.75) / 2.0;
        assert!((cs.effective_tensor.get(0, 0) - harmonic).abs() < 1e-9);
        assert!((cs.effective_tensor.get(1, 1) - arithmetic).abs() < 1e-9);
        assert!(cs.effective_tensor.get(1, 0).abs() < 1e-9);
        // tangential corrector vanishes
        assert!(cs.potentials[1].iter().all(|&v| v.abs() < 1e-10));
        assert!(cs.effective_asymmetry() < 1e-10);
    }

    #[test]
    fn sigma_solves_div_identity_on_random_2d_field() {
        let grid = TorusGrid::new(2, 64, 1.0).unwrap();
        let kernel = KernelSpec {
            family: KernelFamily::TruncatedGaussian,
            ell: 0.05,
            amplitude: 8.0,
            kappa: 1,
        };
        let map = CoefficientMapSpec {
            family: MapFamily::ScalarLogistic { gain: 1.0 },
            nu: 0.25,
        };
        let g = sample_gaussian_field(77, &kernel, &grid).unwrap();
        let a = apply_coefficient_map(&g, &map).unwrap();
        let cs = solve_correctors(&a, &cfg()).unwrap();
        let cs = solve_flux_correctors(cs).unwrap();
        for alpha in 0..2 {
            assert!(
                cs.residuals.sigma_divergence[alpha] < 1e-8,
                "residual {}",
                cs.residuals.sigma_divergence[alpha]
            );
            let s = &cs.sigma.as_ref().unwrap()[alpha];
            assert!(kmean(s.comp(0)).abs() < 1e-12);
        }
        assert!(voigt_reuss_violation(&a, &cs, 20, 3) < 1e-9);
    }

    #[test]
    fn commutator_identities() {
        // constant field: commutator vanishes identically
        let grid = TorusGrid::new(2, 16, 1.0).unwrap();
        let field = CoefficientField::constant(grid, SymMat::identity(2), 1.0);
        let cs = solve_correctors(&field, &cfg()).unwrap();
        let xi = commutator_field(&field, &cs, &SymMat::identity(2)).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert!(xi.comp(a, b).iter().all(|&v| v.abs() < 1e-13));
            }
        }
        // 1D: commutator = abar - abar^2 / a pointwise with (near) zero mean
        let field = two_phase_1d(128);
        let cs = solve_correctors(&field, &cfg()).unwrap();
        let abar = cs.effective_tensor;
        let xi = commutator_field(&field, &cs, &abar).unwrap();
        let ab = abar.get(0, 0);
        for cell in 0..128 {
            let a = field.cell_matrix(cell).get(0, 0);
            let expect = ab - ab * ab / a;
            let got = xi.comp(0, 0)[cell];
            assert!((got - expect).abs() < 1e-9);
        }
        assert!(xi.spatial_mean(0, 0).abs() < 1e-10);
    }

    #[test]
    fn sublinearity_profile_validations_and_constant_case() {
        let grid = TorusGrid::new(2, 16, 1.0).unwrap();
        let field = CoefficientField::constant(grid, SymMat::identity(2), 1.0);
        let one = solve_correctors(&field, &cfg()).unwrap();
        let samples: Vec<_> = (0..32).map(|_| one.clone()).collect();
        assert!(sublinearity_profile(&samples[..10], &[0.1]).is_err());
        assert!(sublinearity_profile(&samples, &[0.9]).is_err()); // > L/2
        let rows = sublinearity_profile(&samples, &[0.1, 0.2, 0.4]).unwrap();
        for r in rows {
            assert_eq!(r.stddev, 0.0);
        }
    }
}
