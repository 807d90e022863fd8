//! Sparse symmetric solvers: preconditioned conjugate gradients, smallest
//! eigenpairs of the generalized pencil `K g = lambda M g` by shift-invert
//! Lanczos (default) or LOBPCG, plus dense small-problem routes used as
//! oracles.

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{sym_eig_jacobi, sym_gen_eig, tridiag_eig, SymMat};
use crate::error::{Error, Result};
use crate::fft::Dst1;
use crate::mesh::{BoxMesh, SparseOperatorPair};
use crate::scalar::Scalar;
use crate::sparse::SparseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecondKind {
    None,
    Diagonal,
    /// Exact inverse of the constant-coefficient stiffness built from the
    /// mean coefficient, applied through fast sine transforms. Available for
    /// d <= 2 structured meshes whose interior-per-axis count + 1 is a power
    /// of two; silently falls back to `Diagonal` otherwise.
    Spectral,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EigenSolverKind {
    ShiftInvertLanczos,
    Lobpcg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig<F> {
    pub cg_tol: F,
    pub cg_max_iter: usize,
    pub precond: PrecondKind,
    pub eigensolver: EigenSolverKind,
    /// LOBPCG block size (0 = automatic `k + 2`)
    pub block_size: usize,
    /// residual tolerance on `||K g - lambda M g|| / ||g||_M`
    pub eig_tol: F,
    pub shift: F,
    pub max_outer: usize,
    /// relative gap below which an eigenvalue is flagged numerically multiple
    pub gap_flag_rel: F,
    /// deterministic seed for the initial Krylov/LOBPCG block
    pub init_seed: u64,
}

impl<F: Scalar> Default for SolverConfig<F> {
    fn default() -> Self {
        SolverConfig {
            cg_tol: F::cast(1e-11),
            cg_max_iter: 50_000,
            precond: PrecondKind::Spectral,
            eigensolver: EigenSolverKind::ShiftInvertLanczos,
            block_size: 0,
            eig_tol: F::cast(1e-9),
            shift: F::zero(),
            max_outer: 160,
            gap_flag_rel: F::cast(1e-6),
            init_seed: 0,
        }
    }
}

impl<F: Scalar> SolverConfig<F> {
    pub fn validate(&self) -> Result<()> {
        if self.cg_tol <= F::zero() || self.eig_tol <= F::zero() {
            return Err(Error::validation("solver", "tolerances must be positive"));
        }
        if self.cg_max_iter == 0 || self.max_outer == 0 {
            return Err(Error::validation("solver", "max iterations must be >= 1"));
        }
        Ok(())
    }
}

/// Materialized preconditioner.
pub enum Precond<F> {
    Identity,
    Jacobi(Vec<F>),
    Dst(DstPrecond<F>),
}

impl<F: Scalar> Precond<F> {
    pub fn apply(&self, r: &[F]) -> Vec<F> {
        match self {
            Precond::Identity => r.to_vec(),
            Precond::Jacobi(dinv) => r.iter().zip(dinv).map(|(&x, &d)| x * d).collect(),
            Precond::Dst(p) => p.solve(r),
        }
    }
}

/// Fast sine-transform inverse of the 5-point (3-point in 1D)
/// constant-coefficient Dirichlet stiffness on the interior grid.
pub struct DstPrecond<F> {
    dim: usize,
    n_int: usize,
    dst: Dst1<F>,
    symbol: Vec<F>,
}

impl<F: Scalar> DstPrecond<F> {
    /// `coef` supplies per-axis diffusion constants (diagonal of the mean
    /// coefficient). Fails if the geometry does not suit the transform.
    pub fn new(mesh: &BoxMesh<F>, coef: &SymMat<F>) -> Result<Self> {
        let d = mesh.dim();
        if d > 2 {
            return Err(Error::Numerical("spectral preconditioner supports d <= 2".into()));
        }
        let m = mesh.nodes_per_axis();
        let n_int = m - 2;
        if !(n_int + 1).is_power_of_two() {
            return Err(Error::Numerical(
                "spectral preconditioner needs nodes-per-axis = 2^j + 1".into(),
            ));
        }
        let h = mesh.spacings();
        // per-axis couplings of the constant-coefficient Kuhn stiffness
        let mut couplings = [F::zero(); 2];
        for a in 0..d {
            let mut c = coef.get(a, a).max(F::cast(1e-30));
            let mut other = F::one();
            for b in 0..d {
                if b != a {
                    other = other * h[b];
                }
            }
            c = c * other / h[a];
            couplings[a] = c;
        }
        let eig_1d: Vec<F> = (1..=n_int)
            .map(|k| {
                let ang = std::f64::consts::PI * k as f64 / (n_int as f64 + 1.0);
                F::cast(2.0 - 2.0 * ang.cos())
            })
            .collect();
        let total = n_int.pow(d as u32);
        let mut symbol = vec![F::zero(); total];
        match d {
            1 => {
                for k in 0..n_int {
                    symbol[k] = couplings[0] * eig_1d[k];
                }
            }
            2 => {
                for i in 0..n_int {
                    for j in 0..n_int {
                        symbol[i * n_int + j] = couplings[0] * eig_1d[i] + couplings[1] * eig_1d[j];
                    }
                }
            }
            _ => unreachable!(),
        }
        Ok(DstPrecond {
            dim: d,
            n_int,
            dst: Dst1::new(n_int),
            symbol,
        })
    }

    pub fn solve(&self, r: &[F]) -> Vec<F> {
        let n = self.n_int;
        match self.dim {
            1 => {
                let mut s = vec![F::zero(); n];
                self.dst.apply(r, &mut s);
                for k in 0..n {
                    s[k] = s[k] / self.symbol[k];
                }
                let mut out = vec![F::zero(); n];
                self.dst.apply(&s, &mut out);
                let scale = F::cast(2.0 / (n as f64 + 1.0));
                for v in out.iter_mut() {
                    *v = *v * scale;
                }
                out
            }
            2 => {
                let mut work = vec![F::zero(); n * n];
                let mut line_in = vec![F::zero(); n];
                let mut line_out = vec![F::zero(); n];
                // rows
                for i in 0..n {
                    self.dst.apply(&r[i * n..(i + 1) * n], &mut work[i * n..(i + 1) * n]);
                }
                // columns
                for j in 0..n {
                    for i in 0..n {
                        line_in[i] = work[i * n + j];
                    }
                    self.dst.apply(&line_in, &mut line_out);
                    for i in 0..n {
                        work[i * n + j] = line_out[i];
                    }
                }
                for k in 0..n * n {
                    work[k] = work[k] / self.symbol[k];
                }
                for j in 0..n {
                    for i in 0..n {
                        line_in[i] = work[i * n + j];
                    }
                    self.dst.apply(&line_in, &mut line_out);
                    for i in 0..n {
                        work[i * n + j] = line_out[i];
                    }
                }
                let mut out = vec![F::zero(); n * n];
                for i in 0..n {
                    self.dst.apply(&work[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
                }
                let scale = F::cast(2.0 / (n as f64 + 1.0));
                let scale2 = scale * scale;
                for v in out.iter_mut() {
                    *v = *v * scale2;
                }
                out
            }
            _ => unreachable!(),
        }
    }
}

/// Build a preconditioner for `ops.stiffness` according to `kind`.
pub fn build_precond<F: Scalar>(
    kind: PrecondKind,
    matrix: &SparseMatrix<F>,
    geometry: Option<(&BoxMesh<F>, &SymMat<F>)>,
) -> Precond<F> {
    match kind {
        PrecondKind::None => Precond::Identity,
        PrecondKind::Diagonal => jacobi_from(matrix),
        PrecondKind::Spectral => {
            if let Some((mesh, coef)) = geometry {
                match DstPrecond::new(mesh, coef) {
                    Ok(p) => Precond::Dst(p),
                    Err(e) => {
                        log::debug!("spectral preconditioner unavailable ({e}); using diagonal");
                        jacobi_from(matrix)
                    }
                }
            } else {
                jacobi_from(matrix)
            }
        }
    }
}

fn jacobi_from<F: Scalar>(matrix: &SparseMatrix<F>) -> Precond<F> {
    Precond::Jacobi(
        matrix
            .diagonal()
            .into_iter()
            .map(|d| if d != F::zero() { F::one() / d } else { F::one() })
            .collect(),
    )
}

fn dot<F: Scalar>(x: &[F], y: &[F]) -> F {
    x.iter().zip(y).map(|(&a, &b)| a * b).sum()
}

fn norm2<F: Scalar>(x: &[F]) -> F {
    dot(x, x).sqrt()
}

fn axpy<F: Scalar>(alpha: F, x: &[F], y: &mut [F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Preconditioned conjugate gradients for SPD `a`. Returns the solution and
/// the iteration count; the relative residual meets `tol` on success.
pub fn pcg<F: Scalar>(
    a: &SparseMatrix<F>,
    b: &[F],
    precond: &Precond<F>,
    tol: F,
    max_iter: usize,
    x0: Option<&[F]>,
) -> Result<(Vec<F>, usize)> {
    let n = a.size;
    let bnorm = norm2(b);
    if bnorm == F::zero() {
        return Ok((vec![F::zero(); n], 0));
    }
    let mut x = match x0 {
        Some(v) => v.to_vec(),
        None => vec![F::zero(); n],
    };
    let mut r = b.to_vec();
    if x0.is_some() {
        let ax = a.matvec_alloc(&x);
        for i in 0..n {
            r[i] -= ax[i];
        }
    }
    let mut z = precond.apply(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![F::zero(); n];
    for it in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= F::zero() {
            return Err(Error::Numerical(format!(
                "cg: non-positive curvature {pap} at iteration {it}"
            )));
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rnorm = norm2(&r);
        if rnorm <= tol * bnorm {
            return Ok((x, it));
        }
        z = precond.apply(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rnorm = norm2(&r) / bnorm;
    Err(Error::CgNoConvergence {
        residual: rnorm.to_f64_lossy(),
        iterations: max_iter,
    })
}

/// Spec-level CG entry point: builds the preconditioner from the matrix
/// alone (spectral degrades to diagonal without geometry).
pub fn cg_solve<F: Scalar>(
    a: &SparseMatrix<F>,
    b: &[F],
    cfg: &SolverConfig<F>,
) -> Result<Vec<F>> {
    cfg.validate()?;
    let precond = build_precond(cfg.precond, a, None);
    pcg(a, b, &precond, cfg.cg_tol, cfg.cg_max_iter, None).map(|(x, _)| x)
}

/// Ordered smallest eigenpairs of `K g = lambda M g`.
#[derive(Clone, Debug)]
pub struct EigenResult<F> {
    pub values: Vec<F>,
    /// M-orthonormal eigenvectors on interior dofs
    pub vectors: Vec<Vec<F>>,
    pub residuals: Vec<F>,
    pub iterations: usize,
    /// `min(lambda_{k+1} - lambda_k, lambda_k - lambda_{k-1}, 1)`; for the
    /// first/last computed index only the available neighbor enters
    pub gaps: Vec<F>,
    /// flagged when the relative gap falls below the configured threshold
    pub degenerate: Vec<bool>,
}

impl<F: Scalar> EigenResult<F> {
    fn finalize_gaps(values: &[F], gap_flag_rel: F) -> (Vec<F>, Vec<bool>) {
        let k = values.len();
        let mut gaps = Vec::with_capacity(k);
        let mut degenerate = Vec::with_capacity(k);
        for i in 0..k {
            let left = if i > 0 {
                values[i] - values[i - 1]
            } else {
                F::infinity()
            };
            let right = if i + 1 < k {
                values[i + 1] - values[i]
            } else {
                F::infinity()
            };
            let gap = left.min(right).min(F::one());
            gaps.push(gap);
            let scale = values[i].abs().max(F::one());
            degenerate.push(left.min(right) < gap_flag_rel * scale);
        }
        (gaps, degenerate)
    }

    pub fn max_orthonormality_defect(&self, mass: &SparseMatrix<F>) -> F {
        let mut worst = F::zero();
        for (i, gi) in self.vectors.iter().enumerate() {
            let mg = mass.matvec_alloc(gi);
            for (j, gj) in self.vectors.iter().enumerate() {
                let d = dot(gj, &mg);
                let target = if i == j { F::one() } else { F::zero() };
                worst = worst.max((d - target).abs());
            }
        }
        worst
    }
}

struct PencilOps<'a, F: Scalar> {
    k: &'a SparseMatrix<F>,
    precond: Precond<F>,
    cg_max: usize,
    inner_iters: std::cell::Cell<usize>,
}

impl<'a, F: Scalar> PencilOps<'a, F> {
    fn solve_k(&self, rhs: &[F], tol: F, x0: Option<&[F]>) -> Result<Vec<F>> {
        let (x, it) = pcg(self.k, rhs, &self.precond, tol, self.cg_max, x0)?;
        self.inner_iters.set(self.inner_iters.get() + it);
        Ok(x)
    }

    fn m_dot(&self, x: &[F], my: &[F]) -> F {
        dot(x, my)
    }
}

fn random_unit<F: Scalar>(n: usize, rng: &mut ChaCha12Rng) -> Vec<F> {
    let mut v: Vec<F> = (0..n).map(|_| F::standard_normal(rng)).collect();
    let nn = norm2(&v);
    for x in v.iter_mut() {
        *x = *x / nn;
    }
    v
}

/// Shift-invert Lanczos (shift 0) with full reorthogonalization in the
/// M-inner product, followed by inverse-iteration polish of each pair.
fn lanczos_smallest<F: Scalar>(
    ops: &SparseOperatorPair<F>,
    k: usize,
    cfg: &SolverConfig<F>,
) -> Result<EigenResult<F>> {
    let kk = &ops.stiffness;
    let mm = &ops.mass;
    let n = kk.size;
    let precond = build_precond(
        cfg.precond,
        kk,
        Some((ops.mesh.as_ref(), &ops.mean_coefficient)),
    );
    let pen = PencilOps {
        k: kk,
        precond,
        cg_max: cfg.cg_max_iter,
        inner_iters: std::cell::Cell::new(0),
    };
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.init_seed ^ 0x5ca1_ab1e);

    // Lanczos basis and M * basis, with tridiagonal coefficients
    let mut basis: Vec<Vec<F>> = Vec::new();
    let mut mbasis: Vec<Vec<F>> = Vec::new();
    let mut alphas: Vec<F> = Vec::new();
    let mut betas: Vec<F> = Vec::new(); // beta[j] couples v_j and v_{j+1}

    let m_orthonormalize = |v: &mut Vec<F>, basis: &[Vec<F>], mbasis: &[Vec<F>]| {
        for _ in 0..2 {
            for (b, mb) in basis.iter().zip(mbasis) {
                let c = dot(v, mb);
                axpy(-c, b, v);
            }
        }
    };

    // seed vector
    let mut v = random_unit(n, &mut rng);
    {
        let mv = mm.matvec_alloc(&v);
        let nrm = pen.m_dot(&v, &mv).sqrt();
        for x in v.iter_mut() {
            *x = *x / nrm;
        }
    }

    let loose_tol = (cfg.eig_tol * F::cast(0.1)).max(cfg.cg_tol);
    let mut converged = false;
    let mut steps = 0usize;
    while steps < cfg.max_outer {
        steps += 1;
        let mv = mm.matvec_alloc(&v);
        basis.push(v.clone());
        mbasis.push(mv.clone());
        let j = basis.len() - 1;

        let mut w = pen.solve_k(&mv, loose_tol, None)?;
        let alpha = dot(&w, &mv);
        alphas.push(alpha);
        // three-term recurrence plus full reorthogonalization
        axpy(-alpha, &basis[j], &mut w);
        if j > 0 && betas[j - 1] != F::zero() {
            let b = betas[j - 1];
            axpy(-b, &basis[j - 1], &mut w);
        }
        m_orthonormalize(&mut w, &basis, &mbasis);
        let mw = mm.matvec_alloc(&w);
        let beta = dot(&w, &mw).max(F::zero()).sqrt();
        let breakdown = beta <= F::cast(1e-13) * alpha.abs().max(F::one());
        if breakdown {
            betas.push(F::zero());
            // invariant subspace found: restart with a fresh direction
            let mut fresh = random_unit(n, &mut rng);
            m_orthonormalize(&mut fresh, &basis, &mbasis);
            let mf = mm.matvec_alloc(&fresh);
            let nrm = dot(&fresh, &mf).max(F::zero()).sqrt();
            if nrm <= F::cast(1e-12) {
                break; // space exhausted
            }
            for x in fresh.iter_mut() {
                *x = *x / nrm;
            }
            v = fresh;
        } else {
            betas.push(beta);
            v = w;
            for x in v.iter_mut() {
                *x = *x / beta;
            }
        }

        // convergence check on the top-k Ritz pairs of the inverted pencil
        if basis.len() >= k && (basis.len() % 2 == 0 || basis.len() >= k + 2) {
            let jn = basis.len();
            let (thetas, svecs) = tridiag_eig(&alphas, &betas[..jn.saturating_sub(1)]);
            // largest thetas correspond to smallest lambdas
            let mut ok = jn >= k;
            for idx in 0..k.min(jn) {
                let col = jn - 1 - idx;
                let theta = thetas[col];
                if theta <= F::zero() {
                    ok = false;
                    break;
                }
                let last = svecs[(jn - 1) * jn + col].abs();
                let est = if jn - 1 < betas.len() && betas[jn - 1] != F::zero() {
                    betas[jn - 1] * last
                } else {
                    F::zero()
                };
                // residual estimate for lambda = 1/theta scales with 1/theta^2
                if est / (theta * theta) > cfg.eig_tol * F::cast(0.5) {
                    ok = false;
                    break;
                }
            }
            if ok {
                converged = true;
                break;
            }
        }
    }
    if basis.len() < k {
        return Err(Error::EigenStagnation(format!(
            "Krylov space of dimension {} cannot deliver {k} pairs",
            basis.len()
        )));
    }
    if !converged {
        log::debug!("lanczos reached max_outer; relying on polish phase");
    }

    // Ritz extraction
    let jn = basis.len();
    let (thetas, svecs) = tridiag_eig(&alphas, &betas[..jn - 1]);
    let mut pairs: Vec<(F, Vec<F>)> = Vec::with_capacity(k);
    for idx in 0..k {
        let col = jn - 1 - idx;
        let theta = thetas[col];
        if theta <= F::zero() {
            return Err(Error::EigenStagnation(
                "non-positive Ritz value of the inverted pencil".into(),
            ));
        }
        let mut x = vec![F::zero(); n];
        for (j, b) in basis.iter().enumerate() {
            let c = svecs[j * jn + col];
            axpy(c, b, &mut x);
        }
        pairs.push((F::one() / theta, x));
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // polish each pair by inverse iteration with tight inner solves
    let tight = (cfg.cg_tol * F::cast(1e-2)).max(F::cast(5e-15));
    let mut values = Vec::with_capacity(k);
    let mut vectors: Vec<Vec<F>> = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    for (_, mut g) in pairs {
        let mut lambda;
        for attempt in 0..8 {
            // M-orthogonalize against previously accepted pairs
            for prev in vectors.iter() {
                let mp = mm.matvec_alloc(prev);
                let c = dot(&g, &mp);
                axpy(-c, prev, &mut g);
            }
            let mg = mm.matvec_alloc(&g);
            let nrm = dot(&g, &mg).max(F::zero()).sqrt();
            if nrm <= F::cast(1e-14) {
                return Err(Error::EigenStagnation("polish collapsed eigenvector".into()));
            }
            for x in g.iter_mut() {
                *x = *x / nrm;
            }
            let mg = mm.matvec_alloc(&g);
            let kg = kk.matvec_alloc(&g);
            lambda = dot(&g, &kg);
            let mut resid = vec![F::zero(); n];
            for i in 0..n {
                resid[i] = kg[i] - lambda * mg[i];
            }
            let rnorm = norm2(&resid);
            if rnorm <= cfg.eig_tol {
                break;
            }
            if attempt == 7 {
                return Err(Error::EigenStagnation(format!(
                    "pair at lambda {:.6e} stuck at residual {:.3e}",
                    lambda.to_f64_lossy(),
                    rnorm.to_f64_lossy()
                )));
            }
            g = pen.solve_k(&mg, tight, Some(&g))?;
        }
        let mg = mm.matvec_alloc(&g);
        let kg = kk.matvec_alloc(&g);
        lambda = dot(&g, &kg) / dot(&g, &mg);
        let mut resid = vec![F::zero(); n];
        for i in 0..n {
            resid[i] = kg[i] - lambda * mg[i];
        }
        values.push(lambda);
        residuals.push(norm2(&resid));
        vectors.push(g);
    }

    let (gaps, degenerate) = EigenResult::finalize_gaps(&values, cfg.gap_flag_rel);
    Ok(EigenResult {
        values,
        vectors,
        residuals,
        iterations: pen.inner_iters.get(),
        gaps,
        degenerate,
    })
}

/// LOBPCG with the same contract as the Lanczos route.
fn lobpcg_smallest<F: Scalar>(
    ops: &SparseOperatorPair<F>,
    k: usize,
    cfg: &SolverConfig<F>,
) -> Result<EigenResult<F>> {
    let kk = &ops.stiffness;
    let mm = &ops.mass;
    let n = kk.size;
    let block = if cfg.block_size > k {
        cfg.block_size
    } else {
        (k + 2).min(n)
    };
    let precond = build_precond(
        cfg.precond,
        kk,
        Some((ops.mesh.as_ref(), &ops.mean_coefficient)),
    );
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.init_seed ^ 0x10b9);
    let mut xs: Vec<Vec<F>> = (0..block).map(|_| random_unit(n, &mut rng)).collect();
    let mut ps: Vec<Vec<F>> = Vec::new();
    let mut iterations = 0usize;

    // M-orthonormalize a set in place (modified Gram-Schmidt, drop nulls)
    let m_mgs = |set: &mut Vec<Vec<F>>, mm: &SparseMatrix<F>| {
        let mut kept: Vec<Vec<F>> = Vec::new();
        let mut mkept: Vec<Vec<F>> = Vec::new();
        for mut v in set.drain(..) {
            for _ in 0..2 {
                for (b, mb) in kept.iter().zip(&mkept) {
                    let c = dot(&v, mb);
                    axpy(-c, b, &mut v);
                }
            }
            let mv = mm.matvec_alloc(&v);
            let nrm = dot(&v, &mv).max(F::zero()).sqrt();
            if nrm > F::cast(1e-10) {
                for x in v.iter_mut() {
                    *x = *x / nrm;
                }
                let mv = mm.matvec_alloc(&v);
                kept.push(v);
                mkept.push(mv);
            }
        }
        *set = kept;
    };

    m_mgs(&mut xs, mm);
    if xs.len() < k {
        return Err(Error::EigenStagnation("initial block degenerate".into()));
    }

    let mut thetas: Vec<F> = vec![F::zero(); xs.len()];
    for outer in 0..cfg.max_outer {
        iterations = outer + 1;
        // residuals
        let kxs: Vec<Vec<F>> = xs.iter().map(|x| kk.matvec_alloc(x)).collect();
        let mxs: Vec<Vec<F>> = xs.iter().map(|x| mm.matvec_alloc(x)).collect();
        for (i, x) in xs.iter().enumerate() {
            thetas[i] = dot(x, &kxs[i]) / dot(x, &mxs[i]);
        }
        let mut resids: Vec<Vec<F>> = Vec::with_capacity(xs.len());
        let mut worst = F::zero();
        for i in 0..xs.len() {
            let mut r = vec![F::zero(); n];
            for j in 0..n {
                r[j] = kxs[i][j] - thetas[i] * mxs[i][j];
            }
            if i < k {
                worst = worst.max(norm2(&r));
            }
            resids.push(r);
        }
        if worst <= cfg.eig_tol && outer > 0 {
            break;
        }
        // search directions
        let ws: Vec<Vec<F>> = resids.iter().map(|r| precond.apply(r)).collect();
        let mut z: Vec<Vec<F>> = Vec::new();
        z.extend(xs.iter().cloned());
        z.extend(ws);
        z.extend(ps.iter().cloned());
        m_mgs(&mut z, mm);
        let zdim = z.len();
        if zdim < k {
            return Err(Error::EigenStagnation("search space collapsed".into()));
        }
        // Rayleigh-Ritz in the M-orthonormal basis z
        let kz: Vec<Vec<F>> = z.iter().map(|v| kk.matvec_alloc(v)).collect();
        let mut a = vec![F::zero(); zdim * zdim];
        for i in 0..zdim {
            for j in 0..zdim {
                a[i * zdim + j] = dot(&z[i], &kz[j]);
            }
        }
        // exact symmetrization against roundoff
        for i in 0..zdim {
            for j in 0..i {
                let s = (a[i * zdim + j] + a[j * zdim + i]) * F::cast(0.5);
                a[i * zdim + j] = s;
                a[j * zdim + i] = s;
            }
        }
        let (vals, vecs) = sym_eig_jacobi(&a, zdim);
        let nb = block.min(zdim);
        let mut new_xs: Vec<Vec<F>> = Vec::with_capacity(nb);
        let mut new_ps: Vec<Vec<F>> = Vec::with_capacity(nb);
        for col in 0..nb {
            let mut x = vec![F::zero(); n];
            let mut p = vec![F::zero(); n];
            for (j, zj) in z.iter().enumerate() {
                let c = vecs[j * zdim + col];
                axpy(c, zj, &mut x);
                if j >= xs.len() {
                    axpy(c, zj, &mut p);
                }
            }
            new_xs.push(x);
            new_ps.push(p);
        }
        let _ = vals;
        xs = new_xs;
        ps = new_ps;
        m_mgs(&mut ps, mm);
    }

    // final Rayleigh quotients, ordering, residuals
    let mut trip: Vec<(F, Vec<F>)> = Vec::new();
    for x in xs.into_iter() {
        let mx = mm.matvec_alloc(&x);
        let nrm = dot(&x, &mx).max(F::zero()).sqrt();
        let mut g = x;
        for v in g.iter_mut() {
            *v = *v / nrm;
        }
        let kg = kk.matvec_alloc(&g);
        let mg = mm.matvec_alloc(&g);
        let lambda = dot(&g, &kg) / dot(&g, &mg);
        trip.push((lambda, g));
    }
    trip.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    trip.truncate(k);
    let mut values = Vec::new();
    let mut vectors = Vec::new();
    let mut residuals = Vec::new();
    for (lambda, g) in trip {
        let kg = kk.matvec_alloc(&g);
        let mg = mm.matvec_alloc(&g);
        let mut r = vec![F::zero(); n];
        for i in 0..n {
            r[i] = kg[i] - lambda * mg[i];
        }
        let rn = norm2(&r);
        if rn > cfg.eig_tol {
            return Err(Error::EigenStagnation(format!(
                "lobpcg pair at {:.6e} has residual {:.3e}",
                lambda.to_f64_lossy(),
                rn.to_f64_lossy()
            )));
        }
        values.push(lambda);
        vectors.push(g);
        residuals.push(rn);
    }
    let (gaps, degenerate) = EigenResult::finalize_gaps(&values, cfg.gap_flag_rel);
    Ok(EigenResult {
        values,
        vectors,
        residuals,
        iterations,
        gaps,
        degenerate,
    })
}

/// Smallest `k` eigenpairs of the Dirichlet pencil.
pub fn smallest_eigenpairs<F: Scalar>(
    ops: &SparseOperatorPair<F>,
    k: usize,
    cfg: &SolverConfig<F>,
) -> Result<EigenResult<F>> {
    cfg.validate()?;
    let n = ops.stiffness.size;
    if k == 0 {
        return Err(Error::validation("k", "must be >= 1"));
    }
    if 4 * k > n {
        return Err(Error::validation(
            "k",
            format!("guard k <= size/4 violated: k = {k}, size = {n}"),
        ));
    }
    match cfg.eigensolver {
        EigenSolverKind::ShiftInvertLanczos => lanczos_smallest(ops, k, cfg),
        EigenSolverKind::Lobpcg => lobpcg_smallest(ops, k, cfg),
    }
}

/// Flip the sign of `g` so that its M-inner product with `reference` is
/// nonnegative; errors when the two are numerically M-orthogonal.
pub fn sign_align<F: Scalar>(
    g: &[F],
    reference: &[F],
    mass: &SparseMatrix<F>,
) -> Result<Vec<F>> {
    let mg = mass.matvec_alloc(g);
    let s = dot(reference, &mg);
    let gn = dot(g, &mg).max(F::zero()).sqrt();
    let mr = mass.matvec_alloc(reference);
    let rn = dot(reference, &mr).max(F::zero()).sqrt();
    if s.abs() <= F::cast(1e-12) * gn * rn {
        return Err(Error::SignUndetermined(s.to_f64_lossy()));
    }
    let mut out = g.to_vec();
    if s < F::zero() {
        for v in out.iter_mut() {
            *v = -*v;
        }
    }
    Ok(out)
}

/// Full dense spectrum of a small pencil (size guard 2000).
pub fn dense_full_spectrum<F: Scalar>(ops: &SparseOperatorPair<F>) -> Result<EigenResult<F>> {
    let n = ops.stiffness.size;
    if n > 2000 {
        return Err(Error::validation("ops", "dense spectrum limited to size <= 2000"));
    }
    let kd = ops.stiffness.to_dense();
    let md = ops.mass.to_dense();
    let (values, flat) = sym_gen_eig(&kd, &md, n)?;
    let vectors: Vec<Vec<F>> = (0..n)
        .map(|col| (0..n).map(|i| flat[i * n + col]).collect())
        .collect();
    let residuals = vec![F::zero(); n];
    let (gaps, degenerate) = EigenResult::finalize_gaps(&values, F::cast(1e-6));
    Ok(EigenResult {
        values,
        vectors,
        residuals,
        iterations: 0,
        gaps,
        degenerate,
    })
}

/// Weak-form load vector of `div h` for an elementwise-constant vector field
/// `h`: `F_i = -int h . grad psi_i`, restricted to interior dofs.
pub fn divergence_load<F: Scalar>(mesh: &BoxMesh<F>, h_elem: &[[F; 3]]) -> Vec<F> {
    let d = mesh.dim();
    let mut load = vec![F::zero(); mesh.num_interior()];
    for e in 0..mesh.num_elements() {
        let nodes = mesh.element_nodes(e);
        let grads = mesh.element_grads(e);
        let vol = mesh.element_volume(e);
        for v in 0..=d {
            if let Some(idx) = mesh.interior_index_of(nodes[v]) {
                let mut acc = F::zero();
                for a in 0..d {
                    acc += h_elem[e][a] * grads[v][a];
                }
                load[idx] -= vol * acc;
            }
        }
    }
    load
}

/// Spectral inversion of `(-lambda_k - div a grad) u = (Id - pi_k)[div h]`
/// with `pi_k[u] = 0`, through the full spectrum:
/// `u = -sum_{j != k} (lambda_j - lambda_k)^{-1} (int h . grad g_j) g_j`.
///
/// `k` is a zero-based index into `eig`, which must hold all pairs of the
/// pencil. Used as an oracle for deflated iterative solves.
pub fn spectral_invert_oracle<F: Scalar>(
    ops: &SparseOperatorPair<F>,
    eig: &EigenResult<F>,
    k: usize,
    h_elem: &[[F; 3]],
) -> Result<Vec<F>> {
    let n = ops.stiffness.size;
    if eig.values.len() != n {
        return Err(Error::validation(
            "eig",
            "spectral inversion requires the full spectrum",
        ));
    }
    let lambda_k = eig.values[k];
    for (j, &lj) in eig.values.iter().enumerate() {
        if j != k && (lj - lambda_k).abs() <= F::cast(1e-10) * lambda_k.abs().max(F::one()) {
            return Err(Error::RepeatedEigenvalue(k));
        }
    }
    let mesh = ops.mesh.as_ref();
    let mut u = vec![F::zero(); n];
    for j in 0..n {
        if j == k {
            continue;
        }
        // int_U h . grad g_j over elements
        let full = crate::mesh::expand_interior(mesh, &eig.vectors[j]);
        let mut coeff = F::zero();
        for e in 0..mesh.num_elements() {
            let grad = mesh.element_gradient(e, &full);
            let vol = mesh.element_volume(e);
            let mut acc = F::zero();
            for a in 0..mesh.dim() {
                acc += h_elem[e][a] * grad[a];
            }
            coeff += vol * acc;
        }
        let w = -coeff / (eig.values[j] - lambda_k);
        axpy(w, &eig.vectors[j], &mut u);
    }
    Ok(u)
}

/// Deflated PCG solve of the same resolvent problem for a simple smallest
/// pair: iterates are kept M-orthogonal to `g_k`. Valid when
/// `K - lambda_k M` is positive semidefinite on that complement (k = 0).
pub fn deflated_resolvent_solve<F: Scalar>(
    ops: &SparseOperatorPair<F>,
    lambda_k: F,
    g_k: &[F],
    h_elem: &[[F; 3]],
    cfg: &SolverConfig<F>,
) -> Result<Vec<F>> {
    let kk = &ops.stiffness;
    let mm = &ops.mass;
    let n = kk.size;
    let mgk = mm.matvec_alloc(g_k);
    let project = |v: &mut Vec<F>| {
        let c = dot(v, g_k);
        let _ = c;
        let cm = dot(v, &mgk) / dot(g_k, &mgk);
        axpy(-cm, g_k, v);
    };
    // load (Id - pi_k)[div h]
    let mut b = divergence_load(ops.mesh.as_ref(), h_elem);
    let gb = dot(g_k, &b);
    axpy(-gb, &mgk, &mut b);

    let apply = |x: &[F], out: &mut Vec<F>| {
        kk.matvec(x, out);
        let mx = mm.matvec_alloc(x);
        for i in 0..n {
            out[i] -= lambda_k * mx[i];
        }
    };
    // plain projected CG with Jacobi preconditioning on K
    let precond = build_precond(PrecondKind::Diagonal, kk, None);
    let mut x = vec![F::zero(); n];
    let mut r = b.clone();
    let bnorm = norm2(&b);
    if bnorm == F::zero() {
        return Ok(x);
    }
    let mut z = precond.apply(&r);
    project(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![F::zero(); n];
    for _ in 0..cfg.cg_max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap.abs() <= F::cast(1e-300) {
            break;
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        if norm2(&r) <= cfg.cg_tol * bnorm {
            project(&mut x);
            return Ok(x);
        }
        z = precond.apply(&r);
        project(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::CgNoConvergence {
        residual: (norm2(&r) / bnorm).to_f64_lossy(),
        iterations: cfg.cg_max_iter,
    })
}

/// Verify the 2-norm residual of an eigenpair.
pub fn eigen_residual<F: Scalar>(
    kk: &SparseMatrix<F>,
    mm: &SparseMatrix<F>,
    lambda: F,
    g: &[F],
) -> F {
    let kg = kk.matvec_alloc(g);
    let mg = mm.matvec_alloc(g);
    let mut acc = F::zero();
    for i in 0..g.len() {
        let r = kg[i] - lambda * mg[i];
        acc += r * r;
    }
    acc.sqrt()
}

// complex helper reserved for future spectral preconditioners on the torus
#[allow(dead_code)]
fn complex_unused<F: Scalar>(_: Complex<F>) {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{assemble_constant, BoxMesh};
    use std::sync::Arc;

    fn pair_1d(m: usize) -> SparseOperatorPair<f64> {
        let mesh = Arc::new(BoxMesh::new(1, &[1.0], m).unwrap());
        assemble_constant(&mesh, SymMat::identity(1)).unwrap()
    }

    #[test]
    fn cg_identity_converges_in_one_iteration() {
        let a = SparseMatrix::<f64>::identity(5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 0.0];
        let (x, it) = pcg(&a, &b, &Precond::Identity, 1e-12, 10, None).unwrap();
        assert_eq!(it, 1);
        assert_eq!(x, b);
    }

    #[test]
    fn cg_zero_rhs_returns_zero() {
        let a = SparseMatrix::<f64>::identity(4);
        let cfg = SolverConfig::default();
        let x = cg_solve(&a, &[0.0; 4], &cfg).unwrap();
        assert_eq!(x, vec![0.0; 4]);
    }

    #[test]
    fn one_d_dirichlet_eigenvalues_match_closed_form() {
        // m = 9 nodes -> 7 interior, h = 1/8
        let ops = pair_1d(9);
        let mut cfg = SolverConfig::<f64>::default();
        cfg.precond = PrecondKind::Diagonal;
        let res = smallest_eigenpairs(&ops, 1, &cfg).unwrap();
        let h: f64 = 1.0 / 8.0;
        let theta = std::f64::consts::PI * h;
        let expect = 6.0 / (h * h) * (1.0 - theta.cos()) / (2.0 + theta.cos());
        assert!(
            (res.values[0] - expect).abs() < 1e-8,
            "{} vs {expect}",
            res.values[0]
        );
        assert!(res.residuals[0] < 1e-9);

        // full spectrum against the closed form via the dense route
        let dense = dense_full_spectrum(&ops).unwrap();
        for (kidx, lam) in dense.values.iter().enumerate() {
            let th = std::f64::consts::PI * (kidx as f64 + 1.0) * h;
            let want = 6.0 / (h * h) * (1.0 - th.cos()) / (2.0 + th.cos());
            assert!((lam - want).abs() < 1e-9 * want, "k={kidx}");
        }
    }

    #[test]
    fn proportional_pencil_yields_flat_spectrum() {
        // K = 2 M: every eigenvalue equals 2, exercises the restart path
        let ops0 = pair_1d(11);
        let ops = SparseOperatorPair {
            stiffness: ops0.mass.scale(2.0),
            mass: ops0.mass.clone(),
            eps: 1.0,
            mesh: ops0.mesh.clone(),
            mean_coefficient: SymMat::identity(1),
        };
        let mut cfg = SolverConfig::<f64>::default();
        cfg.precond = PrecondKind::Diagonal;
        let res = smallest_eigenpairs(&ops, 2, &cfg).unwrap();
        for v in &res.values {
            assert!((v - 2.0).abs() < 1e-10);
        }
        assert!(res.max_orthonormality_defect(&ops.mass) < 1e-8);
        assert!(res.degenerate.iter().all(|&d| d));
    }

    #[test]
    fn lanczos_and_lobpcg_agree() {
        let mesh = Arc::new(BoxMesh::new(2, &[1.0, 1.37], 9).unwrap());
        let ops = assemble_constant(&mesh, SymMat::scaled_identity(2, 0.6)).unwrap();
        let mut cfg = SolverConfig::<f64>::default();
        cfg.precond = PrecondKind::Diagonal;
        cfg.eigensolver = EigenSolverKind::ShiftInvertLanczos;
        let a = smallest_eigenpairs(&ops, 3, &cfg).unwrap();
        cfg.eigensolver = EigenSolverKind::Lobpcg;
        let b = smallest_eigenpairs(&ops, 3, &cfg).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-7 * x.abs(), "{x} vs {y}");
        }
    }

    #[test]
    fn spectral_preconditioner_is_exact_for_isotropic_constant() {
        let mesh = Arc::new(BoxMesh::new(2, &[1.0, 1.37], 17).unwrap());
        let c = 0.45;
        let ops = assemble_constant(&mesh, SymMat::scaled_identity(2, c)).unwrap();
        let p = DstPrecond::new(mesh.as_ref(), &SymMat::scaled_identity(2, c)).unwrap();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(8);
        let n = ops.stiffness.size;
        let b: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let x = p.solve(&b);
        let back = ops.stiffness.matvec_alloc(&x);
        for i in 0..n {
            assert!((back[i] - b[i]).abs() < 1e-10, "i={i}: {} vs {}", back[i], b[i]);
        }
    }

    #[test]
    fn sign_align_behaviour() {
        let ops = pair_1d(9);
        let g = vec![1.0, 2.0, 3.0, 2.0, 1.0, 0.5, 0.2];
        let aligned = sign_align(&g, &g, &ops.mass).unwrap();
        assert_eq!(aligned, g);
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let aligned = sign_align(&g, &neg, &ops.mass).unwrap();
        assert_eq!(aligned, neg);
        // orthogonal reference: first dense eigenvector vs second
        let dense = dense_full_spectrum(&ops).unwrap();
        let err = sign_align(&dense.vectors[0], &dense.vectors[1], &ops.mass).unwrap_err();
        assert!(matches!(err, Error::SignUndetermined(_)));
    }

    #[test]
    fn spectral_inversion_zero_load_and_flux_load() {
        let ops = pair_1d(9);
        let dense = dense_full_spectrum(&ops).unwrap();
        let nel = ops.mesh.num_elements();
        // h = 0
        let h0 = vec![[0.0; 3]; nel];
        let u = spectral_invert_oracle(&ops, &dense, 0, &h0).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
        // h = a grad g_k: coefficients vanish for j != k by M-orthogonality
        let gfull = crate::mesh::expand_interior(ops.mesh.as_ref(), &dense.vectors[0]);
        let mut h: Vec<[f64; 3]> = Vec::with_capacity(nel);
        for e in 0..nel {
            let g = ops.mesh.element_gradient(e, &gfull);
            h.push([g[0], 0.0, 0.0]);
        }
        let u = spectral_invert_oracle(&ops, &dense, 0, &h).unwrap();
        let maxu = u.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(maxu < 1e-10, "max |u| = {maxu}");
    }
}
