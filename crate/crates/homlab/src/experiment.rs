//! Per-realization eigenvalue experiments and the eps-sweep rate
//! instrument: heterogeneous vs homogenized eigenpairs, two-scale expansion
//! errors, commutator integrals, and log-log rate fits with the
//! dimension-dependent correction `mu_d`.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::corrector::{
    commutator_field, solve_correctors, solve_flux_correctors, CommutatorField, CorrectorSet,
};
use crate::dense::SymMat;
use crate::error::{Error, Result};
use crate::field::{apply_coefficient_map, sample_gaussian_field, CoefficientMapSpec, KernelSpec};
use crate::grid::TorusGrid;
use crate::io::derive_seed;
use crate::mesh::{assemble_constant, assemble_operator, expand_interior, BoxMesh, MeshNorms};
use crate::scalar::Scalar;
use crate::solver::{sign_align, smallest_eigenpairs, EigenResult, SolverConfig};
use crate::stats::{linear_fit, mean, sem};

/// Dimension-dependent rate correction: `1` for d > 2,
/// `sqrt(log(2+r))` for d = 2 (natural log), `sqrt(1+r)` for d = 1.
pub fn mu_d<F: Scalar>(dim: usize, r: F) -> Result<F> {
    if dim == 0 {
        return Err(Error::DimOutOfRange(dim));
    }
    if r < F::zero() {
        return Err(Error::validation("r", "must be nonnegative"));
    }
    Ok(match dim {
        1 => (F::one() + r).sqrt(),
        2 => (F::cast(2.0) + r).ln().sqrt(),
        _ => F::one(),
    })
}

/// Least squares of `log value` (optionally `log(value / mu_d(1/eps))`)
/// against `log eps`. Returns `(slope, intercept, r2)`.
pub fn fit_rate<F: Scalar>(
    table: &[(F, F)],
    mu_correction: Option<usize>,
) -> Result<(F, F, F)> {
    if table.len() < 4 {
        return Err(Error::validation("table", "rate fit needs at least 4 points"));
    }
    let mut xs = Vec::with_capacity(table.len());
    let mut ys = Vec::with_capacity(table.len());
    for &(eps, value) in table {
        if value <= F::zero() {
            return Err(Error::Numerical(format!(
                "rate fit requires positive values, got {}",
                value.to_f64_lossy()
            )));
        }
        if eps <= F::zero() {
            return Err(Error::validation("table", "eps must be positive"));
        }
        let mut v = value;
        if let Some(dim) = mu_correction {
            v = v / mu_d(dim, F::one() / eps)?;
        }
        xs.push(eps.ln());
        ys.push(v.ln());
    }
    linear_fit(&xs, &ys)
}

/// Eigenpairs of the constant-coefficient homogenized operator on the mesh.
pub fn solve_homogenized_eigen<F: Scalar>(
    abar: &SymMat<F>,
    mesh: &Arc<BoxMesh<F>>,
    k_max: usize,
    cfg: &SolverConfig<F>,
) -> Result<EigenResult<F>> {
    let ev = abar.eigenvalues();
    if ev[0] <= F::zero() {
        return Err(Error::validation("abar", "homogenized tensor must be elliptic"));
    }
    let ops = assemble_constant(mesh, *abar)?;
    smallest_eigenpairs(&ops, k_max, cfg)
}

/// Shared per-mesh homogenized data reused by every realization.
pub struct HomogenizedContext<F: Scalar> {
    pub mesh: Arc<BoxMesh<F>>,
    pub norms: MeshNorms<F>,
    pub abar: SymMat<F>,
    /// eigenpairs of `-div(abar grad)` (k_max + 1 of them)
    pub bar: EigenResult<F>,
    /// expanded nodal eigenvectors
    pub bar_full: Vec<Vec<F>>,
    /// per eigenpair, per element P1 gradient
    pub bar_grads: Vec<Vec<[F; 3]>>,
    /// unit-Laplacian Dirichlet eigenvalues on the same mesh (bracket)
    pub laplace_values: Vec<F>,
}

impl<F: Scalar> HomogenizedContext<F> {
    pub fn new(
        mesh: Arc<BoxMesh<F>>,
        abar: SymMat<F>,
        k_pairs: usize,
        cfg: &SolverConfig<F>,
    ) -> Result<Self> {
        let norms = MeshNorms::new(mesh.as_ref());
        let bar = solve_homogenized_eigen(&abar, &mesh, k_pairs, cfg)?;
        let lap = solve_homogenized_eigen(&SymMat::identity(mesh.dim()), &mesh, k_pairs, cfg)?;
        let mut bar_full = Vec::with_capacity(k_pairs);
        let mut bar_grads = Vec::with_capacity(k_pairs);
        for g in &bar.vectors {
            let full = expand_interior(mesh.as_ref(), g);
            let mut grads = Vec::with_capacity(mesh.num_elements());
            for e in 0..mesh.num_elements() {
                grads.push(mesh.element_gradient(e, &full));
            }
            bar_full.push(full);
            bar_grads.push(grads);
        }
        Ok(HomogenizedContext {
            mesh,
            norms,
            abar,
            bar,
            bar_full,
            bar_grads,
            laplace_values: lap.values,
        })
    }
}

/// Inputs defining one random realization.
#[derive(Clone, Debug)]
pub struct RealizationParams<F> {
    pub grid: TorusGrid<F>,
    pub kernel: KernelSpec<F>,
    pub map: CoefficientMapSpec<F>,
    pub solver: SolverConfig<F>,
    /// 1-based eigenvalue indices under study
    pub k_set: Vec<usize>,
    /// minimal relative gap for an eigenvalue to count as simple
    pub simple_gap_min: F,
}

impl<F: Scalar> RealizationParams<F> {
    pub fn k_pairs(&self) -> usize {
        self.k_set.iter().copied().max().unwrap_or(1) + 1
    }
}

/// Consistency checks recorded for every realization.
#[derive(Clone, Debug)]
pub struct RealizationChecks<F> {
    /// max over k of |int g gbar - (1 - 0.5 ||g-gbar||^2)|
    pub ggnorm_dev: F,
    /// min over k of min(lambda - nu lambda_lap, lambda_lap - lambda)
    pub bracket_margin: F,
    pub bracket_ok: bool,
    /// worst relative flux-corrector divergence residual
    pub sigma_residual: F,
    pub eigen_residual: F,
    pub m_orthonormality: F,
}

/// One realization of the eigenvalue experiment.
#[derive(Clone, Debug)]
pub struct RealizationResult<F> {
    pub seed: u64,
    pub eps: F,
    pub k_set: Vec<usize>,
    pub lambda_eps: Vec<F>,
    pub lambda_bar: Vec<F>,
    pub err_lambda: Vec<F>,
    pub err_l2: Vec<F>,
    pub err_grad: Vec<F>,
    pub commutator_integral: Vec<F>,
    /// simplicity flag per k (false = skipped as numerically degenerate)
    pub gap_simple: Vec<bool>,
    pub effective_sample: SymMat<F>,
    pub checks: RealizationChecks<F>,
    pub wall_ms: u64,
}

/// Two-scale expansion error channels for one aligned pair.
pub struct ErrorTriplet<F> {
    pub err_lambda: F,
    pub err_l2: F,
    pub err_grad: F,
    pub ggnorm_dev: F,
}

/// Compute the three error channels of one eigen index (0-based `kidx` into
/// the computed spectra). The heterogeneous eigenvector must already be
/// sign-aligned to the homogenized one.
pub fn two_scale_errors<F: Scalar>(
    ctx: &HomogenizedContext<F>,
    g_eps_full: &[F],
    lambda_eps: F,
    kidx: usize,
    cs: &CorrectorSet<F>,
    eps: F,
) -> ErrorTriplet<F> {
    let mesh = ctx.mesh.as_ref();
    let d = mesh.dim();
    let gbar_full = &ctx.bar_full[kidx];
    let lambda_bar = ctx.bar.values[kidx];
    let n = mesh.num_nodes();
    let mut diff = vec![F::zero(); n];
    for i in 0..n {
        diff[i] = g_eps_full[i] - gbar_full[i];
    }
    let l2 = ctx.norms.mass_full.quad_form(&diff).max(F::zero()).sqrt();
    // ggnorm identity: int g gbar = 1 - 0.5 ||g - gbar||^2
    let inner = ctx.norms.mass_full.bilinear(g_eps_full, gbar_full);
    let ggnorm_dev = (inner - (F::one() - l2 * l2 / F::cast(2.0))).abs();
    // corrected gradient error
    let grid = &cs.grid;
    let mut acc = F::zero();
    for e in 0..mesh.num_elements() {
        let vol = mesh.element_volume(e);
        let grad_eps = mesh.element_gradient(e, g_eps_full);
        let bar_grad = ctx.bar_grads[kidx][e];
        let bary = mesh.element_barycenter(e);
        let mut y = [F::zero(); 3];
        for a in 0..d {
            y[a] = bary[a] / eps;
        }
        let cell = grid.cell_containing(&y[..d]);
        let mut err2 = F::zero();
        for axis in 0..d {
            // (grad phi_alpha + e_alpha)(./eps) dalpha gbar, summed over alpha
            let mut two_scale = F::zero();
            for alpha in 0..d {
                let mut factor = cs.gradients[alpha].comp(axis)[cell];
                if alpha == axis {
                    factor += F::one();
                }
                two_scale += factor * bar_grad[alpha];
            }
            let dv = grad_eps[axis] - two_scale;
            err2 += dv * dv;
        }
        acc += vol * err2;
    }
    ErrorTriplet {
        err_lambda: (lambda_eps - lambda_bar).abs(),
        err_l2: l2,
        err_grad: acc.max(F::zero()).sqrt(),
        ggnorm_dev,
    }
}

/// Midpoint quadrature of
/// `int_U Xi_{ab}(x/eps) dalpha gbar^k dbeta gbar^k dx`.
pub fn commutator_integral<F: Scalar>(
    xi: &CommutatorField<F>,
    ctx: &HomogenizedContext<F>,
    eps: F,
    kidx: usize,
) -> F {
    let mesh = ctx.mesh.as_ref();
    let d = mesh.dim();
    let mut acc = F::zero();
    for e in 0..mesh.num_elements() {
        let vol = mesh.element_volume(e);
        let bar_grad = ctx.bar_grads[kidx][e];
        let bary = mesh.element_barycenter(e);
        let mut y = [F::zero(); 3];
        for a in 0..d {
            y[a] = bary[a] / eps;
        }
        let cell = xi.grid.cell_containing(&y[..d]);
        let mut contraction = F::zero();
        for alpha in 0..d {
            for beta in 0..d {
                contraction += xi.comp(alpha, beta)[cell] * bar_grad[alpha] * bar_grad[beta];
            }
        }
        acc += vol * contraction;
    }
    acc
}

/// Everything computed for one `(seed, eps)` draw.
pub fn run_realization<F: Scalar>(
    params: &RealizationParams<F>,
    ctx: &HomogenizedContext<F>,
    seed: u64,
    eps: F,
) -> Result<RealizationResult<F>> {
    let start = Instant::now();
    let gauss = sample_gaussian_field(seed, &params.kernel, &params.grid)?;
    let field = apply_coefficient_map(&gauss, &params.map)?;
    let mut solver = params.solver.clone();
    solver.init_seed = derive_seed(seed, "eig-init", 0);
    let cs = solve_correctors(&field, &solver)?;
    let cs = solve_flux_correctors(cs)?;
    let xi = commutator_field(&field, &cs, &ctx.abar)?;

    let ops = assemble_operator(&ctx.mesh, &field, eps)?;
    let k_pairs = params.k_pairs();
    let eig = smallest_eigenpairs(&ops, k_pairs, &solver)?;

    let mut lambda_eps = Vec::new();
    let mut lambda_bar = Vec::new();
    let mut err_lambda = Vec::new();
    let mut err_l2 = Vec::new();
    let mut err_grad = Vec::new();
    let mut commut = Vec::new();
    let mut gap_simple = Vec::new();
    let mut ggnorm_worst = F::zero();

    for &k in &params.k_set {
        let kidx = k - 1;
        let lam = eig.values[kidx];
        let lbar = ctx.bar.values[kidx];
        lambda_eps.push(lam);
        lambda_bar.push(lbar);
        // simplicity from the homogenized gap and the realization's own flag
        let rel_gap = ctx.bar.gaps[kidx] / lbar.abs().max(F::one());
        let simple =
            rel_gap >= params.simple_gap_min && !ctx.bar.degenerate[kidx] && !eig.degenerate[kidx];
        gap_simple.push(simple);
        if !simple {
            err_lambda.push(F::nan());
            err_l2.push(F::nan());
            err_grad.push(F::nan());
            commut.push(F::nan());
            continue;
        }
        let aligned = sign_align(&eig.vectors[kidx], &ctx.bar.vectors[kidx], &ops.mass)?;
        let g_full = expand_interior(ctx.mesh.as_ref(), &aligned);
        let triplet = two_scale_errors(ctx, &g_full, lam, kidx, &cs, eps);
        ggnorm_worst = ggnorm_worst.max(triplet.ggnorm_dev);
        err_lambda.push(triplet.err_lambda);
        err_l2.push(triplet.err_l2);
        err_grad.push(triplet.err_grad);
        commut.push(commutator_integral(&xi, ctx, eps, kidx));
    }

    // spectral bracket against the unit-Laplacian spectrum
    let mut bracket_margin = F::infinity();
    for (kidx, &lam) in eig.values.iter().enumerate() {
        let lap = ctx.laplace_values[kidx];
        let lower = lam - field.nu * lap;
        let upper = lap - lam;
        bracket_margin = bracket_margin.min(lower).min(upper);
    }
    let bracket_ok = bracket_margin >= F::cast(-1e-8);

    let sigma_residual = cs
        .residuals
        .sigma_divergence
        .iter()
        .fold(F::zero(), |m, &v| m.max(v));
    let eigen_residual = eig.residuals.iter().fold(F::zero(), |m, &v| m.max(v));
    let m_orthonormality = eig.max_orthonormality_defect(&ops.mass);

    Ok(RealizationResult {
        seed,
        eps,
        k_set: params.k_set.clone(),
        lambda_eps,
        lambda_bar,
        err_lambda,
        err_l2,
        err_grad,
        commutator_integral: commut,
        gap_simple,
        effective_sample: cs.effective_tensor,
        checks: RealizationChecks {
            ggnorm_dev: ggnorm_worst,
            bracket_margin,
            bracket_ok,
            sigma_residual,
            eigen_residual,
            m_orthonormality,
        },
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

/// Fitted channel of the rate table.
#[derive(Clone, Debug)]
pub struct RateChannel<F> {
    pub name: String,
    pub k: usize,
    pub means: Vec<F>,
    pub sems: Vec<F>,
    pub slope: F,
    pub intercept: F,
    pub r2: F,
    /// bootstrap 95% interval over seeds
    pub slope_ci: (F, F),
    pub mu_corrected: bool,
    pub valid: bool,
}

/// Ensemble means and log-log fits per error channel.
#[derive(Clone, Debug)]
pub struct RateTable<F> {
    pub eps: Vec<F>,
    pub channels: Vec<RateChannel<F>>,
}

impl<F: Scalar> RateTable<F> {
    pub fn channel(&self, name: &str, k: usize) -> Option<&RateChannel<F>> {
        self.channels.iter().find(|c| c.name == name && c.k == k)
    }
}

fn channel_values<F: Scalar>(r: &RealizationResult<F>, name: &str, pos: usize) -> F {
    match name {
        "err_lambda" => r.err_lambda[pos],
        "err_g_l2" => r.err_l2[pos],
        "err_grad_l2" => r.err_grad[pos],
        _ => unreachable!("unknown channel"),
    }
}

/// Build the rate table from realization rows grouped by eps (strictly
/// decreasing grid required).
pub fn build_rate_table<F: Scalar>(
    dim: usize,
    eps_grid: &[F],
    rows: &[RealizationResult<F>],
    k_set: &[usize],
    master_seed: u64,
) -> Result<RateTable<F>> {
    for w in eps_grid.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::validation("eps_grid", "must be strictly decreasing"));
        }
    }
    let channels_def: [(&str, Option<usize>); 3] = [
        ("err_lambda", Some(dim)),
        ("err_g_l2", None),
        ("err_grad_l2", None),
    ];
    let mut channels = Vec::new();
    for &k in k_set {
        let pos = k_set.iter().position(|&kk| kk == k).unwrap();
        for (name, mu) in channels_def {
            let mut means = Vec::new();
            let mut sems_v = Vec::new();
            let mut per_eps_samples: Vec<Vec<F>> = Vec::new();
            for &eps in eps_grid {
                let vals: Vec<F> = rows
                    .iter()
                    .filter(|r| r.eps == eps && r.gap_simple[pos])
                    .map(|r| channel_values(r, name, pos).abs())
                    .collect();
                means.push(mean(&vals));
                sems_v.push(sem(&vals));
                per_eps_samples.push(vals);
            }
            let table: Vec<(F, F)> = eps_grid.iter().copied().zip(means.iter().copied()).collect();
            // channels resting at the eigensolver floor carry no rate signal
            let floor = F::cast(1e-8);
            let all_positive = means.iter().all(|&m| m > floor);
            let (slope, intercept, r2, ci, valid) = if all_positive && eps_grid.len() >= 4 {
                match fit_rate(&table, mu) {
                    Ok((s, i, r)) => {
                        let ci = bootstrap_slope_ci(
                            eps_grid,
                            &per_eps_samples,
                            mu,
                            derive_seed(master_seed, "bootstrap", k as u64),
                        );
                        (s, i, r, ci, true)
                    }
                    Err(_) => (F::nan(), F::nan(), F::nan(), (F::nan(), F::nan()), false),
                }
            } else {
                (F::nan(), F::nan(), F::nan(), (F::nan(), F::nan()), false)
            };
            channels.push(RateChannel {
                name: name.to_string(),
                k,
                means,
                sems: sems_v,
                slope,
                intercept,
                r2,
                slope_ci: ci,
                mu_corrected: mu.is_some(),
                valid,
            });
        }
    }
    Ok(RateTable {
        eps: eps_grid.to_vec(),
        channels,
    })
}

fn bootstrap_slope_ci<F: Scalar>(
    eps_grid: &[F],
    per_eps: &[Vec<F>],
    mu: Option<usize>,
    seed: u64,
) -> (F, F) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let b = 200;
    let mut slopes = Vec::with_capacity(b);
    for _ in 0..b {
        let mut table = Vec::with_capacity(eps_grid.len());
        let mut ok = true;
        for (i, &eps) in eps_grid.iter().enumerate() {
            let vals = &per_eps[i];
            if vals.is_empty() {
                ok = false;
                break;
            }
            let mut acc = F::zero();
            for _ in 0..vals.len() {
                acc += vals[rng.gen_range(0..vals.len())];
            }
            let m = acc / F::cast(vals.len() as f64);
            if m <= F::zero() {
                ok = false;
                break;
            }
            table.push((eps, m));
        }
        if !ok {
            continue;
        }
        if let Ok((s, _, _)) = fit_rate(&table, mu) {
            slopes.push(s);
        }
    }
    if slopes.len() < 10 {
        return (F::nan(), F::nan());
    }
    slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = slopes[(slopes.len() as f64 * 0.025) as usize];
    let hi = slopes[((slopes.len() as f64 * 0.975) as usize).min(slopes.len() - 1)];
    (lo, hi)
}

/// Full sweep: realizations over the `(eps, seed)` grid in parallel, with
/// per-realization failures tolerated up to 10%.
pub fn epsilon_sweep<F: Scalar>(
    params: &RealizationParams<F>,
    ctx: &HomogenizedContext<F>,
    master_seed: u64,
    eps_grid: &[F],
    n_seeds: usize,
) -> Result<(Vec<RealizationResult<F>>, RateTable<F>)> {
    if eps_grid.is_empty() || n_seeds == 0 {
        return Err(Error::validation("sweep", "empty eps grid or zero seeds"));
    }
    let tasks: Vec<(usize, usize)> = (0..eps_grid.len())
        .flat_map(|e| (0..n_seeds).map(move |s| (e, s)))
        .collect();
    let outcomes: Vec<(usize, usize, Result<RealizationResult<F>>)> = tasks
        .par_iter()
        .map(|&(e, s)| {
            let seed = derive_seed(master_seed, "real", (e * n_seeds + s) as u64);
            let r = run_realization(params, ctx, seed, eps_grid[e]);
            (e, s, r)
        })
        .collect();
    let total = outcomes.len();
    let mut rows = Vec::new();
    let mut failures = 0usize;
    let mut keyed: Vec<((usize, usize), Result<RealizationResult<F>>)> = outcomes
        .into_iter()
        .map(|(e, s, r)| ((e, s), r))
        .collect();
    keyed.sort_by_key(|(k, _)| *k);
    for ((e, s), r) in keyed {
        match r {
            Ok(row) => rows.push(row),
            Err(err) => {
                failures += 1;
                log::warn!("realization (eps index {e}, seed index {s}) failed: {err}");
            }
        }
    }
    if failures * 10 > total {
        return Err(Error::TooManyFailures {
            failed: failures,
            total,
        });
    }
    let table = build_rate_table(
        ctx.mesh.dim(),
        eps_grid,
        &rows,
        &params.k_set,
        master_seed,
    )?;
    Ok((rows, table))
}
