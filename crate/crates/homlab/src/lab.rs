//! High-level campaign orchestration shared by the CLI and the acceptance
//! suite: pilot estimation of the effective tensor, sweeps, ensembles,
//! Green-Kubo runs, sublinearity profiles, and report aggregation.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::corrector::{
    solve_correctors, sublinearity_profile, CorrectorSet, SublinearityRow,
};
use crate::dense::SymMat;
use crate::error::{Error, Result};
use crate::experiment::{
    build_rate_table, run_realization, HomogenizedContext, RateTable, RealizationParams,
    RealizationResult,
};
use crate::field::{apply_coefficient_map, sample_gaussian_field};
use crate::fluct::{
    joint_gaussian_check, pathwise_residual_stats, predicted_covariance, run_ensemble,
    variance_scaling_slope, EnsembleTable, GaussianFit, GkEstimate,
};
use crate::io::{derive_seed, write_plot_data, write_results, ResultRow};
use crate::mesh::BoxMesh;

/// Orchestrates a configured run; caches per-mesh homogenized contexts and
/// the pilot effective tensor.
pub struct Lab {
    pub cfg: RunConfig,
    pub params: RealizationParams<f64>,
    /// canonical effective tensor: mean over the pilot corrector ensemble
    pub abar: SymMat<f64>,
    /// per-entry standard error of the pilot mean
    pub abar_se: f64,
    contexts: BTreeMap<usize, Arc<HomogenizedContext<f64>>>,
}

/// Deterministic chunked-parallel corrector ensemble; returns per-sample
/// sets in index order.
pub fn corrector_ensemble(
    params: &RealizationParams<f64>,
    master_seed: u64,
    stream: &str,
    n: usize,
) -> Result<Vec<CorrectorSet<f64>>> {
    let mut out = Vec::with_capacity(n);
    let chunk = 16usize;
    let mut idx = 0usize;
    while idx < n {
        let hi = (idx + chunk).min(n);
        let mut sets: Vec<(usize, Result<CorrectorSet<f64>>)> = (idx..hi)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(master_seed, stream, i as u64);
                let cs = (|| {
                    let g = sample_gaussian_field(seed, &params.kernel, &params.grid)?;
                    let a = apply_coefficient_map(&g, &params.map)?;
                    solve_correctors(&a, &params.solver)
                })();
                (i, cs)
            })
            .collect();
        sets.sort_by_key(|(i, _)| *i);
        for (_, cs) in sets {
            out.push(cs?);
        }
        idx = hi;
    }
    Ok(out)
}

impl Lab {
    /// Build the lab: runs the pilot corrector ensemble that fixes the
    /// canonical effective tensor used by every homogenized solve.
    pub fn new(cfg: RunConfig) -> Result<Lab> {
        cfg.validate()?;
        let params = cfg.realization_params()?;
        let pilots = corrector_ensemble(
            &params,
            cfg.master_seed,
            "abar-pilot",
            cfg.abar_pilot_samples.max(2),
        )?;
        let abar = crate::corrector::mean_effective_tensor(&pilots);
        // largest per-entry standard error
        let d = cfg.d;
        let mut worst_se = 0.0f64;
        for i in 0..d {
            for j in 0..=i {
                let vals: Vec<f64> = pilots
                    .iter()
                    .map(|c| c.effective_tensor.get(i, j))
                    .collect();
                worst_se = worst_se.max(crate::stats::sem(&vals));
            }
        }
        Ok(Lab {
            cfg,
            params,
            abar,
            abar_se: worst_se,
            contexts: BTreeMap::new(),
        })
    }

    /// Homogenized context for the mesh resolution the rule assigns to `eps`.
    pub fn context(&mut self, eps: f64) -> Result<Arc<HomogenizedContext<f64>>> {
        let m = self.cfg.mesh_nodes(eps);
        if let Some(ctx) = self.contexts.get(&m) {
            return Ok(Arc::clone(ctx));
        }
        let mesh = Arc::new(BoxMesh::new(self.cfg.d, &self.cfg.box_sides, m)?);
        let ctx = Arc::new(HomogenizedContext::new(
            mesh,
            self.abar,
            self.params.k_pairs(),
            &self.params.solver,
        )?);
        self.contexts.insert(m, Arc::clone(&ctx));
        Ok(ctx)
    }

    pub fn run_single(&mut self, eps: f64, seed: u64) -> Result<RealizationResult<f64>> {
        let ctx = self.context(eps)?;
        run_realization(&self.params, &ctx, seed, eps)
    }

    /// Rate sweep: `sweep_seeds` realizations per eps on the stream
    /// `swp-e{i}`.
    pub fn run_sweep(&mut self) -> Result<(Vec<RealizationResult<f64>>, RateTable<f64>)> {
        let eps_grid = self.cfg.eps_grid.clone();
        let mut rows = Vec::new();
        for (i, &eps) in eps_grid.iter().enumerate() {
            let ctx = self.context(eps)?;
            let table = run_ensemble(
                &self.params,
                &ctx,
                self.cfg.master_seed,
                &format!("swp-e{i}"),
                eps,
                self.cfg.sweep_seeds.max(2),
            )?;
            rows.extend(table.rows);
        }
        let rate = build_rate_table(
            self.cfg.d,
            &eps_grid,
            &rows,
            &self.params.k_set,
            self.cfg.master_seed,
        )?;
        Ok((rows, rate))
    }

    /// Fluctuation ensembles, one per eps-grid entry, sized by
    /// `ensemble_n`.
    pub fn run_ensembles(&mut self) -> Result<Vec<EnsembleTable<f64>>> {
        let eps_grid = self.cfg.eps_grid.clone();
        let mut out = Vec::new();
        for (i, &eps) in eps_grid.iter().enumerate() {
            let ctx = self.context(eps)?;
            let n = self.cfg.ensemble_n[i];
            out.push(run_ensemble(
                &self.params,
                &ctx,
                self.cfg.master_seed,
                &format!("ens-e{i}"),
                eps,
                n,
            )?);
        }
        Ok(out)
    }

    /// One fluctuation ensemble at an explicit eps.
    pub fn run_one_ensemble(&mut self, eps: f64, n: usize) -> Result<EnsembleTable<f64>> {
        let ctx = self.context(eps)?;
        run_ensemble(
            &self.params,
            &ctx,
            self.cfg.master_seed,
            &format!("ens-x{}", (1.0 / eps).round() as i64),
            eps,
            n,
        )
    }

    /// Green-Kubo estimation on the configured commutator sample stream.
    pub fn run_green_kubo(&self) -> Result<Vec<GkEstimate<f64>>> {
        crate::fluct::commutator_ensemble_gk(
            &self.params,
            &self.abar,
            self.cfg.master_seed,
            "gk",
            self.cfg.gk_samples,
            &self.cfg.gk_chi_scales,
        )
    }

    /// Corrector sublinearity profile on its own sample stream.
    pub fn run_sublinearity(&self) -> Result<Vec<SublinearityRow<f64>>> {
        let sets = corrector_ensemble(
            &self.params,
            self.cfg.master_seed,
            "sublin",
            self.cfg.sublinearity_samples.max(30),
        )?;
        sublinearity_profile(&sets, &self.cfg.sublinearity_radii)
    }
}

/// Extrapolate the Green-Kubo limit from two cutoff scales along the
/// remark-rate envelope `|Q(L) - Q| ~ mu_d(L)/L`.
pub fn extrapolate_gk_tensor(coarse: &GkEstimate<f64>, fine: &GkEstimate<f64>) -> Result<Vec<f64>> {
    if coarse.tensor.len() != fine.tensor.len() {
        return Err(Error::SizeMismatch("gk tensor pair".into()));
    }
    let d = fine.dim;
    let e = |l: f64| -> f64 {
        let mu = crate::experiment::mu_d(d, l).unwrap_or(1.0);
        mu / l
    };
    let ec = e(coarse.chi_scale);
    let ef = e(fine.chi_scale);
    if ec <= ef {
        return Err(Error::validation("gk", "cutoff scales must increase"));
    }
    let w = ef / (ec - ef);
    Ok(fine
        .tensor
        .iter()
        .zip(&coarse.tensor)
        .map(|(&f, &c)| f + w * (f - c))
        .collect())
}

/// Aggregated report of a finished campaign.
#[derive(Debug, Serialize)]
pub struct Report {
    pub run_id: String,
    pub abar: Vec<Vec<f64>>,
    pub abar_se: f64,
    pub rate_channels: Vec<RateChannelReport>,
    pub variance_scaling: Vec<VarianceScalingReport>,
    pub pathwise: Vec<PathwiseReport>,
    pub green_kubo: Vec<GkReport>,
    pub gaussian_fit: Option<GaussianFitReport>,
    pub sublinearity: Vec<SublinearityReport>,
}

#[derive(Debug, Serialize)]
pub struct RateChannelReport {
    pub channel: String,
    pub k: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_ci_lo: f64,
    pub slope_ci_hi: f64,
    pub mu_corrected: bool,
    pub valid: bool,
    pub eps: Vec<f64>,
    pub means: Vec<f64>,
    pub sems: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct VarianceScalingReport {
    pub k: usize,
    pub slope: f64,
    pub r2: f64,
    pub eps: Vec<f64>,
    pub variances: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct PathwiseReport {
    pub k: usize,
    pub eps: f64,
    pub resid_std: f64,
    pub resid_se: f64,
    pub lead_std: f64,
    pub lead_se: f64,
    pub ratio: Option<f64>,
    pub ratio_se: f64,
}

#[derive(Debug, Serialize)]
pub struct GkReport {
    pub chi_scale: f64,
    pub tensor: Vec<f64>,
    pub tensor_se: Vec<f64>,
    pub frobenius: f64,
    pub decay_slope: f64,
    pub samples: usize,
}

#[derive(Debug, Serialize)]
pub struct GaussianFitReport {
    pub eps: f64,
    pub n: usize,
    pub marginal_k: Vec<usize>,
    pub skewness: Vec<f64>,
    pub excess_kurtosis: Vec<f64>,
    pub w2: Vec<f64>,
    /// scale-matched null: 95th percentile of the fitted-normal W2 under a
    /// Gaussian null of the same size, times the fitted marginal deviation
    pub w2_null_95: Vec<f64>,
    pub empirical_cov: Vec<f64>,
    pub predicted_cov: Vec<f64>,
    pub gaussian_w2: f64,
    pub cov_rel_frobenius_gap: f64,
}

#[derive(Debug, Serialize)]
pub struct SublinearityReport {
    pub radius: f64,
    pub stddev: f64,
    pub relative: f64,
}

pub fn rate_channel_reports(table: &RateTable<f64>) -> Vec<RateChannelReport> {
    table
        .channels
        .iter()
        .map(|c| RateChannelReport {
            channel: c.name.clone(),
            k: c.k,
            slope: c.slope,
            intercept: c.intercept,
            r2: c.r2,
            slope_ci_lo: c.slope_ci.0,
            slope_ci_hi: c.slope_ci.1,
            mu_corrected: c.mu_corrected,
            valid: c.valid,
            eps: table.eps.clone(),
            means: c.means.clone(),
            sems: c.sems.clone(),
        })
        .collect()
}

pub fn variance_scaling_reports(
    tables: &[EnsembleTable<f64>],
    k_set: &[usize],
) -> Result<Vec<VarianceScalingReport>> {
    let mut out = Vec::new();
    for (pos, &k) in k_set.iter().enumerate() {
        let (slope, r2) = variance_scaling_slope(tables, pos)?;
        out.push(VarianceScalingReport {
            k,
            slope,
            r2,
            eps: tables.iter().map(|t| t.eps).collect(),
            variances: tables
                .iter()
                .map(|t| crate::stats::variance(&t.lambda_column(pos)))
                .collect(),
        });
    }
    Ok(out)
}

pub fn pathwise_reports(tables: &[EnsembleTable<f64>]) -> Vec<PathwiseReport> {
    let mut out = Vec::new();
    for t in tables {
        for s in pathwise_residual_stats(t) {
            out.push(PathwiseReport {
                k: s.k,
                eps: t.eps,
                resid_std: s.resid_std,
                resid_se: s.resid_se,
                lead_std: s.lead_std,
                lead_se: s.lead_se,
                ratio: s.ratio,
                ratio_se: s.ratio_se,
            });
        }
    }
    out
}

pub fn gk_reports(gks: &[GkEstimate<f64>]) -> Vec<GkReport> {
    gks.iter()
        .map(|g| GkReport {
            chi_scale: g.chi_scale,
            tensor: g.tensor.clone(),
            tensor_se: g.tensor_se.clone(),
            frobenius: g.frobenius(),
            decay_slope: g.decay_slope,
            samples: g.samples,
        })
        .collect()
}

/// Joint Gaussian diagnostics of the finest ensemble against the
/// extrapolated Green-Kubo prediction.
pub fn gaussian_fit_report(
    lab: &mut Lab,
    finest: &EnsembleTable<f64>,
    gks: &[GkEstimate<f64>],
) -> Result<(GaussianFitReport, GaussianFit<f64>)> {
    let tensor = if gks.len() >= 2 {
        extrapolate_gk_tensor(&gks[0], &gks[gks.len() - 1])?
    } else {
        gks[0].tensor.clone()
    };
    let ctx = lab.context(finest.eps)?;
    let predicted = predicted_covariance(&tensor, &ctx, &finest.k_set)?;
    let fit = joint_gaussian_check(finest, &predicted)?;
    let nk = finest.k_set.len();
    let mut gap_num = 0.0;
    let mut gap_den = 0.0;
    for idx in 0..nk * nk {
        gap_num += (fit.empirical_cov[idx] - fit.predicted_cov[idx]).powi(2);
        gap_den += fit.empirical_cov[idx].powi(2);
    }
    let cov_gap = (gap_num / gap_den.max(1e-300)).sqrt();
    let unit_null = crate::fluct::w2_gaussian_null_quantile::<f64>(
        finest.n(),
        400,
        0.95,
        derive_seed(lab.cfg.master_seed, "w2-null", 0),
    );
    let w2_null: Vec<f64> = (0..nk)
        .map(|i| unit_null * fit.empirical_cov[i * nk + i].max(0.0).sqrt())
        .collect();
    let report = GaussianFitReport {
        eps: finest.eps,
        n: finest.n(),
        marginal_k: finest.k_set.clone(),
        skewness: fit.marginals.iter().map(|m| m.skewness).collect(),
        excess_kurtosis: fit.marginals.iter().map(|m| m.excess_kurtosis).collect(),
        w2: fit.marginals.iter().map(|m| m.w2).collect(),
        w2_null_95: w2_null,
        empirical_cov: fit.empirical_cov.clone(),
        predicted_cov: fit.predicted_cov.clone(),
        gaussian_w2: fit.gaussian_w2,
        cov_rel_frobenius_gap: cov_gap,
    };
    Ok((report, fit))
}

/// Run the whole campaign and write `results.csv`, `report.json` and the
/// per-figure plot CSVs into `out_dir`.
pub fn run_report(cfg: RunConfig, out_dir: &Path) -> Result<Report> {
    std::fs::create_dir_all(out_dir)?;
    let run_id = format!("run-{:016x}", cfg.master_seed);
    let mut lab = Lab::new(cfg.clone())?;
    std::fs::write(out_dir.join("config.json"), cfg.to_canonical_json())?;

    // fluctuation ensembles double as the rate-sweep sample source: the
    // first `sweep_seeds` rows of each carry the channels
    let ensembles = lab.run_ensembles()?;
    let mut sweep_rows: Vec<RealizationResult<f64>> = Vec::new();
    for t in &ensembles {
        sweep_rows.extend(t.rows.iter().take(cfg.sweep_seeds).cloned());
    }
    let rate = build_rate_table(
        cfg.d,
        &cfg.eps_grid,
        &sweep_rows,
        &lab.params.k_set,
        cfg.master_seed,
    )?;

    let mut csv_rows = Vec::new();
    for t in &ensembles {
        for r in &t.rows {
            csv_rows.extend(ResultRow::from_realization(&run_id, r));
        }
    }
    write_results(&csv_rows, &out_dir.join("results.csv"))?;

    let gks = lab.run_green_kubo()?;
    let finest = ensembles.last().expect("nonempty eps grid");
    let (gauss_report, _) = gaussian_fit_report(&mut lab, finest, &gks)?;
    let sub = lab.run_sublinearity()?;

    let report = Report {
        run_id,
        abar: (0..cfg.d)
            .map(|i| (0..cfg.d).map(|j| lab.abar.get(i, j)).collect())
            .collect(),
        abar_se: lab.abar_se,
        rate_channels: rate_channel_reports(&rate),
        variance_scaling: variance_scaling_reports(&ensembles, &lab.params.k_set)?,
        pathwise: pathwise_reports(&ensembles),
        green_kubo: gk_reports(&gks),
        gaussian_fit: Some(gauss_report),
        sublinearity: sub
            .iter()
            .map(|r| SublinearityReport {
                radius: r.radius,
                stddev: r.stddev,
                relative: r.relative,
            })
            .collect(),
    };
    write_report_files(&report, out_dir)?;
    Ok(report)
}

/// Serialize the report JSON and emit one plot-data CSV per figure.
pub fn write_report_files(report: &Report, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(out_dir.join("report.json"), json + "\n")?;
    for ch in &report.rate_channels {
        let rows: Vec<(f64, f64, f64)> = ch
            .eps
            .iter()
            .zip(ch.means.iter().zip(&ch.sems))
            .map(|(&e, (&m, &s))| (e, m, s))
            .collect();
        write_plot_data(
            &out_dir.join(format!("fig_rate_{}_k{}.csv", ch.channel, ch.k)),
            "eps,mean_error,sem",
            &rows,
        )?;
    }
    for vs in &report.variance_scaling {
        let rows: Vec<(f64, f64, f64)> = vs
            .eps
            .iter()
            .zip(&vs.variances)
            .map(|(&e, &v)| (e, v, 0.0))
            .collect();
        write_plot_data(
            &out_dir.join(format!("fig_var_lambda_k{}.csv", vs.k)),
            "eps,variance,unused",
            &rows,
        )?;
    }
    if let Some(g) = &report.gaussian_fit {
        let rows: Vec<(f64, f64, f64)> = g
            .marginal_k
            .iter()
            .enumerate()
            .map(|(i, &k)| (k as f64, g.w2[i], g.w2_null_95[i]))
            .collect();
        write_plot_data(
            &out_dir.join("fig_w2_marginals.csv"),
            "k,w2,null95",
            &rows,
        )?;
    }
    for gk in &report.green_kubo {
        let rows: Vec<(f64, f64, f64)> = vec![(gk.chi_scale, gk.frobenius, 0.0)];
        write_plot_data(
            &out_dir.join(format!("fig_gk_chi{}.csv", gk.chi_scale as i64)),
            "chi_scale,frobenius,unused",
            &rows,
        )?;
    }
    let rows: Vec<(f64, f64, f64)> = report
        .sublinearity
        .iter()
        .map(|r| (r.radius, r.stddev, 0.0))
        .collect();
    write_plot_data(&out_dir.join("fig_sublinearity.csv"), "r,stddev,unused", &rows)?;
    Ok(())
}
