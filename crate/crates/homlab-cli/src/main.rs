//! Command-line front end: deterministic sampling, corrector solves,
//! eigen experiments, sweeps, fluctuation ensembles, Green-Kubo estimation
//! and report aggregation. Exit codes: 0 success, 2 validation error,
//! 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use homlab::config::RunConfig;
use homlab::corrector::{commutator_field, solve_correctors, solve_flux_correctors};
use homlab::error::{Error, Result};
use homlab::field::{apply_coefficient_map, sample_gaussian_field};
use homlab::grid::TorusField;
use homlab::io::{derive_seed, save_field, write_results, ResultRow};
use homlab::lab::{
    gk_reports, pathwise_reports, rate_channel_reports, run_report, variance_scaling_reports, Lab,
};

#[derive(Parser)]
#[command(
    name = "homlab",
    version,
    about = "numerical laboratory for elliptic eigenvalue problems with random coefficients"
)]
struct Cli {
    /// JSON run configuration; defaults are used when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// master seed override
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// worker threads (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one Gaussian field and its coefficient field
    SampleField,
    /// Solve the periodized corrector problems for one realization
    Corrector,
    /// One heterogeneous-vs-homogenized eigen realization at a given eps
    Eigen {
        #[arg(long)]
        eps: f64,
    },
    /// Rate sweep over the configured eps grid
    Sweep,
    /// Fluctuation ensembles over the configured eps grid
    Ensemble,
    /// Green-Kubo tensor estimation from commutator samples
    GreenKubo,
    /// Full campaign: ensembles, rates, Green-Kubo, Gaussian fit, figures
    Report,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default_for_dim(2, 0)?,
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::Json)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn cmd_sample_field(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let grid = cfg.torus_grid()?;
    let kernel = cfg.kernel_spec(&grid)?;
    let seed = derive_seed(cfg.master_seed, "field", 0);
    let gauss = sample_gaussian_field(seed, &kernel, &grid)?;
    save_field(&out.join("field.shom"), &gauss.field)?;
    let coef = apply_coefficient_map(&gauss, &cfg.map)?;
    let comps = homlab::field::CoefficientField::<f64>::packed_comps(cfg.d);
    let mut packed = TorusField::zeros(grid.clone(), comps);
    for cell in 0..grid.num_cells() {
        let m = coef.cell_matrix(cell);
        let mut k = 0;
        for i in 0..cfg.d {
            for j in 0..=i {
                packed.comp_mut(k)[cell] = m.get(i, j);
                k += 1;
            }
        }
    }
    save_field(&out.join("coefficient.shom"), &packed)?;
    write_json(
        &out.join("field_meta.json"),
        &serde_json::json!({
            "seed": seed,
            "kernel": kernel,
            "map": cfg.map,
            "clamped_cells": coef.clamp_count,
        }),
    )?;
    println!("wrote field.shom and coefficient.shom (seed {seed})");
    Ok(())
}

fn cmd_corrector(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let params = cfg.realization_params()?;
    let seed = derive_seed(cfg.master_seed, "field", 0);
    let gauss = sample_gaussian_field(seed, &params.kernel, &params.grid)?;
    let coef = apply_coefficient_map(&gauss, &cfg.map)?;
    let cs = solve_correctors(&coef, &params.solver)?;
    let cs = solve_flux_correctors(cs)?;
    let xi = commutator_field(&coef, &cs, &cs.effective_tensor)?;
    let grid = cs.grid.clone();
    let d = cs.dim;
    let mut phi = TorusField::zeros(grid.clone(), d);
    for (a, p) in cs.potentials.iter().enumerate() {
        phi.comp_mut(a).copy_from_slice(p);
    }
    save_field(&out.join("phi.shom"), &phi)?;
    let mut grad = TorusField::zeros(grid.clone(), d * d);
    let mut flux = TorusField::zeros(grid.clone(), d * d);
    for a in 0..d {
        for c in 0..d {
            grad.comp_mut(a * d + c)
                .copy_from_slice(cs.gradients[a].comp(c));
            flux.comp_mut(a * d + c)
                .copy_from_slice(cs.fluxes[a].comp(c));
        }
    }
    save_field(&out.join("gradients.shom"), &grad)?;
    save_field(&out.join("flux.shom"), &flux)?;
    if let Some(sigma) = &cs.sigma {
        let pairs = sigma[0].comps();
        if pairs > 0 {
            let mut sf = TorusField::zeros(grid.clone(), d * pairs);
            for a in 0..d {
                for p in 0..pairs {
                    sf.comp_mut(a * pairs + p).copy_from_slice(sigma[a].comp(p));
                }
            }
            save_field(&out.join("sigma.shom"), &sf)?;
        }
    }
    save_field(&out.join("commutator.shom"), &xi.data)?;
    let abar: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| cs.effective_tensor.get(i, j)).collect())
        .collect();
    write_json(
        &out.join("corrector.json"),
        &serde_json::json!({
            "seed": seed,
            "effective_tensor": abar,
            "effective_asymmetry": cs.effective_asymmetry(),
            "cell_residuals": cs.residuals.cell_problem,
            "sigma_divergence_residuals": cs.residuals.sigma_divergence,
            "gradient_mean_defect": cs.gradient_mean_defect(),
        }),
    )?;
    println!(
        "corrector set written; abar(0,0) = {:.6}, worst sigma residual = {:.2e}",
        cs.effective_tensor.get(0, 0),
        cs.residuals
            .sigma_divergence
            .iter()
            .fold(0.0f64, |m, &v| m.max(v))
    );
    Ok(())
}

fn cmd_eigen(cfg: &RunConfig, out: &Path, eps: f64) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let run_id = format!("run-{:016x}", cfg.master_seed);
    let mut lab = Lab::new(cfg.clone())?;
    let seed = derive_seed(cfg.master_seed, "real", 0);
    let row = lab.run_single(eps, seed)?;
    let rows = ResultRow::from_realization(&run_id, &row);
    write_results(&rows, &out.join("results.csv"))?;
    for r in &rows {
        println!(
            "k={} lambda_eps={:.9} lambda_bar={:.9} err={:.3e} commutator={:.3e}",
            r.k, r.lambda_eps, r.lambda_bar, r.err_lambda, r.commutator_integral
        );
    }
    println!(
        "checks: ggnorm={:.2e} bracket_ok={} sigma={:.2e}",
        row.checks.ggnorm_dev, row.checks.bracket_ok, row.checks.sigma_residual
    );
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let run_id = format!("run-{:016x}", cfg.master_seed);
    let mut lab = Lab::new(cfg.clone())?;
    let (rows, rate) = lab.run_sweep()?;
    let mut csv = Vec::new();
    for r in &rows {
        csv.extend(ResultRow::from_realization(&run_id, r));
    }
    write_results(&csv, &out.join("results.csv"))?;
    write_json(&out.join("rate_table.json"), &rate_channel_reports(&rate))?;
    for ch in &rate.channels {
        if ch.valid {
            println!(
                "channel {} (k={}): slope {:.3} [{:.3}, {:.3}] r2 {:.3}{}",
                ch.name,
                ch.k,
                ch.slope,
                ch.slope_ci.0,
                ch.slope_ci.1,
                ch.r2,
                if ch.mu_corrected { " (mu-corrected)" } else { "" }
            );
        } else {
            println!(
                "channel {} (k={}): no valid fit (values at floor)",
                ch.name, ch.k
            );
        }
    }
    Ok(())
}

fn cmd_ensemble(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let run_id = format!("run-{:016x}", cfg.master_seed);
    let mut lab = Lab::new(cfg.clone())?;
    let tables = lab.run_ensembles()?;
    for (i, t) in tables.iter().enumerate() {
        let mut csv = Vec::new();
        for r in &t.rows {
            csv.extend(ResultRow::from_realization(&run_id, r));
        }
        write_results(&csv, &out.join(format!("ensemble_e{i}.csv")))?;
    }
    write_json(
        &out.join("fluct_stats.json"),
        &serde_json::json!({
            "variance_scaling": variance_scaling_reports(&tables, &lab.params.k_set)?,
            "pathwise": pathwise_reports(&tables),
        }),
    )?;
    for t in &tables {
        println!(
            "eps = {:.5}: N = {} (failures {}), Var(lambda_1) = {:.4e}",
            t.eps,
            t.n(),
            t.failures,
            homlab::stats::variance(&t.lambda_column(0))
        );
    }
    Ok(())
}

fn cmd_green_kubo(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let lab = Lab::new(cfg.clone())?;
    let gks = lab.run_green_kubo()?;
    write_json(&out.join("gk.json"), &gk_reports(&gks))?;
    for g in &gks {
        println!(
            "chi scale {:.2}: |Q|_F = {:.4e}, decay slope = {:.2}, samples = {}",
            g.chi_scale,
            g.frobenius(),
            g.decay_slope,
            g.samples
        );
    }
    Ok(())
}

fn cmd_report(cfg: &RunConfig, out: &Path) -> Result<()> {
    let report = run_report(cfg.clone(), out)?;
    println!("report written to {}", out.display());
    for ch in &report.rate_channels {
        if ch.valid {
            println!(
                "  rate {} k={}: slope {:.3} r2 {:.3}",
                ch.channel, ch.k, ch.slope, ch.r2
            );
        }
    }
    for vs in &report.variance_scaling {
        println!("  Var(lambda_{}) slope: {:.3}", vs.k, vs.slope);
    }
    if let Some(g) = &report.gaussian_fit {
        println!(
            "  CLT at eps={:.4}: skew {:?}, kurt {:?}, cov gap {:.3}",
            g.eps, g.skewness, g.excess_kurtosis, g.cov_rel_frobenius_gap
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(&cli)?;
    let out = cli.out.clone();
    match cli.command {
        Command::SampleField => cmd_sample_field(&cfg, &out),
        Command::Corrector => cmd_corrector(&cfg, &out),
        Command::Eigen { eps } => cmd_eigen(&cfg, &out, eps),
        Command::Sweep => cmd_sweep(&cfg, &out),
        Command::Ensemble => cmd_ensemble(&cfg, &out),
        Command::GreenKubo => cmd_green_kubo(&cfg, &out),
        Command::Report => cmd_report(&cfg, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
