//! Run configuration: JSON with strict schema, documented defaults per
//! dimension, and builders for the typed parameter bundles used by the
//! experiment pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::RealizationParams;
use crate::field::{CoefficientMapSpec, KernelFamily, KernelSpec, MapFamily};
use crate::grid::TorusGrid;
use crate::mesh::BoxMesh;
use crate::solver::SolverConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub ell: f64,
    /// raw kernel amplitude; when absent the amplitude is calibrated on the
    /// torus grid so each field component has standard deviation `field_std`
    pub amplitude: Option<f64>,
    pub field_std: Option<f64>,
    pub kappa: usize,
}

/// Fully resolved run configuration. Parsing fills documented defaults for
/// missing optional keys and rejects unknown keys; `d` and `master_seed`
/// are required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub d: usize,
    pub master_seed: u64,
    pub box_sides: Vec<f64>,
    /// mesh rule: nodes per axis = max(mesh_nodes_min, ceil(mesh_per_eps/eps) + 1)
    pub mesh_nodes_min: usize,
    pub mesh_per_eps: f64,
    pub eps_grid: Vec<f64>,
    pub sweep_seeds: usize,
    /// ensemble size per eps-grid entry
    pub ensemble_n: Vec<usize>,
    pub torus_cells: usize,
    pub torus_period: f64,
    pub kernel: KernelConfig,
    pub map: CoefficientMapSpec<f64>,
    pub solver: SolverConfig<f64>,
    pub eigen_ks: Vec<usize>,
    pub simple_gap_min: f64,
    pub abar_pilot_samples: usize,
    pub gk_samples: usize,
    pub gk_chi_scales: Vec<f64>,
    pub sublinearity_samples: usize,
    pub sublinearity_radii: Vec<f64>,
    pub out_dir: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    d: usize,
    master_seed: u64,
    box_sides: Option<Vec<f64>>,
    mesh_nodes_min: Option<usize>,
    mesh_per_eps: Option<f64>,
    eps_grid: Option<Vec<f64>>,
    sweep_seeds: Option<usize>,
    ensemble_n: Option<Vec<usize>>,
    torus_cells: Option<usize>,
    torus_period: Option<f64>,
    kernel: Option<KernelConfig>,
    map: Option<CoefficientMapSpec<f64>>,
    solver: Option<SolverConfig<f64>>,
    eigen_ks: Option<Vec<usize>>,
    simple_gap_min: Option<f64>,
    abar_pilot_samples: Option<usize>,
    gk_samples: Option<usize>,
    gk_chi_scales: Option<Vec<f64>>,
    sublinearity_samples: Option<usize>,
    sublinearity_radii: Option<Vec<f64>>,
    out_dir: Option<String>,
}

impl RunConfig {
    /// Documented defaults for each dimension.
    pub fn default_for_dim(d: usize, master_seed: u64) -> Result<RunConfig> {
        if !(1..=3).contains(&d) {
            return Err(Error::DimOutOfRange(d));
        }
        let (box_sides, mesh_nodes_min, torus_cells, torus_period, ell, radii, chi) = match d {
            1 => (
                vec![1.0],
                513,
                1024,
                64.0,
                0.5,
                vec![1.0, 2.0, 4.0, 8.0, 16.0],
                vec![8.0, 16.0],
            ),
            2 => (
                vec![1.0, 1.37],
                257,
                256,
                48.0,
                0.8,
                vec![1.0, 2.0, 4.0, 8.0, 12.0],
                vec![6.0, 12.0],
            ),
            _ => (
                vec![1.0, 1.19, 1.37],
                17,
                32,
                6.0,
                0.5,
                vec![0.75, 1.0, 1.5, 2.0],
                vec![1.0, 1.5],
            ),
        };
        Ok(RunConfig {
            d,
            master_seed,
            box_sides,
            mesh_nodes_min,
            mesh_per_eps: 8.0,
            eps_grid: vec![1.0 / 8.0, 1.0 / 12.0, 1.0 / 16.0, 1.0 / 24.0, 1.0 / 32.0],
            sweep_seeds: 64,
            ensemble_n: vec![256, 256, 256, 256, 512],
            torus_cells,
            torus_period,
            kernel: KernelConfig {
                family: KernelFamily::TruncatedGaussian,
                ell,
                amplitude: None,
                field_std: Some(1.2),
                kappa: 1,
            },
            map: CoefficientMapSpec {
                family: MapFamily::ScalarLogistic { gain: 1.0 },
                nu: 0.25,
            },
            solver: SolverConfig::default(),
            eigen_ks: vec![1, 2],
            simple_gap_min: 1e-3,
            abar_pilot_samples: 128,
            gk_samples: 256,
            gk_chi_scales: chi,
            sublinearity_samples: 48,
            sublinearity_radii: radii,
            out_dir: None,
        })
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| {
            Error::validation("config", format!("schema violation: {e}"))
        })?;
        if !(1..=3).contains(&raw.d) {
            return Err(Error::validation("d", format!("d out of range: {}", raw.d)));
        }
        let mut cfg = RunConfig::default_for_dim(raw.d, raw.master_seed)?;
        let ensemble_given = raw.ensemble_n.is_some();
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = raw.$field {
                    cfg.$field = v;
                }
            };
        }
        take!(box_sides);
        take!(mesh_nodes_min);
        take!(mesh_per_eps);
        take!(eps_grid);
        take!(sweep_seeds);
        take!(ensemble_n);
        take!(torus_cells);
        take!(torus_period);
        take!(kernel);
        take!(map);
        take!(solver);
        take!(eigen_ks);
        take!(simple_gap_min);
        take!(abar_pilot_samples);
        take!(gk_samples);
        take!(gk_chi_scales);
        take!(sublinearity_samples);
        take!(sublinearity_radii);
        if raw.out_dir.is_some() {
            cfg.out_dir = raw.out_dir;
        }
        // ensemble sizes default to matching the eps grid length
        if cfg.ensemble_n.len() != cfg.eps_grid.len() {
            if !ensemble_given {
                let last = *cfg.ensemble_n.last().unwrap_or(&256);
                let base = *cfg.ensemble_n.first().unwrap_or(&256);
                cfg.ensemble_n = (0..cfg.eps_grid.len())
                    .map(|i| if i + 1 == cfg.eps_grid.len() { last } else { base })
                    .collect();
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.d) {
            return Err(Error::validation("d", format!("d out of range: {}", self.d)));
        }
        if self.box_sides.len() != self.d {
            return Err(Error::validation(
                "box_sides",
                format!("expected {} entries, got {}", self.d, self.box_sides.len()),
            ));
        }
        for (i, &s) in self.box_sides.iter().enumerate() {
            if s <= 0.0 {
                return Err(Error::validation(format!("box_sides[{i}]"), "must be positive"));
            }
        }
        if self.eps_grid.is_empty() {
            return Err(Error::validation("eps_grid", "must be nonempty"));
        }
        for (i, &e) in self.eps_grid.iter().enumerate() {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::validation(
                    format!("eps_grid[{i}]"),
                    "must lie in (0, 1]",
                ));
            }
        }
        for (i, w) in self.eps_grid.windows(2).enumerate() {
            if w[1] >= w[0] {
                return Err(Error::validation(
                    format!("eps_grid[{}]", i + 1),
                    "grid must be strictly decreasing",
                ));
            }
        }
        if self.ensemble_n.len() != self.eps_grid.len() {
            return Err(Error::validation(
                "ensemble_n",
                "must have one entry per eps grid point",
            ));
        }
        if self.ensemble_n.iter().any(|&n| n < 1) {
            return Err(Error::validation("ensemble_n", "entries must be >= 1"));
        }
        if self.sweep_seeds == 0 {
            return Err(Error::validation("sweep_seeds", "must be >= 1"));
        }
        if self.kernel.ell <= 0.0 {
            return Err(Error::validation("kernel.ell", "must be positive"));
        }
        if self.kernel.kappa == 0 {
            return Err(Error::validation("kernel.kappa", "must be >= 1"));
        }
        if let Some(s) = self.kernel.field_std {
            if s < 0.0 {
                return Err(Error::validation("kernel.field_std", "must be nonnegative"));
            }
        }
        if !(self.map.nu > 0.0 && self.map.nu < 1.0) {
            return Err(Error::validation("map.nu", "must lie in (0,1)"));
        }
        if self.eigen_ks.is_empty() || self.eigen_ks.iter().any(|&k| k == 0) {
            return Err(Error::validation("eigen_ks", "1-based indices, nonempty"));
        }
        if self.torus_cells < 4 || !self.torus_cells.is_power_of_two() {
            return Err(Error::validation(
                "torus_cells",
                "must be a power of two >= 4",
            ));
        }
        if self.torus_period <= 0.0 {
            return Err(Error::validation("torus_period", "must be positive"));
        }
        if self.torus_period <= 8.0 * self.kernel.ell {
            return Err(Error::validation(
                "torus_period",
                "must exceed 8 x correlation length",
            ));
        }
        self.solver
            .validate()
            .map_err(|e| Error::validation("solver", e.to_string()))?;
        for (i, &r) in self.sublinearity_radii.iter().enumerate() {
            if r <= 0.0 || r > self.torus_period / 2.0 {
                return Err(Error::validation(
                    format!("sublinearity_radii[{i}]"),
                    "must lie in (0, period/2]",
                ));
            }
        }
        for (i, &l) in self.gk_chi_scales.iter().enumerate() {
            if l <= 0.0 || 4.0 * l > self.torus_period {
                return Err(Error::validation(
                    format!("gk_chi_scales[{i}]"),
                    "torus period must be at least 4 x cutoff",
                ));
            }
        }
        Ok(())
    }

    pub fn torus_grid(&self) -> Result<TorusGrid<f64>> {
        TorusGrid::new(self.d, self.torus_cells, self.torus_period)
    }

    /// Kernel spec with the amplitude resolved (calibrated to `field_std`
    /// when no raw amplitude is given).
    pub fn kernel_spec(&self, grid: &TorusGrid<f64>) -> Result<KernelSpec<f64>> {
        let mut spec = KernelSpec {
            family: self.kernel.family,
            ell: self.kernel.ell,
            amplitude: 1.0,
            kappa: self.kernel.kappa,
        };
        spec.validate()?;
        if let Some(a) = self.kernel.amplitude {
            spec.amplitude = a;
        } else {
            let target = self.kernel.field_std.unwrap_or(1.0);
            let unit_std = spec.field_std(grid);
            if unit_std <= 0.0 {
                return Err(Error::validation(
                    "kernel",
                    "cannot calibrate amplitude: unit kernel has zero mass",
                ));
            }
            spec.amplitude = target / unit_std;
        }
        Ok(spec)
    }

    /// Mesh resolution rule: `max(mesh_nodes_min, ceil(mesh_per_eps / eps) + 1)`.
    pub fn mesh_nodes(&self, eps: f64) -> usize {
        let by_eps = (self.mesh_per_eps / eps).ceil() as usize + 1;
        self.mesh_nodes_min.max(by_eps)
    }

    pub fn box_mesh(&self, eps: f64) -> Result<BoxMesh<f64>> {
        BoxMesh::new(self.d, &self.box_sides, self.mesh_nodes(eps))
    }

    pub fn realization_params(&self) -> Result<RealizationParams<f64>> {
        let grid = self.torus_grid()?;
        let kernel = self.kernel_spec(&grid)?;
        Ok(RealizationParams {
            grid,
            kernel,
            map: self.map.clone(),
            solver: self.solver.clone(),
            k_set: self.eigen_ks.clone(),
            simple_gap_min: self.simple_gap_min,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults_and_roundtrips() {
        let cfg = RunConfig::parse(r#"{"d":2,"master_seed":7}"#).unwrap();
        assert_eq!(cfg.d, 2);
        assert_eq!(cfg.master_seed, 7);
        assert_eq!(cfg.box_sides, vec![1.0, 1.37]);
        assert_eq!(cfg.mesh_nodes_min, 257);
        assert_eq!(cfg.eps_grid.len(), 5);
        let canon = cfg.to_canonical_json();
        let cfg2 = RunConfig::parse(&canon).unwrap();
        assert_eq!(cfg, cfg2);
        let canon2 = cfg2.to_canonical_json();
        assert_eq!(canon, canon2);
    }

    #[test]
    fn rejects_bad_dimension_and_unknown_keys() {
        let err = RunConfig::parse(r#"{"d":4,"master_seed":1}"#).unwrap_err();
        assert!(err.to_string().contains("d out of range"), "{err}");
        let err = RunConfig::parse(r#"{"d":2,"master_seed":1,"bogus":3}"#).unwrap_err();
        assert!(err.to_string().contains("schema violation"), "{err}");
        let err =
            RunConfig::parse(r#"{"d":2,"master_seed":1,"eps_grid":[0.5,-0.1,0.05,0.02]}"#)
                .unwrap_err();
        assert!(err.to_string().contains("eps_grid[1]"), "{err}");
    }

    #[test]
    fn mesh_rule_and_kernel_calibration() {
        let cfg = RunConfig::parse(r#"{"d":2,"master_seed":7}"#).unwrap();
        assert_eq!(cfg.mesh_nodes(1.0 / 32.0), 257);
        assert_eq!(cfg.mesh_nodes(1.0 / 64.0), 513);
        let grid = cfg.torus_grid().unwrap();
        let spec = cfg.kernel_spec(&grid).unwrap();
        let achieved = spec.field_std(&grid) * spec.amplitude;
        assert!((achieved - 1.2).abs() < 1e-12, "std = {achieved}");
    }

    #[test]
    fn validation_paths_are_named() {
        let bad = r#"{"d":2,"master_seed":1,"box_sides":[1.0]}"#;
        let err = RunConfig::parse(bad).unwrap_err();
        assert!(err.to_string().contains("box_sides"));
        let bad = r#"{"d":2,"master_seed":1,"torus_cells":100}"#;
        let err = RunConfig::parse(bad).unwrap_err();
        assert!(err.to_string().contains("torus_cells"));
    }
}
