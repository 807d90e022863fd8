//! Ensemble-level laws of the field and corrector modules: centered fields,
//! commutator mean, corrector sublinearity profiles in d = 2 and d = 3, and
//! the resolution-consistency guard on the effective tensor.

use homlab::corrector::{commutator_field, mean_effective_tensor, sublinearity_profile};
use homlab::experiment::RealizationParams;
use homlab::field::{
    apply_coefficient_map, sample_gaussian_field, CoefficientMapSpec, KernelFamily, KernelSpec,
    MapFamily,
};
use homlab::grid::TorusGrid;
use homlab::lab::corrector_ensemble;
use homlab::solver::SolverConfig;
use homlab::stats::{linear_fit, mean, sem};

fn params(
    d: usize,
    n: usize,
    period: f64,
    ell: f64,
    field_std: f64,
) -> RealizationParams<f64> {
    let grid = TorusGrid::new(d, n, period).unwrap();
    let mut kernel = KernelSpec {
        family: KernelFamily::TruncatedGaussian,
        ell,
        amplitude: 1.0,
        kappa: 1,
    };
    let unit = kernel.field_std(&grid);
    kernel.amplitude = field_std / unit;
    RealizationParams {
        grid,
        kernel,
        map: CoefficientMapSpec {
            family: MapFamily::ScalarLogistic { gain: 1.0 },
            nu: 0.25,
        },
        solver: SolverConfig::default(),
        k_set: vec![1],
        simple_gap_min: 1e-3,
    }
}

#[test]
fn gaussian_field_ensemble_mean_is_centered() {
    let p = params(2, 32, 4.0, 0.4, 1.0);
    let n_samples = 400;
    let mut means = Vec::with_capacity(n_samples);
    for s in 0..n_samples {
        let g = sample_gaussian_field(5000 + s as u64, &p.kernel, &p.grid).unwrap();
        means.push(g.field.comp_mean(0));
    }
    let m = mean(&means);
    let se = sem(&means);
    assert!(m.abs() <= 3.0 * se, "ensemble mean {m} vs se {se}");
}

#[test]
fn commutator_ensemble_mean_is_centered_2d() {
    // 200 samples; the canonical tensor comes from the same ensemble, so the
    // grand mean of the commutator must vanish within 3 standard errors
    let p = params(2, 64, 8.0, 0.6, 1.2);
    let sets = corrector_ensemble(&p, 77, "xi-mean", 200).unwrap();
    let abar = mean_effective_tensor(&sets);
    let mut means = Vec::with_capacity(sets.len());
    for (i, cs) in sets.iter().enumerate() {
        let g = sample_gaussian_field(
            homlab::io::derive_seed(77, "xi-mean", i as u64),
            &p.kernel,
            &p.grid,
        )
        .unwrap();
        let a = apply_coefficient_map(&g, &p.map).unwrap();
        let xi = commutator_field(&a, cs, &abar).unwrap();
        means.push(xi.spatial_mean(0, 0));
    }
    let m = mean(&means);
    let se = sem(&means);
    assert!(m.abs() <= 3.0 * se.max(1e-14), "mean {m}, se {se}");
}

#[test]
fn sublinearity_is_logarithmic_in_2d_and_flat_in_3d() {
    // d = 2: least-squares fit of stddev^2 against log(2+r) has positive slope
    let p2 = params(2, 128, 16.0, 0.5, 1.2);
    let sets2 = corrector_ensemble(&p2, 31, "sub2", 48).unwrap();
    let radii2 = [1.0, 2.0, 4.0, 7.5];
    let rows2 = sublinearity_profile(&sets2, &radii2).unwrap();
    let xs: Vec<f64> = radii2.iter().map(|&r| (2.0 + r).ln()).collect();
    let ys: Vec<f64> = rows2.iter().map(|r| r.stddev * r.stddev).collect();
    let (slope, _, _) = linear_fit(&xs, &ys).unwrap();
    assert!(slope > 0.0, "2d sublinearity slope {slope}, profile {ys:?}");

    // d = 3: profile is flat, stddev(r)/stddev(r_min) within [0.3, 3]
    let p3 = params(3, 32, 6.0, 0.5, 1.2);
    let sets3 = corrector_ensemble(&p3, 32, "sub3", 32).unwrap();
    let rows3 = sublinearity_profile(&sets3, &[1.0, 1.5, 2.0, 2.9]).unwrap();
    for row in &rows3 {
        assert!(
            row.relative >= 0.3 && row.relative <= 3.0,
            "3d profile not flat at r = {}: relative {}",
            row.radius,
            row.relative
        );
    }
}

#[test]
fn effective_tensor_is_stable_under_grid_refinement() {
    // the same physical configuration at n and 2n: ensemble means of the
    // effective tensor agree within 2%
    let n_samples = 12;
    let coarse = params(2, 128, 16.0, 0.8, 1.4);
    let fine = params(2, 256, 16.0, 0.8, 1.4);
    let cs_coarse = corrector_ensemble(&coarse, 4242, "res", n_samples).unwrap();
    let cs_fine = corrector_ensemble(&fine, 4242, "res-f", n_samples).unwrap();
    let a_c = mean_effective_tensor(&cs_coarse);
    let a_f = mean_effective_tensor(&cs_fine);
    for i in 0..2 {
        for j in 0..2 {
            let rel = (a_c.get(i, j) - a_f.get(i, j)).abs() / a_f.get(i, i).abs().max(0.1);
            assert!(rel < 0.02, "abar({i},{j}): {} vs {}", a_c.get(i, j), a_f.get(i, j));
        }
    }
}
