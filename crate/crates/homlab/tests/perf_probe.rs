//! Manual timing probe for the default-sized realization pipeline.
//! Run with `cargo test --release --test perf_probe -- --ignored --nocapture`.

use std::sync::Arc;
use std::time::Instant;

use homlab::config::RunConfig;
use homlab::experiment::{run_realization, HomogenizedContext};
use homlab::mesh::BoxMesh;

#[test]
#[ignore]
fn time_default_2d_realization() {
    let cfg = RunConfig::parse(r#"{"d":2,"master_seed":7}"#).unwrap();
    let params = cfg.realization_params().unwrap();
    let eps = 1.0 / 32.0;
    let m = cfg.mesh_nodes(eps);
    let mesh = Arc::new(BoxMesh::<f64>::new(2, &cfg.box_sides, m).unwrap());

    let t0 = Instant::now();
    // rough abar guess for the context: midpoint of the logistic range
    let mid = (cfg.map.nu + 1.0) / 2.0;
    let ctx = HomogenizedContext::new(
        mesh,
        homlab::dense::SymMat::scaled_identity(2, mid),
        params.k_pairs(),
        &params.solver,
    )
    .unwrap();
    eprintln!("context build: {:.2?}", t0.elapsed());
    eprintln!(
        "bar values: {:?} laplace: {:?}",
        ctx.bar.values, ctx.laplace_values
    );

    for seed in [1u64, 2, 3] {
        let t = Instant::now();
        let row = run_realization(&params, &ctx, seed, eps).unwrap();
        eprintln!(
            "realization seed {seed}: {:.2?}  lambda = {:?}  err = {:?} commut = {:?} sigma_resid = {:.2e}",
            t.elapsed(),
            row.lambda_eps,
            row.err_lambda,
            row.commutator_integral,
            row.checks.sigma_residual
        );
    }
}
