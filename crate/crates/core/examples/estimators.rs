//! One client's local trajectory and the smoothness (beta) and gradient
//! divergence (delta) estimates computed from it.
//!
//! cargo run --example estimators

use fedveca::client::{estimate_beta, estimate_delta, local_train};
use fedveca::data::gen_synthetic;
use fedveca::model::{full_grad, ModelSpec};
use fedveca::numerics::{l2_norm, ParamVector, RngStream};

pub fn run_example() -> fedveca::Result<()> {
    let data = gen_synthetic(400, 5, 2, 3.0, 4)?;
    let spec = ModelSpec::squared_svm(5);
    let shard: Vec<usize> = (0..200).collect();
    let w = ParamVector::zeros(spec.param_dim());
    let global = full_grad(&spec, &w, &data.samples, &data.all_indices())?;

    for tau in [2, 5, 20] {
        let mut rng = RngStream::for_round(4, 1, 0);
        let (traj, g) = local_train(&w, tau, &spec, &data, &shard, 0.01, 16, &mut rng)?;
        let start = full_grad(&spec, &w, &data.samples, &shard)?;
        let beta = estimate_beta(&traj, &start)?;
        let delta = estimate_delta(&traj, &global, 500.0)?;
        println!(
            "tau {tau:>2}: |G| = {:.4}  beta = {beta:.4}  delta = {delta:.4}  replay exact: {}",
            l2_norm(&g),
            traj.replays_exactly(0.01)
        );
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
