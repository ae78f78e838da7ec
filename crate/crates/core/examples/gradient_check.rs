//! Compare analytic gradients of both models with central differences.
//!
//! cargo run --example gradient_check

use fedveca::data::gen_synthetic;
use fedveca::model::{grad, loss, ModelSpec};
use fedveca::numerics::{finite_diff_grad, ParamVector, RngStream};

pub fn run_example() -> fedveca::Result<()> {
    let data = gen_synthetic(50, 6, 3, 1.5, 9)?;
    let binary = data.to_parity();
    let mut rng = RngStream::new(9);
    for (name, spec, ds) in [
        ("squared svm", ModelSpec::squared_svm(6).with_l2(0.01), &binary),
        ("logistic", ModelSpec::logistic(6, 3), &data),
    ] {
        let w = ParamVector::new((0..spec.param_dim()).map(|_| rng.normal()).collect());
        let analytic = grad(&spec, &w, &ds.samples)?;
        let numeric = finite_diff_grad(|v| loss(&spec, v, &ds.samples).unwrap_or(f64::NAN), &w, 1e-6)?;
        println!("{name:<12} max |analytic - numeric| = {:.2e}", analytic.max_abs_diff(&numeric)?);
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
