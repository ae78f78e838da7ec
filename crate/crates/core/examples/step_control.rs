//! How heterogeneity scores turn into next-round step counts, including the
//! reset to 2, the cap, and the zero guard.
//!
//! cargo run --example step_control

use fedveca::server::{compute_a, predict_tau_detailed};

pub fn run_example() -> fedveca::Result<()> {
    // (beta, delta) per client, eta = 0.01.
    let estimates = [(2.0, 1.0), (2.1, 1.1), (3.0, 1.5), (0.0, 2.0)];
    let a: Vec<f64> = estimates.iter().map(|&(b, d)| compute_a(b, d, 0.01)).collect();
    for alpha in [0.5, 0.95, 0.99] {
        println!("alpha = {alpha}");
        for (i, d) in predict_tau_detailed(&a, alpha, 50)?.iter().enumerate() {
            let bound = d.bound.map_or("guarded".into(), |b| format!("{b:.3}"));
            println!("  client {i}: A = {:.4}  bound {bound:>8}  floor {:>3}  tau {:>2}", a[i], d.pre_clamp, d.tau);
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
