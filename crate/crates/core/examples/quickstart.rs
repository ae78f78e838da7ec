//! Train with adaptive local step counts on synthetic blobs split across
//! five clients, printing the test loss and the step counts every ten rounds.
//!
//! cargo run --example quickstart

use fedveca::baselines::run_experiment;
use fedveca::config::{Algo, ExperimentConfig};
use fedveca::data::PartitionCase;

pub fn run_example() -> fedveca::Result<()> {
    let mut cfg = ExperimentConfig::synthetic(1000, 10, 2, 4.0);
    cfg.partition = PartitionCase::Case3;
    cfg.rounds = 40;

    let out = run_experiment(Algo::Fedveca, &cfg, 1, None)?;
    for (rec, round) in out.records.iter().zip(&out.rounds).step_by(10) {
        println!(
            "round {:>3}  loss {:.5}  acc {:.3}  tau {:?}  eta*tau_k*L {}",
            rec.round,
            rec.loss,
            rec.accuracy,
            round.tau_per_client,
            round.premise.map_or("-".into(), |p| format!("{p:.3}")),
        );
    }
    println!("local iterations spent: {}", out.ledger.tau_all);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
