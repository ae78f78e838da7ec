//! The comparison protocol: run the adaptive method, hand its local
//! iteration budget to FedNova, FedAvg and pooled SGD, and print the final
//! test metrics of each.
//!
//! cargo run --example compare_baselines

use fedveca::baselines::compare_seed;
use fedveca::config::ExperimentConfig;
use fedveca::data::PartitionCase;

pub fn run_example() -> fedveca::Result<()> {
    let mut cfg = ExperimentConfig::synthetic(1000, 10, 2, 4.0);
    cfg.partition = PartitionCase::Case3;
    cfg.rounds = 30;

    let runs = compare_seed(&cfg, 7)?;
    println!("budget tau_all = {}", runs[0].ledger.tau_all);
    for run in &runs {
        let last = run.records.last().expect("at least one round");
        let steps = run.rounds.first().map(|r| format!("{:?}", r.tau_per_client));
        println!(
            "{:<12} loss {:.5}  acc {:.3}  first-round steps {}",
            run.algo.name(),
            last.loss,
            last.accuracy,
            steps.unwrap_or_else(|| "-".into())
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
