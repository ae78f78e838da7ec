//! Write a two-seed run to CSV with mean rows, read it back, and show the
//! first lines.
//!
//! cargo run --example metrics_csv

use fedveca::baselines::run_seeds;
use fedveca::config::{Algo, ExperimentConfig};
use fedveca::metrics::{read_metrics, write_metrics, OutputFormat};

pub fn run_example() -> fedveca::Result<()> {
    let mut cfg = ExperimentConfig::synthetic(400, 4, 2, 4.0);
    cfg.n_clients = 2;
    cfg.rounds = 5;
    cfg.seeds = vec![1, 2];

    let records = run_seeds(Algo::Fedveca, &cfg)?;
    let path = std::env::temp_dir().join(format!("fedveca-example-{}.csv", std::process::id()));
    write_metrics(&records, &path, OutputFormat::Csv)?;
    let text = std::fs::read_to_string(&path)?;
    for line in text.lines().take(3) {
        println!("{line}");
    }
    let back = read_metrics(&path)?;
    std::fs::remove_file(&path)?;
    assert_eq!(back, records);
    println!("{} rows round-tripped", back.len());
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
