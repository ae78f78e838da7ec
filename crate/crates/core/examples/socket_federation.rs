//! The same experiment over the in-process bus and over loopback TCP; the
//! metric CSVs are byte-identical.
//!
//! cargo run --example socket_federation

use fedveca::baselines::run_seeds;
use fedveca::config::{Algo, ExperimentConfig};
use fedveca::metrics::to_csv;
use fedveca::transport::TransportKind;

pub fn run_example() -> fedveca::Result<()> {
    let mut cfg = ExperimentConfig::synthetic(600, 8, 2, 4.0);
    cfg.n_clients = 3;
    cfg.rounds = 10;

    let inproc = to_csv(&run_seeds(Algo::Fedveca, &cfg)?)?;
    cfg.transport = TransportKind::Socket { port: 0 };
    let socket = to_csv(&run_seeds(Algo::Fedveca, &cfg)?)?;
    println!("in-process: {} bytes, socket: {} bytes, identical: {}", inproc.len(), socket.len(), inproc == socket);
    assert_eq!(inproc, socket);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
