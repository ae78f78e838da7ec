//! Label histograms for the three partition cases on a 6-class dataset.
//!
//! cargo run --example partitions

use fedveca::data::{gen_synthetic, partition, PartitionCase};

pub fn run_example() -> fedveca::Result<()> {
    let data = gen_synthetic(600, 4, 6, 3.0, 11)?;
    for case in [PartitionCase::Case1, PartitionCase::Case2, PartitionCase::Case3] {
        let plan = partition(&data, case, 4, 11)?;
        println!("{case:?}");
        for (i, hist) in plan.label_histograms(&data).iter().enumerate() {
            println!("  client {i}: {hist:?}");
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
