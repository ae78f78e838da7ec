//! Every example must run to completion.

#[allow(dead_code)]
#[path = "../examples/quickstart.rs"]
mod quickstart;
#[allow(dead_code)]
#[path = "../examples/compare_baselines.rs"]
mod compare_baselines;
#[allow(dead_code)]
#[path = "../examples/partitions.rs"]
mod partitions;
#[allow(dead_code)]
#[path = "../examples/step_control.rs"]
mod step_control;
#[allow(dead_code)]
#[path = "../examples/estimators.rs"]
mod estimators;
#[allow(dead_code)]
#[path = "../examples/framing.rs"]
mod framing;
#[allow(dead_code)]
#[path = "../examples/socket_federation.rs"]
mod socket_federation;
#[allow(dead_code)]
#[path = "../examples/metrics_csv.rs"]
mod metrics_csv;
#[allow(dead_code)]
#[path = "../examples/gradient_check.rs"]
mod gradient_check;
#[allow(dead_code)]
#[path = "../examples/idx_reader.rs"]
mod idx_reader;


#[test]
fn quickstart_runs() {
    quickstart::run_example().unwrap();
}

#[test]
fn compare_baselines_runs() {
    compare_baselines::run_example().unwrap();
}

#[test]
fn partitions_runs() {
    partitions::run_example().unwrap();
}

#[test]
fn step_control_runs() {
    step_control::run_example().unwrap();
}

#[test]
fn estimators_runs() {
    estimators::run_example().unwrap();
}

#[test]
fn framing_runs() {
    framing::run_example().unwrap();
}

#[test]
fn socket_federation_runs() {
    socket_federation::run_example().unwrap();
}

#[test]
fn metrics_csv_runs() {
    metrics_csv::run_example().unwrap();
}

#[test]
fn gradient_check_runs() {
    gradient_check::run_example().unwrap();
}

#[test]
fn idx_reader_runs() {
    idx_reader::run_example().unwrap();
}
