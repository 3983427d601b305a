//! Run a small Monte Carlo study and print the relative-bias table.
//!
//! `cargo run --release --example study -- [scenario] [replicates] [mechanism]`

use std::time::Instant;

use nnri::popgen::Scenario;
use nnri::response::ResponseMechanism;
use nnri::sim::{run_study, StudyConfig};
use nnri::Execution;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let scenario = args
        .get(1)
        .and_then(|s| Scenario::parse(s))
        .unwrap_or(Scenario::Uniform100k);
    let replicates = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100);
    let mechanism = match args.get(3).map(String::as_str) {
        Some("mcar50") => ResponseMechanism::mcar(0.5),
        Some("negative-mar") => ResponseMechanism::negative_mar(),
        Some("positive-mar") => ResponseMechanism::positive_mar(),
        _ => ResponseMechanism::mcar(0.75),
    };
    let config = StudyConfig::new(scenario, 1000, mechanism, replicates, 2024);
    let start = Instant::now();
    let report = run_study(&config, Execution::Parallel).expect("study failed");
    println!(
        "{} {} B={} completed={} ({:.1?})",
        report.scenario,
        report.mechanism,
        report.replicates,
        report.completed,
        start.elapsed()
    );
    for f in &report.failures {
        println!("failed: {f}");
    }
    print!("{}", report.relative_bias_table());
    for it in &report.items {
        println!(
            "{}: mean error {:.3} (se {:.3})",
            it.item, it.mean_error, it.error_se
        );
    }
}
