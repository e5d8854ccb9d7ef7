//! Runs the diamond benchmark once and prints the report.
//!
//! `cargo run --release -p tessgp --example diamond -- [seed] [iterations]`

use tessgp::testbed::{run_benchmark, BenchmarkConfig, Scenario};

fn main() -> tessgp::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let n_iterations = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let config = BenchmarkConfig {
        seed,
        n_iterations,
        ..BenchmarkConfig::default()
    };
    let run = run_benchmark(Scenario::Diamond, &config)?;
    println!("{}", serde_json::to_string_pretty(&run.report)?);
    Ok(())
}
