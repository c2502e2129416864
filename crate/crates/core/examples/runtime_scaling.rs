//! Wall time of sliced and exact estimators as the sample size grows.
//!
//! Run with `cargo run --release --example runtime_scaling -- [max_n]`.

use spd_sliced::experiments::{benchmark_runtime, RuntimeConfig};

fn main() -> spd_sliced::Result<()> {
    let max_n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let cfg = RuntimeConfig {
        n_grid: RuntimeConfig::new().n_grid.into_iter().filter(|&n| n <= max_n).collect(),
        repeats: 3,
        ..RuntimeConfig::new()
    };
    let (_, rows) = benchmark_runtime(&cfg)?;
    for r in rows {
        match r.median_seconds {
            Some(t) => println!("{:>6} n = {:>6}: {t:.4} s", r.metric.name(), r.n),
            None => println!("{:>6} n = {:>6}: skipped", r.metric.name(), r.n),
        }
    }
    Ok(())
}
