//! Small versions of the sample- and projection-complexity studies.
//!
//! Run with `cargo run --release --example complexity`.

use spd_sliced::experiments::{
    projection_complexity, sample_complexity, DistanceMetric, ProjectionComplexityConfig, SampleComplexityConfig,
};

fn main() -> spd_sliced::Result<()> {
    let cfg = SampleComplexityConfig {
        dims: vec![2, 10],
        n_grid: vec![10, 32, 100, 316],
        repeats: 10,
        metrics: vec![DistanceMetric::Spdsw, DistanceMetric::Lew],
        ..SampleComplexityConfig::new()
    };
    let (_, _, slopes) = sample_complexity(&cfg)?;
    for s in slopes {
        println!("sample complexity  {:>5} d = {:>2}: slope {:+.3}", s.metric.name(), s.d, s.slope);
    }

    let cfg = ProjectionComplexityConfig {
        dims: vec![2, 10],
        l_grid: vec![10, 32, 100, 316],
        l_star: 3000,
        repeats: 30,
        ..ProjectionComplexityConfig::new()
    };
    let (_, slopes) = projection_complexity(&cfg)?;
    for s in slopes {
        println!("projection complexity d = {:>2}: slope {:+.3}", s.d, s.slope);
    }
    Ok(())
}
