//! Exact and entropic transport baselines on SPD samples.
//!
//! Run with `cargo run --release --example ot_baselines`.

use spd_sliced::experiments::wishart_measure;
use spd_sliced::ot::{build_cost_matrix, exact_wasserstein, sinkhorn, GroundMetric, SinkhornConfig};
use spd_sliced::{RngState, SpdMatrix};

fn main() -> spd_sliced::Result<()> {
    let d = 3;
    let rng = RngState::new(3);
    let mu = wishart_measure(rng.child(0), d, 120, 6, &SpdMatrix::identity(d))?;
    let nu = wishart_measure(rng.child(1), d, 80, 6, &SpdMatrix::from_diagonal(&[2.0, 2.0, 2.0])?)?;

    for metric in [GroundMetric::LogEuclidean, GroundMetric::AffineInvariant] {
        let cost = build_cost_matrix(&mu, &nu, metric, 2.0)?;
        let plan = exact_wasserstein(&cost)?;
        println!(
            "{metric:?}: W_2 = {:.6}, marginal violation {:.1e}",
            plan.cost.sqrt(),
            plan.marginal_violation()
        );
    }

    let cost = build_cost_matrix(&mu, &nu, GroundMetric::LogEuclidean, 2.0)?;
    for epsilon in [10.0, 1.0, 0.1] {
        let out = sinkhorn(&cost, &SinkhornConfig { epsilon, ..SinkhornConfig::default() })?;
        println!(
            "Sinkhorn eps = {epsilon:>4}: cost {:.6}, {} iterations, converged {}",
            out.plan.cost, out.iterations, out.converged
        );
    }
    Ok(())
}
