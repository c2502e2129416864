//! Distribution regression with the sliced Gaussian kernel: predict the scale
//! factor of a Wishart law from a sample of it.
//!
//! Run with `cargo run --release --example kernel_regression`.

use spd_sliced::experiments::{kernel_ridge_experiment, synthetic_regression_task, KernelRidgeConfig};
use spd_sliced::kernels::{gaussian_kernel, median_bandwidth, midpoint_levels, quantile_features, sq_distance_matrix};
use spd_sliced::{build_projection_basis, RngState, SamplerKind};

fn main() -> spd_sliced::Result<()> {
    let samples = synthetic_regression_task(5, 80, 100, 5, 10)?;

    let measures: Vec<_> = samples.iter().map(|s| s.bands[0].clone()).collect();
    let basis = build_projection_basis(RngState::new(1), 5, 200, SamplerKind::EigUniform)?;
    let features = quantile_features(&measures, &basis, &midpoint_levels(100))?;
    let sigma = median_bandwidth(&sq_distance_matrix(&features)?);
    let gram = gaussian_kernel(&features, sigma)?;
    println!("Gram {}x{}: sigma = {sigma:.4}, min eigenvalue = {:.3e}", gram.size(), gram.size(), gram.min_eigenvalue());

    let (report, predictions) = kernel_ridge_experiment(&samples, None, &KernelRidgeConfig::new())?;
    let overall = report.rows.last().expect("overall row");
    println!("5-fold CV: R2 = {}, MAE = {}", overall["r2"], overall["mae"]);
    for p in predictions.iter().take(5) {
        println!("  u = {:.3}  predicted {:.3}", p.target, p.prediction);
    }
    Ok(())
}
