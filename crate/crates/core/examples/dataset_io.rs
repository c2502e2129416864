//! Writing, validating and reloading dataset files, and emitting a report.
//!
//! Run with `cargo run --release --example dataset_io`.

use serde_json::json;
use spd_sliced::experiments::{generate_wishart, WishartSpec};
use spd_sliced::io::{load_dataset, save_dataset, ExperimentReport, ReportFormat};
use spd_sliced::SpdMatrix;

fn main() -> spd_sliced::Result<()> {
    let dir = tempfile::tempdir()?;
    let wishart = WishartSpec {
        d: 3,
        n: 4,
        dof: 6,
        classes: Some(2),
        class_scale_step: 1.0,
        seed: 1,
    };
    let (points, labels) = generate_wishart(&wishart, &SpdMatrix::identity(3))?;
    let path = dir.path().join("train.json");
    save_dataset(&path, &points, labels.as_deref())?;
    let back = load_dataset(&path)?;
    let identical = back.measure.points().iter().zip(&points).all(|(a, b)| a.to_row_major() == b.to_row_major());
    println!("{} matrices reloaded, bitwise identical: {identical}", back.measure.len());

    let mut report = ExperimentReport::new("dataset_io", json!({"seed": wishart.seed}));
    for (k, m) in back.measure.points().iter().enumerate() {
        report.push_row(json!({"index": k, "label": back.labels.as_ref().map(|l| l[k]), "trace": m.as_matrix().trace()}));
    }
    report.write(&dir.path().join("report.csv"), ReportFormat::Csv)?;
    print!("{}", report.to_csv());
    Ok(())
}
