//! Sliced distances between two Wishart samples with the three slicing laws.
//!
//! Run with `cargo run --release --example spdsw_distance`.

use spd_sliced::experiments::wishart_measure;
use spd_sliced::{build_projection_basis, log_sw, spdsw, sym_sw, RngState, SamplerKind, SpdMatrix};
use spd_sliced::sliced::log_sw_basis;

fn main() -> spd_sliced::Result<()> {
    let d = 3;
    let rng = RngState::new(7);
    let mu = wishart_measure(rng.child(0), d, 200, 2 * d, &SpdMatrix::identity(d))?;
    let nu = wishart_measure(rng.child(1), d, 150, 2 * d, &SpdMatrix::from_diagonal(&[1.0, 2.0, 4.0])?)?;

    for kind in [SamplerKind::EigUniform, SamplerKind::FastSymmetric] {
        let basis = build_projection_basis(rng.child(2), d, 500, kind)?;
        let r = spdsw(&mu, &nu, &basis, 2.0)?;
        println!("SPDSW_2 ({:>14}): {:.6}", kind.name(), r.distance());
    }

    let sphere = log_sw_basis(rng.child(3), d, 500)?;
    println!("logSW_2               : {:.6}", log_sw(&mu, &nu, &sphere, 2.0)?.distance());

    // Slicing the log pushforwards in the flat space gives the same number.
    let basis = build_projection_basis(rng.child(4), d, 200, SamplerKind::EigUniform)?;
    let a = spdsw(&mu, &nu, &basis, 1.0)?.value;
    let b = sym_sw(&mu.log_pushforward(), &nu.log_pushforward(), &basis, 1.0)?.value;
    println!("SPDSW_1 on SPD vs on log pushforwards: {a:.12} / {b:.12}");
    Ok(())
}
