//! Horospherical slicing with affine-invariant Busemann coordinates.
//!
//! Run with `cargo run --release --example horospherical`.

use nalgebra::DMatrix;
use spd_sliced::experiments::wishart_measure;
use spd_sliced::linalg::udu_decompose;
use spd_sliced::sliced::busemann_coordinate_ai;
use spd_sliced::{build_projection_basis, hspdsw, spdsw, RngState, SamplerKind, SpdMatrix, SymMatrix};

fn main() -> spd_sliced::Result<()> {
    let m = SpdMatrix::from_row_major(3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0])?;
    let (u, diag) = udu_decompose(&m)?;
    let rebuilt = &u * DMatrix::from_diagonal(&diag) * u.transpose();
    println!("UDU reconstruction error: {:.2e}", (rebuilt - m.as_matrix()).norm());

    let a = SymMatrix::from_diagonal(&[0.8, 0.6, 0.0])?;
    println!("Busemann coordinate along diag(0.8, 0.6, 0): {:.6}", busemann_coordinate_ai(&a, &m)?);

    let d = 4;
    let rng = RngState::new(11);
    let mu = wishart_measure(rng.child(0), d, 300, 8, &SpdMatrix::identity(d))?;
    let nu = wishart_measure(rng.child(1), d, 300, 8, &SpdMatrix::from_diagonal(&[1.0, 1.0, 3.0, 3.0])?)?;
    let basis = build_projection_basis(rng.child(2), d, 400, SamplerKind::EigUniform)?;
    let h = hspdsw(&mu, &nu, &basis, 2.0)?;
    let s = spdsw(&mu, &nu, &basis, 2.0)?;
    println!("HSPDSW_2 = {:.6} ({} directions redrawn), SPDSW_2 = {:.6}", h.distance(), h.resampled_directions, s.distance());
    Ok(())
}
