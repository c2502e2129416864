//! Spectral matrix functions and their Fréchet derivatives.
//!
//! Run with `cargo run --release --example matrix_functions`.

use spd_sliced::linalg::{dist_affine_invariant, dist_log_euclidean, exp_frechet_derivative, log_frechet_derivative, sym_exp};
use spd_sliced::{SpdMatrix, SymMatrix};

fn main() -> spd_sliced::Result<()> {
    let m = SpdMatrix::from_row_major(2, &[2.0, 0.5, 0.5, 1.0])?;
    let log = m.log().clone();
    let back = sym_exp(&log)?;
    println!("exp(log M) error: {:.2e}", (back.as_matrix() - m.as_matrix()).norm());

    let h = SymMatrix::from_row_major(2, &[0.0, 1.0, 1.0, 0.0])?;
    let t = 1e-6;
    let shifted = SpdMatrix::new(m.as_matrix() + h.as_matrix() * t)?;
    let fd = (shifted.log().as_matrix() - log.as_matrix()) / t;
    let exact = log_frechet_derivative(&m, &h)?;
    println!("Dlog[M](H) vs finite difference: {:.2e}", (fd - exact.as_matrix()).norm());
    let round = exp_frechet_derivative(&log, &exact)?;
    println!("Dexp[log M](Dlog[M](H)) recovers H: {:.2e}", (round.as_matrix() - h.as_matrix()).norm());

    let n = SpdMatrix::from_diagonal(&[1.0, 3.0])?;
    println!("d_LE = {:.6}, d_AI = {:.6}", dist_log_euclidean(&m, &n)?, dist_affine_invariant(&m, &n)?);
    Ok(())
}
