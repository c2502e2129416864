//! Independent reference implementations shared by the integration tests.
//! Nothing here calls the estimators under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use spd_sliced::experiments::wishart_measure;
use spd_sliced::sliced::EmpiricalSpdMeasure;
use spd_sliced::{RngState, SpdMatrix, SymMatrix};

pub fn gaussian_matrix(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `B Bᵀ / d + shift·I` with Gaussian `B`.
pub fn random_spd(rng: &mut impl Rng, d: usize, shift: f64) -> SpdMatrix {
    let b = gaussian_matrix(rng, d, d);
    SpdMatrix::new(&b * b.transpose() / d as f64 + DMatrix::identity(d, d) * shift).unwrap()
}

/// Symmetric matrix with unit Frobenius norm.
pub fn random_unit_sym(rng: &mut impl Rng, d: usize) -> SymMatrix {
    let b = gaussian_matrix(rng, d, d);
    let s = (&b + b.transpose()) * 0.5;
    let n = s.norm();
    SymMatrix::new(s / n).unwrap()
}

/// Haar orthogonal matrix from the sign-corrected QR of a Gaussian matrix.
pub fn haar(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, d, d).qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn wishart_pair(seed: u64, d: usize, n: usize, m: usize) -> (EmpiricalSpdMeasure, EmpiricalSpdMeasure) {
    let rng = RngState::new(seed);
    let scale_b = SpdMatrix::from_diagonal(&(0..d).map(|k| 1.0 + 0.5 * k as f64).collect::<Vec<_>>()).unwrap();
    (
        wishart_measure(rng.child(0), d, n, 2 * d, &SpdMatrix::identity(d)).unwrap(),
        wishart_measure(rng.child(1), d, m, 2 * d, &scale_b).unwrap(),
    )
}

/// Matrix logarithm through nalgebra's eigensolver.
pub fn log_reference(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let l = e.eigenvalues.map(f64::ln);
    &e.eigenvectors * DMatrix::from_diagonal(&l) * e.eigenvectors.transpose()
}

pub fn frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// `W_p^p` between uniform empirical measures on the line, by integrating
/// `|F⁻¹ − G⁻¹|^p` over the merged breakpoints `k/n ∪ k/m`.
pub fn w1d_reference(x: &[f64], y: &[f64], p: f64) -> f64 {
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let mut cuts: Vec<(usize, usize)> = (1..=n).map(|k| (k * m, n * m)).chain((1..=m).map(|k| (k * n, n * m))).collect();
    cuts.sort();
    cuts.dedup();
    let mut prev = 0usize;
    let mut total = 0.0;
    for (num, den) in cuts {
        if num == prev {
            continue;
        }
        // mid-cell index in each quantile function
        let mid2 = prev + num; // twice the midpoint numerator over den
        let i = (mid2 * n) / (2 * den);
        let j = (mid2 * m) / (2 * den);
        total += (num - prev) as f64 / den as f64 * (xs[i.min(n - 1)] - ys[j.min(m - 1)]).abs().powf(p);
        prev = num;
    }
    total
}

/// Sliced estimate straight from the definition: project every point with
/// `⟨A, log X⟩`, then average 1D costs.
pub fn sliced_reference(mu: &[SpdMatrix], nu: &[SpdMatrix], directions: &[SymMatrix], p: f64) -> f64 {
    let lx: Vec<DMatrix<f64>> = mu.iter().map(|x| log_reference(x.as_matrix())).collect();
    let ly: Vec<DMatrix<f64>> = nu.iter().map(|x| log_reference(x.as_matrix())).collect();
    let total: f64 = directions
        .iter()
        .map(|a| {
            let cx: Vec<f64> = lx.iter().map(|l| frobenius(a.as_matrix(), l)).collect();
            let cy: Vec<f64> = ly.iter().map(|l| frobenius(a.as_matrix(), l)).collect();
            w1d_reference(&cx, &cy, p)
        })
        .sum();
    total / directions.len() as f64
}

/// Minimum-cost perfect matching by enumerating permutations (Heap's algorithm).
pub fn brute_force_assignment(cost: &DMatrix<f64>) -> f64 {
    let n = cost.nrows();
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |p: &[usize]| (0..n).map(|i| cost[(i, p[i])]).sum::<f64>();
    let mut best = eval(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best / n as f64
}

/// Squared Log-Euclidean cost matrix computed from reference logarithms.
pub fn le_cost_reference(mu: &[SpdMatrix], nu: &[SpdMatrix]) -> DMatrix<f64> {
    let lx: Vec<DMatrix<f64>> = mu.iter().map(|x| log_reference(x.as_matrix())).collect();
    let ly: Vec<DMatrix<f64>> = nu.iter().map(|x| log_reference(x.as_matrix())).collect();
    DMatrix::from_fn(mu.len(), nu.len(), |i, j| (&lx[i] - &ly[j]).norm_squared())
}

/// Orthonormal basis of symmetric matrices for the Frobenius inner product.
pub fn sym_basis(d: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::new();
    for i in 0..d {
        for j in i..d {
            let mut e = DMatrix::zeros(d, d);
            if i == j {
                e[(i, i)] = 1.0;
            } else {
                e[(i, j)] = std::f64::consts::FRAC_1_SQRT_2;
                e[(j, i)] = std::f64::consts::FRAC_1_SQRT_2;
            }
            out.push(e);
        }
    }
    out
}

/// Orthonormal basis of skew-symmetric matrices.
pub fn skew_basis(d: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            let mut e = DMatrix::zeros(d, d);
            e[(i, j)] = std::f64::consts::FRAC_1_SQRT_2;
            e[(j, i)] = -std::f64::consts::FRAC_1_SQRT_2;
            out.push(e);
        }
    }
    out
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

pub fn diag_vector(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}
