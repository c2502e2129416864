mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use spd_sliced::linalg::{dist_affine_invariant, dist_log_euclidean, sym_exp, udu_decompose};
use spd_sliced::sliced::{wasserstein_1d, EmpiricalSymMeasure};
use spd_sliced::{build_projection_basis, spdsw, sym_sw, EmpiricalSpdMeasure, RngState, SamplerKind, SpdMatrix};

fn measure(seed: u64, d: usize, n: usize) -> EmpiricalSpdMeasure {
    let mut rng = RngState::new(seed).rng();
    EmpiricalSpdMeasure::new((0..n).map(|_| random_spd(&mut rng, d, 0.2)).collect()).unwrap()
}

fn sym_measure(mu: &EmpiricalSpdMeasure) -> EmpiricalSymMeasure {
    EmpiricalSymMeasure::new(mu.points().iter().map(|x| x.log().clone()).collect()).unwrap()
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantile_transport_matches_reference(
        x in prop::collection::vec(-10.0f64..10.0, 1..30),
        y in prop::collection::vec(-10.0f64..10.0, 1..30),
        p in prop::sample::select(vec![1.0, 1.5, 2.0, 3.0]),
    ) {
        let got = wasserstein_1d(&sorted(x.clone()), &sorted(y.clone()), p).unwrap();
        let want = w1d_reference(&x, &y, p);
        prop_assert!((got - want).abs() <= 1e-10 * want.max(1.0), "{} vs {}", got, want);
        let back = wasserstein_1d(&sorted(y), &sorted(x), p).unwrap();
        prop_assert!((got - back).abs() <= 1e-10 * got.max(1.0));
    }

    #[test]
    fn sliced_discrepancy_is_a_pseudometric(seed in any::<u64>(), d in 2usize..5, n in 1usize..12, m in 1usize..12) {
        let basis = build_projection_basis(RngState::new(seed ^ 1), d, 40, SamplerKind::EigUniform).unwrap();
        let (a, b, c) = (measure(seed, d, n), measure(seed ^ 2, d, m), measure(seed ^ 3, d, n + 1));
        let ab = spdsw(&a, &b, &basis, 2.0).unwrap();
        let ba = spdsw(&b, &a, &basis, 2.0).unwrap();
        prop_assert!(ab.value >= 0.0);
        prop_assert!((ab.value - ba.value).abs() <= 1e-12 * ab.value.max(1.0));
        prop_assert!(spdsw(&a, &a, &basis, 2.0).unwrap().value.abs() <= 1e-12);
        let ac = spdsw(&a, &c, &basis, 2.0).unwrap().distance();
        let cb = spdsw(&c, &b, &basis, 2.0).unwrap().distance();
        prop_assert!(ab.distance() <= ac + cb + 1e-10);
    }

    #[test]
    fn sliced_discrepancy_is_invariant_to_common_log_shifts_and_inversion(seed in any::<u64>(), d in 2usize..5) {
        let basis = build_projection_basis(RngState::new(seed), d, 30, SamplerKind::EigUniform).unwrap();
        let (a, b) = (measure(seed, d, 7), measure(seed ^ 5, d, 9));
        let base = sym_sw(&sym_measure(&a), &sym_measure(&b), &basis, 2.0).unwrap().value;
        let shift = random_unit_sym(&mut RngState::new(seed ^ 7).rng(), d).scaled(3.0);
        let moved = |mu: &EmpiricalSpdMeasure| {
            EmpiricalSymMeasure::new(mu.points().iter().map(|x| x.log().add(&shift)).collect()).unwrap()
        };
        let shifted = sym_sw(&moved(&a), &moved(&b), &basis, 2.0).unwrap().value;
        prop_assert!((base - shifted).abs() <= 1e-9 * base.max(1.0), "{} vs {}", base, shifted);

        let inverse = |mu: &EmpiricalSpdMeasure| {
            EmpiricalSpdMeasure::new(
                mu.points().iter().map(|x| SpdMatrix::new(x.as_matrix().clone().try_inverse().unwrap()).unwrap()).collect(),
            )
            .unwrap()
        };
        let inverted = spdsw(&inverse(&a), &inverse(&b), &basis, 2.0).unwrap().value;
        prop_assert!((base - inverted).abs() <= 1e-9 * base.max(1.0), "{} vs {}", base, inverted);
    }

    #[test]
    fn log_and_exp_are_inverse(seed in any::<u64>(), d in 1usize..7, shift in 1e-3f64..10.0) {
        let x = random_spd(&mut RngState::new(seed).rng(), d, shift);
        let back = sym_exp(x.log()).unwrap();
        prop_assert!((back.as_matrix() - x.as_matrix()).norm() <= 1e-11 * x.as_matrix().norm());
        let reference = log_reference(x.as_matrix());
        prop_assert!((x.log().as_matrix() - &reference).norm() <= 1e-10 * reference.norm().max(1.0));
    }

    #[test]
    fn udu_reconstructs_its_input(seed in any::<u64>(), d in 1usize..8) {
        let x = random_spd(&mut RngState::new(seed).rng(), d, 0.1);
        let (u, diag) = udu_decompose(&x).unwrap();
        for i in 0..d {
            prop_assert_eq!(u[(i, i)], 1.0);
            prop_assert!(diag[i] > 0.0);
            for j in 0..i {
                prop_assert_eq!(u[(i, j)], 0.0);
            }
        }
        let rebuilt = &u * DMatrix::from_diagonal(&diag) * u.transpose();
        prop_assert!((rebuilt - x.as_matrix()).norm() <= 1e-12 * x.as_matrix().norm());
    }

    #[test]
    fn riemannian_distances_behave(seed in any::<u64>(), d in 2usize..5) {
        let mut rng = RngState::new(seed).rng();
        let (x, y, z) = (random_spd(&mut rng, d, 0.1), random_spd(&mut rng, d, 0.1), random_spd(&mut rng, d, 0.1));
        let le = |a: &SpdMatrix, b: &SpdMatrix| dist_log_euclidean(a, b).unwrap();
        prop_assert!(le(&x, &y) <= le(&x, &z) + le(&z, &y) + 1e-10);
        prop_assert!((le(&x, &y) - le(&y, &x)).abs() <= 1e-12);

        let g = gaussian_matrix(&mut rng, d, d) + DMatrix::identity(d, d) * 3.0;
        let ai = dist_affine_invariant(&x, &y).unwrap();
        let moved = dist_affine_invariant(&x.congruence(&g).unwrap(), &y.congruence(&g).unwrap()).unwrap();
        prop_assert!((ai - moved).abs() <= 1e-8 * ai.max(1.0), "{} vs {}", ai, moved);
        let ai_xz = dist_affine_invariant(&x, &z).unwrap();
        let ai_zy = dist_affine_invariant(&z, &y).unwrap();
        prop_assert!(ai <= ai_xz + ai_zy + 1e-10);
    }
}
