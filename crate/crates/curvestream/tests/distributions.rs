mod common;

use curvestream::distributions::*;
use curvestream::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn random_spd(seed: u64, d: usize) -> DMatrix<f64> {
    use rand::Rng;
    let mut rng = common::rng(seed);
    let a = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
    &a * a.transpose() + DMatrix::identity(d, d) * 0.1
}

#[test]
fn noise_shape_from_group_sizes() {
    // ν_ε = 1 and group sizes 3 and 4 give ξ = 8.
    let lambda = 5.5;
    let d = InverseChiSq::new(1.0 + 3.0 + 4.0, lambda).unwrap();
    assert_eq!(inv_chisq_reciprocal_moment(&d), 8.0 / lambda);
}

#[test]
fn full_graph_uses_xi_minus_d_plus_one() {
    // ξ = ν_Σ + 2 + m with ν_Σ = 2 and m = 10.
    let lambda = random_spd(4, 2);
    let d = InverseGWishart::new(Graph::Full, 14.0, lambda.clone()).unwrap();
    let expected = lambda.try_inverse().unwrap() * 13.0;
    assert!((igw_inverse_moment(&d).unwrap() - expected).amax() < 1e-12);

    let lambda4 = random_spd(5, 4);
    let d4 = InverseGWishart::new(Graph::Full, 9.0, lambda4.clone()).unwrap();
    assert!((d4.inverse_moment().unwrap() - lambda4.try_inverse().unwrap() * 6.0).amax() < 1e-10);
}

#[test]
fn non_spd_scale_is_rejected() {
    let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    let err = InverseGWishart::new(Graph::Full, 3.0, bad.clone()).and_then(|d| d.inverse_moment());
    assert!(matches!(err, Err(Error::NonPositiveDefinite(_))));
    assert!(matches!(matrix_inv_sqrt(&bad), Err(Error::NonPositiveDefinite(_))));
}

#[test]
fn identity_roots() {
    let i2 = DMatrix::<f64>::identity(2, 2);
    assert_eq!(matrix_sqrt(&i2).unwrap(), i2);
    assert_eq!(matrix_inv_sqrt(&i2).unwrap(), i2);
}

proptest! {
    #[test]
    fn roots_multiply_back(seed in any::<u64>(), d in 1usize..5) {
        let m = random_spd(seed, d);
        let s = matrix_sqrt(&m).unwrap();
        prop_assert!((s.transpose() * &s - &m).amax() <= 1e-12 * m.amax());
        let si = matrix_inv_sqrt(&m).unwrap();
        let target = m.clone().try_inverse().unwrap();
        prop_assert!((si.transpose() * &si - &target).amax() <= 1e-10 * target.amax());
        for i in 0..d {
            for j in 0..i {
                prop_assert_eq!(s[(i, j)], 0.0);
                prop_assert_eq!(si[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn diag_graph_results_are_exactly_diagonal(seed in any::<u64>(), d in 1usize..5, xi in 0.5f64..50.0) {
        let lambda = random_spd(seed, d);
        let m = InverseGWishart::new(Graph::Diag, xi, lambda.clone()).unwrap().inverse_moment().unwrap();
        for i in 0..d {
            for j in 0..d {
                if i == j {
                    prop_assert!((m[(i, i)] - xi / lambda[(i, i)]).abs() <= 1e-14 * m[(i, i)]);
                } else {
                    prop_assert_eq!(m[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn reciprocal_moment_is_ratio(xi in 1e-3f64..1e3, lambda in 1e-3f64..1e3) {
        let d = InverseChiSq::new(xi, lambda).unwrap();
        prop_assert_eq!(d.reciprocal_moment(), xi / lambda);
    }
}
