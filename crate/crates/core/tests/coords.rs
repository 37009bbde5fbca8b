mod common;

use common::*;
use frobenius_core::coords::*;
use frobenius_core::linalg::{oblique_projection, SubspaceBasis};
use frobenius_core::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (2usize..8).prop_flat_map(|n| (Just(n), 1..n))
}

#[test]
fn graph_of_a_shear_in_three_space() {
    let e0 = SubspaceBasis::from_columns(DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
    let e_star = SubspaceBasis::from_columns(DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0])).unwrap();
    // E1 = {z = 2x - y}
    let e1 = SubspaceBasis::from_columns(DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, 1.0, -1.0])).unwrap();
    let co = coordinate_operator(&e0, &e1, &e_star).unwrap();
    let expect = DMatrix::from_row_slice(1, 2, &[2.0, -1.0]);
    assert!((co.alpha - expect).amax() < 1e-14);
}

#[test]
fn shared_complement_is_required() {
    let e0 = SubspaceBasis::from_columns(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
    let e1 = SubspaceBasis::from_columns(DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
    assert!(matches!(coordinate_operator(&e0, &e1, &e1), Err(Error::NotComplementary(_))));
    assert!(!cofinal_member(&e1, &e1).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn graph_round_trip((n, k) in dims(), seed in any::<u64>()) {
        let mut rng = rng(seed);
        let e0 = SubspaceBasis::from_columns(gaussian(n, k, &mut rng)).unwrap();
        let e_star = tilted_complement(&e0, 0.7, &mut rng);
        let alpha = gaussian(n - k, k, &mut rng);
        let co = CoordinateOperator::from_matrix(e0.clone(), e_star.clone(), alpha.clone()).unwrap();
        let e1 = graph_subspace(&co).unwrap();
        prop_assert!(cofinal_member(&e1, &e_star).unwrap());
        let back = coordinate_operator(&e0, &e1, &e_star).unwrap();
        prop_assert!((back.alpha - alpha).amax() <= 1e-9 * (1.0 + co.alpha.amax()));
    }

    #[test]
    fn alpha_is_the_oblique_formula((n, k) in dims(), seed in any::<u64>()) {
        let mut rng = rng(seed);
        let e0 = SubspaceBasis::from_columns(gaussian(n, k, &mut rng)).unwrap();
        let e_star = tilted_complement(&e0, 0.3, &mut rng);
        let e1 = SubspaceBasis::from_columns(e0.basis() + e_star.basis() * gaussian(n - k, k, &mut rng) * 0.5).unwrap();
        let co = coordinate_operator(&e0, &e1, &e_star).unwrap();
        // P^{E0}_{E*} P^{E*}_{E1} on E0, as an ambient operator
        let onto_e1 = oblique_projection(&e1, &e_star).unwrap().projection_onto_first;
        let onto_star = oblique_projection(&e_star, &e0).unwrap().projection_onto_first;
        let oracle = onto_star * onto_e1 * e0.orthogonal_projector();
        prop_assert!((co.ambient_matrix() - oracle).amax() <= 1e-9);
    }
}
