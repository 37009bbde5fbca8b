mod common;

use std::f64::consts::PI;

use common::*;
use frobenius_core::frobenius::*;
use frobenius_core::linalg::{null_space, Operator, SubspaceBasis};
use frobenius_core::{Error, GenInverse};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn v(d: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(d)
}

fn span(n: usize, cols: usize, data: &[f64]) -> SubspaceBasis {
    SubspaceBasis::from_columns(DMatrix::from_column_slice(n, cols, data)).unwrap()
}

/// `f(x) = |x|^2 - 1` on R^n.
fn sphere_map(n: usize) -> SmoothMap {
    SmoothMap::new(
        n,
        1,
        |x: &DVector<f64>| Ok(v(&[x.norm_squared() - 1.0])),
        |x: &DVector<f64>| Ok(DMatrix::from_row_slice(1, x.len(), (x * 2.0).as_slice())),
    )
}

fn mp_at(map: &SmoothMap, x0: &DVector<f64>) -> GenInverse {
    GenInverse::moore_penrose(&Operator::new(map.jacobian(x0).unwrap()).unwrap()).unwrap()
}

fn north(n: usize) -> DVector<f64> {
    let mut x = DVector::zeros(n);
    x[n - 1] = 1.0;
    x
}

/// `x^perp`, the tangent space of the sphere through `x`.
fn sphere_family(n: usize) -> DistributionFamily {
    DistributionFamily::generic(n, |x: &DVector<f64>| null_space(&DMatrix::from_row_slice(1, x.len(), x.as_slice())))
}

fn circle_generic_problem() -> (LeafProblem, GenericAlphaField) {
    let fam = sphere_family(2);
    let p = LeafProblem::at_base(north(2), span(2, 1, &[0.0, 1.0]), fam.clone()).unwrap();
    let field = alpha_field_generic(fam, p.m0.clone(), p.e_star.clone()).unwrap();
    (p, field)
}

fn kernel_problem(map: &SmoothMap, x0: &DVector<f64>) -> (LeafProblem, KernelAlphaField) {
    let gi = mp_at(map, x0);
    let field = KernelAlphaField::from_family(&map.kernel_family(), x0, &gi, &RegularityCheck::default()).unwrap();
    let p = LeafProblem::new(x0.clone(), field.m0().clone(), field.e_star().clone(), map.kernel_family()).unwrap();
    (p, field)
}

/// Sup of `|psi - sqrt(1 - z^2)|` over a one-dimensional circle leaf whose
/// grid coordinate is the first ambient coordinate.
fn circle_error(leaf: &LeafSample) -> f64 {
    (0..leaf.len())
        .map(|i| {
            let x = leaf.point(i);
            (x[1] - (1.0 - x[0] * x[0]).sqrt()).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn circle_leaf_from_kernel_field() {
    let map = sphere_map(2);
    let (p, field) = kernel_problem(&map, &north(2));
    let leaf = integrate_leaf(&p, &field, &LeafOptions::uniform(1, 0.9, 1e-3)).unwrap();
    assert!(leaf.complete);
    let err = circle_error(&leaf);
    assert!(err <= 1e-6, "{err}");
    assert_eq!(leaf.point(10), north(2));
}

#[test]
fn circle_solvers_agree() {
    let map = sphere_map(2);
    let (p, field) = kernel_problem(&map, &north(2));
    let leaf = integrate_leaf(&p, &field, &LeafOptions::uniform(1, 0.9, 1e-3)).unwrap();
    let phi = phi_map(&map, &north(2), &mp_at(&map, &north(2)), &RegularityCheck::default()).unwrap();
    let closed = phi_leaf(&phi, vec![0.9], LeafOptions::DEFAULT_NODES_PER_SIDE).unwrap();
    assert_eq!(closed.len(), leaf.len());
    assert!(circle_error(&closed) < 1e-10);
    for i in 0..leaf.len() {
        let gap = (leaf.point(i) - closed.point(i)).norm();
        assert!(gap <= 1e-8, "node {i}: {gap}");
    }
}

#[test]
fn generic_and_kernel_circle_leaves_agree() {
    let (p, field) = circle_generic_problem();
    let generic = integrate_leaf(&p, &field, &LeafOptions::uniform(1, 0.9, 1e-3)).unwrap();
    assert!(circle_error(&generic) <= 1e-6);
    assert_eq!(generic.jacobian_source, None);
}

#[test]
fn rk4_error_drops_by_order_four() {
    let (p, field) = circle_generic_problem();
    let opts = |h: f64| LeafOptions::uniform(1, 0.9, h).with_nodes(9);
    let coarse = circle_error(&integrate_leaf(&p, &field, &opts(0.05)).unwrap());
    let fine = circle_error(&integrate_leaf(&p, &field, &opts(0.025)).unwrap());
    let ratio = coarse / fine;
    assert!((8.0..=32.0).contains(&ratio), "{coarse} / {fine} = {ratio}");
}

#[test]
fn kernel_and_generic_alpha_agree() {
    for n in [2, 3] {
        let map = sphere_map(n);
        let x0 = north(n);
        let (_, kernel) = kernel_problem(&map, &x0);
        let generic = alpha_field_generic(sphere_family(n), kernel.m0().clone(), kernel.e_star().clone()).unwrap();
        let mut rng = rng(40 + n as u64);
        for _ in 0..50 {
            let x = &x0 + gaussian_vec(n, &mut rng) * 0.2;
            let gap = (kernel.alpha(&x).unwrap() - generic.alpha(&x).unwrap()).amax();
            assert!(gap <= 1e-8, "n = {n}, x = {x}: {gap}");
        }
    }
}

#[test]
fn sphere_leaf_stays_on_level_set() {
    let map = sphere_map(3);
    let (p, field) = kernel_problem(&map, &north(3));
    let opts = LeafOptions::uniform(2, 0.5, 1e-3).with_nodes(4).with_parallel(true);
    let leaf = integrate_leaf(&p, &field, &opts).unwrap();
    assert_eq!(leaf.shape, vec![9, 9]);
    for x in leaf.points() {
        let f = map.value(&x).unwrap()[0].abs();
        assert!(f <= 1e-8, "{x}: {f}");
    }
    let h = leaf.step.unwrap();
    assert!(leaf.integrability_residual <= 100.0 * h.powi(4), "{}", leaf.integrability_residual);
    assert!(!leaf.non_integrable());
    assert!(leaf.cofinal_violations(&map.kernel_family()).unwrap().is_empty());
}

#[test]
fn parallel_and_serial_sweeps_match() {
    let map = sphere_map(3);
    let (p, field) = kernel_problem(&map, &north(3));
    let opts = LeafOptions::uniform(2, 0.4, 1e-2).with_nodes(3);
    let serial = integrate_leaf(&p, &field, &opts).unwrap();
    let parallel = integrate_leaf(&p, &field, &opts.clone().with_parallel(true)).unwrap();
    assert_eq!(serial.psi, parallel.psi);
    assert_eq!(serial.path_residuals, parallel.path_residuals);
}

#[test]
fn leaf_is_tangent_to_the_distribution() {
    let map = sphere_map(3);
    let (p, field) = kernel_problem(&map, &north(3));
    let leaf = integrate_leaf(&p, &field, &LeafOptions::uniform(2, 0.5, 1e-3).with_nodes(4)).unwrap();
    let fam = sphere_family(3);
    let n = leaf.shape[1];
    // central differences along both grid axes at interior nodes
    for i in 1..leaf.shape[0] - 1 {
        for j in 1..n - 1 {
            let c = i * n + j;
            let x = leaf.point(c);
            let normal = fam.evaluate(&x).unwrap().orthogonal_complement();
            for (up, down) in [(c + n, c - n), (c + 1, c - 1)] {
                let d = leaf.point(up) - leaf.point(down);
                let off = normal.basis().tr_mul(&d).norm() / d.norm();
                assert!(off < 1e-2, "{off}");
            }
        }
    }
}

/// `M(x) = span{(1, 0, -y/2), (0, 1, x/2)}` has a nonzero bracket.
fn heisenberg() -> (LeafProblem, GenericAlphaField) {
    let fam = DistributionFamily::generic(3, |x: &DVector<f64>| {
        SubspaceBasis::from_columns(DMatrix::from_column_slice(3, 2, &[1.0, 0.0, -x[1] / 2.0, 0.0, 1.0, x[0] / 2.0]))
    });
    let p = LeafProblem::at_base(DVector::zeros(3), span(3, 1, &[0.0, 0.0, 1.0]), fam.clone()).unwrap();
    let field = alpha_field_generic(fam, p.m0.clone(), p.e_star.clone()).unwrap();
    (p, field)
}

#[test]
fn non_integrable_distribution_is_flagged() {
    let (p, field) = heisenberg();
    let leaf = integrate_leaf(&p, &field, &LeafOptions::uniform(2, 0.5, 1e-2).with_nodes(5)).unwrap();
    assert!(leaf.non_integrable());
    // the defect after the corner loop is the enclosed area, here 0.5 * 0.5
    assert!(leaf.integrability_residual > 0.1, "{}", leaf.integrability_residual);
}

#[test]
fn central_difference_jacobians_are_recorded() {
    let map = SmoothMap::with_central_differences(2, 1, |x: &DVector<f64>| Ok(v(&[x.norm_squared() - 1.0])));
    let (p, field) = kernel_problem(&map, &north(2));
    let leaf = integrate_leaf(&p, &field, &LeafOptions::uniform(1, 0.9, 1e-3)).unwrap();
    assert!(matches!(leaf.jacobian_source, Some(JacobianSource::CentralDifference { .. })));
    assert!(circle_error(&leaf) <= 1e-6);
}

#[test]
fn mismatched_base_inverse_is_rejected() {
    let map = sphere_map(2);
    let wrong = mp_at(&map, &v(&[1.0, 0.0]));
    let err = phi_map(&map, &north(2), &wrong, &RegularityCheck::default()).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn constant_fields_give_affine_leaves(seed in any::<u64>(), n in 2usize..6, k_frac in 0.0f64..1.0) {
        let mut rng = rng(seed);
        let k = 1 + ((n - 1) as f64 * k_frac) as usize % (n - 1);
        let m0 = SubspaceBasis::from_columns(gaussian(n, k, &mut rng)).unwrap();
        let e_star = tilted_complement(&m0, 0.5, &mut rng);
        let c = gaussian(n - k, k, &mut rng) * 0.5;
        let field = ConstantAlphaField::new(m0.clone(), e_star.clone(), c.clone()).unwrap();
        let x0 = gaussian_vec(n, &mut rng);
        let flat = m0.clone();
        let fam = DistributionFamily::generic(n, move |_| Ok(flat.clone()));
        let p = LeafProblem::new(x0.clone(), m0, e_star, fam).unwrap();
        let leaf = integrate_leaf(&p, &field, &LeafOptions::uniform(k, 0.3, 0.1).with_nodes(1)).unwrap();
        let mid = leaf.len() / 2;
        for i in 0..leaf.len() {
            let expect = &leaf.psi[mid] + &c * (&leaf.grid[i] - &leaf.grid[mid]);
            prop_assert!((&leaf.psi[i] - expect).amax() < 1e-12);
        }
    }

    #[test]
    fn phi_inverse_round_trips_on_the_sphere(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let map = sphere_map(3);
        let phi = phi_map(&map, &north(3), &mp_at(&map, &north(3)), &RegularityCheck::default()).unwrap();
        let x = north(3) + gaussian_vec(3, &mut rng) * 0.1;
        let y = phi.phi(&x).unwrap();
        let back = phi.phi_inverse(&y).unwrap();
        prop_assert!((&back.x - &x).norm() < 1e-10, "{} vs {}", back.x, x);
    }

    #[test]
    fn circle_leaf_through_any_upper_base_point(theta in 0.3 * PI..0.7 * PI) {
        let x0 = v(&[theta.cos(), theta.sin()]);
        let fam = sphere_family(2);
        let p = LeafProblem::at_base(x0.clone(), span(2, 1, &[0.0, 1.0]), fam.clone()).unwrap();
        let field = alpha_field_generic(fam, p.m0.clone(), p.e_star.clone()).unwrap();
        let leaf = integrate_leaf(&p, &field, &LeafOptions::uniform(1, 0.2, 5e-3).with_nodes(4)).unwrap();
        for x in leaf.points() {
            prop_assert!((x.norm() - 1.0).abs() < 1e-9, "{x}");
        }
    }
}
