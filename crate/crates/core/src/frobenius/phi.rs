use nalgebra::{DMatrix, DVector};

use super::{Frame, LeafSample, RegularityCheck, SmoothMap, TensorGrid};
use crate::error::{Error, Result};
use crate::geninv::GenInverse;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Stop when `||F(x) - y|| <= tol (1 + ||y||)`.
    pub tol: f64,
    pub max_iterations: usize,
    /// Step halvings allowed per iteration while the residual grows.
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-12, max_iterations: 50, max_halvings: 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Damped Newton for `F(x) = target` from `initial`.
pub fn newton_solve<F, J>(
    f: F,
    jacobian: J,
    target: &DVector<f64>,
    initial: DVector<f64>,
    options: &NewtonOptions,
) -> Result<NewtonOutcome>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    J: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    let goal = options.tol * (1.0 + target.norm());
    let mut x = initial;
    let mut r = target - f(&x)?;
    let mut res = r.norm();
    for it in 0..options.max_iterations {
        if res <= goal {
            return Ok(NewtonOutcome { x, iterations: it, residual: res });
        }
        let jac = jacobian(&x)?;
        let dx = linalg::solve(&jac, &DMatrix::from_column_slice(r.len(), 1, r.as_slice()))
            .ok_or(Error::InverseFailure { iterations: it, residual: res })?
            .column(0)
            .into_owned();
        let mut lambda = 1.0;
        let mut halvings = 0;
        loop {
            let trial = &x + &dx * lambda;
            let r_trial = target - f(&trial)?;
            let res_trial = r_trial.norm();
            if res_trial.is_finite() && res_trial <= res {
                x = trial;
                r = r_trial;
                res = res_trial;
                break;
            }
            if halvings == options.max_halvings {
                return Err(Error::InverseFailure { iterations: it + 1, residual: res });
            }
            lambda *= 0.5;
            halvings += 1;
        }
    }
    if res <= goal {
        return Ok(NewtonOutcome { x, iterations: options.max_iterations, residual: res });
    }
    Err(Error::InverseFailure { iterations: options.max_iterations, residual: res })
}

/// Pieces shared by the leaf map and the normal form at a base point.
#[derive(Debug, Clone)]
struct BaseData {
    map: SmoothMap,
    x0: DVector<f64>,
    f0: DVector<f64>,
    geninv0: GenInverse,
    /// `I - T0+ T0`, the projection onto `N0` along `E*`.
    onto_n0: DMatrix<f64>,
}

impl BaseData {
    fn new(map: &SmoothMap, x0: &DVector<f64>, geninv0: &GenInverse, check: &RegularityCheck) -> Result<Self> {
        if geninv0.a().shape() != (map.dim_out(), map.dim_in()) {
            return Err(Error::invalid("geninv0 does not match the shape of f'(x0)"));
        }
        let jac = map.clone();
        check.run(&move |x: &DVector<f64>| jac.jacobian(x), x0, geninv0)?;
        let n = map.dim_in();
        Ok(BaseData {
            map: map.clone(),
            x0: x0.clone(),
            f0: map.value(x0)?,
            geninv0: geninv0.clone(),
            onto_n0: DMatrix::identity(n, n) - geninv0.a_plus_a(),
        })
    }

    /// `T0+ (f(x) - f(x0))`.
    fn lifted(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.geninv0.a_plus() * (self.map.value(x)? - &self.f0))
    }

    /// `T0+ f'(x) + I - T0+ T0`, which is `D(x) = I + T0+ (f'(x) - T0)`.
    fn derivative(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.geninv0.a_plus() * self.map.jacobian(x)? + &self.onto_n0)
    }
}

/// `φ(x) = T0+ (f(x) - f(x0)) + P x` with `P = I - T0+ T0`; `φ'(x) = D(x)`.
/// Level-set points of `f` through `x0` are exactly the `x` with `φ(x) ∈ N0`.
#[derive(Debug, Clone)]
pub struct PhiMap {
    base: BaseData,
    frame: Frame,
    /// `x0 - φ(x0)`.
    shift: DVector<f64>,
    pub newton: NewtonOptions,
}

pub fn phi_map(map: &SmoothMap, x0: &DVector<f64>, geninv0: &GenInverse, check: &RegularityCheck) -> Result<PhiMap> {
    let base = BaseData::new(map, x0, geninv0, check)?;
    let frame = Frame::new(geninv0.null_a(), geninv0.range_plus().clone())?;
    let shift = x0 - &base.onto_n0 * x0;
    Ok(PhiMap { base, frame, shift, newton: NewtonOptions::default() })
}

impl PhiMap {
    pub fn x0(&self) -> &DVector<f64> {
        &self.base.x0
    }

    pub fn f0(&self) -> &DVector<f64> {
        &self.base.f0
    }

    pub fn geninv0(&self) -> &GenInverse {
        &self.base.geninv0
    }

    pub fn map(&self) -> &SmoothMap {
        &self.base.map
    }

    /// `N0` and `E* = R(T0+)`.
    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn phi(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.base.lifted(x)? + &self.base.onto_n0 * x)
    }

    pub fn phi_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.base.derivative(x)
    }

    /// Newton from the first-order guess `x0 + y - φ(x0)`; since
    /// `φ'(x0) = I` this is `y` shifted by the constant `(I - P) x0`.
    pub fn phi_inverse(&self, y: &DVector<f64>) -> Result<NewtonOutcome> {
        let guess = y + &self.shift;
        newton_solve(|x| self.phi(x), |x| self.phi_jacobian(x), y, guess, &self.newton)
    }

    /// `P φ^{-1}(w)` for `w ∈ N0`.
    pub fn phi0(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.base.onto_n0 * self.phi_inverse(w)?.x)
    }

    /// `(I - P) φ^{-1}(w)` for `w ∈ N0`.
    pub fn phi1(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.phi_inverse(w)?.x;
        Ok(&x - &self.base.onto_n0 * &x)
    }

    /// Solve `φ0(w) = z` for `w ∈ N0`, Newton in `N0` coordinates.
    pub fn phi0_inverse(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let s0 = self.frame.m0.basis();
        let coords = |w: &DVector<f64>| s0 * w;
        let g = |w: &DVector<f64>| Ok(s0.tr_mul(&self.phi0(&coords(w))?));
        let dg = |w: &DVector<f64>| {
            let x = self.phi_inverse(&coords(w))?.x;
            let d = self.phi_jacobian(&x)?;
            let y = linalg::solve(&d, s0).ok_or_else(|| Error::OutOfNeighborhood { point: x.iter().copied().collect() })?;
            Ok(s0.tr_mul(&(&self.base.onto_n0 * y)))
        };
        let target = s0.tr_mul(z);
        let out = newton_solve(g, dg, &target, target.clone(), &self.newton)?;
        Ok(coords(&out.x))
    }

    /// `||f(x) - f(x0)||`.
    pub fn level_residual(&self, x: &DVector<f64>) -> Result<f64> {
        Ok((self.base.map.value(x)? - &self.base.f0).norm())
    }

    /// `ψ(z) = φ1(φ0^{-1}(z))` for `N0` coordinates `z`, in `E*` coordinates.
    pub fn psi(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let w = self.phi0_inverse(&(self.frame.m0.basis() * z))?;
        let v = self.phi1(&w)?;
        Ok(self.frame.e_star.basis().tr_mul(&v))
    }
}

/// Leaf values `ψ(z)` at arbitrary `N0` coordinates.
pub fn phi_leaf_points(phi: &PhiMap, points: &[DVector<f64>]) -> Result<LeafSample> {
    let k = phi.frame.m0.dim();
    if let Some(bad) = points.iter().find(|z| z.len() != k) {
        return Err(Error::invalid(format!("grid point of length {}, dim N0 = {k}", bad.len())));
    }
    let psi = points.iter().map(|z| phi.psi(z)).collect::<Result<Vec<_>>>()?;
    Ok(LeafSample {
        base_point: phi.base.x0.clone(),
        m0: phi.frame.m0.clone(),
        e_star: phi.frame.e_star.clone(),
        shape: Vec::new(),
        path_residuals: vec![0.0; points.len()],
        grid: points.to_vec(),
        psi,
        integrability_residual: 0.0,
        step: None,
        jacobian_source: Some(phi.base.map.jacobian_source()),
        complete: true,
    })
}

/// Leaf values over a tensor grid centred on the base coordinate of `x0`.
pub fn phi_leaf(phi: &PhiMap, half_widths: Vec<f64>, nodes_per_side: usize) -> Result<LeafSample> {
    let (z0, psi0) = phi.frame.split(&phi.base.x0);
    let grid = TensorGrid::new(z0, half_widths, nodes_per_side)?;
    let mut sample = phi_leaf_points(phi, &grid.points())?;
    // exact initial condition at the centre node
    sample.psi[grid.center_index()] = psi0;
    sample.shape = grid.shape();
    Ok(sample)
}

/// `u(x) = T0+ (f(x) - f(x0)) + (I - T0+ T0)(x - x0)`, a local
/// diffeomorphism with `u(x0) = 0`, `u'(x0) = I`.
#[derive(Debug, Clone)]
pub struct NormalForm {
    base: BaseData,
    pub newton: NewtonOptions,
}

pub fn normal_form_u(map: &SmoothMap, x0: &DVector<f64>, geninv0: &GenInverse, check: &RegularityCheck) -> Result<NormalForm> {
    Ok(NormalForm { base: BaseData::new(map, x0, geninv0, check)?, newton: NewtonOptions::default() })
}

impl NormalForm {
    pub fn u(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.base.lifted(x)? + &self.base.onto_n0 * (x - &self.base.x0))
    }

    pub fn u_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.base.derivative(x)
    }

    pub fn u_inverse(&self, h: &DVector<f64>) -> Result<NewtonOutcome> {
        newton_solve(|x| self.u(x), |x| self.u_jacobian(x), h, &self.base.x0 + h, &self.newton)
    }

    /// `||T0 T0+ (f(x) - f(x0)) - T0 u(x)||`. Vanishes identically since
    /// `T0 (I - T0+ T0) = 0`; a sanity check on the construction.
    pub fn factorization_residual(&self, x: &DVector<f64>) -> Result<f64> {
        let t0 = self.base.geninv0.a().matrix();
        let df = self.base.map.value(x)? - &self.base.f0;
        let lhs = t0 * (self.base.geninv0.a_plus() * df);
        Ok((lhs - t0 * self.u(x)?).norm())
    }

    /// `||T0 T0+ (f(x0 + h) - f(x0)) - T0 h||`, of order `||h||^2`.
    pub fn linearization_residual(&self, h: &DVector<f64>) -> Result<f64> {
        let x = &self.base.x0 + h;
        let df = self.base.map.value(&x)? - &self.base.f0;
        let t0 = self.base.geninv0.a().matrix();
        Ok((t0 * (self.base.geninv0.a_plus() * df) - t0 * h).norm())
    }

    /// `||u^{-1}(h) - x0 - h||`, of order `||h||^2`.
    pub fn inverse_defect(&self, h: &DVector<f64>) -> Result<f64> {
        Ok((self.u_inverse(h)?.x - &self.base.x0 - h).norm())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Operator;

    fn circle() -> SmoothMap {
        SmoothMap::new(
            2,
            1,
            |x: &DVector<f64>| Ok(DVector::from_vec(vec![x.norm_squared() - 1.0])),
            |x: &DVector<f64>| Ok(DMatrix::from_row_slice(1, 2, &[2.0 * x[0], 2.0 * x[1]])),
        )
    }

    fn base(map: &SmoothMap, x0: &DVector<f64>) -> GenInverse {
        GenInverse::moore_penrose(&Operator::new(map.jacobian(x0).unwrap()).unwrap()).unwrap()
    }

    #[test]
    fn phi_at_base_point() {
        let f = circle();
        let x0 = DVector::from_vec(vec![0.0, 1.0]);
        let phi = phi_map(&f, &x0, &base(&f, &x0), &RegularityCheck::default()).unwrap();
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(phi.phi(&x0).unwrap(), &p * &x0);
        assert!((phi.phi_jacobian(&x0).unwrap() - DMatrix::identity(2, 2)).norm() < 1e-15);
    }

    #[test]
    fn linear_map_inverts_in_one_step() {
        let t0 = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, -1.0]);
        let tv = t0.clone();
        let f = SmoothMap::new(3, 2, move |x: &DVector<f64>| Ok(&tv * x), move |_x: &DVector<f64>| Ok(t0.clone()));
        let x0 = DVector::from_vec(vec![0.2, -0.1, 0.4]);
        let phi = phi_map(&f, &x0, &base(&f, &x0), &RegularityCheck::default()).unwrap();
        let y = DVector::from_vec(vec![1.0, 0.5, -0.3]);
        let out = phi.phi_inverse(&y).unwrap();
        assert!(out.iterations <= 1);
        assert!((phi.phi(&out.x).unwrap() - y).norm() < 1e-12);
    }

    #[test]
    fn circle_leaf_through_phi() {
        let f = circle();
        let x0 = DVector::from_vec(vec![0.0, 1.0]);
        let phi = phi_map(&f, &x0, &base(&f, &x0), &RegularityCheck::default()).unwrap();
        let leaf = phi_leaf(&phi, vec![0.9], 10).unwrap();
        for i in 0..leaf.len() {
            let x = leaf.grid[i][0];
            assert!((leaf.psi[i][0] - (1.0 - x * x).sqrt()).abs() < 1e-10, "{x} {}", leaf.psi[i][0]);
            assert!(phi.level_residual(&leaf.point(i)).unwrap() < 1e-10);
        }
        assert_eq!(leaf.psi[10][0], 1.0);
    }

    #[test]
    fn normal_form_basics() {
        let f = circle();
        let x0 = DVector::from_vec(vec![0.0, 1.0]);
        let nf = normal_form_u(&f, &x0, &base(&f, &x0), &RegularityCheck::default()).unwrap();
        assert_eq!(nf.u(&x0).unwrap().norm(), 0.0);
        assert!((nf.u_jacobian(&x0).unwrap() - DMatrix::identity(2, 2)).norm() < 1e-15);
        let x = DVector::from_vec(vec![0.3, 0.8]);
        assert!(nf.factorization_residual(&x).unwrap() < 1e-15);
        let dir = DVector::from_vec(vec![0.6, 0.8]);
        let r2 = nf.linearization_residual(&(&dir * 1e-2)).unwrap();
        let r3 = nf.linearization_residual(&(&dir * 1e-3)).unwrap();
        assert!((r2 / r3 - 100.0).abs() < 1.0, "{}", r2 / r3);
    }

    #[test]
    fn newton_reports_failure() {
        // x^2 = -1 has no real root
        let out = newton_solve(
            |x: &DVector<f64>| Ok(DVector::from_vec(vec![x[0] * x[0]])),
            |x: &DVector<f64>| Ok(DMatrix::from_element(1, 1, 2.0 * x[0])),
            &DVector::from_vec(vec![-1.0]),
            DVector::from_vec(vec![0.5]),
            &NewtonOptions::default(),
        );
        assert!(matches!(out, Err(Error::InverseFailure { .. })));
    }
}
