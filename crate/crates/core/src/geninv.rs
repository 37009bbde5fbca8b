//! (1,2)-generalized inverses with prescribed complements and their
//! perturbation theory: the ball `V(A, A+) = {T : ||T - A|| < 1/||A+||}`,
//! the seven equivalent conditions for `T` in that ball to inherit an
//! inverse `B = A+ C^{-1} = D^{-1} A+`, rank-class preservation, and
//! sampled detection of locally fine points of operator families.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::linalg::{
    self, intersection_dim, is_complement, null_space, numerical_rank, oblique_projection,
    range_space, spectral_norm, Operator, SubspaceBasis, DEFAULT_RANK_TOL, DEFAULT_RESIDUAL_TOL,
};

/// Margin applied to the strict ball inequality `||T - A|| ||A+|| < 1`.
pub const BALL_MARGIN: f64 = 1e-12;

/// Seed used by [`locally_fine_detect`] unless the caller supplies one.
pub const DEFAULT_SAMPLING_SEED: u64 = 0x5eed_1e55;

/// A generalized inverse `A+` of `A` together with `R(A+)` and `N(A+)`.
#[derive(Debug, Clone)]
pub struct GenInverse {
    a: Operator,
    a_plus: DMatrix<f64>,
    range_plus: SubspaceBasis,
    null_plus: SubspaceBasis,
}

/// Relative residuals of the two inverse axioms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxiomResiduals {
    /// `||A+ A A+ - A+|| / ||A+||`
    pub outer: f64,
    /// `||A A+ A - A|| / ||A||`
    pub inner: f64,
}

impl AxiomResiduals {
    pub fn max(&self) -> f64 {
        self.outer.max(self.inner)
    }
}

fn relative(residual: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        residual / scale
    } else {
        residual
    }
}

impl GenInverse {
    pub fn a(&self) -> &Operator {
        &self.a
    }

    pub fn a_plus(&self) -> &DMatrix<f64> {
        &self.a_plus
    }

    /// `R(A+)`, a complement of `N(A)` in `E`.
    pub fn range_plus(&self) -> &SubspaceBasis {
        &self.range_plus
    }

    /// `N(A+)`, a complement of `R(A)` in `F`.
    pub fn null_plus(&self) -> &SubspaceBasis {
        &self.null_plus
    }

    pub fn rows(&self) -> usize {
        self.a.rows()
    }

    pub fn cols(&self) -> usize {
        self.a.cols()
    }

    pub fn axiom_residuals(&self) -> AxiomResiduals {
        let a = self.a.matrix();
        let p = &self.a_plus;
        AxiomResiduals {
            outer: relative(spectral_norm(&(p * a * p - p)), spectral_norm(p)),
            inner: relative(spectral_norm(&(a * p * a - a)), spectral_norm(a)),
        }
    }

    /// `A+ A`, the projection onto `R(A+)` along `N(A)`.
    pub fn a_plus_a(&self) -> DMatrix<f64> {
        &self.a_plus * self.a.matrix()
    }

    /// `A A+`, the projection onto `R(A)` along `N(A+)`.
    pub fn a_a_plus(&self) -> DMatrix<f64> {
        self.a.matrix() * &self.a_plus
    }

    pub fn null_a(&self) -> SubspaceBasis {
        null_space(self.a.matrix()).expect("operator entries are finite")
    }

    pub fn range_a(&self) -> SubspaceBasis {
        range_space(self.a.matrix()).expect("operator entries are finite")
    }

    /// `||A+||_2`.
    pub fn a_plus_norm(&self) -> f64 {
        spectral_norm(&self.a_plus)
    }

    /// Radius of `V(A, A+)`; infinite when `A+ = 0`.
    pub fn ball_radius(&self) -> f64 {
        let n = self.a_plus_norm();
        if n > 0.0 {
            1.0 / n
        } else {
            f64::INFINITY
        }
    }

    /// Wrap an inverse matrix whose axioms and complements were checked by the caller.
    pub(crate) fn from_parts_unchecked(
        a: Operator,
        a_plus: DMatrix<f64>,
        range_plus: SubspaceBasis,
        null_plus: SubspaceBasis,
    ) -> Self {
        GenInverse { a, a_plus, range_plus, null_plus }
    }

    /// Adopt a given matrix as generalized inverse of `a`, checking both axioms
    /// to `tol` and reading off `R(A+)`, `N(A+)`.
    pub fn from_matrix(a: Operator, a_plus: DMatrix<f64>, tol: f64) -> Result<Self> {
        if a_plus.shape() != (a.cols(), a.rows()) {
            return Err(Error::invalid(format!(
                "A+ must be {}x{}, got {}x{}",
                a.cols(),
                a.rows(),
                a_plus.nrows(),
                a_plus.ncols()
            )));
        }
        linalg::check_finite(&a_plus)?;
        let range_plus = range_space(&a_plus)?;
        let null_plus = null_space(&a_plus)?;
        let gi = GenInverse { a, a_plus, range_plus, null_plus };
        let res = gi.axiom_residuals();
        if res.max() > tol {
            return Err(Error::invalid(format!(
                "matrix is not a generalized inverse: axiom residuals {:e}, {:e}",
                res.outer, res.inner
            )));
        }
        Ok(gi)
    }

    /// The Moore-Penrose inverse: orthogonal complements on both sides.
    pub fn moore_penrose(a: &Operator) -> Result<Self> {
        let range_plus = null_space(a.matrix())?.orthogonal_complement();
        let null_plus = range_space(a.matrix())?.orthogonal_complement();
        construct_geninv(a, &range_plus, &null_plus)
    }
}

/// The unique (1,2)-inverse with `R(A+) = range_plus` and `N(A+) = null_plus`:
/// `A+ = (A restricted to range_plus)^{-1} ∘ P` where `P` projects onto
/// `R(A)` along `null_plus`.
pub fn construct_geninv(
    a: &Operator,
    range_plus: &SubspaceBasis,
    null_plus: &SubspaceBasis,
) -> Result<GenInverse> {
    let (m, n) = (a.rows(), a.cols());
    if range_plus.ambient_dim() != n || null_plus.ambient_dim() != m {
        return Err(Error::invalid(format!(
            "complements live in R^{} and R^{}, operator is {m}x{n}",
            range_plus.ambient_dim(),
            null_plus.ambient_dim()
        )));
    }
    let null_a = null_space(a.matrix())?;
    let range_a = range_space(a.matrix())?;
    if !is_complement(range_plus, &null_a)? {
        return Err(Error::NotComplementary(format!(
            "R(A+) of dim {} does not complement N(A) of dim {}",
            range_plus.dim(),
            null_a.dim()
        )));
    }
    let onto_range = oblique_projection(&range_a, null_plus).map_err(|_| {
        Error::NotComplementary(format!(
            "N(A+) of dim {} does not complement R(A) of dim {}",
            null_plus.dim(),
            range_a.dim()
        ))
    })?;

    let r = range_plus.dim();
    let a_plus = if r == 0 {
        DMatrix::zeros(n, m)
    } else {
        // A restricted to range_plus, as an m x r map in the basis of range_plus.
        let restricted = a.matrix() * range_plus.basis();
        let s = linalg::singular_values(&restricted);
        let smin = *s.last().unwrap();
        if !(smin > DEFAULT_RANK_TOL * s[0] * m.max(r) as f64) {
            return Err(Error::DegenerateSplit);
        }
        let left_inverse = linalg::pseudo_inverse(&restricted, DEFAULT_RANK_TOL)?;
        range_plus.basis() * left_inverse * &onto_range.projection_onto_first
    };
    Ok(GenInverse {
        a: a.clone(),
        a_plus,
        range_plus: range_plus.clone(),
        null_plus: null_plus.clone(),
    })
}

/// `T` near `A` together with `C = I + (T - A) A+` and `D = I + A+ (T - A)`.
#[derive(Debug, Clone)]
pub struct PerturbationContext {
    base: GenInverse,
    t: Operator,
    c_map: DMatrix<f64>,
    d_map: DMatrix<f64>,
    ball_ratio: f64,
}

impl PerturbationContext {
    pub fn new(base: GenInverse, t: Operator) -> Result<Self> {
        if t.shape() != base.a.shape() {
            return Err(Error::invalid(format!(
                "T is {}x{} but A is {}x{}",
                t.rows(),
                t.cols(),
                base.rows(),
                base.cols()
            )));
        }
        let delta = t.matrix() - base.a.matrix();
        let (m, n) = (base.rows(), base.cols());
        let c_map = DMatrix::identity(m, m) + &delta * &base.a_plus;
        let d_map = DMatrix::identity(n, n) + &base.a_plus * &delta;
        let ball_ratio = spectral_norm(&delta) * base.a_plus_norm();
        Ok(PerturbationContext { base, t, c_map, d_map, ball_ratio })
    }

    pub fn base(&self) -> &GenInverse {
        &self.base
    }

    pub fn t(&self) -> &Operator {
        &self.t
    }

    pub fn c_map(&self) -> &DMatrix<f64> {
        &self.c_map
    }

    pub fn d_map(&self) -> &DMatrix<f64> {
        &self.d_map
    }

    /// `||T - A||_2 · ||A+||_2`; the ball is `ratio < 1`.
    pub fn ball_ratio(&self) -> f64 {
        self.ball_ratio
    }

    pub fn in_ball(&self) -> bool {
        self.ball_ratio < 1.0 - BALL_MARGIN
    }

    fn require_ball(&self) -> Result<()> {
        if self.in_ball() {
            Ok(())
        } else {
            Err(Error::OutOfBall {
                what: "||T - A|| ||A+||",
                value: self.ball_ratio,
                bound: 1.0 - BALL_MARGIN,
            })
        }
    }

    /// `C^{-1}` by dense solve.
    pub fn c_inverse(&self) -> Result<DMatrix<f64>> {
        let m = self.c_map.nrows();
        linalg::solve(&self.c_map, &DMatrix::identity(m, m))
            .ok_or_else(|| Error::Inconsistent("C_A(A+, T) is singular inside the ball".into()))
    }

    /// `B = A+ C^{-1}`.
    pub fn candidate_inverse(&self) -> Result<DMatrix<f64>> {
        Ok(&self.base.a_plus * self.c_inverse()?)
    }

    /// `D^{-1} A+`, the second route to the same `B`.
    pub fn candidate_inverse_via_d(&self) -> Result<DMatrix<f64>> {
        linalg::solve(&self.d_map, &self.base.a_plus)
            .ok_or_else(|| Error::Inconsistent("D_A(A+, T) is singular inside the ball".into()))
    }

    /// Condition (i): `R(T) ∩ N(A+) = {0}`.
    pub fn condition_i(&self) -> Result<bool> {
        let range_t = range_space(self.t.matrix())?;
        Ok(intersection_dim(&range_t, &self.base.null_plus)? == 0)
    }
}

/// The seven conditions on `T ∈ V(A, A+)`, evaluated independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConditionReport {
    /// `R(T) ∩ N(A+) = {0}`
    pub i: bool,
    /// `B = A+ C^{-1}` is a generalized inverse of `T` with `R(B) = R(A+)`, `N(B) = N(A+)`
    pub ii: bool,
    /// `R(T) ⊕ N(A+) = F`
    pub iii: bool,
    /// `N(T) ⊕ R(A+) = E`
    pub iv: bool,
    /// `(I - A+ A) N(T) = N(A)`
    pub v: bool,
    /// `C^{-1} T N(A) ⊂ R(A)`
    pub vi: bool,
    /// `R(C^{-1} T) ⊂ R(A)`
    pub vii: bool,
}

impl ConditionReport {
    pub fn as_array(&self) -> [bool; 7] {
        [self.i, self.ii, self.iii, self.iv, self.v, self.vi, self.vii]
    }

    /// True when all seven agree (all true or all false).
    pub fn all_equal(&self) -> bool {
        let arr = self.as_array();
        arr.iter().all(|&b| b == arr[0])
    }
}

pub fn condition_report(ctx: &PerturbationContext) -> Result<ConditionReport> {
    ctx.require_ball()?;
    let tol = DEFAULT_RESIDUAL_TOL;
    let base = &ctx.base;
    let t = ctx.t.matrix();
    let range_t = range_space(t)?;
    let null_t = null_space(t)?;
    let null_a = base.null_a();
    let range_a = base.range_a();

    let i = intersection_dim(&range_t, &base.null_plus)? == 0;

    let ii = {
        let b = ctx.candidate_inverse()?;
        let nb = spectral_norm(&b);
        let nt = spectral_norm(t);
        let outer = spectral_norm(&(&b * t * &b - &b)) <= tol * nb.max(f64::MIN_POSITIVE);
        let inner = spectral_norm(&(t * &b * t - t)) <= tol * nt.max(f64::MIN_POSITIVE);
        let ranges = range_space(&b)?.same_span(&base.range_plus, tol)
            && null_space(&b)?.same_span(&base.null_plus, tol);
        outer && inner && ranges
    };

    let iii = is_complement(&range_t, &base.null_plus)?;
    let iv = is_complement(&null_t, &base.range_plus)?;

    let v = {
        let n = base.cols();
        let onto_null_a = DMatrix::identity(n, n) - base.a_plus_a();
        let image = SubspaceBasis::from_spanning(&(onto_null_a * null_t.basis()))?;
        image.same_span(&null_a, tol)
    };

    let c_inv_t = ctx.c_inverse()? * t;
    let scale = spectral_norm(&c_inv_t).max(f64::MIN_POSITIVE);
    let vi = range_a.residual(&(&c_inv_t * null_a.basis())) <= tol * scale;
    let vii = range_a.residual(&c_inv_t) <= tol * scale;

    Ok(ConditionReport { i, ii, iii, iv, v, vi, vii })
}

/// `B = A+ C^{-1}`, the generalized inverse of `T` with `R(B) = R(A+)` and
/// `N(B) = N(A+)`; cross-checked against `D^{-1} A+`.
pub fn perturbed_inverse(ctx: &PerturbationContext) -> Result<GenInverse> {
    ctx.require_ball()?;
    if !ctx.condition_i()? {
        return Err(Error::NoInverseInBall);
    }
    let b = ctx.candidate_inverse()?;
    let b_alt = ctx.candidate_inverse_via_d()?;
    let nb = spectral_norm(&b);
    let gap = spectral_norm(&(&b - &b_alt));
    if gap > 1e-10 * nb.max(f64::MIN_POSITIVE) {
        return Err(Error::Inconsistent(format!(
            "A+ C^-1 and D^-1 A+ differ by {gap:e} (||B|| = {nb:e})"
        )));
    }
    Ok(GenInverse::from_parts_unchecked(
        ctx.t.clone(),
        b,
        ctx.base.range_plus.clone(),
        ctx.base.null_plus.clone(),
    ))
}

/// The two idempotents `P1 = B T` and `P2 = T B` built from `B = A+ C^{-1}`.
pub fn perturbation_projections(ctx: &PerturbationContext) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    ctx.require_ball()?;
    let b = ctx.candidate_inverse()?;
    let t = ctx.t.matrix();
    Ok((&b * t, t * &b))
}

/// `rank T = rank A` for `T` in the ball.
pub fn rank_class_preserved(ctx: &PerturbationContext) -> Result<bool> {
    ctx.require_ball()?;
    let rt = numerical_rank(ctx.t.matrix(), DEFAULT_RANK_TOL)?;
    let ra = numerical_rank(ctx.base.a.matrix(), DEFAULT_RANK_TOL)?;
    Ok(rt == ra)
}

/// Why a sample point failed the locally-fine test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureReason {
    /// `R(T_x) ∩ N(T0+) ≠ {0}`
    RangeMeetsNullPlus,
    /// `T_x` left the ball `V(T0, T0+)`.
    OutsideBall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineWitness {
    pub point: Vec<f64>,
    pub reason: FailureReason,
}

#[derive(Debug, Clone)]
pub struct LocallyFineReport {
    pub fine: bool,
    /// For each sample (when fine): the point and `||T_x+ - T0+||`.
    pub distances: Vec<(Vec<f64>, f64)>,
    pub witness: Option<FineWitness>,
}

impl LocallyFineReport {
    pub fn max_distance(&self) -> f64 {
        self.distances.iter().map(|d| d.1).fold(0.0, f64::max)
    }
}

/// Deterministic uniform samples in the Euclidean ball of `radius` around `center`.
pub fn ball_samples(center: &DVector<f64>, radius: f64, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let d = center.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.0f64, 1.0).expect("valid range");
    (0..count)
        .map(|_| {
            if d == 0 {
                return center.clone();
            }
            let mut dir = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            let norm = dir.norm();
            if norm > 0.0 {
                dir /= norm;
            }
            let r = radius * unit.sample(&mut rng).powf(1.0 / d as f64);
            center + dir * r
        })
        .collect()
}

/// Sampled check of Definition-1.1 style local fineness: condition (i)
/// must hold at every sample in the ball around `x0`. Sound but incomplete;
/// only finitely many points are inspected.
pub fn locally_fine_detect<F>(
    family: F,
    x0: &DVector<f64>,
    geninv0: &GenInverse,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<LocallyFineReport>
where
    F: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("radius must be positive, got {radius}")));
    }
    if samples == 0 {
        return Err(Error::invalid("at least one sample is required"));
    }
    let eval = |x: &DVector<f64>| -> Result<Operator> {
        family(x)
            .and_then(Operator::new)
            .map_err(|e| Error::Evaluation { point: x.iter().copied().collect(), message: e.to_string() })
    };
    let t0 = eval(x0)?;
    let a = geninv0.a().matrix();
    if t0.shape() != a.shape()
        || spectral_norm(&(t0.matrix() - a)) > 1e-10 * (1.0 + spectral_norm(a))
    {
        return Err(Error::invalid("family(x0) does not match the operator of geninv0"));
    }

    let mut distances = Vec::with_capacity(samples);
    for x in ball_samples(x0, radius, samples, seed) {
        let point: Vec<f64> = x.iter().copied().collect();
        let ctx = PerturbationContext::new(geninv0.clone(), eval(&x)?)?;
        let reason = if !ctx.in_ball() {
            Some(FailureReason::OutsideBall)
        } else if !ctx.condition_i()? {
            Some(FailureReason::RangeMeetsNullPlus)
        } else {
            None
        };
        if let Some(reason) = reason {
            return Ok(LocallyFineReport {
                fine: false,
                distances: Vec::new(),
                witness: Some(FineWitness { point, reason }),
            });
        }
        let b = ctx.candidate_inverse()?;
        distances.push((point, spectral_norm(&(b - geninv0.a_plus()))));
    }
    Ok(LocallyFineReport { fine: true, distances, witness: None })
}

/// Both predicates `R(T) ∩ N(A+_k) = {0}` for two generalized inverses of `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndependenceReport {
    pub first: bool,
    pub second: bool,
}

impl IndependenceReport {
    pub fn agree(&self) -> bool {
        self.first == self.second
    }
}

/// Evaluate condition (i) against two inverses of `A` for `T` inside
/// `δ = min(1/||A1+||, 1/||A1+ A A2+||)`; the two answers always agree.
pub fn geninv_independence_check(
    a: &Operator,
    gi1: &GenInverse,
    gi2: &GenInverse,
    t: &Operator,
) -> Result<IndependenceReport> {
    for gi in [gi1, gi2] {
        if gi.a().shape() != a.shape()
            || spectral_norm(&(gi.a().matrix() - a.matrix())) > 1e-12 * (1.0 + spectral_norm(a))
        {
            return Err(Error::invalid("generalized inverse belongs to a different operator"));
        }
    }
    if t.shape() != a.shape() {
        return Err(Error::invalid("T and A differ in shape"));
    }
    let mixed = gi1.a_plus() * a.matrix() * gi2.a_plus();
    let inv = |x: f64| if x > 0.0 { 1.0 / x } else { f64::INFINITY };
    let delta = inv(gi1.a_plus_norm()).min(inv(spectral_norm(&mixed)));
    let dist = spectral_norm(&(t.matrix() - a.matrix()));
    if !(dist < delta * (1.0 - BALL_MARGIN)) {
        return Err(Error::OutOfBall { what: "||T - A||", value: dist, bound: delta });
    }
    let range_t = range_space(t.matrix())?;
    Ok(IndependenceReport {
        first: intersection_dim(&range_t, gi1.null_plus())? == 0,
        second: intersection_dim(&range_t, gi2.null_plus())? == 0,
    })
}
