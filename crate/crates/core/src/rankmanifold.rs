//! Charts of the fixed-rank stratum `F_k ⊂ R^{m x n}`.
//!
//! At an anchor `A` with generalized inverse `A+` the space splits as
//! `M(A) ⊕ E*`, where `M(A) = {T : T N(A) ⊂ R(A)}` is the tangent space and
//! `E* = {T : R(T) ⊂ N(A+), N(T) ⊃ R(A+)}`. The map
//!
//! ```text
//! D(X)  = (X - A) A+A + C(X)^{-1} X,      C(X) = I + (X - A) A+
//! D*(T) = T A+A + C(T) T (I - A+A)
//! ```
//!
//! is a diffeomorphism of `V1 = {||(X - A) A+|| < 1}` with inverse `D*`,
//! and near `A` it carries `F_k` into the linear space `M(A)`.
//!
//! Operators on `R^{m x n}` act on column-major flattenings (see
//! [`crate::linalg::flatten`]).

use nalgebra::DMatrix;

use crate::coords::coordinate_operator;
use crate::error::{Error, Result};
use crate::frobenius::{newton_solve, NewtonOptions};
use crate::geninv::{GenInverse, PerturbationContext, BALL_MARGIN};
use crate::linalg::{
    self, flatten, is_complement, numerical_rank, oblique_projection, range_space, spectral_norm, unflatten,
    Operator, SubspaceBasis, DEFAULT_RANK_TOL, DEFAULT_RESIDUAL_TOL,
};

/// An operator with optional double-splitting data.
#[derive(Debug, Clone)]
pub struct OperatorPoint {
    pub x: Operator,
    pub geninv: Option<GenInverse>,
}

impl OperatorPoint {
    pub fn bare(x: Operator) -> Self {
        OperatorPoint { x, geninv: None }
    }

    pub fn with_geninv(geninv: GenInverse) -> Self {
        OperatorPoint { x: geninv.a().clone(), geninv: Some(geninv) }
    }

    pub fn moore_penrose(x: Operator) -> Result<Self> {
        Ok(Self::with_geninv(GenInverse::moore_penrose(&x)?))
    }

    fn splitting(&self) -> Result<&GenInverse> {
        self.geninv.as_ref().ok_or(Error::NeedsSplitting)
    }
}

/// `X X+ T + (I - X X+) T X+ X`, the projection onto `M(X)` along `E_X`.
fn lemma_projector(gi: &GenInverse, t: &DMatrix<f64>) -> DMatrix<f64> {
    let xxp = gi.a_a_plus();
    let m = xxp.nrows();
    &xxp * t + (DMatrix::identity(m, m) - &xxp) * t * gi.a_plus_a()
}

/// `(I - X X+) T (I - X+ X)`, the projection onto `E_X` along `M(X)`.
fn complement_projector(gi: &GenInverse, t: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = (gi.rows(), gi.cols());
    (DMatrix::identity(m, m) - gi.a_a_plus()) * t * (DMatrix::identity(n, n) - gi.a_plus_a())
}

fn image_basis(m: usize, n: usize, map: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Result<SubspaceBasis> {
    let mut cols = DMatrix::zeros(m * n, m * n);
    for k in 0..m * n {
        let mut e = DMatrix::zeros(m, n);
        e[(k % m, k / m)] = 1.0;
        cols.set_column(k, &flatten(&map(&e)));
    }
    // images of unit inputs under a nonzero projection have norm at least one,
    // so pure roundoff means the image is trivial
    if spectral_norm(&cols) <= DEFAULT_RANK_TOL * (m * n) as f64 {
        return Ok(SubspaceBasis::zero(m * n));
    }
    SubspaceBasis::from_spanning(&cols)
}

fn shape_check(expected: (usize, usize), t: &DMatrix<f64>) -> Result<()> {
    if t.shape() != expected {
        return Err(Error::invalid(format!("expected a {}x{} operator, got {}x{}", expected.0, expected.1, t.nrows(), t.ncols())));
    }
    linalg::check_finite(t)
}

/// `M(X) = {T : T N(X) ⊂ R(X)}`, flattened.
pub fn tangent_space(x: &OperatorPoint) -> Result<SubspaceBasis> {
    let gi = x.splitting()?;
    image_basis(gi.rows(), gi.cols(), |e| lemma_projector(gi, e))
}

/// `E_X = {T : R(T) ⊂ N(X+), N(T) ⊃ R(X+)}`, flattened; complementary to `M(X)`.
pub fn complement_space(x: &OperatorPoint) -> Result<SubspaceBasis> {
    let gi = x.splitting()?;
    let e = image_basis(gi.rows(), gi.cols(), |t| complement_projector(gi, t))?;
    if !is_complement(&tangent_space(x)?, &e)? {
        return Err(Error::Inconsistent("E_X does not complement M(X)".into()));
    }
    Ok(e)
}

/// Component of `T` in `E_X` along `M(X)`.
pub fn complement_component(x: &OperatorPoint, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gi = x.splitting()?;
    shape_check((gi.rows(), gi.cols()), t)?;
    Ok(complement_projector(gi, t))
}

/// Anchor data for the chart `D` at `A`.
#[derive(Debug, Clone)]
pub struct ChartData {
    pub anchor: OperatorPoint,
    pub m0: SubspaceBasis,
    pub e_star: SubspaceBasis,
    rank: usize,
    /// `A+ A`
    p_range_plus: DMatrix<f64>,
    /// `I - A+ A`
    p_null0: DMatrix<f64>,
    /// `A A+`
    p_range_a: DMatrix<f64>,
    /// `I - A A+`
    p_null_plus: DMatrix<f64>,
}

impl ChartData {
    pub fn new(anchor: OperatorPoint) -> Result<Self> {
        let gi = anchor.splitting()?.clone();
        let (m, n) = (gi.rows(), gi.cols());
        let rank = numerical_rank(gi.a().matrix(), DEFAULT_RANK_TOL)?;
        let m0 = tangent_space(&anchor)?;
        let e_star = complement_space(&anchor)?;
        let e_dim = (n - rank) * (m - rank);
        if e_star.dim() != e_dim || m0.dim() != m * n - e_dim {
            return Err(Error::Inconsistent(format!(
                "dim M(A) = {}, dim E* = {} for a rank-{rank} {m}x{n} anchor",
                m0.dim(),
                e_star.dim()
            )));
        }
        let p_range_plus = gi.a_plus_a();
        let p_range_a = gi.a_a_plus();
        Ok(ChartData {
            anchor,
            m0,
            e_star,
            rank,
            p_null0: DMatrix::identity(n, n) - &p_range_plus,
            p_null_plus: DMatrix::identity(m, m) - &p_range_a,
            p_range_plus,
            p_range_a,
        })
    }

    pub fn moore_penrose(a: Operator) -> Result<Self> {
        Self::new(OperatorPoint::moore_penrose(a)?)
    }

    fn gi(&self) -> &GenInverse {
        self.anchor.geninv.as_ref().expect("checked at construction")
    }

    pub fn a(&self) -> &DMatrix<f64> {
        self.gi().a().matrix()
    }

    pub fn a_plus(&self) -> &DMatrix<f64> {
        self.gi().a_plus()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.gi().rows(), self.gi().cols())
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// `1 / ||A+||`, the radius of `W`.
    pub fn w_radius(&self) -> f64 {
        self.gi().ball_radius()
    }

    /// `||(X - A) A+||`; `X ∈ V1` when below one.
    pub fn v1_ratio(&self, x: &DMatrix<f64>) -> f64 {
        spectral_norm(&((x - self.a()) * self.a_plus()))
    }

    /// `||X - A|| ||A+||`; `X ∈ W` when below one.
    pub fn w_ratio(&self, x: &DMatrix<f64>) -> f64 {
        spectral_norm(&(x - self.a())) * self.gi().a_plus_norm()
    }

    pub fn in_v1(&self, x: &DMatrix<f64>) -> bool {
        self.v1_ratio(x) < 1.0 - BALL_MARGIN
    }

    pub fn in_w(&self, x: &DMatrix<f64>) -> bool {
        self.w_ratio(x) < 1.0 - BALL_MARGIN
    }

    fn require_v1(&self, x: &DMatrix<f64>) -> Result<()> {
        shape_check(self.shape(), x)?;
        if !self.in_v1(x) {
            return Err(Error::OutOfBall { what: "||(X - A) A+||", value: self.v1_ratio(x), bound: 1.0 });
        }
        Ok(())
    }

    fn require_w(&self, x: &DMatrix<f64>) -> Result<()> {
        shape_check(self.shape(), x)?;
        if !self.in_w(x) {
            return Err(Error::OutOfBall { what: "||X - A|| ||A+||", value: self.w_ratio(x), bound: 1.0 });
        }
        Ok(())
    }

    /// `C(T) = I + (T - A) A+`.
    pub fn c_map(&self, t: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.shape().0;
        DMatrix::identity(m, m) + (t - self.a()) * self.a_plus()
    }

    fn c_inverse(&self, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let m = self.shape().0;
        linalg::solve(&self.c_map(t), &DMatrix::identity(m, m))
            .ok_or(Error::OutOfBall { what: "||(X - A) A+||", value: self.v1_ratio(t), bound: 1.0 })
    }

    /// `P_{N(A+)} T P_{N0}`, the `E*` component of `T` along `M(A)`.
    pub fn e_star_component(&self, t: &DMatrix<f64>) -> DMatrix<f64> {
        &self.p_null_plus * t * &self.p_null0
    }

    /// The `M(A)` component of `T` along `E*`.
    pub fn m0_component(&self, t: &DMatrix<f64>) -> DMatrix<f64> {
        t - self.e_star_component(t)
    }

    pub fn p_range_plus(&self) -> &DMatrix<f64> {
        &self.p_range_plus
    }

    pub fn p_null0(&self) -> &DMatrix<f64> {
        &self.p_null0
    }

    pub fn p_range_a(&self) -> &DMatrix<f64> {
        &self.p_range_a
    }

    pub fn p_null_plus(&self) -> &DMatrix<f64> {
        &self.p_null_plus
    }
}

/// `P^{N(A+)}_{R(X)} T + P^{R(X)}_{N(A+)} T P^{N(X)}_{R(A+)}`, the projection
/// onto `M(X)` along the anchor's `E*`.
pub fn tangent_projection(ctx: &ChartData, x: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    shape_check(ctx.shape(), x)?;
    shape_check(ctx.shape(), t)?;
    let gi = ctx.gi();
    let not_cofinal = || Error::NotCofinal { point: x.iter().copied().collect() };
    let range_x = range_space(x)?;
    let null_x = linalg::null_space(x)?;
    let onto_range_x = oblique_projection(&range_x, gi.null_plus()).map_err(|_| not_cofinal())?;
    let onto_range_plus = oblique_projection(gi.range_plus(), &null_x).map_err(|_| not_cofinal())?;
    let p = |t: &DMatrix<f64>| {
        &onto_range_x.projection_onto_first * t
            + onto_range_x.projection_onto_second() * t * &onto_range_plus.projection_onto_first
    };
    let pt = p(t);
    let defect = spectral_norm(&(p(&pt) - &pt));
    if defect > DEFAULT_RESIDUAL_TOL * (1.0 + spectral_norm(t)) {
        return Err(Error::Inconsistent(format!("tangent projection is not idempotent: defect {defect:e}")));
    }
    Ok(pt)
}

/// `D(X) = (X - A) P_{R(A+)} + C(X)^{-1} X` on `V1`.
pub fn chart_forward(ctx: &ChartData, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ctx.require_v1(x)?;
    Ok((x - ctx.a()) * &ctx.p_range_plus + ctx.c_inverse(x)? * x)
}

/// `D*(T) = T P_{R(A+)} + C(T) T P_{N0}` on `V1`.
pub fn chart_inverse(ctx: &ChartData, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ctx.require_v1(t)?;
    Ok(t * &ctx.p_range_plus + ctx.c_map(t) * t * &ctx.p_null0)
}

/// `D'(X) ΔX = ΔX P_{R(A+)} + C^{-1} ΔX - C^{-1} ΔX A+ C^{-1} X`.
pub fn chart_derivative(ctx: &ChartData, x: &DMatrix<f64>, dx: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ctx.require_v1(x)?;
    shape_check(ctx.shape(), dx)?;
    let ci = ctx.c_inverse(x)?;
    let cdx = &ci * dx;
    Ok(dx * &ctx.p_range_plus + &cdx - &cdx * ctx.a_plus() * &ci * x)
}

/// `X` has the generalized inverse `A+ C(X)^{-1}`: `X ∈ W` and `R(X) ∩ N(A+) = {0}`.
pub fn in_s(ctx: &ChartData, x: &DMatrix<f64>) -> Result<bool> {
    ctx.require_w(x)?;
    PerturbationContext::new(ctx.gi().clone(), Operator::new(x.clone())?)?.condition_i()
}

fn require_m0(ctx: &ChartData, dx: &DMatrix<f64>) -> Result<()> {
    shape_check(ctx.shape(), dx)?;
    let residual = spectral_norm(&ctx.e_star_component(dx));
    if residual > DEFAULT_RESIDUAL_TOL * spectral_norm(dx).max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidDirection { residual });
    }
    Ok(())
}

/// `α(X) ΔX = P_{N(A+)} (C^{-1} ΔX A+ C^{-1} X - C^{-1} ΔX) P_{N0}` for `ΔX ∈ M(A)`:
/// the `E*` offset lifting `ΔX` into `M(X)`.
pub fn alpha_tangent(ctx: &ChartData, x: &DMatrix<f64>, dx: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !in_s(ctx, x)? {
        return Err(Error::NotInS);
    }
    require_m0(ctx, dx)?;
    let ci = ctx.c_inverse(x)?;
    let cdx = &ci * dx;
    Ok(&ctx.p_null_plus * (&cdx * ctx.a_plus() * &ci * x - &cdx) * &ctx.p_null0)
}

/// `α(X) ΔX` through the coordinate operator of `M(X)` over `M(A)` along `E*`.
pub fn alpha_tangent_via_coordinates(ctx: &ChartData, x: &DMatrix<f64>, dx: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !in_s(ctx, x)? {
        return Err(Error::NotInS);
    }
    require_m0(ctx, dx)?;
    let mx = tangent_space(&OperatorPoint::with_geninv(GenInverse::moore_penrose(&Operator::new(x.clone())?)?))?;
    let co = coordinate_operator(&ctx.m0, &mx, &ctx.e_star)?;
    let z = ctx.m0.coordinates(&flatten(dx));
    let (m, n) = ctx.shape();
    Ok(unflatten(&(ctx.e_star.basis() * (&co.alpha * z)), m, n))
}

/// `Φ0(T) = T P_{R(A+)} + P_{R(A)} C(T) T P_{N0}`.
pub fn phi0_rank(ctx: &ChartData, t: &DMatrix<f64>) -> DMatrix<f64> {
    t * &ctx.p_range_plus + &ctx.p_range_a * ctx.c_map(t) * t * &ctx.p_null0
}

/// `Φ1(T) = P_{N(A+)} C(T) T P_{N0}`.
pub fn phi1_rank(ctx: &ChartData, t: &DMatrix<f64>) -> DMatrix<f64> {
    &ctx.p_null_plus * ctx.c_map(t) * t * &ctx.p_null0
}

/// `Φ0'(T) ΔT = ΔT P_{R(A+)} + P_{R(A)} (ΔT A+ T + T A+ ΔT) P_{N0}`.
pub fn phi0_rank_derivative(ctx: &ChartData, t: &DMatrix<f64>, dt: &DMatrix<f64>) -> DMatrix<f64> {
    dt * &ctx.p_range_plus
        + &ctx.p_range_a * (dt * ctx.a_plus() * t + t * ctx.a_plus() * dt) * &ctx.p_null0
}

/// A point `Z + Ψ(Z) = Φ(T)` of the leaf through `A`.
#[derive(Debug, Clone)]
pub struct RankLeafPoint {
    /// `T = Φ0^{-1}(Z)` in `M(A)`.
    pub preimage: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub point: DMatrix<f64>,
    pub newton_iterations: usize,
}

/// Solve `Φ0(T) = Z` by Newton in `M(A)` coordinates and return `Ψ(Z) = Φ1(T)`.
pub fn leaf_point_rank(ctx: &ChartData, z: &DMatrix<f64>) -> Result<RankLeafPoint> {
    ctx.require_v1(z)?;
    require_m0(ctx, z)?;
    let (m, n) = ctx.shape();
    let s0 = ctx.m0.basis();
    let from_coords = |c: &nalgebra::DVector<f64>| unflatten(&(s0 * c), m, n);
    let f = |c: &nalgebra::DVector<f64>| Ok(s0.tr_mul(&flatten(&phi0_rank(ctx, &from_coords(c)))));
    let jac = |c: &nalgebra::DVector<f64>| {
        let t = from_coords(c);
        let mut j = DMatrix::zeros(s0.ncols(), s0.ncols());
        for k in 0..s0.ncols() {
            let dt = unflatten(&s0.column(k).into_owned(), m, n);
            j.set_column(k, &s0.tr_mul(&flatten(&phi0_rank_derivative(ctx, &t, &dt))));
        }
        Ok(j)
    };
    let target = s0.tr_mul(&flatten(z));
    let out = newton_solve(f, jac, &target, target.clone(), &NewtonOptions::default())?;
    let t = from_coords(&out.x);
    let psi = phi1_rank(ctx, &t);
    let point = phi0_rank(ctx, &t) + &psi;
    Ok(RankLeafPoint { preimage: t, psi, point, newton_iterations: out.iterations })
}

/// `Ψ(Z) = Φ1(Φ0^{-1}(Z))`.
pub fn leaf_psi_rank(ctx: &ChartData, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(leaf_point_rank(ctx, z)?.psi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratumReport {
    pub rank: usize,
    pub anchor_rank: usize,
    /// `||E* component of D(X)||`.
    pub rectified_residual: f64,
    /// Threshold the residual was compared against.
    pub residual_tol: f64,
}

impl StratumReport {
    pub fn member(&self) -> bool {
        self.rank == self.anchor_rank
    }

    pub fn rectified(&self) -> bool {
        self.rectified_residual <= self.residual_tol
    }

    /// Rank test and rectification test give the same verdict.
    pub fn consistent(&self) -> bool {
        self.member() == self.rectified()
    }
}

/// Rank of `X ∈ W` against the anchor, alongside the `E*` residual of `D(X)`.
/// Both use the relative threshold `1e-10 max(m, n) ||X||`.
pub fn stratum_report(ctx: &ChartData, x: &DMatrix<f64>) -> Result<StratumReport> {
    ctx.require_w(x)?;
    let (m, n) = ctx.shape();
    let d = chart_forward(ctx, x)?;
    Ok(StratumReport {
        rank: numerical_rank(x, DEFAULT_RANK_TOL)?,
        anchor_rank: ctx.rank,
        rectified_residual: spectral_norm(&ctx.e_star_component(&d)),
        residual_tol: DEFAULT_RANK_TOL * m.max(n) as f64 * spectral_norm(x),
    })
}

pub fn stratum_membership(ctx: &ChartData, x: &DMatrix<f64>) -> Result<bool> {
    Ok(stratum_report(ctx, x)?.member())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionReport {
    pub samples: usize,
    /// Largest `E*_a` component of `D_a(D_b^{-1}(T))` over rectified `T = D_b(X)`.
    pub max_residual: f64,
    /// Largest `E*_b` component of the rectified inputs.
    pub max_input_residual: f64,
    /// Largest `||D_a(D_b^{-1}(T)) - T||`; zero for identical charts.
    pub max_identity_deviation: f64,
    /// Per adjacent pair: sample spacing and change of the finite-difference Jacobian.
    pub jacobian_steps: Vec<(f64, f64)>,
}

impl TransitionReport {
    /// Largest Jacobian change per unit spacing.
    pub fn max_jacobian_slope(&self) -> f64 {
        self.jacobian_steps
            .iter()
            .filter(|(h, _)| *h > 0.0)
            .map(|(h, d)| d / h)
            .fold(0.0, f64::max)
    }
}

const TRANSITION_FD_STEP: f64 = 1e-6;

/// Evaluate `D_a ∘ D_b^{-1}` at the rectified images of points of `F_k ∩ W_a ∩ W_b`.
pub fn atlas_transition_check(a: &ChartData, b: &ChartData, samples: &[DMatrix<f64>]) -> Result<TransitionReport> {
    if samples.is_empty() {
        return Err(Error::invalid("no overlap samples"));
    }
    if a.shape() != b.shape() {
        return Err(Error::invalid("charts live on different operator spaces"));
    }
    let (m, n) = a.shape();
    let transition = |t: &DMatrix<f64>| chart_inverse(b, t).and_then(|x| chart_forward(a, &x));
    let mut report = TransitionReport {
        samples: samples.len(),
        max_residual: 0.0,
        max_input_residual: 0.0,
        max_identity_deviation: 0.0,
        jacobian_steps: Vec::new(),
    };
    let mut previous: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    for x in samples {
        a.require_w(x)?;
        b.require_w(x)?;
        let t = chart_forward(b, x)?;
        let image = transition(&t)?;
        report.max_input_residual = report.max_input_residual.max(spectral_norm(&b.e_star_component(&t)));
        report.max_residual = report.max_residual.max(spectral_norm(&a.e_star_component(&image)));
        report.max_identity_deviation = report.max_identity_deviation.max(spectral_norm(&(&image - &t)));

        let basis = b.m0.basis();
        let mut jac = DMatrix::zeros(m * n, basis.ncols());
        for k in 0..basis.ncols() {
            let dir = unflatten(&basis.column(k).into_owned(), m, n);
            let h = TRANSITION_FD_STEP * (1.0 + spectral_norm(&t));
            let col = (transition(&(&t + &dir * h))? - transition(&(&t - &dir * h))?) / (2.0 * h);
            jac.set_column(k, &flatten(&col));
        }
        if let Some((t_prev, j_prev)) = &previous {
            report.jacobian_steps.push((spectral_norm(&(&t - t_prev)), spectral_norm(&(&jac - j_prev))));
        }
        previous = Some((t, jac));
    }
    Ok(report)
}
