//! Integral leaves of subspace distributions.
//!
//! A distribution assigns a subspace `M(x)` to each point. Near a base point
//! `x0` with `M(x0) ⊕ E* = E`, an integral leaf is the graph of a map
//! `ψ: M0 → E*` solving the total-derivative problem
//!
//! ```text
//! ψ'(z) = α(z + ψ(z)),    ψ(P z0) = (I - P) x0
//! ```
//!
//! where `α(x)` is the coordinate operator of `M(x)` over `M0` and `P`
//! projects onto `M0` along `E*`. Two solvers are provided: a fixed-step
//! RK4 sweep over a tensor grid ([`integrate_leaf`]) and, for kernel
//! distributions `N(f'(x))`, a constructive solver through the map
//! `φ(x) = T0+ (f(x) - f(x0)) + (I - T0+ T0) x` ([`phi_leaf`]).

mod field;
mod integrate;
mod phi;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, is_complement, null_space, SubspaceBasis, DEFAULT_RESIDUAL_TOL};

pub use field::{
    alpha_field_generic, alpha_field_kernel, AlphaField, ConstantAlphaField, GenericAlphaField,
    KernelAlphaField, RegularityCheck,
};
pub use integrate::{integrate_leaf, LeafOptions};
pub use phi::{
    newton_solve, normal_form_u, phi_leaf, phi_leaf_points, phi_map, NewtonOptions, NewtonOutcome,
    NormalForm, PhiMap,
};

pub type VectorFn = dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync;
pub type MatrixFn = dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync;
pub type SubspaceFn = dyn Fn(&DVector<f64>) -> Result<SubspaceBasis> + Send + Sync;

/// How the Jacobian of a caller map is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JacobianSource {
    Analytic,
    /// Central differences with `h = h_scale * (1 + ||x||)`.
    CentralDifference { h_scale: f64 },
}

impl fmt::Display for JacobianSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JacobianSource::Analytic => write!(f, "analytic"),
            JacobianSource::CentralDifference { h_scale } => write!(f, "central-difference(h={h_scale:e})"),
        }
    }
}

pub const CENTRAL_DIFFERENCE_SCALE: f64 = 1e-6;

fn point_of(x: &DVector<f64>) -> Vec<f64> {
    x.iter().copied().collect()
}

/// A `C^1` map `R^n → R^m` with its Jacobian.
#[derive(Clone)]
pub struct SmoothMap {
    dim_in: usize,
    dim_out: usize,
    value: Arc<VectorFn>,
    jacobian: Option<Arc<MatrixFn>>,
}

impl fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothMap")
            .field("dim_in", &self.dim_in)
            .field("dim_out", &self.dim_out)
            .field("jacobian", &self.jacobian_source())
            .finish()
    }
}

impl SmoothMap {
    pub fn new<F, J>(dim_in: usize, dim_out: usize, value: F, jacobian: J) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
        J: Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        SmoothMap { dim_in, dim_out, value: Arc::new(value), jacobian: Some(Arc::new(jacobian)) }
    }

    /// Jacobian approximated by central differences.
    pub fn with_central_differences<F>(dim_in: usize, dim_out: usize, value: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        SmoothMap { dim_in, dim_out, value: Arc::new(value), jacobian: None }
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn jacobian_source(&self) -> JacobianSource {
        match self.jacobian {
            Some(_) => JacobianSource::Analytic,
            None => JacobianSource::CentralDifference { h_scale: CENTRAL_DIFFERENCE_SCALE },
        }
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim_in {
            return Err(Error::invalid(format!("expected a point in R^{}, got R^{}", self.dim_in, x.len())));
        }
        Ok(())
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(x)?;
        let v = (self.value)(x).map_err(|e| wrap_eval(x, e))?;
        if v.len() != self.dim_out || v.iter().any(|t| !t.is_finite()) {
            return Err(Error::Evaluation {
                point: point_of(x),
                message: format!("map returned {} values (expected {}) or non-finite output", v.len(), self.dim_out),
            });
        }
        Ok(v)
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        let j = match &self.jacobian {
            Some(jac) => jac(x).map_err(|e| wrap_eval(x, e))?,
            None => central_difference_jacobian(&*self.value, x)?,
        };
        if j.shape() != (self.dim_out, self.dim_in) || j.iter().any(|t| !t.is_finite()) {
            return Err(Error::Evaluation {
                point: point_of(x),
                message: format!("Jacobian has shape {:?} or non-finite entries", j.shape()),
            });
        }
        Ok(j)
    }

    /// The kernel distribution `x ↦ N(f'(x))`.
    pub fn kernel_family(&self) -> DistributionFamily {
        let map = self.clone();
        DistributionFamily::Kernel {
            ambient_dim: self.dim_in,
            jacobian: Arc::new(move |x: &DVector<f64>| map.jacobian(x)),
            source: self.jacobian_source(),
        }
    }
}

fn wrap_eval(x: &DVector<f64>, e: Error) -> Error {
    match e {
        e @ Error::Evaluation { .. } => e,
        other => Error::Evaluation { point: point_of(x), message: other.to_string() },
    }
}

/// `(f(x + h e_j) - f(x - h e_j)) / 2h` with `h = 1e-6 (1 + ||x||)`.
pub fn central_difference_jacobian(f: &VectorFn, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let h = CENTRAL_DIFFERENCE_SCALE * (1.0 + x.norm());
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let fp = f(&xp).map_err(|e| wrap_eval(&xp, e))?;
        let fm = f(&xm).map_err(|e| wrap_eval(&xm, e))?;
        cols.push((fp - fm) / (2.0 * h));
    }
    if cols.is_empty() {
        return Ok(DMatrix::zeros(f(x)?.len(), 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// A family of subspaces `x ↦ M(x)` of `R^ambient_dim`.
#[derive(Clone)]
pub enum DistributionFamily {
    Generic { ambient_dim: usize, evaluator: Arc<SubspaceFn> },
    /// `M(x) = N(f'(x))`.
    Kernel { ambient_dim: usize, jacobian: Arc<MatrixFn>, source: JacobianSource },
}

impl fmt::Debug for DistributionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistributionFamily::Generic { ambient_dim, .. } => write!(f, "Generic(R^{ambient_dim})"),
            DistributionFamily::Kernel { ambient_dim, .. } => write!(f, "Kernel(R^{ambient_dim})"),
        }
    }
}

impl DistributionFamily {
    pub fn generic<F>(ambient_dim: usize, evaluator: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<SubspaceBasis> + Send + Sync + 'static,
    {
        DistributionFamily::Generic { ambient_dim, evaluator: Arc::new(evaluator) }
    }

    pub fn kernel<J>(ambient_dim: usize, jacobian: J) -> Self
    where
        J: Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        DistributionFamily::Kernel { ambient_dim, jacobian: Arc::new(jacobian), source: JacobianSource::Analytic }
    }

    /// How Jacobians are obtained, for kernel families.
    pub fn jacobian_source(&self) -> Option<JacobianSource> {
        match self {
            DistributionFamily::Kernel { source, .. } => Some(*source),
            DistributionFamily::Generic { .. } => None,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            DistributionFamily::Generic { ambient_dim, .. } | DistributionFamily::Kernel { ambient_dim, .. } => {
                *ambient_dim
            }
        }
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<SubspaceBasis> {
        let n = self.ambient_dim();
        if x.len() != n {
            return Err(Error::invalid(format!("expected a point in R^{n}, got R^{}", x.len())));
        }
        let m = match self {
            DistributionFamily::Generic { evaluator, .. } => evaluator(x).map_err(|e| wrap_eval(x, e))?,
            DistributionFamily::Kernel { jacobian, .. } => {
                let j = jacobian(x).map_err(|e| wrap_eval(x, e))?;
                if j.ncols() != n {
                    return Err(Error::Evaluation {
                        point: point_of(x),
                        message: format!("Jacobian has {} columns, expected {n}", j.ncols()),
                    });
                }
                null_space(&j).map_err(|e| wrap_eval(x, e))?
            }
        };
        if m.ambient_dim() != n {
            return Err(Error::Evaluation {
                point: point_of(x),
                message: format!("subspace lives in R^{}, expected R^{n}", m.ambient_dim()),
            });
        }
        Ok(m)
    }
}

/// Bases of `M0` and `E*` with the coordinate splitting `x = M0 z + E* ψ`.
#[derive(Debug, Clone)]
pub struct Frame {
    pub m0: SubspaceBasis,
    pub e_star: SubspaceBasis,
    splitter: DMatrix<f64>,
}

impl Frame {
    pub fn new(m0: SubspaceBasis, e_star: SubspaceBasis) -> Result<Self> {
        if !is_complement(&m0, &e_star)? {
            return Err(Error::NotComplementary("M0 and E* do not split the ambient space".into()));
        }
        let n = m0.ambient_dim();
        let mut stacked = DMatrix::zeros(n, n);
        stacked.columns_mut(0, m0.dim()).copy_from(m0.basis());
        stacked.columns_mut(m0.dim(), e_star.dim()).copy_from(e_star.basis());
        let splitter = linalg::solve(&stacked, &DMatrix::identity(n, n))
            .ok_or_else(|| Error::NotComplementary("stacked basis is singular".into()))?;
        Ok(Frame { m0, e_star, splitter })
    }

    pub fn ambient_dim(&self) -> usize {
        self.m0.ambient_dim()
    }

    /// `(z, ψ)` with `x = M0 z + E* ψ`.
    pub fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let c = &self.splitter * x;
        let k = self.m0.dim();
        (c.rows(0, k).into_owned(), c.rows(k, c.len() - k).into_owned())
    }

    pub fn join(&self, z: &DVector<f64>, psi: &DVector<f64>) -> DVector<f64> {
        self.m0.basis() * z + self.e_star.basis() * psi
    }
}

/// Base point, `M0 = M(x0)`, a complement `E*`, and the distribution.
#[derive(Debug, Clone)]
pub struct LeafProblem {
    pub base_point: DVector<f64>,
    pub m0: SubspaceBasis,
    pub e_star: SubspaceBasis,
    pub family: DistributionFamily,
}

impl LeafProblem {
    pub fn new(
        base_point: DVector<f64>,
        m0: SubspaceBasis,
        e_star: SubspaceBasis,
        family: DistributionFamily,
    ) -> Result<Self> {
        let n = family.ambient_dim();
        if base_point.len() != n || m0.ambient_dim() != n || e_star.ambient_dim() != n {
            return Err(Error::invalid("base point, M0, E* and family must share one ambient space"));
        }
        if !is_complement(&m0, &e_star)? {
            return Err(Error::NotComplementary("M0 ⊕ E* is not the ambient space".into()));
        }
        let at_base = family.evaluate(&base_point)?;
        if !at_base.same_span(&m0, DEFAULT_RESIDUAL_TOL) {
            return Err(Error::invalid("family(x0) differs from M0"));
        }
        Ok(LeafProblem { base_point, m0, e_star, family })
    }

    /// Problem whose `M0` is `family(x0)` itself.
    pub fn at_base(base_point: DVector<f64>, e_star: SubspaceBasis, family: DistributionFamily) -> Result<Self> {
        let m0 = family.evaluate(&base_point)?;
        Self::new(base_point, m0, e_star, family)
    }
}

/// A tensor grid in `M0` coordinates: `2 n + 1` nodes per axis, centred on
/// `center`, spanning `center[a] ± half_widths[a]`. Linear index is row-major
/// with axis 0 slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrid {
    pub center: DVector<f64>,
    pub half_widths: Vec<f64>,
    pub nodes_per_side: usize,
}

impl TensorGrid {
    pub fn new(center: DVector<f64>, half_widths: Vec<f64>, nodes_per_side: usize) -> Result<Self> {
        if half_widths.len() != center.len() {
            return Err(Error::invalid(format!(
                "{} half-widths for a {}-dimensional grid",
                half_widths.len(),
                center.len()
            )));
        }
        if half_widths.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("grid half-widths must be positive and finite"));
        }
        if nodes_per_side == 0 {
            return Err(Error::invalid("nodes_per_side must be at least 1"));
        }
        Ok(TensorGrid { center, half_widths, nodes_per_side })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn nodes_per_axis(&self) -> usize {
        2 * self.nodes_per_side + 1
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.nodes_per_axis(); self.dim()]
    }

    pub fn len(&self) -> usize {
        self.nodes_per_axis().pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.half_widths[axis] / self.nodes_per_side as f64
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let n = self.nodes_per_axis();
        let mut out = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            out[a] = idx % n;
            idx /= n;
        }
        out
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        let n = self.nodes_per_axis();
        multi.iter().fold(0, |acc, &i| acc * n + i)
    }

    pub fn center_index(&self) -> usize {
        self.linear_index(&vec![self.nodes_per_side; self.dim()])
    }

    pub fn node(&self, multi: &[usize]) -> DVector<f64> {
        let n = self.nodes_per_side as f64;
        DVector::from_fn(self.dim(), |a, _| {
            self.center[a] + (multi[a] as f64 - n) / n * self.half_widths[a]
        })
    }

    pub fn points(&self) -> Vec<DVector<f64>> {
        (0..self.len()).map(|i| self.node(&self.multi_index(i))).collect()
    }
}

/// Samples of a leaf `z ↦ z + ψ(z)`: parallel lists of `M0` coordinates
/// and `E*` coordinates, plus the frame they refer to.
#[derive(Debug, Clone)]
pub struct LeafSample {
    pub base_point: DVector<f64>,
    pub m0: SubspaceBasis,
    pub e_star: SubspaceBasis,
    /// Tensor structure of `grid` when it came from a [`TensorGrid`].
    pub shape: Vec<usize>,
    pub grid: Vec<DVector<f64>>,
    pub psi: Vec<DVector<f64>>,
    /// Per-point discrepancy between the two sweep orders (zero for one path).
    pub path_residuals: Vec<f64>,
    pub integrability_residual: f64,
    /// RK4 step, `None` for solvers that do not integrate.
    pub step: Option<f64>,
    pub jacobian_source: Option<JacobianSource>,
    pub complete: bool,
}

impl LeafSample {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Ambient point `M0 z + E* ψ(z)` of sample `i`.
    pub fn point(&self, i: usize) -> DVector<f64> {
        self.m0.basis() * &self.grid[i] + self.e_star.basis() * &self.psi[i]
    }

    pub fn points(&self) -> Vec<DVector<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// True when the mixed-path residual exceeds `100 step^4`.
    pub fn non_integrable(&self) -> bool {
        match self.step {
            Some(h) => self.integrability_residual > 100.0 * h.powi(4),
            None => false,
        }
    }

    /// Index of the grid point nearest to `z`.
    pub fn nearest(&self, z: &DVector<f64>) -> Option<usize> {
        self.grid
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - z).norm().total_cmp(&(b.1 - z).norm()))
            .map(|(i, _)| i)
    }

    /// Indices of samples whose reconstructed point is outside the co-final set.
    pub fn cofinal_violations(&self, family: &DistributionFamily) -> Result<Vec<usize>> {
        let mut bad = Vec::new();
        for i in 0..self.len() {
            let m = family.evaluate(&self.point(i))?;
            if !is_complement(&m, &self.e_star)? {
                bad.push(i);
            }
        }
        Ok(bad)
    }
}
