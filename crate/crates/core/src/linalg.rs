//! Tolerant dense primitives: numerical rank, kernels and ranges, subspaces
//! with orthonormal bases, and oblique projections for direct sums.
//!
//! Every subspace is stored with an orthonormal basis. Oblique structure
//! (a projection onto one summand along another) lives in [`SplitPair`].
//! Spaces of operators are handled by flattening `m x n` matrices to
//! vectors of length `m * n` in column-major order, see [`flatten`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default relative rank tolerance, scaled by `sigma_max * max(rows, cols)`.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Relative tolerance for residual-type checks (containment, idempotency).
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-8;

/// A dense real operator between finite-dimensional spaces. Never empty,
/// never non-finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator(DMatrix<f64>);

impl Operator {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::invalid(format!(
                "operator must be at least 1x1, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        check_finite(&matrix)?;
        Ok(Operator(matrix))
    }

    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "expected {} entries for a {rows}x{cols} operator, got {}",
                rows * cols,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(DMatrix::identity(n, n))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

impl std::ops::Deref for Operator {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub(crate) fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        let (r, c) = (pos % m.nrows().max(1), pos / m.nrows().max(1));
        return Err(Error::invalid(format!("non-finite entry at ({r}, {c})")));
    }
    Ok(())
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Singular values sorted in descending order; NaN if the SVD fails.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s = to_faer(m)
        .singular_values()
        .unwrap_or_else(|_| vec![f64::NAN; m.nrows().min(m.ncols())]);
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Spectral norm (largest singular value); zero for empty matrices.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

fn rank_threshold(sigma_max: f64, rows: usize, cols: usize, tol: f64) -> f64 {
    tol * sigma_max * rows.max(cols) as f64
}

fn rank_from_sorted(s: &[f64], rows: usize, cols: usize, tol: f64) -> usize {
    let Some(&smax) = s.first() else { return 0 };
    if smax == 0.0 {
        return 0;
    }
    let thr = rank_threshold(smax, rows, cols, tol);
    s.iter().take_while(|&&v| v > thr).count()
}

/// Number of singular values above `tol * sigma_max * max(rows, cols)`.
pub fn numerical_rank(a: &DMatrix<f64>, tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("rank tolerance must be positive, got {tol}")));
    }
    check_finite(a)?;
    Ok(rank_from_sorted(&singular_values(a), a.nrows(), a.ncols(), tol))
}

/// Full SVD with singular values in descending order: `u` is `m x m`,
/// `v` is `n x n`, `s` has `min(m, n)` entries.
struct SortedSvd {
    u: DMatrix<f64>,
    s: Vec<f64>,
    v: DMatrix<f64>,
}

fn sorted_svd(m: &DMatrix<f64>) -> Result<SortedSvd> {
    let svd = to_faer(m)
        .svd()
        .map_err(|e| Error::Inconsistent(format!("SVD did not converge: {e:?}")))?;
    let k = m.nrows().min(m.ncols());
    let diag = svd.S().column_vector();
    let raw: Vec<f64> = (0..k).map(|i| diag[i]).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| raw[j].total_cmp(&raw[i]));
    let (u, v) = (from_faer(svd.U()), from_faer(svd.V()));
    let permute = |q: &DMatrix<f64>| {
        let mut idx = order.clone();
        idx.extend(k..q.ncols());
        q.select_columns(&idx)
    };
    Ok(SortedSvd { u: permute(&u), s: order.iter().map(|&i| raw[i]).collect(), v: permute(&v) })
}

/// Flip each column so that its largest-magnitude entry is positive. Makes
/// bases extracted from an SVD reproducible (e.g. `e1` rather than `-e1`).
fn canonical_signs(mut q: DMatrix<f64>) -> DMatrix<f64> {
    for mut col in q.column_iter_mut() {
        let amax = col.amax();
        if amax == 0.0 {
            continue;
        }
        if let Some(v) = col.iter().find(|v| v.abs() >= amax - 1e-12 * amax).copied() {
            if v < 0.0 {
                col.neg_mut();
            }
        }
    }
    q
}

/// Orthonormal basis of the kernel of `a`. Dimension is `cols - rank`.
pub fn null_space(a: &DMatrix<f64>) -> Result<SubspaceBasis> {
    null_space_tol(a, DEFAULT_RANK_TOL)
}

pub fn null_space_tol(a: &DMatrix<f64>, tol: f64) -> Result<SubspaceBasis> {
    check_finite(a)?;
    let (m, n) = (a.nrows(), a.ncols());
    if n == 0 {
        return Ok(SubspaceBasis::zero(0));
    }
    if m == 0 {
        return Ok(SubspaceBasis::full(n));
    }
    let svd = sorted_svd(a)?;
    let r = rank_from_sorted(&svd.s, m, n, tol);
    let basis = svd.v.columns(r, n - r).into_owned();
    Ok(SubspaceBasis::from_orthonormal(n, canonical_signs(basis)))
}

/// Orthonormal basis of the column space of `a`.
pub fn range_space(a: &DMatrix<f64>) -> Result<SubspaceBasis> {
    range_space_tol(a, DEFAULT_RANK_TOL)
}

pub fn range_space_tol(a: &DMatrix<f64>, tol: f64) -> Result<SubspaceBasis> {
    check_finite(a)?;
    let (m, n) = (a.nrows(), a.ncols());
    if m == 0 || n == 0 {
        return Ok(SubspaceBasis::zero(m));
    }
    let svd = sorted_svd(a)?;
    let r = rank_from_sorted(&svd.s, m, n, tol);
    let basis = svd.u.columns(0, r).into_owned();
    Ok(SubspaceBasis::from_orthonormal(m, canonical_signs(basis)))
}

/// A subspace of `R^ambient_dim`, stored by an orthonormal basis
/// (`ambient_dim x k`, `k` may be zero).
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    ambient_dim: usize,
    basis: DMatrix<f64>,
}

impl SubspaceBasis {
    pub fn zero(ambient_dim: usize) -> Self {
        SubspaceBasis { ambient_dim, basis: DMatrix::zeros(ambient_dim, 0) }
    }

    pub fn full(ambient_dim: usize) -> Self {
        SubspaceBasis { ambient_dim, basis: DMatrix::identity(ambient_dim, ambient_dim) }
    }

    fn from_orthonormal(ambient_dim: usize, basis: DMatrix<f64>) -> Self {
        debug_assert_eq!(basis.nrows(), ambient_dim);
        SubspaceBasis { ambient_dim, basis }
    }

    /// Keep already-orthonormal columns verbatim, e.g. a basis read back from disk.
    pub fn from_orthonormal_columns(columns: DMatrix<f64>) -> Result<Self> {
        check_finite(&columns)?;
        let k = columns.ncols();
        let defect = (columns.tr_mul(&columns) - DMatrix::identity(k, k)).amax();
        if defect > 1e-12 {
            return Err(Error::invalid(format!("columns are not orthonormal: defect {defect:e}")));
        }
        Ok(Self::from_orthonormal(columns.nrows(), columns))
    }

    /// Span of linearly independent columns. The columns are orthonormalized
    /// by Gram-Schmidt so the first column keeps its direction.
    pub fn from_columns(columns: DMatrix<f64>) -> Result<Self> {
        Self::from_columns_tol(columns, DEFAULT_RANK_TOL)
    }

    pub fn from_columns_tol(columns: DMatrix<f64>, tol: f64) -> Result<Self> {
        check_finite(&columns)?;
        let (n, k) = (columns.nrows(), columns.ncols());
        if k > n {
            return Err(Error::invalid(format!("{k} columns cannot be independent in R^{n}")));
        }
        if k == 0 {
            return Ok(Self::zero(n));
        }
        let rank = numerical_rank(&columns, tol)?;
        if rank < k {
            return Err(Error::invalid(format!(
                "basis columns are dependent: numerical rank {rank} < {k}"
            )));
        }
        let mut q = columns;
        for j in 0..k {
            // Two passes of modified Gram-Schmidt.
            for _ in 0..2 {
                for i in 0..j {
                    let proj = q.column(i).dot(&q.column(j));
                    let qi = q.column(i).into_owned();
                    q.column_mut(j).axpy(-proj, &qi, 1.0);
                }
            }
            let norm = q.column(j).norm();
            q.column_mut(j).unscale_mut(norm);
        }
        Ok(Self::from_orthonormal(n, q))
    }

    /// Span of arbitrary (possibly dependent) columns.
    pub fn from_spanning(columns: &DMatrix<f64>) -> Result<Self> {
        range_space(columns)
    }

    pub fn from_spanning_tol(columns: &DMatrix<f64>, tol: f64) -> Result<Self> {
        range_space_tol(columns, tol)
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Orthonormal basis, one column per dimension.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn orthogonal_projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    pub fn orthogonal_complement(&self) -> SubspaceBasis {
        if self.dim() == 0 {
            return Self::full(self.ambient_dim);
        }
        if self.dim() == self.ambient_dim {
            return Self::zero(self.ambient_dim);
        }
        null_space(&self.basis.transpose()).expect("orthonormal basis is finite")
    }

    /// Coordinates of a vector of the subspace in the stored basis.
    pub fn coordinates(&self, v: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(v)
    }

    /// `||(I - Q Q^T) M||_2`: distance of the columns of `m` from the subspace.
    pub fn residual(&self, m: &DMatrix<f64>) -> f64 {
        let proj = &self.basis * self.basis.tr_mul(m);
        spectral_norm(&(m - proj))
    }

    /// `other ⊂ self` up to `tol`.
    pub fn contains(&self, other: &SubspaceBasis, tol: f64) -> bool {
        self.ambient_dim == other.ambient_dim && self.residual(&other.basis) <= tol
    }

    /// Equality of subspaces by mutual containment.
    pub fn same_span(&self, other: &SubspaceBasis, tol: f64) -> bool {
        self.dim() == other.dim() && self.contains(other, tol) && other.contains(self, tol)
    }
}

fn check_ambient(u: &SubspaceBasis, v: &SubspaceBasis) -> Result<()> {
    if u.ambient_dim != v.ambient_dim {
        return Err(Error::invalid(format!(
            "ambient dimensions differ: {} vs {}",
            u.ambient_dim, v.ambient_dim
        )));
    }
    Ok(())
}

fn stack(u: &SubspaceBasis, v: &SubspaceBasis) -> DMatrix<f64> {
    let n = u.ambient_dim;
    let mut s = DMatrix::zeros(n, u.dim() + v.dim());
    s.columns_mut(0, u.dim()).copy_from(&u.basis);
    s.columns_mut(u.dim(), v.dim()).copy_from(&v.basis);
    s
}

/// `dim(U ∩ V) = dim U + dim V - rank [U | V]`.
pub fn intersection_dim(u: &SubspaceBasis, v: &SubspaceBasis) -> Result<usize> {
    check_ambient(u, v)?;
    if u.dim() == 0 || v.dim() == 0 {
        return Ok(0);
    }
    let r = numerical_rank(&stack(u, v), DEFAULT_RANK_TOL)?;
    Ok(u.dim() + v.dim() - r)
}

/// True iff `U ⊕ V` is the whole ambient space.
pub fn is_complement(u: &SubspaceBasis, v: &SubspaceBasis) -> Result<bool> {
    check_ambient(u, v)?;
    if u.dim() + v.dim() != u.ambient_dim {
        return Ok(false);
    }
    Ok(intersection_dim(u, v)? == 0)
}

/// Two complementary subspaces and the projection onto the first along the second.
#[derive(Debug, Clone)]
pub struct SplitPair {
    pub first: SubspaceBasis,
    pub second: SubspaceBasis,
    pub projection_onto_first: DMatrix<f64>,
}

impl SplitPair {
    pub fn projection_onto_second(&self) -> DMatrix<f64> {
        let n = self.first.ambient_dim;
        DMatrix::identity(n, n) - &self.projection_onto_first
    }

    /// `||P^2 - P|| / (1 + ||P||^2)`.
    pub fn idempotency_defect(&self) -> f64 {
        let p = &self.projection_onto_first;
        let np = spectral_norm(p);
        spectral_norm(&(p * p - p)) / (1.0 + np * np)
    }
}

/// The projection onto `onto` along `along`:
/// `P = [onto | along] · diag(I, 0) · [onto | along]^{-1}`.
pub fn oblique_projection(onto: &SubspaceBasis, along: &SubspaceBasis) -> Result<SplitPair> {
    check_ambient(onto, along)?;
    let n = onto.ambient_dim;
    if !is_complement(onto, along)? {
        return Err(Error::NotComplementary(format!(
            "dimensions {} + {} in R^{n}, intersection not trivial or sum deficient",
            onto.dim(),
            along.dim()
        )));
    }
    let k = onto.dim();
    let p = if n == 0 {
        DMatrix::zeros(0, 0)
    } else {
        let s = stack(onto, along);
        let inv = s
            .try_inverse()
            .ok_or_else(|| Error::NotComplementary("stacked basis is singular".into()))?;
        &onto.basis * inv.rows(0, k)
    };
    Ok(SplitPair { first: onto.clone(), second: along.clone(), projection_onto_first: p })
}

/// Column-major flattening of an `m x n` matrix into `R^{mn}`.
pub fn flatten(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`flatten`].
pub fn unflatten(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), rows * cols, "flattened length mismatch");
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Solve `m x = rhs` for square `m`; `None` when `m` is numerically singular.
pub(crate) fn solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Some(rhs.clone());
    }
    let s = singular_values(m);
    let smax = s[0];
    let smin = *s.last().unwrap();
    if !(smin > 1e-14 * smax) {
        return None;
    }
    m.clone().lu().solve(rhs)
}

/// Best rank-`k` approximation by truncated SVD.
pub fn truncated_svd(a: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    check_finite(a)?;
    if k > a.nrows().min(a.ncols()) {
        return Err(Error::invalid(format!("rank {k} exceeds min dimension of a {}x{} matrix", a.nrows(), a.ncols())));
    }
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    if k == 0 {
        return Ok(out);
    }
    let svd = sorted_svd(a)?;
    for i in 0..k {
        out += svd.u.column(i) * svd.v.column(i).transpose() * svd.s[i];
    }
    Ok(out)
}

/// Moore-Penrose pseudoinverse via SVD, truncating at the rank tolerance.
pub fn pseudo_inverse(a: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    check_finite(a)?;
    let (m, n) = (a.nrows(), a.ncols());
    if m == 0 || n == 0 {
        return Ok(DMatrix::zeros(n, m));
    }
    let svd = sorted_svd(a)?;
    let r = rank_from_sorted(&svd.s, m, n, tol);
    let mut out = DMatrix::zeros(n, m);
    for i in 0..r {
        out += svd.v.column(i) * svd.u.column(i).transpose() / svd.s[i];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn diag10() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])
    }

    #[test]
    fn rank_of_worked_example_and_identity() {
        assert_eq!(numerical_rank(&diag10(), 1e-12).unwrap(), 1);
        assert_eq!(numerical_rank(&DMatrix::identity(3, 3), DEFAULT_RANK_TOL).unwrap(), 3);
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 2), DEFAULT_RANK_TOL).unwrap(), 0);
    }

    #[test]
    fn rank_rejects_bad_input() {
        let mut m = DMatrix::identity(2, 2);
        m[(1, 0)] = f64::NAN;
        assert!(matches!(numerical_rank(&m, 1e-10), Err(Error::InvalidInput(_))));
        assert!(numerical_rank(&DMatrix::identity(2, 2), 0.0).is_err());
        assert!(Operator::new(m).is_err());
    }

    #[test]
    fn kernel_and_range_of_diag() {
        let n = null_space(&diag10()).unwrap();
        assert_eq!(n.dim(), 1);
        assert_relative_eq!(n.basis()[(0, 0)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(n.basis()[(1, 0)], 1.0, epsilon = 1e-15);
        let r = range_space(&diag10()).unwrap();
        assert_eq!(r.dim(), 1);
        assert_relative_eq!(r.basis()[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_subspaces() {
        let inv = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 3.0]);
        assert_eq!(null_space(&inv).unwrap().dim(), 0);
        assert_eq!(range_space(&DMatrix::zeros(3, 4)).unwrap().dim(), 0);
        assert_eq!(null_space(&DMatrix::zeros(3, 4)).unwrap().dim(), 4);
        // wide matrix: kernel needs the full right basis
        let wide = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let k = null_space(&wide).unwrap();
        assert_eq!(k.dim(), 2);
        assert!((wide * k.basis()).norm() < 1e-14);
    }

    #[test]
    fn oblique_projection_examples() {
        let e1 = SubspaceBasis::from_columns(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let e2 = SubspaceBasis::from_columns(DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
        let p = oblique_projection(&e1, &e2).unwrap();
        assert_relative_eq!(p.projection_onto_first, diag10(), epsilon = 1e-15);

        let d = SubspaceBasis::from_columns(DMatrix::from_column_slice(2, 1, &[1.0, 1.0])).unwrap();
        let p = oblique_projection(&e1, &d).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]);
        assert_relative_eq!(p.projection_onto_first, expected, epsilon = 1e-14);
        assert!(p.idempotency_defect() < 1e-15);
    }

    #[test]
    fn non_complementary_pair_is_rejected() {
        let e1 = SubspaceBasis::from_columns(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        assert!(!is_complement(&e1, &e1).unwrap());
        assert!(matches!(oblique_projection(&e1, &e1), Err(Error::NotComplementary(_))));
        let other = SubspaceBasis::full(3);
        assert!(matches!(is_complement(&e1, &other), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn zero_dimensional_splits() {
        let full = SubspaceBasis::full(3);
        let zero = SubspaceBasis::zero(3);
        assert!(is_complement(&full, &zero).unwrap());
        let p = oblique_projection(&full, &zero).unwrap();
        assert_relative_eq!(p.projection_onto_first, DMatrix::identity(3, 3), epsilon = 1e-15);
        let q = oblique_projection(&zero, &full).unwrap();
        assert_eq!(q.projection_onto_first.norm(), 0.0);
    }

    #[test]
    fn gram_schmidt_keeps_first_direction_and_rejects_dependence() {
        let cols = DMatrix::from_column_slice(3, 2, &[2.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let b = SubspaceBasis::from_columns(cols).unwrap();
        assert_relative_eq!(b.basis()[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!((b.basis().transpose() * b.basis()), DMatrix::identity(2, 2), epsilon = 1e-15);
        let dep = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(SubspaceBasis::from_columns(dep).is_err());
    }

    #[test]
    fn flatten_is_column_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let v = flatten(&m);
        assert_eq!(v.as_slice(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(unflatten(&v, 2, 3), m);
    }

    #[test]
    fn pseudo_inverse_of_rank_deficient() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 0.0, 0.0]);
        let p = pseudo_inverse(&a, DEFAULT_RANK_TOL).unwrap();
        assert_relative_eq!(&a * &p * &a, a.clone(), epsilon = 1e-13);
        assert_relative_eq!(&p * &a * &p, p.clone(), epsilon = 1e-13);
    }
}
