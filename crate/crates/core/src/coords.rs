//! Coordinate operators between subspaces sharing a complement.
//!
//! If `E0 ⊕ E* = E` and `E1 ⊕ E* = E`, there is exactly one linear
//! `α: E0 → E*` with `E1 = {e + αe : e ∈ E0}`; it equals
//! `P^{E0}_{E*} P^{E*}_{E1}` restricted to `E0`. Matrices of `α` are
//! expressed in the stored (orthonormal) bases of `E0` and `E*`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{is_complement, oblique_projection, SubspaceBasis};

#[derive(Debug, Clone)]
pub struct CoordinateOperator {
    pub e0: SubspaceBasis,
    pub e_star: SubspaceBasis,
    /// `dim E* x dim E0`.
    pub alpha: DMatrix<f64>,
}

pub fn coordinate_operator(
    e0: &SubspaceBasis,
    e1: &SubspaceBasis,
    e_star: &SubspaceBasis,
) -> Result<CoordinateOperator> {
    if e0.ambient_dim() != e_star.ambient_dim() || e1.ambient_dim() != e_star.ambient_dim() {
        return Err(Error::invalid("E0, E1 and E* must share an ambient space"));
    }
    let onto_e1 = oblique_projection(e1, e_star)
        .map_err(|_| Error::NotComplementary("E1 and E* are not complementary".into()))?;
    let onto_star = oblique_projection(e_star, e0)
        .map_err(|_| Error::NotComplementary("E0 and E* are not complementary".into()))?;
    let image = onto_star.projection_onto_first * onto_e1.projection_onto_first * e0.basis();
    Ok(CoordinateOperator {
        e0: e0.clone(),
        e_star: e_star.clone(),
        alpha: e_star.basis().tr_mul(&image),
    })
}

impl CoordinateOperator {
    /// Build from an explicit matrix in the bases of `e0` and `e_star`.
    pub fn from_matrix(e0: SubspaceBasis, e_star: SubspaceBasis, alpha: DMatrix<f64>) -> Result<Self> {
        if alpha.shape() != (e_star.dim(), e0.dim()) {
            return Err(Error::invalid(format!(
                "alpha must be {}x{}, got {}x{}",
                e_star.dim(),
                e0.dim(),
                alpha.nrows(),
                alpha.ncols()
            )));
        }
        if !is_complement(&e0, &e_star)? {
            return Err(Error::NotComplementary("E0 and E* are not complementary".into()));
        }
        Ok(CoordinateOperator { e0, e_star, alpha })
    }

    /// `α` as an operator on the ambient space, zero on `E*`.
    pub fn ambient_matrix(&self) -> DMatrix<f64> {
        self.e_star.basis() * &self.alpha * self.e0.basis().transpose()
    }
}

/// `{e + αe : e ∈ E0}`.
pub fn graph_subspace(co: &CoordinateOperator) -> Result<SubspaceBasis> {
    if co.e0.dim() == 0 {
        return Ok(SubspaceBasis::zero(co.e0.ambient_dim()));
    }
    let cols = co.e0.basis() + co.e_star.basis() * &co.alpha;
    let graph = SubspaceBasis::from_columns(cols)?;
    if !is_complement(&graph, &co.e_star)? {
        return Err(Error::Inconsistent("graph subspace does not complement E*".into()));
    }
    Ok(graph)
}

/// Membership of `x` in the co-final set: `M(x) ⊕ E* = E`.
pub fn cofinal_member(m_x: &SubspaceBasis, e_star: &SubspaceBasis) -> Result<bool> {
    is_complement(m_x, e_star)
}
