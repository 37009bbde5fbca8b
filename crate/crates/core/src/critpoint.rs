//! First-order test for constrained critical points: at a critical point
//! `x0` of `f` restricted to a submanifold `S`, the derivative `f'(x0)`
//! annihilates the tangent space `T_{x0} S`.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::frobenius::LeafSample;
use crate::linalg::{self, flatten, Operator, SubspaceBasis};
use crate::rankmanifold::{tangent_space, OperatorPoint};

#[derive(Debug, Clone)]
pub struct ConstraintSpec {
    pub tangent: SubspaceBasis,
    pub x0: DVector<f64>,
    pub gradient: DVector<f64>,
}

impl ConstraintSpec {
    pub fn new(tangent: SubspaceBasis, x0: DVector<f64>, gradient: DVector<f64>) -> Result<Self> {
        if tangent.ambient_dim() != x0.len() || gradient.len() != x0.len() {
            return Err(Error::invalid(format!(
                "tangent space in R^{}, point in R^{}, gradient in R^{}",
                tangent.ambient_dim(),
                x0.len(),
                gradient.len()
            )));
        }
        if gradient.iter().chain(x0.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite point or gradient"));
        }
        Ok(ConstraintSpec { tangent, x0, gradient })
    }

    /// Tangent space spanned by the columns of `tangent` (any scaling).
    pub fn from_columns(tangent: DMatrix<f64>, x0: DVector<f64>, gradient: DVector<f64>) -> Result<Self> {
        let basis = if tangent.ncols() == 0 {
            SubspaceBasis::zero(tangent.nrows())
        } else {
            SubspaceBasis::from_spanning(&tangent)?
        };
        Self::new(basis, x0, gradient)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Criticality {
    pub residual: f64,
    /// The tangent space was zero-dimensional; the residual is 0 by convention.
    pub degenerate: bool,
}

/// `||Q^T g|| / (1 + ||g||)` for an orthonormal tangent basis `Q`: the size of
/// the gradient's tangential part, independent of the chosen basis.
pub fn criticality_residual(spec: &ConstraintSpec) -> Criticality {
    if spec.tangent.dim() == 0 {
        return Criticality { residual: 0.0, degenerate: true };
    }
    let g = &spec.gradient;
    let tangential = spec.tangent.basis().tr_mul(g).norm();
    Criticality { residual: tangential / (1.0 + g.norm()), degenerate: false }
}

/// Best rank-`k` approximation of `b` by truncated SVD.
pub fn eckart_young_point(b: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    linalg::truncated_svd(b, k)
}

/// `f(X) = ||X - B||_F^2` on the stratum of rank-`rank X` matrices at `X`:
/// tangent space `M(X)`, gradient `2 (X - B)`, flattened column-major.
pub fn eckart_young_spec(b: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<ConstraintSpec> {
    if b.shape() != x.shape() {
        return Err(Error::invalid("B and X differ in shape"));
    }
    let point = OperatorPoint::moore_penrose(Operator::new(x.clone())?)?;
    ConstraintSpec::new(tangent_space(&point)?, flatten(x), flatten(&((x - b) * 2.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Index into the leaf sample.
    pub index: usize,
    pub z: DVector<f64>,
    pub point: DVector<f64>,
    pub value: f64,
    pub residual: f64,
}

/// Criticality residual at every interior node of a tensor-grid leaf, with
/// tangent frames from central differences of `z ↦ M0 z + E* ψ(z)`.
/// Sorted by residual, ties by index.
pub fn sweep_candidates<F, G>(f: F, gradient: G, leaf: &LeafSample) -> Result<Vec<Candidate>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
    G: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let shape = &leaf.shape;
    if shape.is_empty() || !leaf.complete {
        return Err(Error::invalid("candidate sweep needs a complete tensor-grid leaf"));
    }
    if shape.iter().any(|&s| s < 3) {
        return Err(Error::invalid("candidate sweep needs at least three nodes per axis"));
    }
    let k = shape.len();
    let stride = |a: usize| shape[a + 1..].iter().product::<usize>();
    let multi = |mut i: usize| {
        let mut m = vec![0; k];
        for a in (0..k).rev() {
            m[a] = i % shape[a];
            i /= shape[a];
        }
        m
    };
    let mut out = Vec::new();
    for i in 0..leaf.len() {
        let m = multi(i);
        if m.iter().zip(shape).any(|(&mi, &s)| mi == 0 || mi + 1 == s) {
            continue;
        }
        let mut frame = DMatrix::zeros(leaf.base_point.len(), k);
        for a in 0..k {
            let (up, down) = (i + stride(a), i - stride(a));
            let dz = leaf.grid[up][a] - leaf.grid[down][a];
            frame.set_column(a, &((leaf.point(up) - leaf.point(down)) / dz));
        }
        let x = leaf.point(i);
        let spec = ConstraintSpec::from_columns(frame, x.clone(), gradient(&x)?)?;
        out.push(Candidate {
            index: i,
            z: leaf.grid[i].clone(),
            value: f(&x)?,
            residual: criticality_residual(&spec).residual,
            point: x,
        });
    }
    out.sort_by(|p, q| p.residual.partial_cmp(&q.residual).unwrap_or(Ordering::Equal).then(p.index.cmp(&q.index)));
    Ok(out)
}
