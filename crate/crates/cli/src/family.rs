//! Builtin level-set maps for the `leaf` command.

use std::sync::Arc;

use frobenius_core::frobenius::SmoothMap;
use nalgebra::{DMatrix, DVector};

use crate::error::{CliError, Result};
use crate::problem::{Monomial, ProblemFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    Circle,
    Sphere,
    Polynomial,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Circle => "circle",
            FamilyKind::Sphere => "sphere",
            FamilyKind::Polynomial => "polynomial",
        }
    }
}

pub struct Family {
    pub kind: FamilyKind,
    pub map: SmoothMap,
    pub default_base: Option<DVector<f64>>,
}

impl Family {
    /// Leaves of `|x|^2 - 1` are spheres about the origin, so the leaf
    /// through `x0` is `x_n = sign(x0_n) sqrt(|x0|^2 - x_1^2 - ...)`.
    pub fn closed_form_error(&self, x0: &DVector<f64>, points: &[DVector<f64>]) -> Option<f64> {
        if self.kind == FamilyKind::Polynomial || x0[x0.len() - 1] == 0.0 {
            return None;
        }
        let n = x0.len();
        let r2 = x0.norm_squared();
        let sign = x0[n - 1].signum();
        let mut worst: f64 = 0.0;
        for x in points {
            let rest = x.rows(0, n - 1).norm_squared();
            if rest > r2 {
                return None;
            }
            worst = worst.max((x[n - 1] - sign * (r2 - rest).sqrt()).abs());
        }
        Some(worst)
    }
}

fn sphere_map(n: usize) -> SmoothMap {
    SmoothMap::new(
        n,
        1,
        |x: &DVector<f64>| Ok(DVector::from_element(1, x.norm_squared() - 1.0)),
        |x: &DVector<f64>| Ok(DMatrix::from_row_slice(1, x.len(), (x * 2.0).as_slice())),
    )
}

fn monomial_value(m: &Monomial, x: &DVector<f64>) -> f64 {
    m.exps.iter().enumerate().fold(m.coef, |acc, (i, &e)| acc * x[i].powi(e as i32))
}

fn monomial_partial(m: &Monomial, x: &DVector<f64>, j: usize) -> f64 {
    if m.exps[j] == 0 {
        return 0.0;
    }
    m.exps.iter().enumerate().fold(m.coef * m.exps[j] as f64, |acc, (i, &e)| {
        let e = if i == j { e - 1 } else { e };
        acc * x[i].powi(e as i32)
    })
}

fn polynomial_map(polys: Vec<Vec<Monomial>>) -> SmoothMap {
    let n = polys[0][0].exps.len();
    let m = polys.len();
    let polys = Arc::new(polys);
    let pv = Arc::clone(&polys);
    SmoothMap::new(
        n,
        m,
        move |x: &DVector<f64>| Ok(DVector::from_fn(m, |i, _| pv[i].iter().map(|t| monomial_value(t, x)).sum())),
        move |x: &DVector<f64>| Ok(DMatrix::from_fn(m, n, |i, j| polys[i].iter().map(|t| monomial_partial(t, x, j)).sum())),
    )
}

pub fn from_problem(p: &ProblemFile) -> Result<Family> {
    let name = p.param_str("family").unwrap_or("circle");
    let family = match name {
        "circle" => Family { kind: FamilyKind::Circle, map: sphere_map(2), default_base: Some(DVector::from_vec(vec![0.0, 1.0])) },
        "sphere" => {
            let n: usize = p.param_or("dim", 3)?;
            if n < 2 {
                return Err(CliError::Input(format!("{}: sphere needs dim >= 2", p.path)));
            }
            let mut north = DVector::zeros(n);
            north[n - 1] = 1.0;
            Family { kind: FamilyKind::Sphere, map: sphere_map(n), default_base: Some(north) }
        }
        "polynomial" => {
            if p.polynomials.is_empty() {
                return Err(CliError::Input(format!("{}: family polynomial needs a [polynomial] section", p.path)));
            }
            let polys = p.polynomials.iter().map(|l| l.value.clone()).collect();
            Family { kind: FamilyKind::Polynomial, map: polynomial_map(polys), default_base: None }
        }
        other => {
            let line = p.params.get("family").map(|l| l.line).unwrap_or(0);
            return Err(CliError::Parse {
                path: p.path.clone(),
                line,
                message: format!("unknown family `{other}` (circle, sphere, polynomial)"),
            });
        }
    };
    if name != "sphere" && p.has_param("dim") {
        return Err(CliError::Input(format!("{}: `dim` only applies to the sphere family", p.path)));
    }
    Ok(family)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_matches_circle() {
        let p = ProblemFile::parse("t", "version = v1\nkind = leaf\n[params]\nfamily = polynomial\n[polynomial]\n1 2 0\n1 0 2\n-1 0 0\n").unwrap();
        let poly = from_problem(&p).unwrap().map;
        let circle = sphere_map(2);
        let x = DVector::from_vec(vec![0.3, -1.7]);
        assert_eq!(poly.value(&x).unwrap(), circle.value(&x).unwrap());
        assert_eq!(poly.jacobian(&x).unwrap(), circle.jacobian(&x).unwrap());
    }
}
