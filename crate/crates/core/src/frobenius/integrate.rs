use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{AlphaField, Frame, LeafProblem, LeafSample, TensorGrid};
use crate::error::{Error, Result};
use crate::linalg::{is_complement, DEFAULT_RESIDUAL_TOL};

/// Grid and step for [`integrate_leaf`]. Grid spacing along axis `a` is
/// `half_widths[a] / nodes_per_side`; each spacing is covered by
/// `ceil(spacing / step)` equal RK4 steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafOptions {
    pub half_widths: Vec<f64>,
    pub step: f64,
    pub nodes_per_side: usize,
    pub parallel: bool,
}

impl LeafOptions {
    pub const DEFAULT_STEP: f64 = 1e-3;
    pub const DEFAULT_NODES_PER_SIDE: usize = 10;

    pub fn new(half_widths: Vec<f64>, step: f64) -> Self {
        LeafOptions { half_widths, step, nodes_per_side: Self::DEFAULT_NODES_PER_SIDE, parallel: false }
    }

    /// The same half-width on every axis.
    pub fn uniform(dim: usize, extent: f64, step: f64) -> Self {
        Self::new(vec![extent; dim], step)
    }

    pub fn with_nodes(mut self, nodes_per_side: usize) -> Self {
        self.nodes_per_side = nodes_per_side;
        self
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }
}

/// Matrices converting `α` from the field's bases into the problem's.
struct BasisChange {
    star: DMatrix<f64>,
    m0: DMatrix<f64>,
}

impl BasisChange {
    fn new(problem: &LeafProblem, field: &dyn AlphaField) -> Result<Self> {
        if !field.m0().same_span(&problem.m0, DEFAULT_RESIDUAL_TOL)
            || !field.e_star().same_span(&problem.e_star, DEFAULT_RESIDUAL_TOL)
        {
            return Err(Error::invalid("field and problem disagree on M0 or E*"));
        }
        Ok(BasisChange {
            star: problem.e_star.basis().tr_mul(field.e_star().basis()),
            m0: field.m0().basis().tr_mul(problem.m0.basis()),
        })
    }

    fn apply(&self, alpha: &DMatrix<f64>) -> DMatrix<f64> {
        &self.star * alpha * &self.m0
    }
}

struct Sweep<'a> {
    frame: &'a Frame,
    field: &'a dyn AlphaField,
    change: BasisChange,
    grid: TensorGrid,
    step: f64,
}

enum LineFailure {
    Field(Error),
    NonFinite,
}

impl Sweep<'_> {
    /// `dψ/dt = α(M0 z + E* ψ) e_axis`.
    fn rhs(&self, z: &DVector<f64>, psi: &DVector<f64>, axis: usize) -> std::result::Result<DVector<f64>, LineFailure> {
        let x = self.frame.join(z, psi);
        let a = self.field.alpha(&x).map_err(LineFailure::Field)?;
        let a = self.change.apply(&a);
        let d = a.column(axis).into_owned();
        if d.iter().any(|v| !v.is_finite()) {
            return Err(LineFailure::NonFinite);
        }
        Ok(d)
    }

    fn substeps(&self, axis: usize) -> (usize, f64) {
        let spacing = self.grid.spacing(axis);
        let n = (spacing / self.step).ceil().max(1.0) as usize;
        (n, spacing / n as f64)
    }

    /// Classical RK4 from `z` along `±e_axis` over one grid spacing.
    fn advance(
        &self,
        z: &DVector<f64>,
        psi: &DVector<f64>,
        axis: usize,
        sign: f64,
    ) -> std::result::Result<DVector<f64>, LineFailure> {
        let (n, h) = self.substeps(axis);
        let h = sign * h;
        let mut z = z.clone();
        let mut psi = psi.clone();
        for _ in 0..n {
            let mut zh = z.clone();
            zh[axis] += 0.5 * h;
            let mut z1 = z.clone();
            z1[axis] += h;
            let k1 = self.rhs(&z, &psi, axis)?;
            let k2 = self.rhs(&zh, &(&psi + &k1 * (0.5 * h)), axis)?;
            let k3 = self.rhs(&zh, &(&psi + &k2 * (0.5 * h)), axis)?;
            let k4 = self.rhs(&z1, &(&psi + &k3 * h), axis)?;
            psi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            if psi.iter().any(|v| !v.is_finite()) {
                return Err(LineFailure::NonFinite);
            }
            z = z1;
        }
        Ok(psi)
    }

    /// Fill the line through `start` along `axis`, both directions.
    fn line(
        &self,
        start: usize,
        psi_start: &DVector<f64>,
        axis: usize,
    ) -> (Vec<(usize, DVector<f64>)>, Option<LineFailure>) {
        let mut out = Vec::new();
        let mut failure = None;
        let c = self.grid.nodes_per_side;
        for sign in [1.0, -1.0] {
            let mut multi = self.grid.multi_index(start);
            let mut psi = psi_start.clone();
            for _ in 0..c {
                let z = self.grid.node(&multi);
                match self.advance(&z, &psi, axis, sign) {
                    Ok(next) => psi = next,
                    Err(e) => {
                        failure.get_or_insert(e);
                        break;
                    }
                }
                multi[axis] = if sign > 0.0 { multi[axis] + 1 } else { multi[axis] - 1 };
                out.push((self.grid.linear_index(&multi), psi.clone()));
            }
        }
        (out, failure)
    }

    /// Axis-ordered sweep; `order[0]` is integrated first.
    fn run(&self, psi0: &DVector<f64>, order: &[usize], parallel: bool) -> std::result::Result<Vec<DVector<f64>>, (Vec<Option<DVector<f64>>>, LineFailure)> {
        let len = self.grid.len();
        let c = self.grid.nodes_per_side;
        let mut psi: Vec<Option<DVector<f64>>> = vec![None; len];
        psi[self.grid.center_index()] = Some(psi0.clone());
        for (s, &axis) in order.iter().enumerate() {
            let starts: Vec<usize> = (0..len)
                .filter(|&i| {
                    let m = self.grid.multi_index(i);
                    m[axis] == c && order[s + 1..].iter().all(|&b| m[b] == c)
                })
                .collect();
            let work = |&i: &usize| {
                let start = psi[i].as_ref().expect("line start filled by earlier stage");
                self.line(i, start, axis)
            };
            let results: Vec<_> = if parallel {
                starts.par_iter().map(work).collect()
            } else {
                starts.iter().map(work).collect()
            };
            let mut failure = None;
            for (values, err) in results {
                for (i, v) in values {
                    psi[i] = Some(v);
                }
                if failure.is_none() {
                    failure = err;
                }
            }
            if let Some(f) = failure {
                return Err((psi, f));
            }
        }
        Ok(psi.into_iter().map(|p| p.expect("sweep covers the grid")).collect())
    }
}

fn sample_from(
    problem: &LeafProblem,
    grid: &TensorGrid,
    psi: Vec<Option<DVector<f64>>>,
    step: f64,
    source: Option<super::JacobianSource>,
) -> LeafSample {
    let mut zs = Vec::new();
    let mut ps = Vec::new();
    for (i, p) in psi.into_iter().enumerate() {
        if let Some(p) = p {
            zs.push(grid.node(&grid.multi_index(i)));
            ps.push(p);
        }
    }
    LeafSample {
        base_point: problem.base_point.clone(),
        m0: problem.m0.clone(),
        e_star: problem.e_star.clone(),
        shape: Vec::new(),
        path_residuals: vec![0.0; zs.len()],
        grid: zs,
        psi: ps,
        integrability_residual: 0.0,
        step: Some(step),
        jacobian_source: source,
        complete: false,
    }
}

fn failure_error(partial: LeafSample, failure: LineFailure) -> Error {
    match failure {
        LineFailure::NonFinite => Error::Divergence { partial: Box::new(partial) },
        LineFailure::Field(e) => Error::AbortedLeaf { partial: Box::new(partial), source: Box::new(e) },
    }
}

/// Integrate `ψ' = α(z + ψ(z))` over a tensor grid in `M0` coordinates centred
/// on the base coordinate of `x0`, sweeping axes in increasing order. For
/// `dim M0 > 1` a second sweep in decreasing axis order supplies the
/// mixed-path residual; the returned values come from the first sweep.
pub fn integrate_leaf(problem: &LeafProblem, field: &dyn AlphaField, options: &LeafOptions) -> Result<LeafSample> {
    if !(options.step > 0.0) || !options.step.is_finite() {
        return Err(Error::invalid(format!("step must be positive, got {}", options.step)));
    }
    let frame = Frame::new(problem.m0.clone(), problem.e_star.clone())?;
    let (z0, psi0) = frame.split(&problem.base_point);
    let grid = TensorGrid::new(z0, options.half_widths.clone(), options.nodes_per_side)?;
    let change = BasisChange::new(problem, field)?;
    let sweep = Sweep { frame: &frame, field, change, grid: grid.clone(), step: options.step };
    let k = grid.dim();
    let effective_step = (0..k).map(|a| sweep.substeps(a).1).fold(0.0, f64::max);
    let source = problem.family.jacobian_source();

    let forward: Vec<usize> = (0..k).collect();
    let first = sweep
        .run(&psi0, &forward, options.parallel)
        .map_err(|(psi, f)| failure_error(sample_from(problem, &grid, psi, effective_step, source), f))?;

    let mut path_residuals = vec![0.0; first.len()];
    if k > 1 {
        let backward: Vec<usize> = (0..k).rev().collect();
        match sweep.run(&psi0, &backward, options.parallel) {
            Ok(second) => {
                for (r, (a, b)) in path_residuals.iter_mut().zip(first.iter().zip(&second)) {
                    *r = (a - b).norm();
                }
            }
            Err((_, f)) => {
                let partial = sample_from(problem, &grid, first.into_iter().map(Some).collect(), effective_step, source);
                return Err(failure_error(partial, f));
            }
        }
    }

    let mut sample = LeafSample {
        base_point: problem.base_point.clone(),
        m0: problem.m0.clone(),
        e_star: problem.e_star.clone(),
        shape: grid.shape(),
        grid: grid.points(),
        integrability_residual: path_residuals.iter().copied().fold(0.0, f64::max),
        path_residuals,
        psi: first,
        step: Some(effective_step),
        jacobian_source: source,
        complete: true,
    };

    for i in 0..sample.len() {
        let x = sample.point(i);
        let member = problem.family.evaluate(&x).and_then(|m| is_complement(&m, &problem.e_star));
        let err = match member {
            Ok(true) => continue,
            Ok(false) => Error::NotCofinal { point: x.iter().copied().collect() },
            Err(e) => e,
        };
        sample.complete = false;
        sample.shape.clear();
        return Err(Error::AbortedLeaf { partial: Box::new(sample), source: Box::new(err) });
    }
    Ok(sample)
}
