use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{point_of, DistributionFamily, MatrixFn};
use crate::coords::coordinate_operator;
use crate::error::{Error, Result};
use crate::geninv::{locally_fine_detect, GenInverse, DEFAULT_SAMPLING_SEED};
use crate::linalg::{self, is_complement, spectral_norm, SubspaceBasis};

/// A field `x ↦ α(x) ∈ B(M0, E*)`, as `dim E* x dim M0` matrices in the
/// stored bases of `m0()` and `e_star()`.
pub trait AlphaField: Send + Sync {
    fn m0(&self) -> &SubspaceBasis;
    fn e_star(&self) -> &SubspaceBasis;
    fn alpha(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
}

/// Sampled generalized-regularity check run before building kernel fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityCheck {
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
    pub skip: bool,
}

impl Default for RegularityCheck {
    fn default() -> Self {
        RegularityCheck { radius: 1e-2, samples: 64, seed: DEFAULT_SAMPLING_SEED, skip: false }
    }
}

impl RegularityCheck {
    pub fn skipped() -> Self {
        RegularityCheck { skip: true, ..Self::default() }
    }

    pub(crate) fn run(&self, jacobian: &MatrixFn, x0: &DVector<f64>, geninv0: &GenInverse) -> Result<()> {
        let t0 = jacobian(x0)?;
        let a = geninv0.a().matrix();
        if t0.shape() != a.shape() || spectral_norm(&(&t0 - a)) > 1e-10 * (1.0 + spectral_norm(a)) {
            return Err(Error::invalid("f'(x0) does not match the operator of geninv0"));
        }
        if self.skip {
            return Ok(());
        }
        let report = locally_fine_detect(jacobian, x0, geninv0, self.radius, self.samples, self.seed)?;
        match report.witness {
            Some(w) => Err(Error::NotRegular { witness: w.point }),
            None => Ok(()),
        }
    }
}

/// `α(x) = P^{N0}_{E*} D(x)^{-1} P^{E*}_{N0}` with `D(x) = I + T0+ (f'(x) - T0)`,
/// `N0 = N(T0)` and `E* = R(T0+)`.
#[derive(Clone)]
pub struct KernelAlphaField {
    jacobian: Arc<MatrixFn>,
    geninv0: GenInverse,
    n0: SubspaceBasis,
    e_star: SubspaceBasis,
    /// `T0+ T0`, the projection onto `E*` along `N0`.
    onto_e_star: DMatrix<f64>,
}

impl std::fmt::Debug for KernelAlphaField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelAlphaField").field("n0", &self.n0).field("e_star", &self.e_star).finish()
    }
}

pub fn alpha_field_kernel<J>(
    jacobian: J,
    x0: &DVector<f64>,
    geninv0: &GenInverse,
    check: &RegularityCheck,
) -> Result<KernelAlphaField>
where
    J: Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync + 'static,
{
    let jacobian: Arc<MatrixFn> = Arc::new(jacobian);
    if x0.len() != geninv0.cols() {
        return Err(Error::invalid(format!("x0 has length {}, operator has {} columns", x0.len(), geninv0.cols())));
    }
    check.run(&*jacobian, x0, geninv0)?;
    Ok(KernelAlphaField {
        jacobian,
        n0: geninv0.null_a(),
        e_star: geninv0.range_plus().clone(),
        onto_e_star: geninv0.a_plus_a(),
        geninv0: geninv0.clone(),
    })
}

impl KernelAlphaField {
    pub fn from_family(family: &DistributionFamily, x0: &DVector<f64>, geninv0: &GenInverse, check: &RegularityCheck) -> Result<Self> {
        match family {
            DistributionFamily::Kernel { jacobian, .. } => {
                let j = Arc::clone(jacobian);
                alpha_field_kernel(move |x: &DVector<f64>| j(x), x0, geninv0, check)
            }
            DistributionFamily::Generic { .. } => Err(Error::invalid("kernel field needs a kernel family")),
        }
    }

    pub fn geninv0(&self) -> &GenInverse {
        &self.geninv0
    }

    /// `D(x) = I + T0+ (f'(x) - T0)`.
    pub fn d_map(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let tx = (self.jacobian)(x)?;
        let a = self.geninv0.a().matrix();
        if tx.shape() != a.shape() {
            return Err(Error::Evaluation {
                point: point_of(x),
                message: format!("Jacobian has shape {:?}, expected {:?}", tx.shape(), a.shape()),
            });
        }
        let n = a.ncols();
        Ok(DMatrix::identity(n, n) + self.geninv0.a_plus() * (tx - a))
    }
}

impl AlphaField for KernelAlphaField {
    fn m0(&self) -> &SubspaceBasis {
        &self.n0
    }

    fn e_star(&self) -> &SubspaceBasis {
        &self.e_star
    }

    fn alpha(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = self.d_map(x)?;
        let y = linalg::solve(&d, self.n0.basis()).ok_or_else(|| Error::OutOfNeighborhood { point: point_of(x) })?;
        Ok(self.e_star.basis().tr_mul(&(&self.onto_e_star * y)))
    }
}

/// `α(x)` from the coordinate operator of `M(x)` over `M0` along `E*`.
#[derive(Debug, Clone)]
pub struct GenericAlphaField {
    family: DistributionFamily,
    m0: SubspaceBasis,
    e_star: SubspaceBasis,
}

pub fn alpha_field_generic(family: DistributionFamily, m0: SubspaceBasis, e_star: SubspaceBasis) -> Result<GenericAlphaField> {
    if m0.ambient_dim() != family.ambient_dim() || e_star.ambient_dim() != family.ambient_dim() {
        return Err(Error::invalid("M0 and E* must live in the family's ambient space"));
    }
    if !is_complement(&m0, &e_star)? {
        return Err(Error::NotComplementary("M0 and E* are not complementary".into()));
    }
    Ok(GenericAlphaField { family, m0, e_star })
}

impl AlphaField for GenericAlphaField {
    fn m0(&self) -> &SubspaceBasis {
        &self.m0
    }

    fn e_star(&self) -> &SubspaceBasis {
        &self.e_star
    }

    fn alpha(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mx = self.family.evaluate(x)?;
        if !is_complement(&mx, &self.e_star)? {
            return Err(Error::NotCofinal { point: point_of(x) });
        }
        Ok(coordinate_operator(&self.m0, &mx, &self.e_star)?.alpha)
    }
}

/// The same `α` at every point.
#[derive(Debug, Clone)]
pub struct ConstantAlphaField {
    m0: SubspaceBasis,
    e_star: SubspaceBasis,
    alpha: DMatrix<f64>,
}

impl ConstantAlphaField {
    pub fn new(m0: SubspaceBasis, e_star: SubspaceBasis, alpha: DMatrix<f64>) -> Result<Self> {
        let co = crate::coords::CoordinateOperator::from_matrix(m0, e_star, alpha)?;
        Ok(ConstantAlphaField { m0: co.e0, e_star: co.e_star, alpha: co.alpha })
    }
}

impl AlphaField for ConstantAlphaField {
    fn m0(&self) -> &SubspaceBasis {
        &self.m0
    }

    fn e_star(&self) -> &SubspaceBasis {
        &self.e_star
    }

    fn alpha(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.alpha.clone())
    }
}
