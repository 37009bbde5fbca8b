//! Generalized inverses under perturbation, coordinate operators between
//! complementary subspaces, integral leaves of kernel distributions, and
//! rectifying charts of fixed-rank matrix strata.

pub mod coords;
pub mod critpoint;
pub mod error;
pub mod frobenius;
pub mod geninv;
pub mod linalg;
pub mod rankmanifold;

pub use error::{Error, Result};
pub use geninv::{construct_geninv, GenInverse, PerturbationContext};
pub use linalg::{Operator, SubspaceBasis};
