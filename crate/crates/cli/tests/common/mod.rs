#![allow(dead_code)]

use frobenius_core::geninv::{construct_geninv, GenInverse};
use frobenius_core::linalg::{null_space, range_space, spectral_norm, Operator, SubspaceBasis};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(m: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vec(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `U V^T` with Gaussian `m x r` and `n x r` factors.
pub fn random_rank(m: usize, n: usize, r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    if r == 0 {
        return DMatrix::zeros(m, n);
    }
    gaussian(m, r, rng) * gaussian(n, r, rng).transpose()
}

/// Complement of `fixed` in R^n, tilted away from the orthogonal one.
pub fn tilted_complement(fixed: &SubspaceBasis, tilt: f64, rng: &mut ChaCha8Rng) -> SubspaceBasis {
    let perp = fixed.orthogonal_complement();
    if perp.dim() == 0 {
        return perp;
    }
    let cols = perp.basis() + fixed.basis() * gaussian(fixed.dim(), perp.dim(), rng) * tilt;
    SubspaceBasis::from_columns(cols).unwrap()
}

/// A random `m x n` rank-`r` operator with an oblique generalized inverse.
pub fn random_geninv(m: usize, n: usize, r: usize, rng: &mut ChaCha8Rng) -> GenInverse {
    let a = Operator::new(random_rank(m, n, r, rng)).unwrap();
    let range_plus = tilted_complement(&null_space(a.matrix()).unwrap(), 0.5, rng);
    let null_plus = tilted_complement(&range_space(a.matrix()).unwrap(), 0.5, rng);
    construct_geninv(&a, &range_plus, &null_plus).unwrap()
}

/// A point `T` with `||T - A|| ||A+||` below `frac`. With `keep_rank`
/// the factors of `A = U S V^T` are moved, `T = (U + s dU) S (V + s dV)^T`,
/// so `rank T = rank A`; otherwise a Gaussian direction is added.
pub fn perturb_in_ball(gi: &GenInverse, frac: f64, keep_rank: bool, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = gi.a().matrix();
    let (m, n) = a.shape();
    if !keep_rank {
        let e = gaussian(m, n, rng);
        return a + &e * (frac / (spectral_norm(&e) * gi.a_plus_norm()));
    }
    let u = range_space(a).unwrap();
    let v = range_space(&a.transpose()).unwrap();
    let core = u.basis().transpose() * a * v.basis();
    let du = gaussian(m, u.dim(), rng);
    let dv = gaussian(n, v.dim(), rng);
    let mut s = 1.0;
    loop {
        let t = (u.basis() + &du * s) * &core * (v.basis() + &dv * s).transpose();
        if spectral_norm(&(&t - a)) * gi.a_plus_norm() < frac {
            return t;
        }
        s *= 0.5;
    }
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_frobenius")
}

pub fn golden_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

/// Run the binary; returns exit code, stdout, stderr.
pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let out = std::process::Command::new(bin()).args(args).output().expect("spawn frobenius");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Token-wise comparison: numbers within `rel` relative error, everything
/// else verbatim. Returns the first mismatch.
pub fn compare_texts(expected: &str, actual: &str, rel: f64) -> Result<(), String> {
    let (e, a): (Vec<_>, Vec<_>) = (expected.lines().collect(), actual.lines().collect());
    if e.len() != a.len() {
        return Err(format!("{} lines expected, got {}", e.len(), a.len()));
    }
    for (i, (le, la)) in e.iter().zip(&a).enumerate() {
        let tokens = |l: &str| l.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).map(str::to_string).collect::<Vec<_>>();
        let (te, ta) = (tokens(le), tokens(la));
        if te.len() != ta.len() {
            return Err(format!("line {}: `{le}` vs `{la}`", i + 1));
        }
        for (x, y) in te.iter().zip(&ta) {
            let same = match (x.parse::<f64>(), y.parse::<f64>()) {
                (Ok(u), Ok(v)) => u == v || (u - v).abs() <= rel * (1.0 + u.abs().max(v.abs())) || (u.is_nan() && v.is_nan()),
                _ => x == y,
            };
            if !same {
                return Err(format!("line {}: `{le}` vs `{la}`", i + 1));
            }
        }
    }
    Ok(())
}
