use std::path::PathBuf;

use frobenius_core::critpoint::{criticality_residual, eckart_young_point, eckart_young_spec, ConstraintSpec};
use frobenius_core::frobenius::{
    integrate_leaf, phi_leaf, phi_map, AlphaField, KernelAlphaField, LeafOptions, LeafProblem, LeafSample, RegularityCheck, SmoothMap,
};
use frobenius_core::geninv::{condition_report, perturbed_inverse, rank_class_preserved, ConditionReport};
use frobenius_core::linalg::{numerical_rank, range_space, spectral_norm, Operator, SubspaceBasis, DEFAULT_RANK_TOL};
use frobenius_core::rankmanifold::{chart_forward, chart_inverse, in_s, stratum_report, ChartData};
use frobenius_core::{construct_geninv, Error, GenInverse, PerturbationContext};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CliError, Result, EXIT_DIVERGENCE, EXIT_OK};
use crate::family::{self, FamilyKind};
use crate::leafcsv::write_leaf;
use crate::problem::{Kind, ProblemFile};
use crate::report::Report;

/// Command-line overrides; `None` falls back to the problem file, then to defaults.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub step: Option<f64>,
    pub extent: Option<f64>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub parallel: bool,
    /// Where `leaf` writes its CSV.
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub exit: u8,
    /// Printed to stderr when set.
    pub message: Option<String>,
}

impl Outcome {
    fn ok(report: Report) -> Self {
        Outcome { report, exit: EXIT_OK, message: None }
    }
}

pub const DEFAULT_GENINV_TOL: f64 = 1e-10;
pub const DEFAULT_LEVEL_TOL: f64 = 1e-8;
pub const DEFAULT_CRIT_TOL: f64 = 1e-8;
pub const DEFAULT_EXTENT: f64 = 0.5;

fn tolerance(p: &ProblemFile, o: &Options, default: f64) -> Result<f64> {
    let tol = match o.tol {
        Some(t) => t,
        None => p.param_or("tol", default)?,
    };
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(CliError::Input(format!("tolerance must be positive, got {tol}")));
    }
    Ok(tol)
}

fn seed(p: &ProblemFile, o: &Options) -> u64 {
    o.seed.or(p.seed).unwrap_or(0)
}

fn require_kind(p: &ProblemFile, allowed: &[Kind], command: &str) -> Result<()> {
    if allowed.contains(&p.kind) {
        Ok(())
    } else {
        Err(CliError::Input(format!("{}: `{command}` cannot run a problem of kind {}", p.path, p.kind)))
    }
}

fn operator(p: &ProblemFile, name: &str) -> Result<Operator> {
    Ok(Operator::new(p.require_matrix(name)?.clone())?)
}

/// `A+` from `[matrix A]`, with prescribed complements when the file gives
/// spanning columns in `[matrix RPLUS]` (of `R(A+)`) and `[matrix NPLUS]` (of `N(A+)`).
fn base_inverse(p: &ProblemFile) -> Result<(GenInverse, &'static str)> {
    let a = operator(p, "A")?;
    match (p.matrix("RPLUS"), p.matrix("NPLUS")) {
        (None, None) => Ok((GenInverse::moore_penrose(&a)?, "moore-penrose")),
        (Some(r), Some(n)) => {
            let span = |m: &DMatrix<f64>, name: &str, dim: usize| -> Result<SubspaceBasis> {
                if m.nrows() != dim {
                    return Err(CliError::Input(format!(
                        "{}:{}: {name} has {} rows, A needs {dim}",
                        p.path,
                        p.matrix_line(name),
                        m.nrows()
                    )));
                }
                Ok(SubspaceBasis::from_spanning(m)?)
            };
            let range_plus = span(r, "RPLUS", a.cols())?;
            let null_plus = span(n, "NPLUS", a.rows())?;
            Ok((construct_geninv(&a, &range_plus, &null_plus)?, "prescribed"))
        }
        _ => Err(CliError::Input(format!("{}: give both RPLUS and NPLUS or neither", p.path))),
    }
}

fn write_base(r: &mut Report, gi: &GenInverse, method: &str, tol: f64) {
    let res = gi.axiom_residuals();
    r.kv("method", method)
        .kv("rows", gi.rows())
        .kv("cols", gi.cols())
        .kv("rank", numerical_rank(gi.a().matrix(), DEFAULT_RANK_TOL).unwrap_or(0))
        .real("tol", tol)
        .real("a_plus_norm", gi.a_plus_norm())
        .real("ball_radius", gi.ball_radius())
        .real("axiom_outer_residual", res.outer)
        .real("axiom_inner_residual", res.inner)
        .flag("axioms_ok", res.max() <= tol);
}

fn write_conditions(r: &mut Report, c: &ConditionReport) {
    let names = ["condition_i", "condition_ii", "condition_iii", "condition_iv", "condition_v", "condition_vi", "condition_vii"];
    for (name, v) in names.iter().zip(c.as_array()) {
        r.flag(name, v);
    }
    r.flag("conditions_agree", c.all_equal());
}

pub fn geninv(p: &ProblemFile, o: &Options) -> Result<Outcome> {
    require_kind(p, &[Kind::Geninv, Kind::Perturb], "geninv")?;
    p.check_params(&["tol"])?;
    let tol = tolerance(p, o, DEFAULT_GENINV_TOL)?;
    let (gi, method) = base_inverse(p)?;
    let mut r = Report::new("geninv");
    write_base(&mut r, &gi, method, tol);
    if p.matrix("T").is_some() {
        let ctx = PerturbationContext::new(gi.clone(), operator(p, "T")?)?;
        r.section("perturbation").real("ball_ratio", ctx.ball_ratio()).flag("in_ball", ctx.in_ball());
        if ctx.in_ball() {
            write_conditions(&mut r, &condition_report(&ctx)?);
        }
    }
    r.matrix("A_plus", gi.a_plus());
    Ok(Outcome::ok(r))
}

pub fn perturb(p: &ProblemFile, o: &Options) -> Result<Outcome> {
    require_kind(p, &[Kind::Perturb, Kind::Geninv], "perturb")?;
    p.check_params(&["tol"])?;
    let tol = tolerance(p, o, DEFAULT_GENINV_TOL)?;
    let (gi, method) = base_inverse(p)?;
    let ctx = PerturbationContext::new(gi.clone(), operator(p, "T")?)?;
    let mut r = Report::new("perturb");
    write_base(&mut r, &gi, method, tol);
    r.section("perturbation").real("ball_ratio", ctx.ball_ratio()).flag("in_ball", ctx.in_ball());
    if !ctx.in_ball() {
        return Err(Error::OutOfBall { what: "||T - A|| ||A+||", value: ctx.ball_ratio(), bound: 1.0 }.into());
    }
    write_conditions(&mut r, &condition_report(&ctx)?);
    r.flag("rank_class_preserved", rank_class_preserved(&ctx)?);
    match perturbed_inverse(&ctx) {
        Ok(b) => {
            let res = b.axiom_residuals();
            r.kv("perturbed_inverse", "exists")
                .real("distance_to_a_plus", spectral_norm(&(b.a_plus() - gi.a_plus())))
                .real("axiom_outer_residual", res.outer)
                .real("axiom_inner_residual", res.inner)
                .flag("axioms_ok", res.max() <= tol);
            r.matrix("A_plus", gi.a_plus()).matrix("B", b.a_plus());
        }
        Err(Error::NoInverseInBall) => {
            r.kv("perturbed_inverse", "none");
            r.matrix("A_plus", gi.a_plus());
        }
        Err(e) => return Err(e.into()),
    }
    Ok(Outcome::ok(r))
}

fn level_residuals(map: &SmoothMap, f0: &DVector<f64>, leaf: &LeafSample) -> Vec<f64> {
    leaf.points()
        .iter()
        .map(|x| map.value(x).map(|f| (f - f0).norm()).unwrap_or(f64::NAN))
        .collect()
}

pub fn leaf(p: &ProblemFile, o: &Options) -> Result<Outcome> {
    require_kind(p, &[Kind::Leaf], "leaf")?;
    p.check_params(&["family", "dim", "base", "method", "extent", "step", "nodes", "jacobian", "regularity_check", "tol"])?;
    let fam = family::from_problem(p)?;
    let tol = tolerance(p, o, DEFAULT_LEVEL_TOL)?;
    let x0 = match (p.param_vector("base")?, &fam.default_base) {
        (Some(b), _) => b,
        (None, Some(b)) => b.clone(),
        (None, None) => return Err(CliError::Input(format!("{}: family {} needs `base`", p.path, fam.kind.name()))),
    };
    let map = match p.param_str("jacobian").unwrap_or("analytic") {
        "analytic" => fam.map.clone(),
        "central" => {
            let inner = fam.map.clone();
            SmoothMap::with_central_differences(inner.dim_in(), inner.dim_out(), move |x: &DVector<f64>| inner.value(x))
        }
        other => return Err(CliError::Input(format!("{}: unknown jacobian `{other}` (analytic, central)", p.path))),
    };
    if x0.len() != map.dim_in() {
        return Err(CliError::Input(format!("{}: base has {} coordinates, family lives in R^{}", p.path, x0.len(), map.dim_in())));
    }
    let extent = match o.extent {
        Some(e) => e,
        None => p.param_or("extent", DEFAULT_EXTENT)?,
    };
    let step = match o.step {
        Some(s) => s,
        None => p.param_or("step", LeafOptions::DEFAULT_STEP)?,
    };
    let nodes: usize = p.param_or("nodes", LeafOptions::DEFAULT_NODES_PER_SIDE)?;
    if !(extent > 0.0 && extent.is_finite()) || !(step > 0.0 && step.is_finite()) {
        return Err(CliError::Input(format!("{}: extent and step must be positive", p.path)));
    }
    let check = match p.param_str("regularity_check").unwrap_or("on") {
        "on" => RegularityCheck::default(),
        "off" => RegularityCheck::skipped(),
        other => return Err(CliError::Input(format!("{}: regularity_check must be on or off, got `{other}`", p.path))),
    };
    let method = p.param_str("method").unwrap_or("rk4").to_string();
    let f0 = map.value(&x0)?;
    let t0 = Operator::new(map.jacobian(&x0)?)?;
    let gi0 = GenInverse::moore_penrose(&t0)?;

    let result = match method.as_str() {
        "rk4" => {
            let field = KernelAlphaField::from_family(&map.kernel_family(), &x0, &gi0, &check)?;
            let problem = LeafProblem::new(x0.clone(), field.m0().clone(), field.e_star().clone(), map.kernel_family())?;
            let k = problem.m0.dim();
            let opts = LeafOptions::uniform(k, extent, step).with_nodes(nodes).with_parallel(o.parallel);
            integrate_leaf(&problem, &field, &opts)
        }
        "phi" => {
            let phi = phi_map(&map, &x0, &gi0, &check)?;
            let k = phi.frame().m0.dim();
            phi_leaf(&phi, vec![extent; k], nodes)
        }
        other => return Err(CliError::Input(format!("{}: unknown method `{other}` (rk4, phi)", p.path))),
    };
    let (leaf, failure) = match result {
        Ok(leaf) => (leaf, None),
        Err(Error::AbortedLeaf { partial, source }) => {
            let msg = format!("leaf integration aborted: {source}");
            (*partial, Some((msg, EXIT_DIVERGENCE)))
        }
        Err(Error::Divergence { partial }) => (*partial, Some(("leaf integration diverged".to_string(), EXIT_DIVERGENCE))),
        Err(e) => return Err(e.into()),
    };

    let levels = level_residuals(&map, &f0, &leaf);
    if let Some(path) = &o.csv {
        let file = std::fs::File::create(path)
            .map_err(|e| CliError::Output { context: format!("creating {}", path.display()), source: e })?;
        write_leaf(file, &leaf, &levels)?;
    }

    let mut r = Report::new("leaf");
    let max_level = levels.iter().copied().fold(0.0, f64::max);
    r.kv("family", fam.kind.name())
        .kv("method", &method)
        .kv("status", if leaf.complete { "complete" } else { "partial" })
        .kv("dim_in", map.dim_in())
        .kv("dim_out", map.dim_out())
        .vector("base", &x0)
        .kv("leaf_dim", leaf.m0.dim())
        .real("extent", extent)
        .kv("nodes_per_side", nodes)
        .kv("points", leaf.len())
        .kv("step", leaf.step.map(crate::report::real).unwrap_or_else(|| "none".into()))
        .kv("jacobian_source", leaf.jacobian_source.map(|s| s.to_string()).unwrap_or_else(|| "none".into()))
        .kv("parallel", o.parallel)
        .real("tol", tol)
        .real("integrability_residual", leaf.integrability_residual);
    if let Some(h) = leaf.step {
        r.real("integrability_threshold", 100.0 * h.powi(4));
    }
    r.flag("non_integrable", leaf.non_integrable())
        .real("max_level_residual", max_level)
        .flag("level_ok", max_level <= tol);
    if matches!(fam.kind, FamilyKind::Circle | FamilyKind::Sphere) {
        match fam.closed_form_error(&x0, &leaf.points()) {
            Some(e) => r.real("closed_form_error", e),
            None => r.kv("closed_form_error", "none"),
        };
    }
    r.matrix("M0", leaf.m0.basis()).matrix("E_star", leaf.e_star.basis());
    Ok(match failure {
        None => Outcome::ok(r),
        Some((msg, code)) => {
            r.kv("error", &msg);
            Outcome { report: r, exit: code, message: Some(msg) }
        }
    })
}

fn gaussian(m: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.sample(StandardNormal))
}

/// `(U + s dU) S (V + s dV)^T` for `X = U S V^T`, keeping the rank, with `s`
/// chosen by bisection so the result sits at spectral distance `dist` from `x`.
fn rank_preserving_move(x: &DMatrix<f64>, dist: f64, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    let (m, n) = x.shape();
    let u = range_space(x)?;
    let v = range_space(&x.transpose())?;
    if u.dim() == 0 {
        return Ok(x.clone());
    }
    let core = u.basis().transpose() * x * v.basis();
    let du = gaussian(m, u.dim(), rng);
    let dv = gaussian(n, v.dim(), rng);
    let at = |s: f64| (u.basis() + &du * s) * &core * (v.basis() + &dv * s).transpose();
    let gap = |s: f64| spectral_norm(&(at(s) - x));
    let (mut lo, mut hi) = (0.0, 1.0);
    while gap(hi) < dist && hi < 1e6 {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) < dist {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(at(0.5 * (lo + hi)))
}

pub fn rankchart(p: &ProblemFile, o: &Options) -> Result<Outcome> {
    require_kind(p, &[Kind::Rankchart], "rankchart")?;
    p.check_params(&["samples", "radius", "tol"])?;
    let ctx = ChartData::moore_penrose(operator(p, "A")?)?;
    let tol = tolerance(p, o, DEFAULT_CRIT_TOL)?;
    let count: usize = p.param_or("samples", 0)?;
    let radius: f64 = p.param_or("radius", 0.5)?;
    let seed = seed(p, o);

    let mut samples: Vec<(String, DMatrix<f64>)> = Vec::new();
    for (name, m) in p.matrices.iter().filter(|(n, _)| n != "A") {
        if m.value.shape() != ctx.shape() {
            return Err(CliError::Input(format!(
                "{}:{}: sample {name} is {}x{}, anchor is {}x{}",
                p.path,
                m.line,
                m.value.nrows(),
                m.value.ncols(),
                ctx.shape().0,
                ctx.shape().1
            )));
        }
        samples.push((name.clone(), m.value.clone()));
    }
    // alternate rank-preserving and generic random samples at w-ratio `radius`
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = ctx.w_radius();
    for i in 0..count {
        let x = if i % 2 == 0 {
            rank_preserving_move(ctx.a(), radius * w, &mut rng)?
        } else {
            let e = gaussian(ctx.shape().0, ctx.shape().1, &mut rng);
            ctx.a() + &e * (radius * w / spectral_norm(&e))
        };
        samples.push((format!("random{}", i + 1), x));
    }

    let mut r = Report::new("rankchart");
    r.kv("rows", ctx.shape().0)
        .kv("cols", ctx.shape().1)
        .kv("anchor_rank", ctx.rank())
        .kv("m0_dim", ctx.m0.dim())
        .kv("e_star_dim", ctx.e_star.dim())
        .real("w_radius", w)
        .real("tol", tol)
        .kv("seed", seed)
        .kv("samples", samples.len());
    r.matrix("A_plus", ctx.a_plus());
    for (name, x) in &samples {
        r.section(&format!("sample {name}"));
        let in_v1 = ctx.in_v1(x);
        let in_w = ctx.in_w(x);
        r.real("v1_ratio", ctx.v1_ratio(x))
            .flag("in_v1", in_v1)
            .real("w_ratio", ctx.w_ratio(x))
            .flag("in_w", in_w)
            .kv("rank", numerical_rank(x, DEFAULT_RANK_TOL)?);
        if in_w {
            let s = stratum_report(&ctx, x)?;
            r.flag("stratum_member", s.member())
                .flag("in_s", in_s(&ctx, x)?)
                .real("rectified_residual", s.rectified_residual)
                .real("rectified_tol", s.residual_tol)
                .flag("rectified", s.rectified())
                .flag("rectified_within_tol", s.rectified_residual <= tol);
        }
        if in_v1 {
            let d = chart_forward(&ctx, x)?;
            let back = chart_inverse(&ctx, &d)?;
            r.real("round_trip_error", spectral_norm(&(back - x)) / (1.0 + spectral_norm(x)));
            r.matrix(&format!("{name}.D"), &d);
        }
    }
    Ok(Outcome::ok(r))
}

pub fn critcheck(p: &ProblemFile, o: &Options) -> Result<Outcome> {
    require_kind(p, &[Kind::Critcheck], "critcheck")?;
    p.check_params(&["objective", "rank", "neighbor", "point", "gradient", "tol"])?;
    let tol = tolerance(p, o, DEFAULT_CRIT_TOL)?;
    let mut r = Report::new("critcheck");
    match p.param_str("objective").unwrap_or("eckart-young") {
        "eckart-young" => {
            let b = p.require_matrix("B")?;
            let k: usize = p
                .param("rank")?
                .ok_or_else(|| CliError::Input(format!("{}: eckart-young needs `rank`", p.path)))?;
            let x = match p.matrix("X") {
                Some(x) => x.clone(),
                None => eckart_young_point(b, k)?,
            };
            let at = criticality_residual(&eckart_young_spec(b, &x)?);
            let dist: f64 = p.param_or("neighbor", 1e-2)?;
            let seed = seed(p, o);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let near = rank_preserving_move(&x, dist, &mut rng)?;
            let off = criticality_residual(&eckart_young_spec(b, &near)?);
            r.kv("objective", "eckart-young")
                .kv("rank", k)
                .kv("candidate", if p.matrix("X").is_some() { "given" } else { "truncated-svd" })
                .kv("candidate_rank", numerical_rank(&x, DEFAULT_RANK_TOL)?)
                .real("tol", tol)
                .real("residual", at.residual)
                .flag("degenerate", at.degenerate)
                .flag("critical", at.residual <= tol)
                .kv("seed", seed)
                .real("neighbor_distance", dist)
                .real("neighbor_residual", off.residual)
                .real("residual_ratio", if at.residual > 0.0 { off.residual / at.residual } else { f64::INFINITY });
            r.matrix("X", &x);
        }
        "gradient" => {
            let tangent = p.require_matrix("TANGENT")?.clone();
            let missing = |k: &str| CliError::Input(format!("{}: objective gradient needs `{k}`", p.path));
            let x0 = p.param_vector("point")?.ok_or_else(|| missing("point"))?;
            let g = p.param_vector("gradient")?.ok_or_else(|| missing("gradient"))?;
            let spec = ConstraintSpec::from_columns(tangent, x0, g)?;
            let c = criticality_residual(&spec);
            r.kv("objective", "gradient")
                .kv("tangent_dim", spec.tangent.dim())
                .real("tol", tol)
                .real("residual", c.residual)
                .flag("degenerate", c.degenerate)
                .flag("critical", c.residual <= tol);
        }
        other => return Err(CliError::Input(format!("{}: unknown objective `{other}` (eckart-young, gradient)", p.path))),
    }
    Ok(Outcome::ok(r))
}

pub fn run(command: Kind, p: &ProblemFile, o: &Options) -> Result<Outcome> {
    match command {
        Kind::Geninv => geninv(p, o),
        Kind::Perturb => perturb(p, o),
        Kind::Leaf => leaf(p, o),
        Kind::Rankchart => rankchart(p, o),
        Kind::Critcheck => critcheck(p, o),
    }
}
