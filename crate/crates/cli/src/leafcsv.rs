//! Leaf samples as CSV. Metadata rides in leading `# key=value` comment
//! lines; one data row per grid point with columns
//! `z*, psi*, x*, integrability_residual, level_residual`.

use std::io::{BufRead, BufReader, Read, Write};

use frobenius_core::frobenius::{JacobianSource, LeafSample};
use frobenius_core::linalg::SubspaceBasis;
use nalgebra::{DMatrix, DVector};

use crate::error::{CliError, Result};
use crate::report::{real, reals};

fn basis_field(b: &SubspaceBasis) -> String {
    let m = b.basis();
    let mut s = format!("{} {}", m.nrows(), m.ncols());
    if !m.is_empty() {
        s.push(' ');
        s.push_str(&reals(m.iter()));
    }
    s
}

fn source_field(s: Option<JacobianSource>) -> String {
    match s {
        None => "none".into(),
        Some(JacobianSource::Analytic) => "analytic".into(),
        Some(JacobianSource::CentralDifference { h_scale }) => format!("central-difference {}", real(h_scale)),
    }
}

/// `level_residuals[i]` is `|f(x_i) - f(x0)|`, NaN when unavailable.
pub fn write_leaf<W: Write>(out: W, leaf: &LeafSample, level_residuals: &[f64]) -> Result<()> {
    let io = |e: std::io::Error| CliError::Output { context: "writing leaf CSV".into(), source: e };
    let mut out = std::io::BufWriter::new(out);
    let shape = leaf.shape.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ");
    let meta = [
        ("status", if leaf.complete { "complete".to_string() } else { "partial".to_string() }),
        ("shape", shape),
        ("base", reals(leaf.base_point.iter())),
        ("m0", basis_field(&leaf.m0)),
        ("e_star", basis_field(&leaf.e_star)),
        ("step", leaf.step.map(real).unwrap_or_else(|| "none".into())),
        ("integrability_residual", real(leaf.integrability_residual)),
        ("jacobian_source", source_field(leaf.jacobian_source)),
    ];
    for (k, v) in meta {
        writeln!(out, "# {k}={v}").map_err(io)?;
    }

    let (k, r, n) = (leaf.m0.dim(), leaf.e_star.dim(), leaf.base_point.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = Vec::with_capacity(k + r + n + 2);
    header.extend((1..=k).map(|i| format!("z{i}")));
    header.extend((1..=r).map(|i| format!("psi{i}")));
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.push("integrability_residual".into());
    header.push("level_residual".into());
    w.write_record(&header).map_err(|e| io(e.into()))?;
    for i in 0..leaf.len() {
        let x = leaf.point(i);
        let tail = [leaf.path_residuals.get(i).copied().unwrap_or(0.0), level_residuals.get(i).copied().unwrap_or(f64::NAN)];
        let row = leaf.grid[i].iter().chain(leaf.psi[i].iter()).chain(x.iter()).chain(tail.iter()).map(|v| real(*v));
        w.write_record(row).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// A leaf read back from CSV, with the per-point level residuals.
#[derive(Debug, Clone)]
pub struct LeafCsv {
    pub leaf: LeafSample,
    pub level_residuals: Vec<f64>,
}

fn bad(line: usize, message: impl Into<String>) -> CliError {
    CliError::Parse { path: "<leaf csv>".into(), line, message: message.into() }
}

fn parse_reals(line: usize, s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| bad(line, format!("`{t}` is not a number"))))
        .collect()
}

fn parse_basis(line: usize, s: &str) -> Result<SubspaceBasis> {
    let v = parse_reals(line, s)?;
    if v.len() < 2 || v.len() != 2 + (v[0] * v[1]) as usize {
        return Err(bad(line, "malformed basis"));
    }
    let m = DMatrix::from_column_slice(v[0] as usize, v[1] as usize, &v[2..]);
    SubspaceBasis::from_orthonormal_columns(m).map_err(|e| bad(line, e.to_string()))
}

pub fn read_leaf<R: Read>(input: R) -> Result<LeafCsv> {
    let mut reader = BufReader::new(input);
    let mut meta = std::collections::BTreeMap::new();
    let mut line_no = 0;
    let mut body = String::new();
    loop {
        let mut line = String::new();
        let got = reader.read_line(&mut line).map_err(|e| bad(line_no, e.to_string()))?;
        if got == 0 {
            break;
        }
        line_no += 1;
        match line.trim_end().strip_prefix("# ") {
            Some(kv) => {
                let (k, v) = kv.split_once('=').ok_or_else(|| bad(line_no, "metadata needs key=value"))?;
                meta.insert(k.to_string(), (v.to_string(), line_no));
            }
            None => {
                body.push_str(&line);
                reader.read_to_string(&mut body).map_err(|e| bad(line_no, e.to_string()))?;
                break;
            }
        }
    }
    let get = |k: &str| meta.get(k).ok_or_else(|| bad(0, format!("missing metadata `{k}`")));

    let (status, l) = get("status")?;
    let complete = match status.as_str() {
        "complete" => true,
        "partial" => false,
        _ => return Err(bad(*l, format!("unknown status `{status}`"))),
    };
    let (shape, l) = get("shape")?;
    let shape = shape
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| bad(*l, "malformed shape")))
        .collect::<Result<Vec<_>>>()?;
    let (base, l) = get("base")?;
    let base_point = DVector::from_vec(parse_reals(*l, base)?);
    let (m0, l) = get("m0")?;
    let m0 = parse_basis(*l, m0)?;
    let (e_star, l) = get("e_star")?;
    let e_star = parse_basis(*l, e_star)?;
    let (step, l) = get("step")?;
    let step = match step.as_str() {
        "none" => None,
        s => Some(s.parse::<f64>().map_err(|_| bad(*l, "malformed step"))?),
    };
    let (ir, l) = get("integrability_residual")?;
    let integrability_residual = ir.parse::<f64>().map_err(|_| bad(*l, "malformed residual"))?;
    let (src, l) = get("jacobian_source")?;
    let jacobian_source = match src.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["none"] => None,
        ["analytic"] => Some(JacobianSource::Analytic),
        ["central-difference", h] => Some(JacobianSource::CentralDifference {
            h_scale: h.parse().map_err(|_| bad(*l, "malformed difference scale"))?,
        }),
        _ => return Err(bad(*l, format!("unknown Jacobian source `{src}`"))),
    };

    let (k, r, n) = (m0.dim(), e_star.dim(), base_point.len());
    let width = k + r + n + 2;
    let mut rdr = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let header_line = line_no;
    let headers = rdr.headers().map_err(|e| bad(header_line, e.to_string()))?;
    if headers.len() != width {
        return Err(bad(header_line, format!("expected {width} columns, found {}", headers.len())));
    }
    let mut leaf = LeafSample {
        base_point,
        m0,
        e_star,
        shape,
        grid: Vec::new(),
        psi: Vec::new(),
        path_residuals: Vec::new(),
        integrability_residual,
        step,
        jacobian_source,
        complete,
    };
    let mut level_residuals = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row_line = header_line + 1 + i;
        let rec = rec.map_err(|e| bad(row_line, e.to_string()))?;
        let vals = rec
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| bad(row_line, format!("`{t}` is not a number"))))
            .collect::<Result<Vec<_>>>()?;
        leaf.grid.push(DVector::from_column_slice(&vals[..k]));
        leaf.psi.push(DVector::from_column_slice(&vals[k..k + r]));
        leaf.path_residuals.push(vals[k + r + n]);
        level_residuals.push(vals[k + r + n + 1]);
    }
    Ok(LeafCsv { leaf, level_residuals })
}
