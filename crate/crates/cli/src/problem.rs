//! Problem files: a flat `key = value` format with section headers.
//!
//! ```text
//! version = v1
//! kind = leaf
//! seed = 7
//!
//! [params]
//! family = circle
//! extent = 0.9
//!
//! [matrix A]
//! 2 2
//! 1 0
//! 0 0
//!
//! [polynomial]
//! 1 2 0
//! 1 0 2
//! -1 0 0
//! ```
//!
//! `#` starts a comment. Each `[polynomial]` section is one component of a
//! map `R^n -> R^m`, one monomial `coef e1 .. en` per line.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{CliError, Result};

pub const VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Geninv,
    Perturb,
    Leaf,
    Rankchart,
    Critcheck,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Geninv => "geninv",
            Kind::Perturb => "perturb",
            Kind::Leaf => "leaf",
            Kind::Rankchart => "rankchart",
            Kind::Critcheck => "critcheck",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "geninv" => Kind::Geninv,
            "perturb" => Kind::Perturb,
            "leaf" => Kind::Leaf,
            "rankchart" => Kind::Rankchart,
            "critcheck" => Kind::Critcheck,
            other => return Err(format!("unknown problem kind `{other}`")),
        })
    }
}

/// A value and the line it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Located<T> {
    pub value: T,
    pub line: usize,
}

/// One monomial `coef * x^exps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coef: f64,
    pub exps: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemFile {
    pub path: String,
    pub kind: Kind,
    pub seed: Option<u64>,
    pub params: BTreeMap<String, Located<String>>,
    /// In file order.
    pub matrices: Vec<(String, Located<DMatrix<f64>>)>,
    pub polynomials: Vec<Located<Vec<Monomial>>>,
}

enum Section {
    Top,
    Params,
    Matrix { name: String, header: usize, dims: Option<(usize, usize)>, rows: Vec<Vec<f64>> },
    Polynomial { header: usize, terms: Vec<Monomial> },
}

fn parse_reals(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| format!("`{t}` is not a number")))
        .collect()
}

impl ProblemFile {
    pub fn read(path: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {path}: {e}")))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &str, text: &str) -> Result<Self> {
        let err = |line: usize, message: String| CliError::Parse { path: path.to_string(), line, message };
        let mut version = None;
        let mut kind = None;
        let mut seed = None;
        let mut params = BTreeMap::new();
        let mut matrices: Vec<(String, Located<DMatrix<f64>>)> = Vec::new();
        let mut polynomials = Vec::new();
        let mut section = Section::Top;

        let close = |section: Section,
                         matrices: &mut Vec<(String, Located<DMatrix<f64>>)>,
                         polynomials: &mut Vec<Located<Vec<Monomial>>>|
         -> Result<()> {
            match section {
                Section::Matrix { name, header, dims, rows } => {
                    let (r, c) = dims.ok_or_else(|| err(header, format!("matrix {name} has no `rows cols` line")))?;
                    if rows.len() != r {
                        return Err(err(header, format!("matrix {name} declares {r} rows, found {}", rows.len())));
                    }
                    if matrices.iter().any(|(n, _)| *n == name) {
                        return Err(err(header, format!("matrix {name} defined twice")));
                    }
                    let data: Vec<f64> = rows.into_iter().flatten().collect();
                    matrices.push((name, Located { value: DMatrix::from_row_slice(r, c, &data), line: header }));
                }
                Section::Polynomial { header, terms } => {
                    if terms.is_empty() {
                        return Err(err(header, "empty polynomial".into()));
                    }
                    polynomials.push(Located { value: terms, line: header });
                }
                Section::Top | Section::Params => {}
            }
            Ok(())
        };

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('[') {
                let header = header
                    .strip_suffix(']')
                    .ok_or_else(|| err(line_no, format!("unterminated section header `{line}`")))?
                    .trim();
                let next = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
                    ["params"] => Section::Params,
                    ["matrix", name] => Section::Matrix { name: name.to_string(), header: line_no, dims: None, rows: Vec::new() },
                    ["polynomial"] => Section::Polynomial { header: line_no, terms: Vec::new() },
                    _ => return Err(err(line_no, format!("unknown section `[{header}]`"))),
                };
                close(std::mem::replace(&mut section, next), &mut matrices, &mut polynomials)?;
                continue;
            }
            match &mut section {
                Section::Top | Section::Params => {
                    let (key, value) = line
                        .split_once('=')
                        .ok_or_else(|| err(line_no, format!("expected `key = value`, found `{line}`")))?;
                    let (key, value) = (key.trim(), value.trim().to_string());
                    if key.is_empty() {
                        return Err(err(line_no, "empty key".into()));
                    }
                    if matches!(section, Section::Top) {
                        match key {
                            "version" => version = Some((value, line_no)),
                            "kind" => kind = Some(value.parse::<Kind>().map_err(|m| err(line_no, m))?),
                            "seed" => {
                                seed = Some(value.parse::<u64>().map_err(|_| err(line_no, format!("seed `{value}` is not an unsigned integer")))?)
                            }
                            other => return Err(err(line_no, format!("unknown top-level key `{other}`"))),
                        }
                    } else if params.insert(key.to_string(), Located { value, line: line_no }).is_some() {
                        return Err(err(line_no, format!("parameter `{key}` given twice")));
                    }
                }
                Section::Matrix { name, dims, rows, .. } => {
                    let vals = parse_reals(line).map_err(|m| err(line_no, m))?;
                    match dims {
                        None => {
                            if vals.len() != 2 || vals.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
                                return Err(err(line_no, format!("matrix {name}: expected `rows cols`, found `{line}`")));
                            }
                            *dims = Some((vals[0] as usize, vals[1] as usize));
                        }
                        Some((r, c)) => {
                            if vals.len() != *c {
                                return Err(err(line_no, format!("matrix {name}: row has {} entries, expected {c}", vals.len())));
                            }
                            if rows.len() == *r {
                                return Err(err(line_no, format!("matrix {name}: more than {r} rows")));
                            }
                            if vals.iter().any(|v| !v.is_finite()) {
                                return Err(err(line_no, format!("matrix {name}: non-finite entry")));
                            }
                            rows.push(vals);
                        }
                    }
                }
                Section::Polynomial { terms, .. } => {
                    let mut toks = line.split_whitespace();
                    let coef_tok = toks.next().unwrap_or("");
                    let coef = coef_tok.parse::<f64>().map_err(|_| err(line_no, format!("`{coef_tok}` is not a coefficient")))?;
                    let exps = toks
                        .map(|t| t.parse::<u32>().map_err(|_| err(line_no, format!("exponent `{t}` is not a non-negative integer"))))
                        .collect::<Result<Vec<_>>>()?;
                    if exps.is_empty() {
                        return Err(err(line_no, "monomial needs at least one exponent".into()));
                    }
                    if let Some(first) = terms.first() {
                        if first.exps.len() != exps.len() {
                            return Err(err(line_no, format!("monomial has {} exponents, expected {}", exps.len(), first.exps.len())));
                        }
                    }
                    terms.push(Monomial { coef, exps });
                }
            }
        }
        close(section, &mut matrices, &mut polynomials)?;

        match version {
            Some((v, _)) if v == VERSION => {}
            Some((v, line)) => return Err(err(line, format!("unsupported version `{v}`, expected {VERSION}"))),
            None => return Err(err(1, "missing `version = v1`".into())),
        }
        let kind = kind.ok_or_else(|| err(1, "missing `kind`".into()))?;
        if let Some(n) = polynomials.first().map(|p: &Located<Vec<Monomial>>| p.value[0].exps.len()) {
            if let Some(bad) = polynomials.iter().find(|p| p.value[0].exps.len() != n) {
                return Err(err(bad.line, format!("polynomial in {} variables, expected {n}", bad.value[0].exps.len())));
            }
        }
        Ok(ProblemFile { path: path.to_string(), kind, seed, params, matrices, polynomials })
    }

    fn param_err(&self, line: usize, message: String) -> CliError {
        CliError::Parse { path: self.path.clone(), line, message }
    }

    pub fn has_param(&self, key: &str) -> bool {
        self.params.contains_key(key)
    }

    pub fn param_str(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(|p| p.value.as_str())
    }

    pub fn param<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.params.get(key) {
            None => Ok(None),
            Some(p) => p
                .value
                .parse::<T>()
                .map(Some)
                .map_err(|_| self.param_err(p.line, format!("parameter `{key}`: cannot parse `{}`", p.value))),
        }
    }

    pub fn param_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.param(key)?.unwrap_or(default))
    }

    pub fn param_vector(&self, key: &str) -> Result<Option<DVector<f64>>> {
        match self.params.get(key) {
            None => Ok(None),
            Some(p) => {
                let v = parse_reals(&p.value).map_err(|m| self.param_err(p.line, format!("parameter `{key}`: {m}")))?;
                if v.is_empty() {
                    return Err(self.param_err(p.line, format!("parameter `{key}` is empty")));
                }
                Ok(Some(DVector::from_vec(v)))
            }
        }
    }

    pub fn matrix(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.matrices.iter().find(|(n, _)| n == name).map(|(_, m)| &m.value)
    }

    pub fn require_matrix(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.matrix(name)
            .ok_or_else(|| CliError::Input(format!("{}: kind {} needs `[matrix {name}]`", self.path, self.kind)))
    }

    pub fn matrix_line(&self, name: &str) -> usize {
        self.matrices.iter().find(|(n, _)| n == name).map(|(_, m)| m.line).unwrap_or(0)
    }

    /// Reject parameters the command does not read.
    pub fn check_params(&self, known: &[&str]) -> Result<()> {
        for (key, p) in &self.params {
            if !known.contains(&key.as_str()) {
                return Err(self.param_err(p.line, format!("unknown parameter `{key}` for kind {}", self.kind)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "version = v1\nkind = geninv\nseed = 3\n\n[params]\ntol = 1e-9 # comment\n\n[matrix A]\n2 3\n1 2 3\n4 5 6\n";

    #[test]
    fn parses_a_minimal_file() {
        let p = ProblemFile::parse("t", GOOD).unwrap();
        assert_eq!(p.kind, Kind::Geninv);
        assert_eq!(p.seed, Some(3));
        assert_eq!(p.param::<f64>("tol").unwrap(), Some(1e-9));
        let a = p.matrix("A").unwrap();
        assert_eq!(a.shape(), (2, 3));
        assert_eq!(a[(1, 0)], 4.0);
    }

    fn line_of(text: &str) -> usize {
        match ProblemFile::parse("t", text).unwrap_err() {
            CliError::Parse { line, .. } => line,
            other => panic!("{other}"),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(line_of(&GOOD.replace("4 5 6", "4 5")), 11);
        assert_eq!(line_of(&GOOD.replace("4 5 6", "4 x 6")), 11);
        assert_eq!(line_of(&GOOD.replace("v1", "v2")), 1);
        assert_eq!(line_of(&GOOD.replace("kind = geninv", "kind = nope")), 2);
        assert_eq!(line_of(&GOOD.replace("[params]", "[bogus]")), 5);
        assert_eq!(line_of(&GOOD.replace("2 3\n", "3 3\n")), 8);
    }

    #[test]
    fn polynomials() {
        let p = ProblemFile::parse("t", "version = v1\nkind = leaf\n[polynomial]\n1 2 0\n1 0 2\n-1 0 0\n").unwrap();
        assert_eq!(p.polynomials.len(), 1);
        assert_eq!(p.polynomials[0].value[2], Monomial { coef: -1.0, exps: vec![0, 0] });
        assert_eq!(line_of("version = v1\nkind = leaf\n[polynomial]\n1 2 0\n1 0\n"), 5);
    }
}
