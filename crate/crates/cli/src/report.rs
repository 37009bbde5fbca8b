//! Plain-text reports in the problem-file dialect: `key = value` lines,
//! `[section]` headers and `[matrix NAME]` blocks. Reals are written with
//! 17 significant digits so they read back exactly.

use std::fmt::{Display, Write};

use nalgebra::{DMatrix, DVector};

use crate::problem::VERSION;

/// Negative zero prints as zero so reports do not depend on rounding noise.
pub fn real(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.16e}")
}

pub fn reals<'a>(vs: impl IntoIterator<Item = &'a f64>) -> String {
    vs.into_iter().map(|v| real(*v)).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    text: String,
}

impl Report {
    pub fn new(kind: &str) -> Self {
        let mut r = Report::default();
        r.kv("version", VERSION);
        r.kv("kind", format!("{kind}-report"));
        r
    }

    pub fn kv(&mut self, key: &str, value: impl Display) -> &mut Self {
        let _ = writeln!(self.text, "{key} = {value}");
        self
    }

    pub fn real(&mut self, key: &str, v: f64) -> &mut Self {
        self.kv(key, real(v))
    }

    pub fn flag(&mut self, key: &str, b: bool) -> &mut Self {
        self.kv(key, b)
    }

    pub fn vector(&mut self, key: &str, v: &DVector<f64>) -> &mut Self {
        self.kv(key, reals(v.iter()))
    }

    pub fn section(&mut self, name: &str) -> &mut Self {
        let _ = writeln!(self.text, "\n[{name}]");
        self
    }

    pub fn matrix(&mut self, name: &str, m: &DMatrix<f64>) -> &mut Self {
        let _ = writeln!(self.text, "\n[matrix {name}]\n{} {}", m.nrows(), m.ncols());
        for row in m.row_iter() {
            let _ = writeln!(self.text, "{}", reals(row.iter()));
        }
        self
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn into_string(self) -> String {
        self.text
    }
}
