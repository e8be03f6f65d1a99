//! CSV and key-value output with round-trip exact decimals.

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::paths::PathSet;
use crate::pde::DecouplingField;

/// 17 significant digits: parses back to the same `f64`.
pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Comma-separated rows under a one-line header.
pub struct CsvWriter<W: Write> {
    out: W,
    columns: usize,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(mut out: W, header: &[&str]) -> io::Result<Self> {
        writeln!(out, "{}", header.join(","))?;
        Ok(CsvWriter {
            out,
            columns: header.len(),
        })
    }

    pub fn row(&mut self, cells: &[String]) -> io::Result<()> {
        assert_eq!(cells.len(), self.columns, "row width must match the header");
        writeln!(self.out, "{}", cells.join(","))
    }

    pub fn reals(&mut self, values: &[f64]) -> io::Result<()> {
        let cells: Vec<String> = values.iter().map(|v| real(*v)).collect();
        self.row(&cells)
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Ordered `key = value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sidecar {
    entries: Vec<(String, String)>,
}

impl Sidecar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn real(&mut self, key: &str, v: f64) -> &mut Self {
        self.entries.push((key.into(), real(v)));
        self
    }

    pub fn int(&mut self, key: &str, v: impl Into<i128>) -> &mut Self {
        self.entries.push((key.into(), v.into().to_string()));
        self
    }

    pub fn text(&mut self, key: &str, v: &str) -> &mut Self {
        self.entries.push((key.into(), format!("{v:?}")));
        self
    }

    pub fn flag(&mut self, key: &str, v: bool) -> &mut Self {
        self.entries.push((key.into(), v.to_string()));
        self
    }

    pub fn reals(&mut self, key: &str, vs: &[f64]) -> &mut Self {
        let body: Vec<String> = vs.iter().map(|v| real(*v)).collect();
        self.entries.push((key.into(), format!("[{}]", body.join(", "))));
        self
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// `t, x, u, u_x, u_xx` for every node.
pub fn write_field<W: Write>(out: W, field: &DecouplingField) -> io::Result<W> {
    let mut csv = CsvWriter::new(out, &["t", "x", "u", "u_x", "u_xx"])?;
    let g = field.grid;
    for k in 0..=g.nt {
        for j in 0..g.nx {
            let d = field.node_derivatives(k, j);
            csv.reals(&[g.t(k), g.x(j), d.u, d.ux, d.uxx])?;
        }
    }
    csv.finish()
}

/// `path_id, t, X, Y, Z, K` for every stored state.
pub fn write_paths<W: Write>(out: W, set: &PathSet) -> io::Result<W> {
    let mut csv = CsvWriter::new(out, &["path_id", "t", "X", "Y", "Z", "K"])?;
    for p in &set.paths {
        for k in 0..p.x.len() {
            csv.row(&[
                p.id.to_string(),
                real(set.times[k]),
                real(p.x[k]),
                real(p.y[k]),
                real(p.z[k]),
                real(p.k[k]),
            ])?;
        }
    }
    csv.finish()
}
