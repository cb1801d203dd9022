//! CSV tables written and read by the CLI.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::domain::MonitorModel;
use crate::error::{Error, Result};

/// Format `x` with 9 significant digits, dropping trailing zeros.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent in scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{m}e{exp}");
    }
    let decimals = (8 - exp).max(0) as usize;
    let fixed = format!("{x:.decimals$}");
    if fixed.contains('.') {
        fixed.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        fixed
    }
}

/// In-memory CSV: a header and rows of already formatted cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Table("empty table".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
            if row.len() != header.len() {
                return Err(Error::Table(format!(
                    "line {}: {} cells, header has {}",
                    i + 2,
                    row.len(),
                    header.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Table(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// θ snapshots as rows `round,K,d,controller,theta_0..theta_{d-1}`.
///
/// Values use the shortest representation that parses back to the same
/// `f64`, so a stored monitor reproduces its metrics exactly.
pub fn theta_table(snapshots: &[(usize, &MonitorModel)]) -> Csv {
    let d = snapshots.first().map_or(0, |(_, m)| m.dim());
    let mut header: Vec<String> = ["round", "K", "d", "controller"].map(String::from).into();
    header.extend((0..d).map(|j| format!("theta_{j}")));
    let mut csv = Csv { header, rows: Vec::new() };
    for (round, m) in snapshots {
        let k = m.n_controllers();
        for c in 0..k {
            let mut row = vec![round.to_string(), k.to_string(), m.dim().to_string(), c.to_string()];
            row.extend(m.theta().row(c).iter().map(|v| {
                let mut s = String::new();
                write!(s, "{v:?}").unwrap();
                s
            }));
            csv.rows.push(row);
        }
    }
    csv
}

fn cell<T: std::str::FromStr>(row: &[String], idx: usize, line: usize) -> Result<T> {
    row[idx]
        .parse()
        .map_err(|_| Error::Table(format!("line {line}: cannot parse `{}`", row[idx])))
}

/// Parse a table written by [`theta_table`] into `(round, monitor)` pairs in
/// file order.
pub fn parse_theta_table(csv: &Csv, q_bound: f64) -> Result<Vec<(usize, MonitorModel)>> {
    for (i, name) in ["round", "K", "d", "controller"].iter().enumerate() {
        if csv.header.get(i).map(String::as_str) != Some(*name) {
            return Err(Error::Table(format!("column {i} must be `{name}`")));
        }
    }
    let d = csv.header.len() - 4;
    for j in 0..d {
        if csv.header[4 + j] != format!("theta_{j}") {
            return Err(Error::Table(format!("column {} must be `theta_{j}`", 4 + j)));
        }
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i < csv.rows.len() {
        let line = i + 2;
        let round: usize = cell(&csv.rows[i], 0, line)?;
        let k: usize = cell(&csv.rows[i], 1, line)?;
        let dd: usize = cell(&csv.rows[i], 2, line)?;
        if dd != d {
            return Err(Error::Table(format!("line {line}: d = {dd} but the table has {d} theta columns")));
        }
        if k == 0 || i + k > csv.rows.len() {
            return Err(Error::Table(format!("line {line}: round {round} needs {k} controller rows")));
        }
        let mut theta = DMatrix::zeros(k, d);
        for c in 0..k {
            let row = &csv.rows[i + c];
            let line = i + c + 2;
            let (r, kk, cc): (usize, usize, usize) = (cell(row, 0, line)?, cell(row, 1, line)?, cell(row, 3, line)?);
            if r != round || kk != k || cc != c {
                return Err(Error::Table(format!(
                    "line {line}: expected round {round}, K {k}, controller {c}"
                )));
            }
            for j in 0..d {
                theta[(c, j)] = cell(row, 4 + j, line)?;
            }
        }
        out.push((round, MonitorModel::new(theta, q_bound)?));
        i += k;
    }
    if out.is_empty() {
        return Err(Error::Table("theta table has no rows".into()));
    }
    Ok(out)
}
