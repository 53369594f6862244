//! CSV output with `#` metadata lines.
//!
//! Floats are written as `{:.16e}` (17 significant digits), which round-trips
//! every double.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::discretization::Grid;
use crate::solver::SolutionField;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(usize),
    Text(String),
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Num(x) => format_float(*x),
            Cell::Int(n) => n.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Int(n)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Text(if b { "true" } else { "false" }.to_string())
    }
}

pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.16e}")
    }
}

/// A CSV document: `# ` comment lines, a header row, then data rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            comments: Vec::new(),
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn comment(&mut self, line: impl Into<String>) -> &mut Self {
        self.comments.push(line.into());
        self
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Numeric entries of the named column; `None` if absent.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.iter().position(|h| h == name)?;
        Some(
            self.rows
                .iter()
                .filter_map(|r| match r[idx] {
                    Cell::Num(x) => Some(x),
                    Cell::Int(n) => Some(n as f64),
                    Cell::Text(_) => None,
                })
                .collect(),
        )
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        for c in &self.comments {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }

    pub fn write_file(&self, path: &Path) -> io::Result<()> {
        let file = fs::File::create(path)?;
        self.write_to(io::BufWriter::new(file))
    }
}

/// Header `time, x_1, ..., x_n` and one row per saved step.
pub fn snapshot_table(sol: &SolutionField) -> Table {
    let grid: Grid = sol.spec.grid;
    let mut header = vec!["time".to_string()];
    header.extend(grid.nodes().map(format_float));
    let mut t = Table::new(header);
    t.comment(format!("scheme: {}", sol.meta.scheme.name()));
    t.comment(format!("kernel: {}", sol.meta.kernel));
    t.comment(format!("dt: {}", format_float(sol.meta.dt)));
    t.comment(format!("h: {}", format_float(sol.meta.h)));
    t.comment(format!("memory path: {}", sol.meta.memory_path));
    t.comment(format!("quadrature: {}", sol.meta.quadrature));
    for (time, u) in sol.times.iter().zip(&sol.snapshots) {
        let mut row = vec![Cell::Num(*time)];
        row.extend(u.values().iter().map(|&v| Cell::Num(v)));
        t.push(row);
    }
    t
}

/// Creates `dir` and writes `name` into it.
pub fn write_into(dir: &Path, name: &str, table: &Table) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    table.write_file(&path)?;
    Ok(path)
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, text)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0, f64::MIN_POSITIVE] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(format_float(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn table_layout() {
        let mut t = Table::new(["a", "b", "flag"]);
        t.comment("kernel: wedge");
        t.push(vec![1.0.into(), 2usize.into(), true.into()]);
        assert_eq!(
            t.to_csv_string(),
            "# kernel: wedge\na,b,flag\n1.0000000000000000e0,2,true\n"
        );
    }
}
