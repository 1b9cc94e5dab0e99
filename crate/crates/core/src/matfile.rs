//! Labeled-matrix text files.
//!
//! ```text
//! n 12
//! dt 1.0000000000000000e-3
//! A 12 12
//! <12 rows of 12 space-separated entries>
//! ```
//!
//! Entries are written with 17 significant digits so a write/read cycle is exact.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Int(usize),
    Real(f64),
    Text(String),
    Matrix(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledFile {
    pub entries: Vec<(String, Entry)>,
}

pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

impl LabeledFile {
    pub fn push(&mut self, name: &str, e: Entry) {
        self.entries.push((name.to_string(), e));
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    pub fn matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        match self.get(name) {
            Some(Entry::Matrix(m)) => Ok(m.clone()),
            _ => Err(missing(name, "matrix")),
        }
    }

    pub fn real(&self, name: &str) -> Result<f64> {
        match self.get(name) {
            Some(Entry::Real(v)) => Ok(*v),
            Some(Entry::Int(v)) => Ok(*v as f64),
            _ => Err(missing(name, "scalar")),
        }
    }

    pub fn int(&self, name: &str) -> Result<usize> {
        match self.get(name) {
            Some(Entry::Int(v)) => Ok(*v),
            _ => Err(missing(name, "integer")),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name) {
            Some(Entry::Text(s)) => Ok(s),
            _ => Err(missing(name, "text")),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, e) in &self.entries {
            match e {
                Entry::Int(v) => out.push_str(&format!("{name} {v}\n")),
                Entry::Real(v) => out.push_str(&format!("{name} {}\n", fmt_real(*v))),
                Entry::Text(s) => out.push_str(&format!("{name} {s}\n")),
                Entry::Matrix(m) => {
                    out.push_str(&format!("{name} {} {}\n", m.nrows(), m.ncols()));
                    for r in 0..m.nrows() {
                        let row: Vec<String> = (0..m.ncols()).map(|c| fmt_real(m[(r, c)])).collect();
                        out.push_str(&row.join(" "));
                        out.push('\n');
                    }
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut file = LabeledFile::default();
        let mut lines = text.lines().enumerate();
        while let Some((i, line)) = lines.next() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tok: Vec<&str> = line.split_whitespace().collect();
            let err = |msg: &str| Error::Parse { line: i + 1, msg: msg.to_string() };
            match tok.as_slice() {
                [name, rows, cols] => {
                    let rows: usize = rows.parse().map_err(|_| err("bad row count"))?;
                    let cols: usize = cols.parse().map_err(|_| err("bad column count"))?;
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let (j, row) = lines.next().ok_or_else(|| err("truncated matrix"))?;
                        let vals: Vec<f64> = row
                            .split_whitespace()
                            .map(str::parse)
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| Error::Parse { line: j + 1, msg: "bad number".into() })?;
                        if vals.len() != cols {
                            return Err(Error::Parse {
                                line: j + 1,
                                msg: format!("expected {cols} entries, got {}", vals.len()),
                            });
                        }
                        data.extend(vals);
                    }
                    file.push(name, Entry::Matrix(DMatrix::from_row_slice(rows, cols, &data)));
                }
                [name, value] => {
                    let e = if let Ok(v) = value.parse::<usize>() {
                        Entry::Int(v)
                    } else if let Ok(v) = value.parse::<f64>() {
                        Entry::Real(v)
                    } else {
                        Entry::Text(value.to_string())
                    };
                    file.push(name, e);
                }
                _ => return Err(err("expected `name value` or `name rows cols`")),
            }
        }
        Ok(file)
    }
}

fn missing(name: &str, kind: &str) -> Error {
    Error::Parse { line: 0, msg: format!("missing {kind} `{name}`") }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let m = DMatrix::from_fn(3, 2, |r, c| (r as f64 + 0.1) / (c as f64 + 3.0) * 1e-7 - 0.3);
        let mut f = LabeledFile::default();
        f.push("n", Entry::Int(3));
        f.push("dt", Entry::Real(1e-3));
        f.push("kind", Entry::Text("motor-speeds".into()));
        f.push("A", Entry::Matrix(m.clone()));
        f.push("E", Entry::Matrix(DMatrix::zeros(0, 4)));
        let back = LabeledFile::parse(&f.to_text()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.matrix("A").unwrap(), m);
        assert_eq!(back.to_text(), f.to_text());
    }

    #[test]
    fn truncated_matrix_is_error() {
        assert!(LabeledFile::parse("A 2 2\n1 2\n").is_err());
        assert!(LabeledFile::parse("A 1 2\n1 2 3\n").is_err());
    }
}
