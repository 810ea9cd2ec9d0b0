//! Column-labelled numeric tables written as CSV with 17 significant digits.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// `x` with 17 significant digits (round-trips every `f64`).
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self { columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width does not match the header");
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Appends `name` with one value per existing row.
    pub fn add_column(&mut self, name: impl Into<String>, values: &[f64]) {
        assert_eq!(values.len(), self.rows.len());
        self.columns.push(name.into());
        for (r, v) in self.rows.iter_mut().zip(values) {
            r.push(*v);
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&x| fmt17(x)).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or("empty table")?;
        let mut t = Table::new(header.split(',').map(|c| c.trim().to_string()));
        for (i, line) in lines.enumerate() {
            let row: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| format!("row {}: {e}", i + 1))?;
            if row.len() != t.columns.len() {
                return Err(format!("row {} has {} cells, header has {}", i + 1, row.len(), t.columns.len()));
            }
            t.rows.push(row);
        }
        Ok(t)
    }
}
