//! Side-by-side summaries of several runs.

use std::fmt::Write as _;
use std::fs;

use langevin_core::table::{fmt17, Table};

use crate::error::LabError;
use crate::manifest::RunManifest;

const TIME_TOL: f64 = 1e-9;

/// One row per run; the first column is the run name.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub columns: Vec<String>,
    pub runs: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Comparison {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("run,{}\n", self.columns.join(","));
        for (name, row) in self.runs.iter().zip(&self.rows) {
            let cells: Vec<String> = row.iter().map(|&x| fmt17(x)).collect();
            let _ = writeln!(s, "{name},{}", cells.join(","));
        }
        s
    }
}

fn load_table(m: &RunManifest, file: &str) -> Result<Option<Table>, LabError> {
    if m.file(file).is_none() {
        return Ok(None);
    }
    let path = m.path_of(file);
    let text = fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
    let t = Table::from_csv(&text).map_err(|e| LabError::MissingData(format!("{}: {e}", path.display())))?;
    if t.rows.is_empty() {
        return Ok(None);
    }
    Ok(Some(t))
}

/// Mean over the last quarter of the rows (at least one).
fn tail_mean(xs: &[f64]) -> f64 {
    let n = (xs.len() / 4).max(1);
    xs[xs.len() - n..].iter().sum::<f64>() / n as f64
}

/// Columns common to every table, in the order of the first.
fn common_columns(tables: &[Table]) -> Vec<String> {
    tables[0].columns.iter().filter(|c| tables.iter().all(|t| t.column_index(c).is_some())).cloned().collect()
}

fn common_times(tables: &[Table], time_col: &str) -> Vec<f64> {
    let first = tables[0].column(time_col).unwrap_or_default();
    first
        .into_iter()
        .filter(|&t| {
            tables[1..].iter().all(|tb| {
                tb.column(time_col).unwrap_or_default().iter().any(|&s| (s - t).abs() <= TIME_TOL * (1.0 + t.abs()))
            })
        })
        .collect()
}

fn value_at(t: &Table, time_col: &str, col: &str, at: f64) -> f64 {
    let (ti, ci) = (t.column_index(time_col).expect("present"), t.column_index(col).expect("present"));
    t.rows.iter().find(|r| (r[ti] - at).abs() <= TIME_TOL * (1.0 + at.abs())).map_or(f64::NAN, |r| r[ci])
}

/// Aligns the scalar summaries of several runs: run parameters, gap plateau
/// (tail mean of the gap) with its ratio to `σ`, gaps at every common record
/// time, final set masses, and the final values of grid and SGD series.
pub fn compare_runs(manifests: &[RunManifest]) -> Result<Comparison, LabError> {
    if manifests.len() < 2 {
        return Err(LabError::NoOverlap(format!("need at least two runs, got {}", manifests.len())));
    }
    let mut columns: Vec<String> = vec!["sigma".into(), "dt".into(), "n_paths".into()];
    let mut rows: Vec<Vec<f64>> = manifests
        .iter()
        .map(|m| ["sigma", "dt", "n_paths"].iter().map(|k| m.parameters.get(*k).copied().unwrap_or(f64::NAN)).collect())
        .collect();
    let mut overlap = false;
    let mut push = |columns: &mut Vec<String>, name: String, values: Vec<f64>| {
        columns.push(name);
        for (r, v) in rows.iter_mut().zip(values) {
            r.push(v);
        }
    };

    let obs: Option<Vec<Table>> = manifests
        .iter()
        .map(|m| load_table(m, "observables.csv"))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .collect();
    if let Some(obs) = obs {
        let common = common_columns(&obs);
        if common.iter().any(|c| c == "gap_mean") {
            overlap = true;
            let plateaus: Vec<f64> = obs.iter().map(|t| tail_mean(&t.column("gap_mean").expect("common"))).collect();
            let ses: Vec<f64> = obs.iter().map(|t| tail_mean(&t.column("gap_stderr").unwrap_or_default())).collect();
            let ratio: Vec<f64> = plateaus.iter().zip(manifests).map(|(p, m)| p / m.parameters["sigma"]).collect();
            push(&mut columns, "gap_plateau".into(), plateaus);
            push(&mut columns, "gap_plateau_stderr".into(), ses);
            push(&mut columns, "gap_plateau_over_sigma".into(), ratio);
            for t in common_times(&obs, "t") {
                push(
                    &mut columns,
                    format!("gap_t{t}"),
                    obs.iter().map(|tb| value_at(tb, "t", "gap_mean", t)).collect(),
                );
                push(
                    &mut columns,
                    format!("gap_t{t}_stderr"),
                    obs.iter().map(|tb| value_at(tb, "t", "gap_stderr", t)).collect(),
                );
            }
        }
        for c in common.iter().filter(|c| c.starts_with("mass_") && !c.ends_with("_stderr")) {
            overlap = true;
            push(
                &mut columns,
                format!("{c}_final"),
                obs.iter().map(|t| *t.column(c).expect("common").last().expect("rows")).collect(),
            );
        }
    }

    let fp: Option<Vec<Table>> =
        manifests.iter().map(|m| load_table(m, "fp_series.csv")).collect::<Result<Vec<_>, _>>()?.into_iter().collect();
    if let Some(fp) = fp {
        overlap = true;
        for c in ["dirichlet_pi", "mass_window"] {
            push(
                &mut columns,
                format!("fp_{c}_final"),
                fp.iter().map(|t| t.column(c).and_then(|v| v.last().copied()).unwrap_or(f64::NAN)).collect(),
            );
        }
    }

    let sgd: Option<Vec<Table>> =
        manifests.iter().map(|m| load_table(m, "sgd.csv")).collect::<Result<Vec<_>, _>>()?.into_iter().collect();
    if let Some(sgd) = sgd {
        overlap = true;
        push(
            &mut columns,
            "sgd_gap_final".into(),
            sgd.iter().map(|t| t.column("gap_mean").and_then(|v| v.last().copied()).unwrap_or(f64::NAN)).collect(),
        );
    }

    if !overlap {
        return Err(LabError::NoOverlap("the runs share no observable file".into()));
    }
    Ok(Comparison { columns, runs: manifests.iter().map(|m| m.name.clone()).collect(), rows })
}
