//! Self-contained matplotlib scripts that render SVG figures from run outputs.
//!
//! Scripts live in `<run>/plots/`, read the CSV files relative to their own
//! location and need nothing beyond the standard library and matplotlib.

use std::fs;
use std::path::PathBuf;

use crate::error::LabError;
use crate::manifest::RunManifest;

pub const PLOT_DIR: &str = "plots";

const PRELUDE: &str = r#"import csv
from pathlib import Path

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt

HERE = Path(__file__).resolve().parent
RUN = HERE.parent


def load(name):
    with open(RUN / name, newline="") as f:
        rows = list(csv.DictReader(f))
    return {k: [float(r[k]) for r in rows] for k in (rows[0] if rows else [])}


def finite(xs, ys):
    pts = [(x, y) for x, y in zip(xs, ys) if y == y and abs(y) != float("inf")]
    return [p[0] for p in pts], [p[1] for p in pts]

"#;

fn header(m: &RunManifest, file: &str) -> Result<Option<Vec<String>>, LabError> {
    if m.file(file).is_none() {
        return Ok(None);
    }
    let path = m.path_of(file);
    let text = fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
    let first = text.lines().next().ok_or_else(|| LabError::MissingData(format!("{file} is empty")))?;
    Ok(Some(first.split(',').map(|c| c.trim().to_string()).collect()))
}

fn require(cols: &[String], file: &str, needed: &[&str]) -> Result<(), LabError> {
    for n in needed {
        if !cols.iter().any(|c| c == n) {
            return Err(LabError::MissingData(format!("{file} has no column `{n}`")));
        }
    }
    Ok(())
}

fn py_list(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| format!("{s:?}")).collect();
    format!("[{}]", quoted.join(", "))
}

fn script(title: &str, body: &str, stem: &str) -> String {
    format!(
        "#!/usr/bin/env python3\n\"\"\"{title}\"\"\"\n{PRELUDE}{body}\nfig.tight_layout()\nfig.savefig(HERE / \"{stem}.svg\")\n"
    )
}

fn gap_vs_bound(cols: &[String], name: &str) -> String {
    let bounds: Vec<String> = cols.iter().filter(|c| c.starts_with("bound_")).cloned().collect();
    let cond = cols.iter().any(|c| c == "cond_gap_mean");
    let mut body = format!(
        r#"d = load("observables.csv")
fig, ax = plt.subplots(figsize=(6, 4))
ax.errorbar(d["t"], d["gap_mean"], yerr=[3 * s for s in d["gap_stderr"]], fmt="o", ms=3, label="MC gap (3 s.e.)")
for col in {}:
    x, y = finite(d["t"], d[col])
    ax.plot(x, y, "--", label=col)
"#,
        py_list(&bounds)
    );
    if cond {
        body.push_str(
            "x, y = finite(d[\"t\"], d[\"cond_gap_mean\"])\nax.plot(x, y, \"s\", ms=3, label=\"conditional gap\")\n",
        );
    }
    body.push_str(&format!(
        "ax.set_xlabel(\"t\")\nax.set_ylabel(\"E[L - L*]\")\nax.set_title({:?})\nax.legend()\n",
        format!("{name}: gap vs bounds")
    ));
    script("Observed optimality gap against the bound curves.", &body, "gap_vs_bound")
}

fn masses(cols: &[String], name: &str) -> String {
    let sets: Vec<String> = cols
        .iter()
        .filter(|c| (c.starts_with("mass_") || c.starts_with("tail_eps")) && !c.ends_with("_stderr"))
        .cloned()
        .collect();
    let body = format!(
        r#"d = load("observables.csv")
fig, ax = plt.subplots(figsize=(6, 4))
for col in {}:
    ax.errorbar(d["t"], d[col], yerr=[3 * s for s in d[col + "_stderr"]], fmt="-o", ms=3, label=col)
ax.set_xlabel("t")
ax.set_ylabel("fraction of paths")
ax.set_title({:?})
ax.legend()
"#,
        py_list(&sets),
        format!("{name}: set masses")
    );
    script("Fraction of paths in each configured set.", &body, "masses")
}

fn dirichlet_decay(name: &str) -> String {
    let body = format!(
        r#"d = load("fp_series.csv")
pos = [i for i, t in enumerate(d["t"]) if t > 0]
t = [d["t"][i] for i in pos]
fig, (ax, bx) = plt.subplots(1, 2, figsize=(10, 4))
ax.loglog(t, [d["dirichlet_pi"][i] for i in pos], "o-", ms=3, label="Dirichlet energy")
ax.loglog(t, [d["bound_dirichlet"][i] for i in pos], "--", label="bound")
anchor = d["dirichlet_pi"][pos[0]] * t[0]
ax.loglog(t, [anchor / s for s in t], ":", color="gray", label="slope -1")
ax.set_xlabel("t")
ax.set_title({:?})
ax.legend()
for col, ref in (("fk2_norm", "bound_k2"), ("fk3_norm", "bound_k3")):
    bx.loglog(t, [d[col][i] for i in pos], "o-", ms=3, label=col)
    bx.loglog(t, [d[ref][i] for i in pos], "--", label=ref)
bx.set_xlabel("t")
bx.set_title("higher-order functionals")
bx.legend()
"#,
        format!("{name}: Dirichlet decay")
    );
    script("Weighted Dirichlet energy and higher-order functionals on log-log axes.", &body, "dirichlet_decay")
}

fn sgd_gap(cols: &[String], name: &str) -> String {
    let mut body = format!(
        r#"d = load("sgd.csv")
fig, ax = plt.subplots(figsize=(6, 4))
ax.semilogy(d["k"], d["gap_mean"], label="SGD gap")
ax.semilogy(d["k"], d["bound_sgd_recursion"], "--", label="recursion bound")
ax.set_xlabel("k")
ax.set_title({:?})
"#,
        format!("{name}: SGD gap")
    );
    if cols.iter().any(|c| c == "langevin_gap_mean") {
        body.push_str("ax.semilogy(d[\"k\"], d[\"langevin_gap_mean\"], label=\"Langevin recursion\")\n");
    }
    body.push_str("ax.legend()\n");
    script("Mean SGD optimality gap per step against the recursion bound.", &body, "sgd_gap")
}

fn local_pl(name: &str) -> String {
    let body = format!(
        r#"d = load("local_pl.csv")
fig, ax = plt.subplots(figsize=(6, 4))
ax.loglog(d["width"], d["mu_hat"], "o", label="mu_hat per init")
ax.set_xlabel("width")
ax.set_ylabel("mu_hat")
ax.set_title({:?})
ax.legend()
"#,
        format!("{name}: local PL constant")
    );
    script("Local PL estimate against network width.", &body, "local_pl")
}

/// Writes plot scripts for every observable file in the run and adds them to
/// the manifest. Returns the script paths.
pub fn emit_plots(manifest: &mut RunManifest) -> Result<Vec<PathBuf>, LabError> {
    manifest.verify()?;
    let mut scripts: Vec<(&str, String)> = Vec::new();
    let name = manifest.name.clone();
    if let Some(cols) = header(manifest, "observables.csv")? {
        require(&cols, "observables.csv", &["t", "gap_mean", "gap_stderr"])?;
        scripts.push(("gap_vs_bound.py", gap_vs_bound(&cols, &name)));
        if cols.iter().any(|c| c.starts_with("mass_") || c.starts_with("tail_eps")) {
            scripts.push(("masses.py", masses(&cols, &name)));
        }
    }
    if let Some(cols) = header(manifest, "fp_series.csv")? {
        require(
            &cols,
            "fp_series.csv",
            &["t", "dirichlet_pi", "bound_dirichlet", "fk2_norm", "bound_k2", "fk3_norm", "bound_k3"],
        )?;
        scripts.push(("dirichlet_decay.py", dirichlet_decay(&name)));
    }
    if let Some(cols) = header(manifest, "sgd.csv")? {
        require(&cols, "sgd.csv", &["k", "gap_mean", "bound_sgd_recursion"])?;
        scripts.push(("sgd_gap.py", sgd_gap(&cols, &name)));
    }
    if let Some(cols) = header(manifest, "local_pl.csv")? {
        require(&cols, "local_pl.csv", &["width", "mu_hat"])?;
        scripts.push(("local_pl.py", local_pl(&name)));
    }
    if scripts.is_empty() {
        return Err(LabError::MissingData("run has no plottable CSV outputs".into()));
    }
    let dir = manifest.run_dir.join(PLOT_DIR);
    fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
    let mut out = Vec::new();
    for (file, text) in scripts {
        let p = dir.join(file);
        fs::write(&p, text).map_err(|e| LabError::io(&p, e))?;
        out.push(p);
    }
    manifest.refresh_inventory()?;
    manifest.save()?;
    Ok(out)
}
