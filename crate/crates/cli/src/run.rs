//! Turns a validated config into output files and a manifest.
//!
//! [`Plan::prepare`] builds every module object and checks every
//! precondition without touching the filesystem, so an invalid config never
//! leaves partial outputs behind.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use langevin_core::bounds::{
    decay_upper_bound, local_conditional_bound, plateau, quadratic_lower_bound, sgd_recursion_curve, BoundCurve,
};
use langevin_core::estimators::{
    conditional_gap_on_ball_event, mass_on_set, mc_expected_gap, tail_probability_gap, SetDescriptor,
};
use langevin_core::exec::map_indexed;
use langevin_core::fokker_planck::{
    build_generator, density_crosscheck, evolve, phi_limit_report, weighted_l2_norm, FpRecord, Generator, Grid,
    Integrability, Schedule, Scheme, WeightedField,
};
use langevin_core::nn::{linear_as_quadratic, probe_local_pl, Activation, Dataset, MLPSpec, SquareLoss};
use langevin_core::objective::{quadratic_pl_constants, Flat, QuadraticLoss, SquaredNorm};
use langevin_core::sde_sim::{
    simulate_ensemble_with, simulate_sgd_with, GaussianNoiseGradient, LangevinNoiseGradient, SimError,
};
use langevin_core::snapshot_io::{write_binary_block, write_jsonl_record, write_snapshot_binary};
use langevin_core::stats::mean_and_stderr;
use langevin_core::table::Table;
use langevin_core::{EnsembleSnapshot, InitialLaw, Objective, PLCertificate, SimConfig};
use nalgebra::DMatrix;

use crate::config::{
    DataSpec, ExperimentConfig, GridSection, IntegrabilitySpec, LocalPlSection, ObjectiveSpec, Phi0Spec,
    PositionOutput, SgdSection,
};
use crate::error::LabError;
use crate::manifest::{inventory, RunManifest, MANIFEST_FILE};

/// Environment variable holding the output root.
pub const OUTPUT_ROOT_ENV: &str = "LANGEVIN_LAB_OUT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";
pub const CODE_VERSION: &str = concat!("langevin-lab ", env!("CARGO_PKG_VERSION"));

const TIME_TOL: f64 = 1e-9;

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

pub fn run_dir(cfg: &ExperimentConfig, out_root: &Path) -> PathBuf {
    match &cfg.output_dir {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => out_root.join(p),
        None => out_root.join(&cfg.name),
    }
}

fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIME_TOL * (1.0 + b.abs())
}

struct SimPlan {
    cfg: SimConfig,
    init: InitialLaw,
    positions: PositionOutput,
}

struct GridPlan {
    gen: Generator,
    schedule: Schedule,
    init: WeightedField,
    window: (Vec<f64>, Vec<f64>),
    limit: Option<(Integrability, Option<f64>)>,
    field_snapshots: bool,
}

struct SgdPlan {
    loss: SquareLoss,
    w0: Vec<f64>,
    mu: f64,
    l_smooth: f64,
    eta: f64,
    curve: BoundCurve,
}

/// Every module object a run needs, built and validated up front.
pub struct Plan {
    objective: Option<Box<dyn Objective>>,
    cert: Option<PLCertificate>,
    /// `(σ_max(A), ‖A‖_F²)` when the objective is a quadratic.
    quad: Option<(f64, f64)>,
    sim: Option<SimPlan>,
    grid: Option<GridPlan>,
    local_pl: Option<(Dataset, LocalPlSection)>,
    sgd: Option<SgdPlan>,
}

type Built = (Box<dyn Objective>, Option<PLCertificate>, Option<(f64, f64)>);

fn build_objective(spec: &ObjectiveSpec) -> Result<Built, LabError> {
    let bad = |m: String| LabError::config("objective", m);
    match spec {
        ObjectiveSpec::SquaredNorm { dim, scale } => {
            if *dim == 0 || !(*scale > 0.0 && scale.is_finite()) {
                return Err(bad("squared_norm needs dim >= 1 and scale > 0".into()));
            }
            let (a, d) = (*scale, *dim as f64);
            let cert = PLCertificate::global(4.0 * a, 0.0, 2.0 * a * d).map_err(|e| bad(e.to_string()))?;
            Ok((Box::new(SquaredNorm::new(*dim, a)), Some(cert), Some((a.sqrt(), a * d))))
        }
        ObjectiveSpec::Flat { dim } => {
            if *dim == 0 {
                return Err(bad("flat needs dim >= 1".into()));
            }
            Ok((Box::new(Flat::new(*dim)), None, None))
        }
        ObjectiveSpec::Quadratic { rows, embed_dim, w_star, .. } => {
            let rows = rows.as_ref().ok_or_else(|| bad("quadratic needs rows or matrix_csv".into()))?;
            if rows.is_empty() || rows[0].is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) {
                return Err(bad("matrix rows must be nonempty and of equal length".into()));
            }
            let q = match embed_dim {
                Some(d) => {
                    if w_star.as_ref().is_some_and(|w| w.iter().any(|&x| x != 0.0)) {
                        return Err(bad("embedded quadratics have w* = 0".into()));
                    }
                    let block = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
                    QuadraticLoss::embedded(block, *d)
                }
                None => {
                    let w = w_star.clone().unwrap_or_else(|| vec![0.0; rows[0].len()]);
                    QuadraticLoss::from_rows(rows, w)
                }
            }
            .map_err(|e| bad(e.to_string()))?;
            let cert = quadratic_pl_constants(q.matrix()).map_err(|e| bad(e.to_string()))?;
            let quad = (q.sigma_max(), q.frobenius_sq());
            Ok((Box::new(q), Some(cert), Some(quad)))
        }
    }
}

fn build_dataset(spec: &DataSpec, path: &str) -> Result<Dataset, LabError> {
    if spec.input_dim == 0 {
        return Err(LabError::config(path, "input_dim must be >= 1"));
    }
    if let Some(file) = &spec.dataset_csv {
        let text = fs::read_to_string(file)
            .map_err(|e| LabError::config(format!("{path}.dataset_csv"), format!("{}: {e}", file.display())))?;
        return Dataset::from_csv(&text, spec.input_dim)
            .map_err(|e| LabError::config(format!("{path}.dataset_csv"), e));
    }
    if spec.n_data == 0 {
        return Err(LabError::config(path, "n_data must be >= 1 without dataset_csv"));
    }
    let teacher = if spec.teacher_hidden.is_empty() {
        MLPSpec::new(vec![spec.input_dim, 1], vec![Activation::Linear])
    } else {
        MLPSpec::tanh_hidden(spec.input_dim, &spec.teacher_hidden, 1)
    }
    .map_err(|e| LabError::config(format!("{path}.teacher_hidden"), e))?;
    Dataset::teacher(&teacher, &teacher.init_weights(spec.teacher_seed), spec.n_data, spec.data_seed)
        .map_err(|e| LabError::config(path, e))
}

fn prepare_grid(g: &GridSection, cfg: &ExperimentConfig, obj: &dyn Objective) -> Result<GridPlan, LabError> {
    let bad = |key: &str, m: String| LabError::config(format!("grid.{key}"), m);
    if !(cfg.sigma > 0.0) {
        return Err(LabError::config("sigma", "the grid solver needs sigma > 0"));
    }
    let grid = Grid::new(g.lo.clone(), g.hi.clone(), g.n_cells.clone()).map_err(|e| bad("n_cells", e.to_string()))?;
    if grid.dim() != obj.dim() {
        return Err(bad("lo", format!("grid has dimension {}, objective {}", grid.dim(), obj.dim())));
    }
    let gen = build_generator(&grid, obj, cfg.sigma).map_err(|e| bad("lo", e.to_string()))?;
    let times = &g.record_times;
    if times.is_empty()
        || times.iter().any(|&t| !(t > 0.0 && t.is_finite()))
        || times.windows(2).any(|w| !(w[0] < w[1]))
    {
        return Err(bad("record_times", "need strictly increasing positive times".into()));
    }
    if g.steps_per_segment == 0 {
        return Err(bad("steps_per_segment", "must be >= 1".into()));
    }
    if g.scheme == Scheme::Explicit {
        let mut prev = 0.0;
        for &t in times {
            let dt = (t - prev) / g.steps_per_segment as f64;
            if dt > gen.cfl_limit() {
                return Err(bad(
                    "steps_per_segment",
                    format!("explicit step {dt:e} exceeds the stability limit {:e}", gen.cfl_limit()),
                ));
            }
            prev = t;
        }
    }
    let d = grid.dim();
    let init = match &g.phi0 {
        Phi0Spec::Bump { center, width } => {
            if center.len() != d || !(*width > 0.0) {
                return Err(bad("phi0", format!("bump needs a center of dimension {d} and width > 0")));
            }
            let (c, w) = (center.clone(), *width);
            WeightedField::from_ratio(&gen, move |x| {
                (-x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / w).exp()
            })
        }
        Phi0Spec::GaussianDensity { mean, var } => gaussian_field(&gen, mean, var, d)?,
        Phi0Spec::FromInitial => match &cfg.initial {
            Some(InitialLaw::Gaussian { mean, var }) => gaussian_field(&gen, mean, var, d)?,
            _ => return Err(bad("phi0", "from_initial needs a gaussian [initial] law".into())),
        },
    };
    let mass0 = langevin_core::fokker_planck::mass(&gen, &init.phi);
    if !(mass0 > 0.0 && mass0.is_finite()) {
        return Err(bad("phi0", format!("initial field has mass {mass0} on the grid")));
    }
    let init = init.normalized(&gen);
    if g.window.lo.len() != d || g.window.hi.len() != d || g.window.lo.iter().zip(&g.window.hi).any(|(l, h)| !(l < h)) {
        return Err(bad("window", format!("window needs lo < hi of dimension {d}")));
    }
    let limit = match &g.limit_report {
        None => None,
        Some(spec) => {
            if times[times.len() - 1] / times[0] < 10.0 * (1.0 - 1e-12) {
                return Err(bad("limit_report", "record_times must span at least a decade".into()));
            }
            if spec.pi_mass.is_some_and(|m| !(m > 0.0 && m.is_finite())) {
                return Err(bad("limit_report.pi_mass", "must be positive".into()));
            }
            let integrability = match spec.integrability {
                IntegrabilitySpec::Integrable => Integrability::Integrable,
                IntegrabilitySpec::NonIntegrable => Integrability::NonIntegrable,
                IntegrabilitySpec::Probe => Integrability::Probe { growth: obj.growth_class() },
            };
            Some((integrability, spec.pi_mass))
        }
    };
    Ok(GridPlan {
        gen,
        schedule: Schedule { record_times: times.clone(), steps_per_segment: g.steps_per_segment, scheme: g.scheme },
        init,
        window: (g.window.lo.clone(), g.window.hi.clone()),
        limit,
        field_snapshots: g.field_snapshots,
    })
}

fn gaussian_field(gen: &Generator, mean: &[f64], var: &[f64], d: usize) -> Result<WeightedField, LabError> {
    if mean.len() != d || var.len() != d || var.iter().any(|&v| !(v > 0.0)) {
        return Err(LabError::config("grid.phi0", format!("gaussian needs mean/var of dimension {d}, var > 0")));
    }
    let (m, v) = (mean.to_vec(), var.to_vec());
    Ok(WeightedField::from_density(gen, move |x| {
        (-x.iter().zip(&m).zip(&v).map(|((a, b), s)| (a - b) * (a - b) / (2.0 * s)).sum::<f64>()).exp()
    }))
}

fn prepare_sgd(s: &SgdSection) -> Result<SgdPlan, LabError> {
    let bad = |key: &str, m: String| LabError::config(format!("sgd.{key}"), m);
    let data = build_dataset(&s.data, "sgd.data")?;
    let spec = MLPSpec::new(vec![data.input_dim, data.output_dim], vec![Activation::Linear])
        .map_err(|e| bad("data", e.to_string()))?;
    let loss = SquareLoss::new(spec.clone(), data).map_err(|e| bad("data", e.to_string()))?;
    let q = linear_as_quadratic(&loss).map_err(|e| bad("data", e.to_string()))?;
    let smin = q.sigma_min_positive().ok_or_else(|| bad("data", "data matrix is zero".into()))?;
    let (mu, l_smooth) = (2.0 * smin * smin, 2.0 * q.sigma_max().powi(2));
    if !(s.eta_factor > 0.0 && s.eta_factor <= 1.0) {
        return Err(bad("eta_factor", "must lie in (0, 1]".into()));
    }
    if !(s.delta >= 0.0) || s.k_max == 0 || s.n_seeds < 2 {
        return Err(bad("delta", "need delta >= 0, k_max >= 1 and n_seeds >= 2".into()));
    }
    let eta = s.eta_factor / l_smooth;
    let w0 = spec.init_weights(s.init_seed);
    let gap0 = loss.gap(&w0);
    let curve = sgd_recursion_curve(gap0, mu, eta, l_smooth, s.delta).map_err(|e| bad("eta_factor", e.to_string()))?;
    Ok(SgdPlan { loss, w0, mu, l_smooth, eta, curve })
}

impl Plan {
    /// Checks the config against every module precondition.
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self, LabError> {
        if cfg.name.trim().is_empty() {
            return Err(LabError::config("name", "must be nonempty"));
        }
        if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
            return Err(LabError::config("sigma", format!("sigma = {} must be finite and >= 0", cfg.sigma)));
        }
        let (objective, derived, quad) = match &cfg.objective {
            Some(spec) => {
                let (o, c, q) = build_objective(spec)?;
                (Some(o), c, q)
            }
            None => (None, None, None),
        };
        let cert = match &cfg.bounds.certificate {
            Some(c) => Some(
                PLCertificate::global(c.ell1, c.ell2, c.ell3).map_err(|e| LabError::config("bounds.certificate", e))?,
            ),
            None => derived,
        };
        let need_obj = |section: &str| {
            objective.as_deref().ok_or_else(|| LabError::config(section, "needs an [objective] section"))
        };

        let sim = match &cfg.sim {
            None => None,
            Some(s) => {
                let obj = need_obj("sim")?;
                let init = cfg.initial.clone().ok_or_else(|| LabError::config("sim", "needs an [initial] law"))?;
                init.validate().map_err(|e| LabError::config("initial", e))?;
                if init.dim() != obj.dim() {
                    return Err(LabError::config(
                        "initial",
                        format!("dimension {} != objective dimension {}", init.dim(), obj.dim()),
                    ));
                }
                let mut record_times = match &s.record_times {
                    Some(t) => t.clone(),
                    None => SimConfig::uniform_record_times(s.t_final, s.n_records),
                };
                if record_times.first().is_none_or(|&t| t > 0.0) {
                    record_times.insert(0, 0.0);
                }
                let sc = SimConfig {
                    sigma: cfg.sigma,
                    dt: s.dt,
                    t_final: s.t_final,
                    n_paths: s.n_paths,
                    seed: cfg.seed,
                    record_times,
                    execution: cfg.execution,
                };
                sc.validate().map_err(|e| LabError::config("sim", e))?;
                Some(SimPlan { cfg: sc, init, positions: s.positions })
            }
        };

        let est = &cfg.estimators;
        if !est.sets.is_empty() || !est.tail_eps.is_empty() || est.conditional.is_some() {
            let sp = sim.as_ref().ok_or_else(|| LabError::config("estimators", "needs a [sim] section"))?;
            let obj = need_obj("estimators")?;
            let mut labels = Vec::new();
            for (i, set) in est.sets.iter().enumerate() {
                set.validate(obj.dim()).map_err(|e| LabError::config(format!("estimators.sets[{i}]"), e))?;
                if matches!(set, SetDescriptor::Tube { .. })
                    && obj.project_to_minimizers(&vec![0.0; obj.dim()]).is_none()
                {
                    return Err(LabError::config(
                        format!("estimators.sets[{i}]"),
                        "objective has no minimizer projection",
                    ));
                }
                if labels.contains(&set.label()) {
                    return Err(LabError::config(
                        format!("estimators.sets[{i}]"),
                        format!("duplicate column {}", set.label()),
                    ));
                }
                labels.push(set.label());
            }
            if est.tail_eps.iter().any(|&e| !(e > 0.0)) {
                return Err(LabError::config("estimators.tail_eps", "thresholds must be > 0"));
            }
            if let Some(c) = &est.conditional {
                if !(c.radius > 0.0) || !(c.horizon > 0.0 && c.horizon <= sp.cfg.t_final * (1.0 + 1e-12)) {
                    return Err(LabError::config(
                        "estimators.conditional",
                        "need radius > 0 and 0 < horizon <= t_final",
                    ));
                }
            }
        }

        let b = &cfg.bounds;
        if (b.decay_upper || b.plateau || b.quadratic_lower || b.local.is_some()) && sim.is_none() {
            return Err(LabError::config("bounds", "bound curves are sampled on the [sim] record times"));
        }
        if b.decay_upper || b.plateau {
            let c = cert.as_ref().ok_or_else(|| {
                LabError::config("bounds.certificate", "objective has no derived PL constants; give ell1, ell2, ell3")
            })?;
            if !c.admits(cfg.sigma) {
                return Err(LabError::config(
                    "bounds",
                    format!(
                        "noise level not admissible: the decay bound requires ell1 > sigma * ell2, got ell1 = {} <= sigma * ell2 = {}",
                        c.ell1,
                        cfg.sigma * c.ell2
                    ),
                ));
            }
        }
        if b.quadratic_lower && quad.is_none() {
            return Err(LabError::config("bounds.quadratic_lower", "only available for quadratic objectives"));
        }
        if let Some(l) = &b.local {
            if est.conditional.is_none() {
                return Err(LabError::config("bounds.local", "needs [estimators.conditional]"));
            }
            if !(l.ell1p > 0.0 && l.ell2p >= 0.0) {
                return Err(LabError::config("bounds.local", "need ell1p > 0 and ell2p >= 0"));
            }
        }

        let grid = match &cfg.grid {
            None => None,
            Some(g) => Some(prepare_grid(g, cfg, need_obj("grid")?)?),
        };

        if let Some(x) = &cfg.crosscheck {
            let (sp, gp) = match (&sim, &grid) {
                (Some(s), Some(g)) => (s, g),
                _ => return Err(LabError::config("crosscheck", "needs both [sim] and [grid]")),
            };
            if !sp.cfg.record_times.iter().any(|&t| same_time(t, x.t))
                || !gp.schedule.record_times.iter().any(|&t| same_time(t, x.t))
            {
                return Err(LabError::config("crosscheck.t", "t must be a record time of both [sim] and [grid]"));
            }
            if x.coarsen == 0 || gp.gen.grid().n_cells().iter().any(|&n| n % x.coarsen != 0) {
                return Err(LabError::config("crosscheck.coarsen", "must divide the cell count of every axis"));
            }
        }

        let local_pl = match &cfg.local_pl {
            None => None,
            Some(s) => {
                let data = build_dataset(&s.data, "local_pl.data")?;
                if s.widths.is_empty() || s.widths.contains(&0) || s.init_seeds.is_empty() {
                    return Err(LabError::config("local_pl", "need nonempty widths (>= 1) and init_seeds"));
                }
                if !(s.radius > 0.0) || s.n_samples == 0 || !(s.gap_floor >= 0.0) {
                    return Err(LabError::config("local_pl", "need radius > 0, n_samples >= 1, gap_floor >= 0"));
                }
                Some((data, s.clone()))
            }
        };

        let sgd = cfg.sgd.as_ref().map(prepare_sgd).transpose()?;

        if sim.is_none() && grid.is_none() && local_pl.is_none() && sgd.is_none() {
            return Err(LabError::config("<root>", "nothing to run: add [sim], [grid], [local_pl] or [sgd]"));
        }
        Ok(Plan { objective, cert, quad, sim, grid, local_pl, sgd })
    }
}

/// Empties a directory left by an earlier run of the same kind. Anything not
/// listed in its manifest is left alone and makes the run refuse to start.
fn prepare_dir(dir: &Path) -> Result<(), LabError> {
    if !dir.exists() {
        return fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e));
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.is_file() {
        let old = RunManifest::load(&manifest_path)?;
        for f in &old.files {
            if f.path.split('/').any(|c| c == ".." || c.is_empty()) {
                continue;
            }
            let p = dir.join(&f.path);
            if p.is_file() {
                fs::remove_file(&p).map_err(|e| LabError::io(&p, e))?;
            }
        }
        fs::remove_file(&manifest_path).map_err(|e| LabError::io(&manifest_path, e))?;
        remove_empty_dirs(dir)?;
    }
    if fs::read_dir(dir).map_err(|e| LabError::io(dir, e))?.next().is_some() {
        return Err(LabError::config(
            "output_dir",
            format!("{} exists and holds files not produced by an earlier run", dir.display()),
        ));
    }
    Ok(())
}

fn remove_empty_dirs(dir: &Path) -> Result<(), LabError> {
    for entry in fs::read_dir(dir).map_err(|e| LabError::io(dir, e))? {
        let p = entry.map_err(|e| LabError::io(dir, e))?.path();
        if p.is_dir() {
            remove_empty_dirs(&p)?;
            if fs::read_dir(&p).map_err(|e| LabError::io(&p, e))?.next().is_none() {
                fs::remove_dir(&p).map_err(|e| LabError::io(&p, e))?;
            }
        }
    }
    Ok(())
}

fn write(dir: &Path, rel: &str, contents: impl AsRef<[u8]>) -> Result<(), LabError> {
    let p = dir.join(rel);
    fs::write(&p, contents).map_err(|e| LabError::io(p, e))
}

fn write_json<T: serde::Serialize>(dir: &Path, rel: &str, value: &T) -> Result<(), LabError> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write(dir, rel, s)
}

fn create(dir: &Path, rel: &str) -> Result<BufWriter<File>, LabError> {
    let p = dir.join(rel);
    File::create(&p).map(BufWriter::new).map_err(|e| LabError::io(p, e))
}

/// Snapshots kept after the ensemble run for later stages.
#[derive(Default)]
struct SimOutputs {
    crosscheck_snapshot: Option<EnsembleSnapshot>,
}

fn run_sim(cfg: &ExperimentConfig, plan: &Plan, sp: &SimPlan, dir: &Path) -> Result<SimOutputs, LabError> {
    let obj = plan.objective.as_deref().expect("checked in prepare");
    let exec = cfg.execution;
    let est = &cfg.estimators;
    let mut columns = vec!["t".to_string(), "gap_mean".into(), "gap_stderr".into()];
    for s in &est.sets {
        columns.push(s.label());
        columns.push(format!("{}_stderr", s.label()));
    }
    for e in &est.tail_eps {
        columns.push(format!("tail_eps{e}"));
        columns.push(format!("tail_eps{e}_stderr"));
    }
    let mut table = Table::new(columns);
    let include_positions = matches!(sp.positions, PositionOutput::Jsonl | PositionOutput::Both);
    let mut jsonl = create(dir, "snapshots.jsonl")?;
    let mut binary = match sp.positions {
        PositionOutput::Binary | PositionOutput::Both => Some(create(dir, "positions.bin")?),
        _ => None,
    };
    let horizon = est.conditional.as_ref().map(|c| c.horizon);
    let cross_t = cfg.crosscheck.as_ref().map(|c| c.t);
    let mut kept = Vec::new();
    let mut out = SimOutputs::default();
    let mut failure: Option<LabError> = None;
    let res = simulate_ensemble_with(obj, &sp.init, &sp.cfg, |snap| {
        if failure.is_some() {
            return;
        }
        let step = (|| -> Result<(), LabError> {
            write_jsonl_record(&mut jsonl, snap, include_positions)
                .map_err(|e| LabError::numerical("snapshot output", e))?;
            if let Some(b) = binary.as_mut() {
                write_snapshot_binary(b, snap).map_err(|e| LabError::numerical("snapshot output", e))?;
            }
            if snap.diverged {
                return Ok(());
            }
            let ctx = |e: langevin_core::estimators::EstimatorError| {
                LabError::numerical(format!("estimators at t = {}", snap.t), e)
            };
            let g = mc_expected_gap(snap, obj, exec).map_err(ctx)?;
            let mut row = vec![snap.t, g.mean, g.stderr];
            for s in &est.sets {
                let p = mass_on_set(snap, s, obj, exec).map_err(ctx)?;
                row.extend([p.value, p.stderr]);
            }
            for &e in &est.tail_eps {
                let p = tail_probability_gap(snap, obj, e, exec).map_err(ctx)?;
                row.extend([p.value, p.stderr]);
            }
            table.push(row);
            if horizon.is_some_and(|h| snap.t <= h * (1.0 + TIME_TOL) + TIME_TOL) {
                kept.push(snap.clone());
            }
            if cross_t.is_some_and(|t| same_time(snap.t, t)) {
                out.crosscheck_snapshot = Some(snap.clone());
            }
            Ok(())
        })();
        if let Err(e) = step {
            failure = Some(e);
        }
    });
    jsonl.flush().map_err(|e| LabError::io(dir.join("snapshots.jsonl"), e))?;
    if let Some(b) = binary.as_mut() {
        b.flush().map_err(|e| LabError::io(dir.join("positions.bin"), e))?;
    }
    if let Some(e) = failure {
        return Err(e);
    }
    if let Err(e) = res {
        let e = match e {
            SimError::Diverged { path, t, .. } => format!("path {path} diverged at t = {t}"),
            other => other.to_string(),
        };
        write(dir, "observables.csv", table.to_csv())?;
        return Err(LabError::numerical("ensemble simulation", e));
    }

    let times: Vec<f64> = table.rows.iter().map(|r| r[0]).collect();
    let gap0 = table.rows[0][1];
    let mut curves: BTreeMap<String, BoundCurve> = BTreeMap::new();
    let b = &cfg.bounds;
    let bound_err = |e: langevin_core::bounds::BoundError| LabError::numerical("bounds", e);
    if b.decay_upper {
        let c = decay_upper_bound(gap0, plan.cert.as_ref().expect("checked"), cfg.sigma).map_err(bound_err)?;
        curves.insert(c.label(), c);
    }
    if b.plateau {
        let c = plateau(plan.cert.as_ref().expect("checked"), cfg.sigma).map_err(bound_err)?;
        curves.insert(c.label(), c);
    }
    if b.quadratic_lower {
        let (s1, frob) = plan.quad.expect("checked");
        let c = quadratic_lower_bound(gap0, s1, frob, cfg.sigma).map_err(bound_err)?;
        curves.insert(c.label(), c);
    }
    // fixed column order: decay, plateau, quadratic lower, local
    for label in ["bound_decay_upper", "bound_plateau", "bound_quadratic_lower"] {
        if let Some(c) = curves.get(label) {
            table.add_column(label, &c.sample(&times));
        }
    }

    if let Some(cs) = &est.conditional {
        let cg = conditional_gap_on_ball_event(&kept, obj, cs.radius, cs.horizon, exec)
            .map_err(|e| LabError::numerical("conditional gap", e))?;
        let mut mean = vec![f64::NAN; times.len()];
        let mut stderr = vec![f64::NAN; times.len()];
        let mut n_event = vec![f64::NAN; times.len()];
        for (i, p) in cg.points.iter().enumerate() {
            mean[i] = p.mean;
            stderr[i] = p.stderr;
            n_event[i] = p.n_event as f64;
        }
        table.add_column("cond_gap_mean", &mean);
        table.add_column("cond_gap_stderr", &stderr);
        table.add_column("cond_n_event", &n_event);
        if let Some(l) = &b.local {
            let mut col = vec![f64::NAN; times.len()];
            if !cg.empty_event {
                let c =
                    local_conditional_bound(mean[0], l.ell1p, l.ell2p, cfg.sigma, cg.event.value).map_err(bound_err)?;
                for (i, t) in times.iter().enumerate().take(cg.points.len()) {
                    col[i] = c.eval(*t);
                }
                curves.insert(c.label(), c);
            }
            table.add_column("bound_local_conditional", &col);
        }
        write_json(dir, "conditional.json", &cg)?;
    }
    write(dir, "observables.csv", table.to_csv())?;
    if !curves.is_empty() {
        write_json(dir, "bounds.json", &curves)?;
    }
    Ok(out)
}

fn run_grid(cfg: &ExperimentConfig, gp: &GridPlan, dir: &Path) -> Result<Option<WeightedField>, LabError> {
    let exec = cfg.execution;
    let gen = &gp.gen;
    let window = (gp.window.0.as_slice(), gp.window.1.as_slice());
    let phi0_sq = weighted_l2_norm(gen, &gp.init);
    let cross_t = cfg.crosscheck.as_ref().map(|c| c.t);
    let mut records = Vec::new();
    let mut kept = Vec::new();
    let mut cross = None;
    let mut field_out = if gp.field_snapshots { Some(create(dir, "field.bin")?) } else { None };
    let mut io_err = None;
    let res = evolve(gen, gp.init.clone(), &gp.schedule, exec, |s| {
        records.push(FpRecord::measure(gen, s, window, exec));
        if let Some(f) = field_out.as_mut() {
            if let Err(e) = write_binary_block(f, s.phi.len(), 1, s.t, &s.phi) {
                io_err.get_or_insert(e);
            }
        }
        if gp.limit.is_some() && s.t > 0.0 {
            kept.push(s.clone());
        }
        if cross_t.is_some_and(|t| same_time(s.t, t)) {
            cross = Some(s.clone());
        }
    });
    if let Some(f) = field_out.as_mut() {
        f.flush().map_err(|e| LabError::io(dir.join("field.bin"), e))?;
    }
    if let Some(e) = io_err {
        return Err(LabError::numerical("field output", e));
    }

    let mut table = Table::new([
        "t",
        "phi_l2_pi",
        "dirichlet_pi",
        "fk2_norm",
        "fk3_norm",
        "mass_window",
        "bound_dirichlet",
        "bound_k2",
        "bound_k3",
        "mass_total",
        "phi_min",
    ]);
    let dirichlet = langevin_core::bounds::dirichlet_decay_bound(phi0_sq);
    let k2 = langevin_core::bounds::higher_order_bound(phi0_sq, 2).expect("k >= 1");
    let k3 = langevin_core::bounds::higher_order_bound(phi0_sq, 3).expect("k >= 1");
    for r in &records {
        table.push(vec![
            r.t,
            r.phi_l2_pi,
            r.dirichlet_pi,
            r.fk2_norm,
            r.fk3_norm,
            r.mass_window,
            dirichlet.eval(r.t),
            k2.eval(r.t),
            k3.eval(r.t),
            r.mass_total,
            r.phi_min,
        ]);
    }
    write(dir, "fp_series.csv", table.to_csv())?;

    let g = gen.grid();
    let mut nodes = Table::new((0..g.dim()).map(|a| format!("w{a}")).chain(["pi_scaled".to_string()]));
    for i in 0..g.n_nodes() {
        let mut row = g.node_coords(i);
        row.push(gen.pi()[i]);
        nodes.push(row);
    }
    write(dir, "field_nodes.csv", nodes.to_csv())?;
    let meta = serde_json::json!({
        "log_scale": gen.log_scale(),
        "pi_domain_mass_scaled": langevin_core::fokker_planck::pi_domain_mass(gen),
        "underflow_fraction": gen.underflow_fraction(),
        "cfl_limit": gen.cfl_limit(),
        "n_nodes": g.n_nodes(),
        "phi0_sq_norm": phi0_sq,
    });
    write_json(dir, "fp_meta.json", &meta)?;
    res.map_err(|e| LabError::numerical("Fokker-Planck solve", e))?;

    if let Some((integrability, pi_mass)) = &gp.limit {
        let r = phi_limit_report(gen, &kept, *pi_mass, *integrability, window)
            .map_err(|e| LabError::numerical("limit report", e))?;
        write_json(dir, "fp_limit.json", &r)?;
    }
    Ok(cross)
}

fn run_local_pl(cfg: &ExperimentConfig, data: &Dataset, s: &LocalPlSection, dir: &Path) -> Result<(), LabError> {
    write(dir, "dataset.csv", data.to_csv())?;
    let mut table = Table::new([
        "width",
        "init_seed",
        "n_params",
        "radius",
        "mu_hat",
        "ell1_hat",
        "violation_count",
        "n_admitted",
        "n_samples",
    ]);
    let mut medians = Vec::new();
    let mut all_positive = true;
    for &m in &s.widths {
        let spec = MLPSpec::tanh_hidden(data.input_dim, &[m], data.output_dim)
            .map_err(|e| LabError::config("local_pl.widths", e))?;
        let loss = SquareLoss::new(spec.clone(), data.clone()).map_err(|e| LabError::config("local_pl.data", e))?;
        let mut mus = Vec::new();
        for (j, &seed) in s.init_seeds.iter().enumerate() {
            let w0 = spec.init_weights(seed);
            let p = probe_local_pl(
                &loss,
                &w0,
                s.radius,
                s.n_samples,
                s.gap_floor,
                s.mu_min,
                cfg.seed.wrapping_add(j as u64),
                cfg.execution,
            )
            .map_err(|e| LabError::numerical(format!("local PL probe (width {m}, seed {seed})"), e))?;
            all_positive &= p.mu_hat > 0.0;
            mus.push(p.mu_hat);
            table.push(vec![
                m as f64,
                seed as f64,
                spec.n_params() as f64,
                p.radius,
                p.mu_hat,
                p.ell1_hat,
                p.violation_count as f64,
                p.n_admitted as f64,
                p.n_samples as f64,
            ]);
        }
        mus.sort_by(f64::total_cmp);
        let n = mus.len();
        medians.push(if n % 2 == 1 { mus[n / 2] } else { 0.5 * (mus[n / 2 - 1] + mus[n / 2]) });
    }
    write(dir, "local_pl.csv", table.to_csv())?;
    let summary = serde_json::json!({
        "widths": s.widths,
        "median_mu_hat": medians,
        "all_positive": all_positive,
        "median_nondecreasing": medians.windows(2).all(|w| w[1] >= w[0]),
    });
    write_json(dir, "local_pl_summary.json", &summary)
}

fn run_sgd(cfg: &ExperimentConfig, sp: &SgdPlan, s: &SgdSection, dir: &Path) -> Result<(), LabError> {
    let loss = &sp.loss;
    let runs = |langevin: bool| -> Result<Vec<Vec<f64>>, LabError> {
        let per_seed = map_indexed(cfg.execution, s.n_seeds, |i| {
            let seed = cfg.seed.wrapping_add(i as u64);
            let mut gaps = Vec::with_capacity(s.k_max + 1);
            let res = if langevin {
                let oracle = LangevinNoiseGradient { objective: loss, sigma: cfg.sigma, eta: sp.eta };
                simulate_sgd_with(&oracle, &sp.w0, sp.eta, s.k_max, seed, |_, w| gaps.push(loss.gap(w)))
            } else {
                let oracle = GaussianNoiseGradient { objective: loss, variance: s.delta };
                simulate_sgd_with(&oracle, &sp.w0, sp.eta, s.k_max, seed, |_, w| gaps.push(loss.gap(w)))
            };
            res.map(|_| gaps)
        });
        per_seed
            .into_iter()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| LabError::numerical(if langevin { "Langevin recursion" } else { "SGD recursion" }, e))
    };
    let summarize = |runs: &[Vec<f64>], k: usize| mean_and_stderr(&runs.iter().map(|r| r[k]).collect::<Vec<_>>());
    let sgd = runs(false)?;
    let lang = if s.langevin { Some(runs(true)?) } else { None };
    let mut columns = vec!["k", "gap_mean", "gap_stderr", "bound_sgd_recursion"];
    if lang.is_some() {
        columns.extend(["langevin_gap_mean", "langevin_gap_stderr"]);
    }
    let mut table = Table::new(columns);
    for k in 0..=s.k_max {
        let (m, se) = summarize(&sgd, k);
        let mut row = vec![k as f64, m, se, sp.curve.eval(k as f64)];
        if let Some(l) = &lang {
            let (lm, lse) = summarize(l, k);
            row.extend([lm, lse]);
        }
        table.push(row);
    }
    write(dir, "sgd.csv", table.to_csv())?;
    let meta = serde_json::json!({
        "mu": sp.mu,
        "l_smooth": sp.l_smooth,
        "eta": sp.eta,
        "delta": s.delta,
        "gap0": sp.curve.params["gap0"],
        "bound_limit": sp.curve.limit(),
        "n_params": sp.w0.len(),
    });
    write_json(dir, "sgd_meta.json", &meta)
}

fn parameters(cfg: &ExperimentConfig) -> BTreeMap<String, f64> {
    let mut p = BTreeMap::new();
    p.insert("sigma".into(), cfg.sigma);
    p.insert("seed".into(), cfg.seed as f64);
    if let Some(s) = &cfg.sim {
        p.insert("dt".into(), s.dt);
        p.insert("t_final".into(), s.t_final);
        p.insert("n_paths".into(), s.n_paths as f64);
    }
    if let Some(g) = &cfg.grid {
        p.insert("grid_nodes".into(), g.n_cells.iter().product::<usize>() as f64);
    }
    p
}

/// Runs every configured stage and writes the manifest. Outputs are a pure
/// function of the config, so a rerun reproduces every checksum.
///
/// On a numerical failure the files written so far are still listed in a
/// manifest, marked with the parameter `failed = 1`, and the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig, out_root: &Path) -> Result<RunManifest, LabError> {
    let plan = Plan::prepare(cfg)?;
    let dir = run_dir(cfg, out_root);
    prepare_dir(&dir)?;
    let started_at = Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true);
    let mut manifest = RunManifest {
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        code_version: CODE_VERSION.into(),
        started_at,
        finished_at: String::new(),
        parameters: parameters(cfg),
        config: cfg.to_json_value(),
        files: Vec::new(),
        run_dir: dir.clone(),
    };
    let result = execute(cfg, &plan, &dir);
    if result.is_err() {
        manifest.parameters.insert("failed".into(), 1.0);
    }
    manifest.finished_at = Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true);
    manifest.files = inventory(&dir)?;
    manifest.save()?;
    result.map(|_| manifest)
}

fn execute(cfg: &ExperimentConfig, plan: &Plan, dir: &Path) -> Result<(), LabError> {
    write_json(dir, "config.json", &cfg.to_json_value())?;
    let sim_out = match &plan.sim {
        Some(sp) => run_sim(cfg, plan, sp, dir)?,
        None => SimOutputs::default(),
    };
    let field = match &plan.grid {
        Some(gp) => run_grid(cfg, gp, dir)?,
        None => None,
    };
    if let (Some(x), Some(gp), Some(sp)) = (&cfg.crosscheck, &plan.grid, &plan.sim) {
        let snap = sim_out
            .crosscheck_snapshot
            .ok_or_else(|| LabError::numerical("crosscheck", "no ensemble snapshot at t"))?;
        let field = field.ok_or_else(|| LabError::numerical("crosscheck", "no field at t"))?;
        let r = density_crosscheck(&gp.gen, &snap, &field, sp.cfg.dt, x.coarsen)
            .map_err(|e| LabError::numerical("crosscheck", e))?;
        write_json(dir, "crosscheck.json", &r)?;
    }
    if let Some((data, s)) = &plan.local_pl {
        run_local_pl(cfg, data, s, dir)?;
    }
    if let (Some(sp), Some(s)) = (&plan.sgd, &cfg.sgd) {
        run_sgd(cfg, sp, s, dir)?;
    }
    Ok(())
}

impl std::fmt::Debug for Plan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Plan")
            .field("sim", &self.sim.is_some())
            .field("grid", &self.grid.is_some())
            .field("local_pl", &self.local_pl.is_some())
            .field("sgd", &self.sgd.is_some())
            .finish()
    }
}
