//! Experiment description files.
//!
//! One TOML file describes one experiment: a noise level, a seed, an
//! objective and any combination of the ensemble, grid, network and SGD
//! sections. Missing sections are simply not run.

use std::path::{Path, PathBuf};

use langevin_core::estimators::SetDescriptor;
use langevin_core::fokker_planck::Scheme;
use langevin_core::objective::QuadraticLoss;
use langevin_core::{Execution, InitialLaw};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::LabError;

fn one() -> f64 {
    1.0
}

fn default_records() -> usize {
    21
}

fn default_steps() -> usize {
    64
}

fn default_coarsen() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub sigma: f64,
    /// Relative to the output root unless absolute; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default)]
    pub estimators: EstimatorSection,
    #[serde(default)]
    pub bounds: BoundsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crosscheck: Option<CrosscheckSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_pl: Option<LocalPlSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sgd: Option<SgdSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum ObjectiveSpec {
    SquaredNorm {
        dim: usize,
        #[serde(default = "one")]
        scale: f64,
    },
    Flat {
        dim: usize,
    },
    /// `‖A(w - w*)‖²`. `A` comes from `rows` (row-major) or `matrix_csv`; with
    /// `embed_dim` it is the left block of an `n × embed_dim` matrix.
    Quadratic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rows: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        matrix_csv: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        embed_dim: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        w_star: Option<Vec<f64>>,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionOutput {
    #[default]
    None,
    Jsonl,
    Binary,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub t_final: f64,
    pub n_paths: usize,
    /// Explicit record times; otherwise `n_records` evenly spaced ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_times: Option<Vec<f64>>,
    #[serde(default = "default_records")]
    pub n_records: usize,
    #[serde(default)]
    pub positions: PositionOutput,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    #[serde(default)]
    pub sets: Vec<SetDescriptor>,
    #[serde(default)]
    pub tail_eps: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditional: Option<ConditionalSection>,
}

/// Gap conditioned on paths staying in `B_radius(0)` up to `horizon`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionalSection {
    pub radius: f64,
    pub horizon: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    #[serde(default)]
    pub decay_upper: bool,
    #[serde(default)]
    pub plateau: bool,
    #[serde(default)]
    pub quadratic_lower: bool,
    /// Overrides the constants derived from the objective.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateSpec>,
    /// Local constants for the conditional bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local: Option<LocalBoundSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSpec {
    pub ell1: f64,
    pub ell2: f64,
    pub ell3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalBoundSpec {
    pub ell1p: f64,
    pub ell2p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n_cells: Vec<usize>,
    pub record_times: Vec<f64>,
    #[serde(default = "default_steps")]
    pub steps_per_segment: usize,
    #[serde(default)]
    pub scheme: Scheme,
    pub phi0: Phi0Spec,
    pub window: WindowSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit_report: Option<LimitSpec>,
    /// Write every recorded field to `field.bin`.
    #[serde(default)]
    pub field_snapshots: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Phi0Spec {
    /// Ratio `φ0 ∝ exp(-‖w - center‖² / width)`, normalized.
    Bump { center: Vec<f64>, width: f64 },
    /// Density `ρ0 = N(mean, diag(var))`, normalized on the grid.
    GaussianDensity { mean: Vec<f64>, var: Vec<f64> },
    /// The Gaussian initial law of the ensemble section.
    FromInitial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrabilitySpec {
    Integrable,
    NonIntegrable,
    #[default]
    Probe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitSpec {
    #[serde(default)]
    pub integrability: IntegrabilitySpec,
    /// `∫ e^{-L/σ}` over the whole space, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi_mass: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrosscheckSection {
    pub t: f64,
    #[serde(default = "default_coarsen")]
    pub coarsen: usize,
}

/// Teacher-generated (or CSV) data shared by the network sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub teacher_hidden: Vec<usize>,
    #[serde(default)]
    pub n_data: usize,
    #[serde(default)]
    pub teacher_seed: u64,
    #[serde(default)]
    pub data_seed: u64,
    /// Inputs then targets, header row; overrides the teacher.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_csv: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalPlSection {
    pub data: DataSpec,
    pub widths: Vec<usize>,
    pub init_seeds: Vec<u64>,
    pub radius: f64,
    pub n_samples: usize,
    #[serde(default)]
    pub gap_floor: f64,
    #[serde(default)]
    pub mu_min: f64,
}

/// SGD with injected Gaussian gradient noise on a linear network, against the
/// discrete-step recursion bound and the Langevin recursion at `sigma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSection {
    pub data: DataSpec,
    pub init_seed: u64,
    /// `E‖ξ‖²` of the injected noise.
    pub delta: f64,
    /// Step size as a fraction of `1/L`.
    pub eta_factor: f64,
    pub k_max: usize,
    pub n_seeds: usize,
    #[serde(default)]
    pub langevin: bool,
}

impl ExperimentConfig {
    /// Parses TOML. Relative paths inside the file resolve against `base_dir`;
    /// matrix files are read and inlined so the hash covers their content.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, LabError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let path = e.span().map(|s| format!("byte {}", s.start)).unwrap_or_else(|| "<file>".into());
            LabError::config(path, e.message())
        })?;
        if let Some(ObjectiveSpec::Quadratic { rows, matrix_csv, .. }) = cfg.objective.as_mut() {
            if let Some(file) = matrix_csv.take() {
                if rows.is_some() {
                    return Err(LabError::config("objective", "give either rows or matrix_csv, not both"));
                }
                let path = base_dir.join(file);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| LabError::config("objective.matrix_csv", format!("{}: {e}", path.display())))?;
                *rows = Some(
                    QuadraticLoss::matrix_rows_from_csv(&text)
                        .map_err(|e| LabError::config("objective.matrix_csv", e))?,
                );
            }
        }
        for data in
            [cfg.local_pl.as_mut().map(|s| &mut s.data), cfg.sgd.as_mut().map(|s| &mut s.data)].into_iter().flatten()
        {
            if let Some(p) = data.dataset_csv.as_mut() {
                *p = base_dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::config(path.display().to_string(), e))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// SHA-256 of the canonical JSON form (keys sorted, defaults filled in).
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
name = "t"
seed = 3
sigma = 0.1
[objective]
kind = "squared_norm"
dim = 2
[initial]
kind = "point"
w0 = [1.0, 0.0]
[sim]
dt = 0.01
t_final = 1.0
n_paths = 10
"#;

    #[test]
    fn parses_defaults() {
        let cfg = ExperimentConfig::from_toml_str(BASE, Path::new(".")).unwrap();
        assert_eq!(cfg.sim.as_ref().unwrap().n_records, 21);
        assert_eq!(cfg.objective, Some(ObjectiveSpec::SquaredNorm { dim: 2, scale: 1.0 }));
        assert_eq!(cfg.execution, Execution::Parallel);
    }

    #[test]
    fn hash_ignores_key_order() {
        let reordered = r#"
sigma = 0.1
seed = 3
name = "t"
[sim]
n_paths = 10
t_final = 1.0
dt = 0.01
[initial]
w0 = [1.0, 0.0]
kind = "point"
[objective]
dim = 2
kind = "squared_norm"
"#;
        let a = ExperimentConfig::from_toml_str(BASE, Path::new(".")).unwrap();
        let b = ExperimentConfig::from_toml_str(reordered, Path::new(".")).unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed = 4;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{BASE}\nbogus = 1\n");
        assert!(matches!(ExperimentConfig::from_toml_str(&text, Path::new(".")), Err(LabError::ConfigInvalid { .. })));
    }

    #[test]
    fn matrix_csv_is_inlined() {
        let dir = std::env::temp_dir().join(format!("lab-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("a.csv"), "1,0\n0,2\n").unwrap();
        let text = "name = \"q\"\nseed = 1\nsigma = 0.1\n[objective]\nkind = \"quadratic\"\nmatrix_csv = \"a.csv\"\n";
        let cfg = ExperimentConfig::from_toml_str(text, &dir).unwrap();
        std::fs::remove_dir_all(&dir).unwrap();
        match cfg.objective {
            Some(ObjectiveSpec::Quadratic { rows: Some(rows), matrix_csv: None, .. }) => {
                assert_eq!(rows, vec![vec![1.0, 0.0], vec![0.0, 2.0]])
            }
            other => panic!("{other:?}"),
        }
    }
}
