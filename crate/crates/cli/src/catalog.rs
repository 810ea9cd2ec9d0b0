//! Named experiments shipped with the crate.

use std::path::Path;

use crate::config::ExperimentConfig;
use crate::error::LabError;

pub struct CatalogEntry {
    pub name: &'static str,
    pub summary: &'static str,
    pub toml: &'static str,
}

pub const CATALOG: &[CatalogEntry] = &[
    CatalogEntry {
        name: "ou_identity",
        summary: "1D Ornstein-Uhlenbeck, decay bound attained exactly (C1)",
        toml: include_str!("../catalog/ou_identity.toml"),
    },
    CatalogEntry {
        name: "two_phase_quadratic",
        summary: "A = [I_2|0] in d = 5: contraction onto the minimizer plane, then spreading along it (C2, C3)",
        toml: include_str!("../catalog/two_phase_quadratic.toml"),
    },
    CatalogEntry {
        name: "nonintegrable_flat",
        summary: "L = 0: window mass decays, ensemble and grid side by side (C7)",
        toml: include_str!("../catalog/nonintegrable_flat.toml"),
    },
    CatalogEntry {
        name: "gibbs_convergence_1d",
        summary: "grid solve for w^2: Dirichlet and higher-order decay, limit 1/pi(domain) (C4-C6)",
        toml: include_str!("../catalog/gibbs_convergence_1d.toml"),
    },
    CatalogEntry {
        name: "local_pl_nn",
        summary: "local PL probe on tanh networks of width 32/128/512 (C11)",
        toml: include_str!("../catalog/local_pl_nn.toml"),
    },
    CatalogEntry {
        name: "sgd_vs_langevin",
        summary: "noisy SGD on a linear network against the recursion bound (C10)",
        toml: include_str!("../catalog/sgd_vs_langevin.toml"),
    },
];

pub fn find(name: &str) -> Result<&'static CatalogEntry, LabError> {
    CATALOG.iter().find(|e| e.name == name).ok_or_else(|| LabError::UnknownExperiment(name.into()))
}

pub fn config(name: &str) -> Result<ExperimentConfig, LabError> {
    ExperimentConfig::from_toml_str(find(name)?.toml, Path::new("."))
}
