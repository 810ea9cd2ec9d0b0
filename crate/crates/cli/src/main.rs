use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use langevin_lab::{
    catalog, compare_runs, emit_plots, output_root, run_experiment, ExperimentConfig, LabError, RunManifest,
};

#[derive(Parser)]
#[command(name = "langevin-lab", version, about = "Run, plot and compare Langevin laboratory experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Output root; defaults to $LANGEVIN_LAB_OUT or ./runs.
        #[arg(long)]
        out_root: Option<PathBuf>,
    },
    /// Write plot scripts for a finished run (manifest file or run directory).
    Plot { manifest: PathBuf },
    /// Tabulate several runs side by side as CSV.
    Compare {
        #[arg(required = true, num_args = 1..)]
        manifests: Vec<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Shipped experiments.
    Catalog {
        #[command(subcommand)]
        action: CatalogAction,
    },
}

#[derive(Subcommand)]
enum CatalogAction {
    List,
    /// Print the config of an entry.
    Show {
        name: String,
    },
    Run {
        name: String,
        #[arg(long)]
        out_root: Option<PathBuf>,
    },
}

fn report(m: &RunManifest) {
    println!("run {} finished: {} files in {}", m.name, m.files.len(), m.run_dir.display());
    println!("config hash {}", m.config_hash);
}

fn execute(cfg: ExperimentConfig, out_root: Option<PathBuf>) -> Result<(), LabError> {
    let root = out_root.unwrap_or_else(output_root);
    let m = run_experiment(&cfg, &root)?;
    report(&m);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), LabError> {
    match cli.command {
        Command::Run { config, out_root } => execute(ExperimentConfig::load(&config)?, out_root),
        Command::Plot { manifest } => {
            let mut m = RunManifest::load(&manifest)?;
            for p in emit_plots(&mut m)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Compare { manifests, output } => {
            let ms = manifests.iter().map(|p| RunManifest::load(p)).collect::<Result<Vec<_>, _>>()?;
            let table = compare_runs(&ms)?.to_csv();
            match output {
                Some(p) => std::fs::write(&p, table).map_err(|e| LabError::io(p, e)),
                None => {
                    print!("{table}");
                    Ok(())
                }
            }
        }
        Command::Catalog { action } => match action {
            CatalogAction::List => {
                for e in catalog::CATALOG {
                    println!("{:<22} {}", e.name, e.summary);
                }
                Ok(())
            }
            CatalogAction::Show { name } => {
                print!("{}", catalog::find(&name)?.toml);
                Ok(())
            }
            CatalogAction::Run { name, out_root } => execute(catalog::config(&name)?, out_root),
        },
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
