//! `fcar`: simulate, fit, test and benchmark FCAR models from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use fcar_core::bench::{run_monte_carlo, write_reports, BenchConfig};
use fcar_core::estimate::{profile_fit, FitConfig, FitReport};
use fcar_core::inference::{confidence_interval, dependence_test, morans_i_test, ConfidenceInterval, TestReport};
use fcar_core::io::{
    read_dataset_with_sidecar, read_edge_list_csv, read_edge_list_ids, read_json, sidecar_path, write_dataset_csv,
    write_edge_list_csv, write_json, write_kernel_csv, DatasetSidecar,
};
use fcar_core::model::{Variant, SCHEMA_VERSION};
use fcar_core::simulate::{gibbs_sample_dataset, LatticeSpec, SimConfig};
use fcar_core::{Curve, FcarError, FunctionalDataset, NeighborhoodGraph, Result};

#[derive(Parser)]
#[command(name = "fcar", version, about = "Functional conditional autoregressive models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one dataset by Gibbs sampling.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Profile-likelihood fit of the dependence parameter and covariance operator.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        adjacency: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "nested")]
        variant: Variant,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tests for zero spatial dependence: FCAR Wald test and Moran's I on time averages.
    Test {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        adjacency: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "nested")]
        variant: Variant,
        /// Significance level.
        #[arg(long, default_value_t = 0.05)]
        level: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo study over a grid of settings.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct FitOutput {
    #[serde(flatten)]
    fit: FitReport,
    confidence_interval: Option<ConfidenceInterval>,
    gamma_kernel: String,
}

#[derive(Serialize)]
struct TestOutput {
    schema_version: u32,
    level: f64,
    fcar: TestReport,
    morans_i: TestReport,
}

/// `<dir>/<stem>.<suffix>` next to `path`.
fn companion(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn load_inputs(data: &Path, adjacency: &Path) -> Result<(FunctionalDataset, NeighborhoodGraph)> {
    let data = read_dataset_with_sidecar(data)?;
    let graph = read_edge_list_csv(adjacency, data.location_ids())?;
    Ok((data, graph))
}

fn load_fit_config(path: Option<&Path>) -> Result<FitConfig> {
    path.map(read_json).transpose().map(Option::unwrap_or_default)
}

fn simulate(config: &Path, out: &Path) -> Result<()> {
    let sim: SimConfig = read_json(config)?;
    let graph = match &sim.lattice {
        LatticeSpec::Torus { .. } => sim.build_graph()?,
        LatticeSpec::EdgeList { path } => {
            // Relative edge-list paths are resolved against the config file.
            let path = config.parent().unwrap_or(Path::new(".")).join(path);
            let ids = read_edge_list_ids(&path)?;
            read_edge_list_csv(&path, &ids)?
        }
    };
    let alpha = Curve::zeros(sim.grid.build()?);
    let data = gibbs_sample_dataset(&sim, &graph, &alpha)?;
    write_dataset_csv(out, &data)?;
    let mut side = DatasetSidecar::for_grid(data.grid());
    side.seed = Some(sim.seed);
    side.sim_config = Some(sim);
    write_json(&sidecar_path(out), &side)?;
    write_edge_list_csv(&companion(out, "edges.csv"), &graph)?;
    log::info!("wrote {} curves to {}", data.n(), out.display());
    Ok(())
}

fn fit(data: &Path, adjacency: &Path, config: Option<&Path>, variant: Variant, out: &Path) -> Result<()> {
    let (data, graph) = load_inputs(data, adjacency)?;
    let cfg = load_fit_config(config)?;
    let fit = profile_fit(&data, &graph, variant, &cfg)?;
    if !fit.converged {
        log::warn!("fit did not converge in {} iterations", fit.iterations);
    }
    let kernel_path = companion(out, "gamma.csv");
    write_kernel_csv(&kernel_path, &fit.gamma_hat)?;
    let output = FitOutput {
        fit: fit.report(),
        confidence_interval: confidence_interval(&fit, 0.05).ok(),
        gamma_kernel: kernel_path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
    };
    write_json(out, &output)
}

fn test(
    data: &Path,
    adjacency: &Path,
    config: Option<&Path>,
    variant: Variant,
    level: f64,
    out: Option<&Path>,
) -> Result<()> {
    let (data, graph) = load_inputs(data, adjacency)?;
    let cfg = load_fit_config(config)?;
    let fit = profile_fit(&data, &graph, variant, &cfg)?;
    let output = TestOutput {
        schema_version: SCHEMA_VERSION,
        level,
        fcar: dependence_test(&fit, level)?,
        morans_i: morans_i_test(&data.time_averages(), &graph, level)?,
    };
    match out {
        Some(path) => write_json(path, &output),
        None => {
            println!("{}", serde_json::to_string_pretty(&output)?);
            Ok(())
        }
    }
}

fn bench(config: &Path, out_dir: Option<&Path>) -> Result<()> {
    let cfg: BenchConfig = read_json(config)?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| FcarError::Validation("no output directory given".into()))?;
    let rows = run_monte_carlo(&cfg)?;
    write_reports(&rows, &dir)?;
    log::info!("wrote {} report rows to {}", rows.len(), dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => simulate(&config, &out),
        Command::Fit {
            data,
            adjacency,
            config,
            variant,
            out,
        } => fit(&data, &adjacency, config.as_deref(), variant, &out),
        Command::Test {
            data,
            adjacency,
            config,
            variant,
            level,
            out,
        } => test(&data, &adjacency, config.as_deref(), variant, level, out.as_deref()),
        Command::Bench { config, out_dir } => bench(&config, out_dir.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
