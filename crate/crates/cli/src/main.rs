// SPDX-License-Identifier: MIT OR Apache-2.0

//! `mshl` — two-stage spatiotemporal imputation from the command line.
//!
//! Subcommands: `synth` (planted-structure generator), `discover` (stage
//! one only), `impute` (both stages), `benchmark` (the full evaluation
//! grid), and `verify` (the numerical verification harness).
//! Exit codes: 0 success, 1 validation error, 2 numerical failure.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use mshl_core::data::{
    build_adjacency, generate_mask, load_matrix_csv, plan_windows, AdjacencyMatrix, DataMatrix,
    Mask, MissingnessSpec,
};
use mshl_core::evaluation::checks::{verify_theorems, CheckId};
use mshl_core::evaluation::run_grid;
use mshl_core::pipeline::run_pipeline;
use mshl_core::synthetic::{add_noise, generate_planted, SyntheticSpec};
use mshl_core::{Error, Result};

#[derive(Parser)]
#[command(name = "mshl", version, about = "Multi-scale hypergraph imputation for incomplete sensor matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration (flags override config fields)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; every random stream derives from it
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if absent)
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct MatrixInput {
    /// Sensor-by-time CSV (NaN or empty cells count as missing)
    #[arg(long)]
    data: PathBuf,
    /// Square distance-matrix CSV; converted to an adjacency by a Gaussian
    /// kernel at the median off-diagonal distance
    #[arg(long, conflicts_with = "adjacency")]
    distances: Option<PathBuf>,
    /// Square adjacency-matrix CSV used as-is
    #[arg(long)]
    adjacency: Option<PathBuf>,
    /// Missingness spec JSON; when given, an artificial mask is drawn on top
    /// of the data's own gaps
    #[arg(long)]
    mask_spec: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-structure synthetic dataset
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Generator spec JSON
        #[arg(long)]
        spec: PathBuf,
        /// Also write observed.csv with this much added observation noise
        #[arg(long)]
        obs_noise: Option<f64>,
    },
    /// Run stage one only and emit the discovered hypergraph
    Discover {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        input: MatrixInput,
    },
    /// Run both stages and write the imputed matrix
    Impute {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        input: MatrixInput,
        /// Skip the corrector; output the linear estimate
        #[arg(long)]
        linear_only: bool,
    },
    /// Run the full regimes x rates x windows x methods grid
    Benchmark {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        input: MatrixInput,
        /// Parallel grid cells (default 1 keeps output ordering bit-stable)
        #[arg(long)]
        jobs: Option<usize>,
        /// Dataset tag recorded in the report
        #[arg(long, default_value = "dataset")]
        tag: String,
    },
    /// Run the numerical verification harness
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated check ids, or `all`
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(Error::Numerical { iterations, message }) => {
            eprintln!("numerical failure after {iterations} iterations: {message}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth { common, spec, obs_noise } => cmd_synth(common, &spec, obs_noise),
        Command::Discover { common, input } => cmd_discover(common, input),
        Command::Impute { common, input, linear_only } => cmd_impute(common, input, linear_only),
        Command::Benchmark { common, input, jobs, tag } => cmd_benchmark(common, input, jobs, &tag),
        Command::Verify { common, suite } => cmd_verify(common, &suite),
    }
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn cmd_synth(common: CommonArgs, spec_path: &Path, obs_noise: Option<f64>) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    let base_seed = cfg.resolve_seed(common.seed);
    let text = std::fs::read_to_string(spec_path)?;
    let mut spec: SyntheticSpec =
        serde_json::from_str(&text).map_err(|e| Error::invalid(format!("spec {}: {e}", spec_path.display())))?;
    if common.seed.is_some() {
        spec.seed = base_seed;
    }
    let (truth, adjacency, hypergraph) = generate_planted(&spec)?;
    prepare_out_dir(&common.out_dir)?;
    truth.write_csv(&common.out_dir.join("truth.csv"))?;
    adjacency_to_matrix(&adjacency).write_csv(&common.out_dir.join("adjacency.csv"))?;
    write_json(&common.out_dir, "hypergraph.json", &hypergraph)?;
    write_json(&common.out_dir, "synth_spec.json", &spec)?;
    // empirical factor-recovery proxy per planted group: the leave-one-out
    // regression fit of each member on its co-members over the truth
    #[derive(serde::Serialize)]
    struct GroupDiagnostics {
        members: Vec<usize>,
        loo_fit: Option<f64>,
    }
    let full = Mask::all_observed(truth.n_sensors(), truth.n_steps());
    let groups: Vec<GroupDiagnostics> = hypergraph
        .iter_edges()
        .map(|edge| GroupDiagnostics {
            members: edge.members.clone(),
            loo_fit: mshl_core::discovery::loo_gain_score(&edge.members, &truth, &full),
        })
        .collect();
    write_json(&common.out_dir, "planted_diagnostics.json", &groups)?;
    if let Some(sigma) = obs_noise {
        let observed = add_noise(&truth, sigma, mshl_core::rng::derive_seed(spec.seed, "obs", 0))?;
        observed.write_csv(&common.out_dir.join("observed.csv"))?;
    }
    println!(
        "wrote {} sensors x {} steps with {} planted edges to {}",
        truth.n_sensors(),
        truth.n_steps(),
        hypergraph.total_edges(),
        common.out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn adjacency_to_matrix(a: &AdjacencyMatrix) -> DataMatrix {
    let n = a.n_sensors();
    let mut values = Vec::with_capacity(n * n);
    for i in 0..n {
        values.extend_from_slice(a.row(i));
    }
    DataMatrix::new(n, n, values).expect("adjacency is a valid grid")
}

struct LoadedInput {
    y_obs: DataMatrix,
    mask: Mask,
    adjacency: AdjacencyMatrix,
}

fn load_input(input: &MatrixInput, cfg: &RunConfig) -> Result<LoadedInput> {
    let data = load_matrix_csv(&input.data, cfg.layout.into())?;
    let adjacency = match (&input.adjacency, &input.distances) {
        (Some(path), _) => {
            let grid = load_matrix_csv(path, config::LayoutConfig::SensorsAsRows.into())?;
            if grid.n_sensors() != data.n_sensors() || grid.n_steps() != data.n_sensors() {
                return Err(Error::invalid(format!(
                    "adjacency must be {n} x {n} to match the data",
                    n = data.n_sensors()
                )));
            }
            AdjacencyMatrix::new(grid.n_sensors(), grid.values().to_vec())?
        }
        (None, Some(path)) => {
            let grid = load_matrix_csv(path, config::LayoutConfig::SensorsAsRows.into())?;
            if grid.n_sensors() != data.n_sensors() || grid.n_steps() != data.n_sensors() {
                return Err(Error::invalid(format!(
                    "distance matrix must be {n} x {n} to match the data",
                    n = data.n_sensors()
                )));
            }
            build_adjacency(&grid)?
        }
        (None, None) => {
            return Err(Error::invalid("one of --adjacency or --distances is required"));
        }
    };
    // pre-existing gaps in the data fold into the observation mask
    let data_mask = data.finite_mask();
    let mask = match &input.mask_spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let spec: MissingnessSpec =
                serde_json::from_str(&text).map_err(|e| Error::invalid(format!("mask spec {}: {e}", path.display())))?;
            generate_mask(data.n_sensors(), data.n_steps(), &spec)?.intersect(&data_mask)?
        }
        None => data_mask,
    };
    let mut y_obs = data;
    y_obs.zero_fill_missing(&mask);
    Ok(LoadedInput { y_obs, mask, adjacency })
}

fn cmd_discover(common: CommonArgs, input: MatrixInput) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.resolve_seed(common.seed);
    let loaded = load_input(&input, &cfg)?;
    let propensity = mshl_core::solver::estimate_propensity(&loaded.mask, cfg.tikhonov.propensity_floor)?;
    let out = mshl_core::discovery::discover(
        &loaded.y_obs,
        &loaded.mask,
        &propensity,
        &loaded.adjacency,
        &cfg.tikhonov,
        &cfg.discovery,
    )?;
    prepare_out_dir(&common.out_dir)?;
    write_json(&common.out_dir, "hypergraph.json", &out.hypergraph)?;
    #[derive(serde::Serialize)]
    struct DiscoverReport<'a> {
        config: &'a RunConfig,
        diagnostics: &'a mshl_core::discovery::DiscoveryDiagnostics,
    }
    write_json(
        &common.out_dir,
        "discovery_diagnostics.json",
        &DiscoverReport {
            config: &cfg,
            diagnostics: &out.diagnostics,
        },
    )?;
    println!(
        "discovered {} edges across {} scales; diagnostics in {}",
        out.hypergraph.total_edges(),
        out.hypergraph.scales.len(),
        common.out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_impute(common: CommonArgs, input: MatrixInput, linear_only: bool) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.resolve_seed(common.seed);
    let loaded = load_input(&input, &cfg)?;
    let pipeline_cfg = cfg.pipeline();
    let out = run_pipeline(&loaded.y_obs, &loaded.mask, &loaded.adjacency, &pipeline_cfg, linear_only)?;

    // observed cells pass raw values through; missing cells take the estimate
    let mut imputed = out.full.clone();
    for i in 0..imputed.n_sensors() {
        for t in 0..imputed.n_steps() {
            if loaded.mask.is_observed(i, t) {
                imputed.set(i, t, loaded.y_obs.get(i, t));
            }
        }
    }

    prepare_out_dir(&common.out_dir)?;
    imputed.write_csv(&common.out_dir.join("imputed.csv"))?;
    write_json(&common.out_dir, "hypergraph.json", &out.hypergraph)?;
    write_json(&common.out_dir, "model.json", &out.model)?;
    #[derive(serde::Serialize)]
    struct ImputeReport<'a> {
        config: &'a RunConfig,
        linear_only: bool,
        discovery: &'a mshl_core::discovery::DiscoveryDiagnostics,
        training: &'a mshl_core::refinement::TrainingReport,
        final_fit_iterations: usize,
        final_fit_rel_residual: f64,
    }
    write_json(
        &common.out_dir,
        "diagnostics.json",
        &ImputeReport {
            config: &cfg,
            linear_only,
            discovery: &out.discovery,
            training: &out.training,
            final_fit_iterations: out.final_fit_iterations,
            final_fit_rel_residual: out.final_fit_rel_residual,
        },
    )?;
    println!(
        "imputed {} x {} ({} accepted edges, corrector {}); outputs in {}",
        imputed.n_sensors(),
        imputed.n_steps(),
        out.hypergraph.total_edges(),
        if out.model.deferred { "deferred" } else { "trained" },
        common.out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_benchmark(common: CommonArgs, input: MatrixInput, jobs: Option<usize>, tag: &str) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    let base_seed = cfg.resolve_seed(common.seed);
    if let Some(j) = jobs {
        cfg.grid.jobs = j.max(1);
    }
    let data = load_matrix_csv(&input.data, cfg.layout.into())?;
    let distances = match &input.distances {
        Some(path) => load_matrix_csv(path, config::LayoutConfig::SensorsAsRows.into())?,
        None => return Err(Error::invalid("benchmark requires --distances")),
    };
    if input.mask_spec.is_some() {
        return Err(Error::invalid("benchmark draws its own masks; --mask-spec does not apply"));
    }
    let plan = plan_windows(data.n_steps(), cfg.grid.window_len, base_seed)?;
    let report = run_grid(&data, &distances, &plan, &cfg.grid, &cfg.pipeline(), tag, base_seed)?;
    prepare_out_dir(&common.out_dir)?;
    std::fs::write(common.out_dir.join("report.json"), report.to_json()?)?;
    std::fs::write(common.out_dir.join("report.csv"), report.to_csv())?;
    write_json(&common.out_dir, "config_echo.json", &cfg)?;
    write_json(&common.out_dir, "window_plan.json", &plan)?;
    let failures = report.records.iter().filter(|r| r.error.is_some()).count();
    println!(
        "benchmark wrote {} records ({} failed) over {} windows to {}",
        report.records.len(),
        failures,
        plan.n_windows(),
        common.out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(common: CommonArgs, suite: &str) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    let base_seed = cfg.resolve_seed(common.seed);
    let selection: Vec<CheckId> = if suite == "all" {
        CheckId::all()
    } else {
        suite
            .split(',')
            .map(|tag| CheckId::parse(tag.trim()))
            .collect::<Result<Vec<_>>>()?
    };
    let results = verify_theorems(&selection, base_seed);
    prepare_out_dir(&common.out_dir)?;
    #[derive(serde::Serialize)]
    struct VerifyReport<'a> {
        base_seed: u64,
        checks: &'a Vec<mshl_core::evaluation::checks::TheoremCheckResult>,
    }
    write_json(
        &common.out_dir,
        "theorem_checks.json",
        &VerifyReport {
            base_seed,
            checks: &results,
        },
    )?;
    let mut all_pass = true;
    for result in &results {
        std::fs::write(common.out_dir.join(format!("{}.csv", result.id)), result.csv_text())?;
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!("check {}: {verdict} — {}", result.id, result.details);
        all_pass &= result.pass;
    }
    Ok(if all_pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
