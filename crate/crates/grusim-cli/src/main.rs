//! Command-line front end: plan mappings, run single simulations, sweep
//! experiment grids to CSV, or run the scalar reference.
//!
//! Exit codes: 0 success, 2 usage error, 3 infeasible plan, 4 simulation
//! error, 5 I/O error.

mod sweep;

use clap::{Args, Parser, Subcommand};
use grusim::arch::SimConfig;
use grusim::graph::{build_graph, SimActivation};
use grusim::gru::{generate_inputs, generate_params, generate_state, gru_step, ActivationMode, GruDims, GruParams, GruState};
use grusim::metrics::probe_latency;
use grusim::plan::{plan_column_wise, plan_row_wise, validate_resources, MappingPlan, PlanError, Strategy};
use grusim::sim::{simulate_traced, TraceSink};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "grusim", version, about = "Cycle-approximate GRU-on-tile-array simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum StrategyArg {
    /// Row-wise, aggregation on a compute tile.
    RowAie,
    /// Row-wise, aggregation in the fabric FSM kernel.
    RowHybrid,
    /// Column-wise cascade chains.
    ColCascade,
}

impl StrategyArg {
    fn to_strategy(self) -> Strategy {
        match self {
            StrategyArg::RowAie => Strategy::RowWiseAie,
            StrategyArg::RowHybrid => Strategy::RowWiseHybrid,
            StrategyArg::ColCascade => Strategy::ColumnWiseCascade,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ActivationArg {
    /// Exact sigmoid/tanh in the aggregator.
    Exact,
    /// Default 1025-entry lookup tables.
    Lut,
}

impl ActivationArg {
    fn to_activation(self) -> SimActivation {
        match self {
            ActivationArg::Exact => SimActivation::Exact,
            ActivationArg::Lut => SimActivation::default_luts(),
        }
    }
}

#[derive(Args)]
struct CommonModel {
    /// Architecture/cost config file (JSON); defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for weight generation and merge arbitration.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a mapping plan and print its resource usage.
    Plan {
        #[command(flatten)]
        common: CommonModel,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        /// Input dimension.
        #[arg(long)]
        input: usize,
        /// Hidden-state dimension.
        #[arg(long)]
        hidden: usize,
        /// Consecutive rows per tile (row-wise strategies).
        #[arg(long, default_value_t = 1)]
        row_reuse: usize,
        /// Write the serialized plan here (stdout summary either way).
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Simulate one model and report latency.
    Simulate {
        #[command(flatten)]
        common: CommonModel,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        #[arg(long)]
        input: usize,
        #[arg(long)]
        hidden: usize,
        #[arg(long, default_value_t = 1)]
        row_reuse: usize,
        /// Forward passes to simulate.
        #[arg(long, default_value_t = 8)]
        iterations: u64,
        /// Warm-up intervals excluded from the latency summary.
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        /// Aggregator activation evaluation.
        #[arg(long, value_enum, default_value = "exact")]
        activation: ActivationArg,
        /// Also run the double-precision reference and fail when the final
        /// state deviates by more than 1e-4 relative.
        #[arg(long)]
        check_reference: bool,
        /// Write an event-trace CSV here.
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
        /// Write the latency report and final state as JSON here.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Sweep a (strategy x input x hidden) grid and emit CSV.
    Sweep {
        #[command(flatten)]
        common: CommonModel,
        /// Strategies to sweep.
        #[arg(long, value_enum, value_delimiter = ',', required = true)]
        strategy: Vec<StrategyArg>,
        /// Input dimensions, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        input: Vec<usize>,
        /// Hidden dimensions, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        row_reuse: usize,
        #[arg(long, default_value_t = 8)]
        iterations: u64,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        /// Output CSV path (stdout when omitted).
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Run the exact scalar reference (optionally with imported weights).
    Reference {
        #[command(flatten)]
        common: CommonModel,
        #[arg(long)]
        input: usize,
        #[arg(long)]
        hidden: usize,
        #[arg(long, default_value_t = 8)]
        iterations: u64,
        /// Import weights from this binary file instead of generating them.
        #[arg(long, value_name = "PATH")]
        weights: Option<PathBuf>,
        /// Export the (generated or imported) weights to this binary file.
        #[arg(long, value_name = "PATH")]
        export_weights: Option<PathBuf>,
        /// Write the trajectory as JSON here.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

enum CliError {
    Usage(String),
    Infeasible(String),
    Simulation(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Simulation(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Infeasible(m) => write!(f, "infeasible plan: {m}"),
            CliError::Simulation(m) => write!(f, "simulation error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<grusim::sim::SimError> for CliError {
    fn from(e: grusim::sim::SimError) -> Self {
        CliError::Simulation(e.to_string())
    }
}

impl From<grusim::metrics::MetricsError> for CliError {
    fn from(e: grusim::metrics::MetricsError) -> Self {
        CliError::Simulation(e.to_string())
    }
}

impl From<grusim::graph::GraphError> for CliError {
    fn from(e: grusim::graph::GraphError) -> Self {
        CliError::Simulation(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<SimConfig, CliError> {
    match path {
        None => Ok(SimConfig::default()),
        Some(p) => SimConfig::load(p).map_err(|e| CliError::Usage(e.to_string())),
    }
}

fn check_dims(input: usize, hidden: usize, row_reuse: usize) -> Result<(), CliError> {
    if input == 0 || hidden == 0 {
        return Err(CliError::Usage(format!(
            "dimensions must be >= 1, got input={input} hidden={hidden}"
        )));
    }
    if row_reuse == 0 {
        return Err(CliError::Usage("row_reuse must be >= 1".into()));
    }
    Ok(())
}

fn make_plan(
    strategy: Strategy,
    input: usize,
    hidden: usize,
    row_reuse: usize,
    cfg: &SimConfig,
) -> Result<MappingPlan, PlanError> {
    match strategy {
        Strategy::RowWiseAie => plan_row_wise(input, hidden, row_reuse, false, &cfg.arch),
        Strategy::RowWiseHybrid => plan_row_wise(input, hidden, row_reuse, true, &cfg.arch),
        Strategy::ColumnWiseCascade => plan_column_wise(input, hidden, &cfg.arch),
    }
}

/// Per-instance weight seed: depends on dimensions but not on the strategy,
/// so both aggregation routes of a sweep see identical weights.
fn instance_seed(base: u64, input: usize, hidden: usize) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in [base, input as u64, hidden as u64] {
        for byte in b.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
    }
    h
}

struct ModelInstance {
    params: GruParams,
    h0: GruState,
    inputs: Vec<Vec<f64>>,
}

fn make_instance(seed: u64, input: usize, hidden: usize, iterations: u64) -> ModelInstance {
    ModelInstance {
        params: generate_params(seed, GruDims { input, hidden }),
        h0: generate_state(seed ^ 0x5555_5555, hidden),
        inputs: generate_inputs(seed ^ 0xaaaa_aaaa, input, iterations as usize),
    }
}

fn reference_final_state(inst: &ModelInstance, iterations: u64) -> GruState {
    let mut h = inst.h0.clone();
    for x in inst.inputs.iter().take(iterations as usize) {
        h = gru_step(&inst.params, &h, x, ActivationMode::Exact).expect("reference step");
    }
    h
}

/// max_i |sim_i - ref_i| / (0.01 + |ref_i|): the relative deviation metric
/// used by --check-reference (threshold 1e-4).
fn relative_deviation(sim: &[f32], reference: &[f64]) -> f64 {
    sim.iter()
        .zip(reference.iter())
        .map(|(s, r)| (*s as f64 - r).abs() / (0.01 + r.abs()))
        .fold(0.0, f64::max)
}

fn write_out(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Plan {
            common,
            strategy,
            input,
            hidden,
            row_reuse,
            out,
        } => {
            check_dims(input, hidden, row_reuse)?;
            let cfg = load_config(&common.config)?;
            match make_plan(strategy.to_strategy(), input, hidden, row_reuse, &cfg) {
                Ok(plan) => {
                    let (usage, _) = validate_resources(&plan, &cfg.arch);
                    println!("strategy: {}", plan.strategy);
                    println!("tiles used: {} / {}", usage.tiles_used, cfg.arch.n_tiles);
                    println!(
                        "interface tiles used: {} / {}",
                        usage.interface_tiles_used, cfg.arch.n_interface_tiles
                    );
                    println!("max merge fan-in: {}", usage.max_merge_fanin);
                    println!(
                        "max tile memory: {} / {} bytes",
                        usage.max_tile_mem_bytes, cfg.arch.tile_mem_bytes
                    );
                    if let Some(path) = out {
                        write_out(&path, &plan.to_json())?;
                    } else {
                        println!("{}", plan.to_json());
                    }
                    Ok(())
                }
                Err(PlanError::Infeasible { report }) => {
                    eprintln!(
                        "tiles used: {}, interface tiles used: {}",
                        report.usage.tiles_used, report.usage.interface_tiles_used
                    );
                    Err(CliError::Infeasible(report.describe()))
                }
                Err(PlanError::InvalidDims(m)) => Err(CliError::Usage(m)),
            }
        }

        Command::Simulate {
            common,
            strategy,
            input,
            hidden,
            row_reuse,
            iterations,
            warmup,
            activation,
            check_reference,
            trace,
            out,
        } => {
            check_dims(input, hidden, row_reuse)?;
            let cfg = load_config(&common.config)?;
            let plan = match make_plan(strategy.to_strategy(), input, hidden, row_reuse, &cfg) {
                Ok(p) => p,
                Err(PlanError::Infeasible { report }) => return Err(CliError::Infeasible(report.describe())),
                Err(PlanError::InvalidDims(m)) => return Err(CliError::Usage(m)),
            };
            let inst = make_instance(instance_seed(common.seed, input, hidden), input, hidden, iterations);
            let graph = build_graph(&plan, &inst.params, &inst.h0, &cfg.arch, &cfg.cost, activation.to_activation())?;
            let trace_sink = match &trace {
                None => None,
                Some(p) => {
                    let f = fs::File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                    Some(TraceSink::new(Box::new(f)).map_err(|e| CliError::Io(e.to_string()))?)
                }
            };
            let result = simulate_traced(&graph, &inst.inputs, iterations, common.seed, trace_sink)?;
            let report = probe_latency(&result, &cfg.arch, warmup)?;
            println!("{report}");

            let final_h = result.h_out.last().expect("at least one iteration");
            if check_reference {
                let reference = reference_final_state(&inst, iterations);
                let dev = relative_deviation(final_h, &reference.h);
                println!("reference deviation: {dev:.3e}");
                if dev > 1e-4 {
                    return Err(CliError::Simulation(format!(
                        "simulated state deviates from reference: {dev:.3e} > 1e-4"
                    )));
                }
            }
            if let Some(path) = out {
                let json = serde_json_out(&report, final_h);
                write_out(&path, &json)?;
            }
            Ok(())
        }

        Command::Sweep {
            common,
            strategy,
            input,
            hidden,
            row_reuse,
            iterations,
            warmup,
            out,
        } => {
            if strategy.is_empty() || input.is_empty() || hidden.is_empty() {
                return Err(CliError::Usage("empty sweep grid".into()));
            }
            for &i in &input {
                for &h in &hidden {
                    check_dims(i, h, row_reuse)?;
                }
            }
            let cfg = load_config(&common.config)?;
            let strategies: Vec<Strategy> = strategy.iter().map(|s| s.to_strategy()).collect();
            let csv = sweep::run_sweep(&sweep::SweepSpec {
                cfg: &cfg,
                strategies: &strategies,
                inputs: &input,
                hiddens: &hidden,
                row_reuse,
                iterations,
                warmup,
                seed: common.seed,
            })?;
            match out {
                Some(path) => write_out(&path, &csv)?,
                None => print!("{csv}"),
            }
            Ok(())
        }

        Command::Reference {
            common,
            input,
            hidden,
            iterations,
            weights,
            export_weights,
            out,
        } => {
            check_dims(input, hidden, 1)?;
            let params = match &weights {
                None => generate_params(instance_seed(common.seed, input, hidden), GruDims { input, hidden }),
                Some(p) => {
                    let f = fs::File::open(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                    let params =
                        grusim::weights::read_params(std::io::BufReader::new(f)).map_err(|e| CliError::Usage(e.to_string()))?;
                    if params.dims() != (GruDims { input, hidden }) {
                        return Err(CliError::Usage(format!(
                            "weight file is for input={} hidden={}, requested input={input} hidden={hidden}",
                            params.dims().input,
                            params.dims().hidden
                        )));
                    }
                    params
                }
            };
            if let Some(p) = &export_weights {
                let mut buf = Vec::new();
                grusim::weights::write_params(&params, &mut buf).map_err(|e| CliError::Io(e.to_string()))?;
                fs::write(p, buf).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            }
            let seed = instance_seed(common.seed, input, hidden);
            let mut h = generate_state(seed ^ 0x5555_5555, hidden);
            let inputs = generate_inputs(seed ^ 0xaaaa_aaaa, input, iterations as usize);
            let mut trajectory = Vec::new();
            for x in &inputs {
                h = gru_step(&params, &h, x, ActivationMode::Exact)
                    .map_err(|e| CliError::Simulation(e.to_string()))?;
                trajectory.push(h.h.clone());
            }
            println!("final state after {iterations} iterations:");
            println!("{:?}", h.h);
            if let Some(path) = out {
                let json = format!(
                    "{{\n  \"iterations\": {iterations},\n  \"final_h\": {:?}\n}}\n",
                    h.h
                );
                write_out(&path, &json)?;
            }
            Ok(())
        }
    }
}

fn serde_json_out(report: &grusim::metrics::LatencyReport, final_h: &[f32]) -> String {
    let intervals: Vec<String> = report.intervals_cycles.iter().map(|c| c.to_string()).collect();
    let h: Vec<String> = final_h.iter().map(|v| format!("{v:e}")).collect();
    format!(
        "{{\n  \"median_latency_ns\": {:.3},\n  \"min_latency_ns\": {:.3},\n  \"max_latency_ns\": {:.3},\n  \"intervals_cycles\": [{}],\n  \"final_h\": [{}]\n}}\n",
        report.summary.median_ns,
        report.summary.min_ns,
        report.summary.max_ns,
        intervals.join(", "),
        h.join(", ")
    )
}
