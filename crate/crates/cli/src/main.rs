//! `osc`: validate, plan, run and inspect OSC workflow models.
//!
//! Exit codes: 0 ok, 1 parse or validation errors, 2 runtime failure,
//! 3 usage error. Payload goes to stdout, diagnostics to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use indexmap::IndexMap;
use osc_core::engine::{self, Adapter, Clock, EngineError, FaultScript, RunConfig, RunStatus};
use osc_core::model::WorkflowModel;
use osc_core::parser::parse_workflow;
use osc_core::planner::{apply_bindings, plan, Dataset, ExecutionPlan, PlanError};
use osc_core::provenance::{export_opm, EventLog, Granularity, ProvError};
use osc_core::typesystem::analyze;

const INVALID: u8 = 1;
const RUNTIME: u8 = 2;
const USAGE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "osc",
    about = "Validate, plan, run and trace OSC workflow models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model against the type rules.
    Validate { file: PathBuf },
    /// Print the execution plan as JSON.
    Plan {
        file: PathBuf,
        #[command(flatten)]
        binds: Binds,
    },
    /// Execute a model and write report.json and provenance.json.
    Run {
        file: PathBuf,
        #[command(flatten)]
        binds: Binds,
        #[arg(long, value_enum, default_value = "sim")]
        adapter: AdapterArg,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
        jobs: u32,
        /// JSON fault script for the simulated adapter.
        #[arg(long)]
        faults: Option<PathBuf>,
        #[command(flatten)]
        workdir: Workdir,
        /// Read num_tentativas as retries after the first attempt.
        #[arg(long)]
        retries_are_additional: bool,
    },
    /// Print the OPM graph of one provenance version.
    Prov {
        #[command(flatten)]
        workdir: Workdir,
        #[arg(long = "version")]
        version: String,
        /// Force a flow's granularity, e.g. `--granularity A.B=alta`.
        #[arg(long = "granularity", value_parser = parse_granularity)]
        granularity: Vec<(String, Granularity)>,
    },
}

#[derive(Args)]
struct Binds {
    /// Bind a Bifurcacao port: `flow.port=DIR`, `=values:a,b` or `=repeat:N`.
    #[arg(long = "bind", value_parser = parse_bind)]
    bind: Vec<(String, Dataset)>,
}

#[derive(Args)]
struct Workdir {
    #[arg(long, env = "OSC_WORKDIR", default_value = "osc-work")]
    workdir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AdapterArg {
    Sim,
    Shell,
}

fn parse_bind(s: &str) -> Result<(String, Dataset), String> {
    let (port, spec) = s
        .split_once('=')
        .ok_or_else(|| format!("`{s}` is not PORT=DATASET"))?;
    Ok((port.to_string(), Dataset::parse(spec)?))
}

fn parse_granularity(s: &str) -> Result<(String, Granularity), String> {
    let (flow, g) = s
        .split_once('=')
        .ok_or_else(|| format!("`{s}` is not FLOW=alta|baixa"))?;
    let g = match g {
        "alta" => Granularity::Alta,
        "baixa" => Granularity::Baixa,
        other => return Err(format!("unknown granularity `{other}`")),
    };
    Ok((flow.to_string(), g))
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Failure {
            code,
            message: message.to_string(),
        }
    }
}

/// Writes payload to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}").and_then(|_| out.flush());
}

fn load(file: &Path) -> Result<WorkflowModel, Failure> {
    let src = std::fs::read_to_string(file)
        .map_err(|e| Failure::new(USAGE, format!("{}: {e}", file.display())))?;
    parse_workflow(&src, &file.display().to_string()).map_err(|e| Failure::new(INVALID, e))
}

fn base_dir(file: &Path) -> PathBuf {
    file.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn plan_error(e: PlanError) -> Failure {
    match e {
        PlanError::InvalidBind { .. } => Failure::new(USAGE, e),
        _ => Failure::new(INVALID, e),
    }
}

fn build_plan(file: &Path, binds: &Binds) -> Result<ExecutionPlan, Failure> {
    let mut model = load(file)?;
    apply_bindings(&mut model, &binds.bind).map_err(plan_error)?;
    let analysis = analyze(&model).map_err(|errors| {
        let lines: Vec<String> = errors.iter().map(ToString::to_string).collect();
        Failure::new(INVALID, lines.join("\n"))
    })?;
    if !analysis.diagnostics.is_empty() {
        let lines: Vec<String> = analysis
            .diagnostics
            .iter()
            .map(ToString::to_string)
            .collect();
        return Err(Failure::new(INVALID, lines.join("\n")));
    }
    plan(&model, &analysis, &base_dir(file)).map_err(plan_error)
}

fn validate(file: &Path) -> Result<(), Failure> {
    let model = load(file)?;
    let analysis = analyze(&model).map_err(|errors| {
        let lines: Vec<String> = errors.iter().map(ToString::to_string).collect();
        Failure::new(INVALID, lines.join("\n"))
    })?;
    if analysis.diagnostics.is_empty() {
        return Ok(());
    }
    let lines: Vec<String> = analysis
        .diagnostics
        .iter()
        .map(ToString::to_string)
        .collect();
    Err(Failure::new(INVALID, lines.join("\n")))
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Validate { file } => validate(&file),
        Command::Plan { file, binds } => {
            emit(&build_plan(&file, &binds)?.to_json());
            Ok(())
        }
        Command::Run {
            file,
            binds,
            adapter,
            jobs,
            faults,
            workdir,
            retries_are_additional,
        } => {
            if let Some(path) = &faults {
                FaultScript::load(path).map_err(|e| Failure::new(USAGE, e))?;
            }
            let plan = build_plan(&file, &binds)?;
            let (adapter, clock) = match adapter {
                AdapterArg::Sim => (Adapter::Simulated, Clock::Logical),
                AdapterArg::Shell => (Adapter::Shell, Clock::Wall),
            };
            let config = RunConfig {
                adapter,
                jobs: jobs as usize,
                workdir: workdir.workdir,
                fault_script: faults,
                clock,
                retries_are_additional,
            };
            let report = engine::run(&plan, &config).map_err(|e| match e {
                EngineError::FaultScript(_) => Failure::new(USAGE, e),
                _ => Failure::new(RUNTIME, e),
            })?;
            emit(&report.to_json());
            match report.status {
                RunStatus::Success => Ok(()),
                RunStatus::Failed => {
                    let failed: Vec<String> = report
                        .nodes
                        .iter()
                        .filter(|n| {
                            matches!(n.status, engine::Status::Failed | engine::Status::NotRun)
                        })
                        .map(|n| format!("{} {:?}", n.id, n.status).to_lowercase())
                        .collect();
                    Err(Failure::new(
                        RUNTIME,
                        format!("run failed: {}", failed.join(", ")),
                    ))
                }
            }
        }
        Command::Prov {
            workdir,
            version,
            granularity,
        } => {
            let log = EventLog::load(&workdir.workdir.join("provenance.json"))
                .map_err(|e| Failure::new(USAGE, e))?;
            let overrides: IndexMap<String, Granularity> = granularity.into_iter().collect();
            let graph = export_opm(&log, &version, &overrides).map_err(|e| match e {
                ProvError::UnknownVersion { .. } | ProvError::Read { .. } => Failure::new(USAGE, e),
            })?;
            emit(&graph.to_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.message);
            ExitCode::from(f.code)
        }
    }
}
