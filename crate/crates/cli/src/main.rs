//! `lgbo`: batch runs, theory checks, dataset generation and the campaign
//! server.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lgbo_core::acquisition::AcquisitionKind;
use lgbo_core::engine::{provider_for, run_seeds, Method, RunConfig};
use lgbo_core::oracle::{Objective, TableOracle};
use lgbo_core::provider::ProviderKind;
use lgbo_core::synthetic::{self, Branin};
use lgbo_core::theory::{self, CheckKind};
use lgbo_core::trace::{export_trace, export_trace_json, traces_csv, Trace};
use lgbo_service::{Service, ServiceConfig};

#[derive(Parser)]
#[command(name = "lgbo", version, about = "Bayesian optimization with preference-lifted GP surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an optimization method against a dataset or built-in objective.
    Run(RunArgs),
    /// Numerically check the tilt identity, RKHS radii and regret bounds.
    Verify(VerifyArgs),
    /// Serve the campaign HTTP API.
    Serve(ServeArgs),
    /// Write the bundled benchmark datasets and schemas.
    MakeData(MakeDataArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Builtin {
    Branin,
    CrossBarrel,
    Lnp3,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset schema (JSON); requires --data.
    #[arg(long, requires = "data")]
    schema: Option<PathBuf>,
    /// Dataset rows (CSV); requires --schema.
    #[arg(long, requires = "schema")]
    data: Option<PathBuf>,
    /// Built-in objective instead of a dataset.
    #[arg(long, value_enum, conflicts_with_all = ["schema", "data"])]
    objective: Option<Builtin>,
    #[arg(long, default_value = "lgbo")]
    method: String,
    /// Rounds after the initial design.
    #[arg(long, default_value_t = 30)]
    budget: usize,
    /// Initial design size.
    #[arg(long, default_value_t = 2)]
    init: usize,
    /// Comma-separated seeds.
    #[arg(long, default_value = "1,2,3,4,5", value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Preference provider for lgbo: llm, scripted or random.
    #[arg(long, default_value = "llm")]
    provider: String,
    /// Script for the scripted provider.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, default_value = "log_ei")]
    acq: String,
    /// Full run configuration (JSON); flags given explicitly override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value = "all")]
    check: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Service configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    listen: Option<String>,
}

#[derive(Args)]
struct MakeDataArgs {
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Verify(a) => verify(a),
        Command::Serve(a) => serve(a),
        Command::MakeData(a) => make_data(a),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

type CliResult = Result<ExitCode, String>;

fn objective(a: &RunArgs) -> Result<Box<dyn Objective>, String> {
    match (&a.schema, &a.data, a.objective) {
        (Some(schema), Some(data), None) => TableOracle::load("dataset", data, schema)
            .map(|o| Box::new(o) as Box<dyn Objective>)
            .map_err(|e| e.to_string()),
        (None, None, Some(b)) => Ok(match b {
            Builtin::Branin => Box::new(Branin::new()),
            Builtin::CrossBarrel => Box::new(synthetic::cross_barrel_oracle()),
            Builtin::Lnp3 => Box::new(synthetic::lnp3_oracle()),
        }),
        _ => Err("give either --schema and --data, or --objective".into()),
    }
}

fn run_config(a: &RunArgs) -> Result<RunConfig, String> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("reading {}: {e}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| format!("parsing {}: {e}", p.display()))?
        }
        None => RunConfig::default(),
    };
    cfg.method = a.method.parse::<Method>()?;
    cfg.budget = a.budget;
    cfg.init_count = a.init;
    cfg.acquisition.kind = a.acq.parse::<AcquisitionKind>()?;
    if cfg.method == Method::Lgbo {
        cfg.provider.kind = a.provider.parse::<ProviderKind>()?;
    }
    if let Some(s) = &a.script {
        cfg.provider.script_path = Some(s.clone());
    }
    if cfg.method == Method::Lgbo && cfg.provider.kind == ProviderKind::Scripted && cfg.provider.script_path.is_none() {
        return Err("--provider scripted needs --script".into());
    }
    if a.seeds.is_empty() {
        return Err("--seeds must list at least one seed".into());
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn write_traces(out: &Path, traces: &[Trace]) -> Result<(), String> {
    std::fs::create_dir_all(out).map_err(|e| format!("creating {}: {e}", out.display()))?;
    for t in traces {
        let stem = format!("trace_{}_seed{}", t.method.as_str(), t.seed);
        export_trace(t, &out.join(format!("{stem}.csv"))).map_err(|e| e.to_string())?;
        export_trace_json(t, &out.join(format!("{stem}.json"))).map_err(|e| e.to_string())?;
    }
    if let Some(first) = traces.first() {
        let all = traces_csv(traces).map_err(|e| e.to_string())?;
        let path = out.join(format!("traces_{}.csv", first.method.as_str()));
        std::fs::write(&path, all).map_err(|e| format!("writing {}: {e}", path.display()))?;
    }
    Ok(())
}

fn run(a: RunArgs) -> CliResult {
    let obj = objective(&a)?;
    let cfg = run_config(&a)?;
    let provider = provider_for(&cfg).map_err(|e| e.to_string())?;
    let traces = run_seeds(&cfg, &a.seeds, obj.as_ref(), provider).map_err(|e| e.to_string())?;
    write_traces(&a.out, &traces)?;
    let finals: Vec<f64> = traces.iter().filter_map(|t| t.records.last().map(|r| r.best_so_far)).collect();
    println!(
        "{} on {}: {} seeds, {} rounds each, median final best {:.6}",
        cfg.method.as_str(),
        obj.name(),
        traces.len(),
        cfg.total_rounds(),
        median(finals)
    );
    println!("traces written to {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn verify(a: VerifyArgs) -> CliResult {
    let kind = a.check.parse::<CheckKind>()?;
    let report = theory::verify(kind, a.seed);
    for c in &report.checks {
        println!("{} {}", if c.pass { "PASS" } else { "FAIL" }, c.name);
    }
    if let Some(p) = &a.report {
        let text = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
        std::fs::write(p, text + "\n").map_err(|e| format!("writing {}: {e}", p.display()))?;
    }
    let failed = report.checks.iter().filter(|c| !c.pass).count();
    println!("{} checks, {failed} failed", report.checks.len());
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn serve(a: ServeArgs) -> CliResult {
    let mut cfg = ServiceConfig::load(a.config.as_deref()).map_err(|e| e.to_string())?;
    if let Some(d) = a.data_dir {
        cfg.data_dir = d;
    }
    if let Some(l) = a.listen {
        cfg.listen = l;
    }
    let service = Service::open(&cfg.data_dir, cfg.defaults.clone())
        .map_err(|e| format!("opening {}: {e}", cfg.data_dir.display()))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&cfg.listen)
            .await
            .map_err(|e| format!("binding {}: {e}", cfg.listen))?;
        let addr = listener.local_addr().map_err(|e| e.to_string())?;
        println!("listening on http://{addr}");
        use std::io::Write;
        std::io::stdout().flush().ok();
        lgbo_service::serve(listener, Arc::new(service)).await.map_err(|e| e.to_string())
    })?;
    Ok(ExitCode::SUCCESS)
}

fn make_data(a: MakeDataArgs) -> CliResult {
    let written = synthetic::write_datasets(&a.out).map_err(|e| e.to_string())?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}
