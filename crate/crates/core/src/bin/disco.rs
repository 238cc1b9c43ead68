use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use disco_core::backend::{LanguageModel, RemoteLm, TableLm};
use disco_core::decode::ModelPair;
use disco_core::edit_context::EditCase;
use disco_core::harness::{
    ablate, load_dataset, render_text, run, sweep_alpha, write_analysis_csvs, BackendKind, EvalReport, Mode,
    RunConfig, RunError, TraceLevel,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_SKIPPED: u8 = 4;
const MAX_SKIPPED_FRACTION: f64 = 0.10;

#[derive(Parser)]
#[command(name = "disco", version, about = "Contrastive decoding for in-context knowledge editing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one configuration.
    Run(RunArgs),
    /// Evaluate DISCO at several alpha values.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,1.0,1.5,2.0")]
        alphas: Vec<f64>,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Evaluate the four constraint configurations ID.1 to ID.4.
    Ablate(RunArgs),
    /// Check a dataset against the schema without running anything.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Table,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Raw,
    EditedPlain,
    Disco,
}

#[derive(Clone, Copy, ValueEnum)]
enum TraceArg {
    None,
    Summary,
    Full,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    backend: BackendArg,
    /// Fact table for the table backend.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Base URL of a logit server for the remote backend.
    #[arg(long, env = "DISCO_SERVER")]
    server: Option<String>,
    #[arg(long, value_enum, default_value = "disco")]
    mode: ModeArg,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long)]
    no_constrain_out: bool,
    #[arg(long)]
    no_constrain_edit: bool,
    #[arg(long)]
    no_paraphrase: bool,
    #[arg(long, default_value_t = 0)]
    k_demos: usize,
    #[arg(long, default_value_t = 16)]
    max_new: usize,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, value_enum, default_value = "none")]
    trace: TraceArg,
    /// Recorded in the report; runs are deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Run the analyses and write their CSV files.
    #[arg(long)]
    analysis: bool,
    /// Directory for the CSV files. Defaults to the report's directory, or the working directory.
    #[arg(long)]
    analysis_dir: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            dataset_path: self.dataset.clone(),
            backend: match self.backend {
                BackendArg::Table => BackendKind::Table,
                BackendArg::Remote => BackendKind::Remote,
            },
            table_path: self.table.clone(),
            server_url: self.server.clone(),
            mode: match self.mode {
                ModeArg::Raw => Mode::Raw,
                ModeArg::EditedPlain => Mode::EditedPlain,
                ModeArg::Disco => Mode::Disco,
            },
            alpha: self.alpha,
            constrain_out: !self.no_constrain_out,
            constrain_edit: !self.no_constrain_edit,
            include_paraphrase: !self.no_paraphrase,
            k_demos: self.k_demos,
            max_new: self.max_new,
            eps: self.eps,
            trace_level: match self.trace {
                TraceArg::None => TraceLevel::None,
                TraceArg::Summary => TraceLevel::Summary,
                TraceArg::Full => TraceLevel::Full,
            },
            seed: self.seed,
            analysis: self.analysis,
            jobs: self.jobs,
        }
    }

    fn csv_dir(&self) -> PathBuf {
        if let Some(dir) = &self.analysis_dir {
            return dir.clone();
        }
        match self.report.as_deref().and_then(Path::parent) {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        }
    }
}

enum Failure {
    Config(String),
    Backend(String),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(e) => Failure::Config(e.to_string()),
            RunError::Pool(e) => Failure::Backend(e),
        }
    }
}

fn connect(config: &RunConfig) -> Result<Box<dyn LanguageModel>, Failure> {
    match config.backend {
        BackendKind::Table => {
            let path = config.table_path.as_ref().ok_or_else(|| Failure::Config("the table backend needs --table".into()))?;
            let lm = TableLm::from_path(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            Ok(Box::new(lm))
        }
        BackendKind::Remote => {
            let url = config.server_url.as_ref().ok_or_else(|| Failure::Config("the remote backend needs --server".into()))?;
            let lm = RemoteLm::connect(url).map_err(|e| Failure::Backend(e.to_string()))?;
            Ok(Box::new(lm))
        }
    }
}

#[derive(Clone, Copy)]
enum Plan<'a> {
    Single,
    Sweep(&'a [f64]),
    Ablate,
}

fn execute(args: &RunArgs, plan: Plan<'_>) -> Result<ExitCode, Failure> {
    let config = args.config();
    config.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let cases: Vec<EditCase> = load_dataset(&config.dataset_path).map_err(|e| Failure::Config(e.to_string()))?;
    if cases.is_empty() {
        println!("no cases in {}", config.dataset_path.display());
        return Ok(ExitCode::SUCCESS);
    }
    let model = connect(&config)?;
    let models = ModelPair::shared(model.as_ref());
    let reports = match plan {
        Plan::Single => vec![run(&config, models, &cases, None)?],
        Plan::Sweep(alphas) => sweep_alpha(&config, models, &cases, alphas)?,
        Plan::Ablate => ablate(&config, models, &cases)?,
    };
    print!("{}", render_text(&reports));
    emit(args, &reports, matches!(plan, Plan::Single))?;

    if let Some(r) = reports.iter().find(|r| r.partial) {
        eprintln!("error: {}", r.abort_reason.as_deref().unwrap_or("backend unavailable"));
        return Ok(ExitCode::from(EXIT_BACKEND));
    }
    if reports.iter().any(|r| r.skipped_fraction() > MAX_SKIPPED_FRACTION) {
        eprintln!("error: more than 10% of cases were skipped");
        return Ok(ExitCode::from(EXIT_SKIPPED));
    }
    Ok(ExitCode::SUCCESS)
}

fn emit(args: &RunArgs, reports: &[EvalReport], single: bool) -> Result<(), Failure> {
    if let Some(path) = &args.report {
        let json = if single { serde_json::to_string_pretty(&reports[0]) } else { serde_json::to_string_pretty(reports) };
        let json = json.map_err(|e| Failure::Backend(format!("cannot serialize report: {e}")))?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))?;
        }
        std::fs::write(path, json + "\n").map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    }
    if args.analysis {
        let written = write_analysis_csvs(&args.csv_dir(), reports).map_err(|e| Failure::Config(e.to_string()))?;
        for p in written {
            log::info!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn validate(path: &Path) -> Result<ExitCode, Failure> {
    let cases = load_dataset(path).map_err(|e| Failure::Config(e.to_string()))?;
    if cases.is_empty() {
        println!("no cases in {}", path.display());
    } else {
        println!("{}: {} cases OK", path.display(), cases.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => execute(args, Plan::Single),
        Command::Sweep { alphas, args } => execute(args, Plan::Sweep(alphas)),
        Command::Ablate(args) => execute(args, Plan::Ablate),
        Command::Validate { dataset } => validate(dataset),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Backend(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_BACKEND)
        }
    }
}
