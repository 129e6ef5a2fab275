//! Command-line driver: synthesise data, inspect partitions, train the
//! flow model and score trajectory logs. Every command writes the resolved
//! configuration next to its outputs.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use egoflow::flow::train::{evaluate, sliding_windows, train, TrainConfig};
use egoflow::flow::{FlowConfig, FlowDims, FlowModel};
use egoflow::metrics::{metrics_csv, ComplianceRules, TrajectoryLog};
use egoflow::rig::EgoPose;
use egoflow::synth::{
    generate_sequence, read_dataset, write_dataset, Dataset, SynthScenario, LOG_FILE,
};
use egoflow::tensor::io::save_checkpoint;
use egoflow::Exec;

pub mod partition;
pub mod selfcheck;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const CONFIG_FILE: &str = "config.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PARTITION_FILE: &str = "partition.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<egoflow::Error> for CliError {
    fn from(e: egoflow::Error) -> Self {
        match e {
            egoflow::Error::Numeric(_) => CliError::Numeric(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Everything a run depends on, after file and flag overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: SynthScenario,
    /// Feature level the flow model trains on.
    pub level: usize,
    pub flow: FlowConfig,
    pub train: TrainConfig,
    pub compliance: ComplianceRules,
    /// Fan independent work out over threads.
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: SynthScenario::default(),
            level: 0,
            flow: FlowConfig::default(),
            train: TrainConfig::default(),
            compliance: ComplianceRules::default(),
            parallel: true,
        }
    }
}

impl RunConfig {
    pub fn exec(&self) -> Exec {
        if self.parallel {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "egoflow",
    version,
    about = "Ego-guided scene flow on a synthetic camera ring"
)]
pub struct Cli {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the scenario and training seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "egoflow-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sequence and its trajectory log.
    Synth(SynthArgs),
    /// Ego-guided partition of one frame at every level.
    Partition(PartitionArgs),
    /// Train the flow model and write the loss curve and checkpoint.
    Train(TrainArgs),
    /// Planning metrics for a trajectory log.
    Eval(EvalArgs),
    /// Run the built-in invariant checks.
    Selfcheck,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Use the straight sanity fixture instead of the configured scenario.
    #[arg(long)]
    pub sanity: bool,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    /// Dataset directory written by `synth`.
    #[arg(long, conflicts_with = "poses")]
    pub data: Option<PathBuf>,
    /// 1-based frame inside `--data`.
    #[arg(long, default_value_t = 1)]
    pub frame: usize,
    /// JSON list of ego poses, oldest first (at least three).
    #[arg(long)]
    pub poses: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory; without it the configured scenario is generated.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Train on the straight sanity fixture.
    #[arg(long, conflicts_with = "data")]
    pub sanity: bool,
    /// Overrides the configured step count.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON-lines trajectory log.
    #[arg(long, conflicts_with = "data")]
    pub log: Option<PathBuf>,
    /// Dataset directory; its trajectory log is scored.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<RunConfig> {
    let mut cfg = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
        }
    };
    if let Some(s) = seed {
        cfg.scenario.seed = s;
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serialisable value");
    write_text(path, &(text + "\n"))
}

fn write_config(out: &Path, cfg: &RunConfig) -> CliResult<()> {
    create_dir(out)?;
    write_json(&out.join(CONFIG_FILE), cfg)
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(&cfg, a, &cli.out),
        Command::Partition(a) => cmd_partition(&cfg, a, &cli.out),
        Command::Train(a) => cmd_train(&cfg, a, &cli.out),
        Command::Eval(a) => cmd_eval(&cfg, a, &cli.out),
        Command::Selfcheck => cmd_selfcheck(&cfg, &cli.out),
    }
}

fn sanity_config(cfg: &RunConfig) -> RunConfig {
    RunConfig {
        scenario: SynthScenario::sanity_fixture(cfg.scenario.seed),
        ..cfg.clone()
    }
}

pub fn cmd_synth(cfg: &RunConfig, args: &SynthArgs, out: &Path) -> CliResult<()> {
    let cfg = if args.sanity {
        sanity_config(cfg)
    } else {
        cfg.clone()
    };
    let ds = generate_sequence(&cfg.scenario)?;
    let manifest = write_dataset(&ds, out)?;
    write_config(out, &cfg)?;
    println!(
        "wrote {} frames to {} (digest {})",
        ds.frames.len(),
        out.display(),
        manifest.digest
    );
    Ok(())
}

pub fn cmd_partition(cfg: &RunConfig, args: &PartitionArgs, out: &Path) -> CliResult<()> {
    let (report, cfg) = match (&args.data, &args.poses) {
        (Some(dir), _) => {
            let ds = read_dataset(dir)?;
            let cfg = RunConfig {
                scenario: ds.scenario.clone(),
                ..cfg.clone()
            };
            create_dir(out)?;
            (partition::dataset_report(&ds, args.frame, out)?, cfg)
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let poses: Vec<EgoPose> = serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            (partition::pose_report(&cfg.scenario, &poses)?, cfg.clone())
        }
        (None, None) => {
            return Err(CliError::Usage(
                "partition needs --data DIR or --poses FILE".into(),
            ));
        }
    };
    let value = serde_json::to_value(&report).expect("report serialises");
    partition::validate_partition_json(&value).map_err(CliError::Data)?;
    write_config(out, &cfg)?;
    write_json(&out.join(PARTITION_FILE), &report)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serialises")
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    steps: usize,
    windows: usize,
    parameters: usize,
    initial_total: f64,
    final_spat: f64,
    final_tem: f64,
    final_total: f64,
    ratio: f64,
}

pub fn cmd_train(cfg: &RunConfig, args: &TrainArgs, out: &Path) -> CliResult<()> {
    let mut cfg = if args.sanity {
        sanity_config(cfg)
    } else {
        cfg.clone()
    };
    if let Some(s) = args.steps {
        cfg.train.steps = s;
    }
    let ds: Dataset = match &args.data {
        Some(dir) => {
            let ds = read_dataset(dir)?;
            cfg.scenario = ds.scenario.clone();
            ds
        }
        None => generate_sequence(&cfg.scenario)?,
    };
    let units = ds.flow_units(cfg.level)?;
    let windows = sliding_windows(&units, cfg.flow.horizon);
    if windows.is_empty() {
        return Err(CliError::Data(format!(
            "{} frames are too few for windows of {}",
            units.len(),
            cfg.flow.horizon
        )));
    }
    let model = FlowModel::new(cfg.flow.clone(), FlowDims::of(&units[0])?)?;
    let mut params = model.init(cfg.train.seed)?;
    let exec = cfg.exec();
    write_config(out, &cfg)?;
    let initial = evaluate(&model, &params, &windows, exec)?;
    let history = train(&model, &mut params, &windows, &cfg.train, exec)?;
    let fin = evaluate(&model, &params, &windows, exec)?;

    let mut csv = String::from("step,l_spat,l_tem,total\n");
    for r in &history {
        writeln!(
            csv,
            "{},{},{},{}",
            r.step, r.losses.spat, r.losses.tem, r.losses.total
        )
        .unwrap();
    }
    write_text(&out.join(LOSS_FILE), &csv)?;
    save_checkpoint(&out.join(CHECKPOINT_DIR), &params)?;
    let summary = TrainSummary {
        steps: history.len(),
        windows: windows.len(),
        parameters: params.num_values(),
        initial_total: initial.total,
        final_spat: fin.spat,
        final_tem: fin.tem,
        final_total: fin.total,
        ratio: fin.total / initial.total,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    println!(
        "{} steps: total {:.6} -> {:.6} (ratio {:.4})",
        summary.steps, summary.initial_total, summary.final_total, summary.ratio
    );
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, args: &EvalArgs, out: &Path) -> CliResult<()> {
    let path = match (&args.log, &args.data) {
        (Some(p), _) => p.clone(),
        (None, Some(d)) => d.join(LOG_FILE),
        (None, None) => {
            return Err(CliError::Usage(
                "eval needs --log FILE or --data DIR".into(),
            ))
        }
    };
    let log = TrajectoryLog::read(&path)?;
    let csv = metrics_csv(&log, &cfg.compliance)?;
    write_config(out, cfg)?;
    write_text(&out.join(METRICS_FILE), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn cmd_selfcheck(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let results = selfcheck::run_all(cfg.exec());
    let mut csv = String::from("check,passed,detail\n");
    let mut failed = 0;
    for r in &results {
        println!(
            "{} {}: {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
        writeln!(
            csv,
            "{},{},\"{}\"",
            r.name,
            r.passed,
            r.detail.replace('"', "'")
        )
        .unwrap();
        failed += usize::from(!r.passed);
    }
    write_config(out, cfg)?;
    write_text(&out.join("selfcheck.csv"), &csv)?;
    if failed > 0 {
        return Err(CliError::Numeric(format!(
            "{failed} of {} checks failed",
            results.len()
        )));
    }
    Ok(())
}
