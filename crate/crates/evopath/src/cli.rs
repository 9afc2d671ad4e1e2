//! Command-line interface.
//!
//! Exit codes: 0 success, 1 internal failure, 2 bad config or arguments,
//! 3 dataset error or corrupt pool, 4 unknown scenario.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use evopath_core::scene::to_trajectory_text;
use evopath_core::{
    build_meta_model, effective_param_count, gen_scene, train_msnet, EvoError, Executor, Horizon, KnowledgePool, SceneDataset, SceneKind, SceneSpec, Sequential,
};

use crate::config::{ConfigError, RunConfig, ScenarioConfig};
use crate::data::{all_datasets, file_dataset, scenario_dataset, DataError};
use crate::dot::lineage_dot;
use crate::exec::Parallel;
use crate::persist::{load_pool, save_pool, PersistError};
use crate::report::{report_json, scenario_report, ReportError, RunReport};

#[derive(Debug, Parser)]
#[command(name = "evopath", version, about = "Evolve and evaluate multi-path sparse trajectory forecasters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evolve a knowledge pool from a JSON run config.
    Evolve {
        #[arg(long)]
        config: PathBuf,
        /// Parallel candidate training jobs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory, overriding the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a scenario's assembled path on its test split.
    Eval {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        scenario: String,
        /// Use the meta-model when the pool has no path for the scenario.
        #[arg(long)]
        allow_meta: bool,
        /// Trajectory file to evaluate instead of the configured source.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Inspect a pool or export its lineage graph.
    Pool {
        dir: PathBuf,
        #[command(subcommand)]
        action: PoolAction,
    },
    /// Write a synthetic scene as trajectory text.
    Gendata {
        #[arg(long)]
        kind: SceneKind,
        #[arg(long)]
        agents: usize,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.02)]
        sigma: f64,
        #[arg(long, default_value_t = 8)]
        t_obs: usize,
        #[arg(long, default_value_t = 12)]
        t_pred: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum PoolAction {
    /// Print one row per record.
    Inspect,
    /// Write the lineage graph in Graphviz format.
    ExportDot {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("dataset error: {0}")]
    Data(#[from] DataError),
    #[error("{0}")]
    Corrupt(String),
    #[error("{0}")]
    UnknownScenario(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Data(_) | CliError::Corrupt(_) => 3,
            CliError::UnknownScenario(_) => 4,
        }
    }
}

impl From<PersistError> for CliError {
    fn from(e: PersistError) -> Self {
        match e {
            PersistError::Corrupt(_) => CliError::Corrupt(e.to_string()),
            PersistError::Io { .. } => CliError::Corrupt(format!("cannot read pool: {e}")),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::UnknownScenario(_) => CliError::UnknownScenario(e.to_string()),
            ReportError::Model(_) => CliError::Internal(e.to_string()),
        }
    }
}

fn evo_error(e: EvoError) -> CliError {
    match e {
        EvoError::Data(_) | EvoError::Incompatible { .. } | EvoError::Train(evopath_core::TrainError::Data(_)) => {
            CliError::Data(DataError::Evo(e.to_string()))
        }
        EvoError::Config(_) => CliError::Usage(e.to_string()),
        other => CliError::Internal(other.to_string()),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

/// Parses `args` and runs the command, printing errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(cli.command, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("evopath: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut impl std::io::Write) -> Result<(), CliError> {
    let text = match command {
        Command::Evolve { config, jobs, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(dir) = out {
                cfg.output = dir;
            }
            if jobs == 0 {
                return Err(CliError::Usage("--jobs must be at least 1".into()));
            }
            evolve(&cfg, jobs)?.report.to_text()
        }
        Command::Eval {
            pool,
            scenario,
            allow_meta,
            data,
        } => eval(&pool, &scenario, allow_meta, data.as_deref())?,
        Command::Pool { dir, action } => {
            let loaded = load_pool(&dir)?;
            match action {
                PoolAction::Inspect => inspect(&loaded.pool),
                PoolAction::ExportDot { out } => {
                    write_file(&out, lineage_dot(&loaded.pool).as_bytes())?;
                    String::new()
                }
            }
        }
        Command::Gendata {
            kind,
            agents,
            count,
            seed,
            out,
            sigma,
            t_obs,
            t_pred,
        } => {
            let mut spec = SceneSpec::new(kind, seed);
            spec.agents = agents;
            spec.count = count;
            spec.sigma = sigma;
            spec.t_obs = t_obs;
            spec.t_pred = t_pred;
            let data = gen_scene(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
            write_file(&out, to_trajectory_text(&data).as_bytes())?;
            String::new()
        }
    };
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Internal(format!("stdout: {e}")))
}

/// Everything an evolve run produced.
#[derive(Debug)]
pub struct Evolved {
    pub pool: KnowledgePool,
    pub datasets: Vec<SceneDataset>,
    pub report: RunReport,
    pub pool_dir: PathBuf,
    pub progress: Vec<String>,
}

/// Runs the full evolve command for an already loaded config, writing
/// `pool/`, `progress.log`, `report.txt` and `report.json` under
/// `cfg.output`.
pub fn evolve(cfg: &RunConfig, jobs: usize) -> Result<Evolved, CliError> {
    let datasets = all_datasets(cfg)?;
    let mut meta = build_meta_model(
        &cfg.model.widths,
        cfg.model.modes_k,
        Horizon {
            obs: cfg.model.t_obs,
            pred: cfg.model.t_pred,
        },
        datasets[0].context_dim(),
        cfg.seed,
    )
    .map_err(|e| CliError::Config(ConfigError {
        key: "model".into(),
        reason: e.to_string(),
    }))?;
    meta.set_hyper(cfg.hyper_state());

    let out_dir = &cfg.output;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Internal(format!("{}: {e}", out_dir.display())))?;
    let log_path = out_dir.join("progress.log");
    let mut log = std::fs::File::create(&log_path)
        .map_err(|e| CliError::Internal(format!("{}: {e}", log_path.display())))?;
    let mut lines = Vec::new();
    let mut log_error = None;
    let observe = |pool: &KnowledgePool, o: &evopath_core::evo::GenerationOutcome| {
        let line = progress_line(pool, o);
        if log_error.is_none() {
            if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
                log_error = Some(e);
            }
        }
        lines.push(line);
    };
    let pool = if jobs <= 1 {
        run_with(meta, &datasets, cfg, &Sequential, observe)
    } else {
        let exec = Parallel::new(jobs).map_err(|e| CliError::Internal(e.to_string()))?;
        run_with(meta, &datasets, cfg, &exec, observe)
    }
    .map_err(evo_error)?;
    if let Some(e) = log_error {
        return Err(CliError::Internal(format!("{}: {e}", log_path.display())));
    }

    let pool_dir = out_dir.join("pool");
    let digest = save_pool(&pool_dir, &pool, &cfg.echo(), cfg.seed)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let scenarios = datasets
        .iter()
        .map(|d| scenario_report(&pool, d, cfg, false))
        .collect::<Result<Vec<_>, _>>()?;
    let report = RunReport {
        manifest_sha256: digest,
        records: pool.len(),
        total_params: pool.total_params(),
        meta_params: effective_param_count(&pool.meta().model),
        scenarios,
    };
    write_file(&out_dir.join("report.txt"), report.to_text().as_bytes())?;
    write_file(&out_dir.join("report.json"), report.to_json().as_bytes())?;
    Ok(Evolved {
        pool,
        datasets,
        report,
        pool_dir,
        progress: lines,
    })
}

fn run_with<E: Executor>(
    meta: evopath_core::ForecastModel,
    datasets: &[SceneDataset],
    cfg: &RunConfig,
    exec: &E,
    observe: impl FnMut(&KnowledgePool, &evopath_core::evo::GenerationOutcome),
) -> Result<KnowledgePool, EvoError> {
    train_msnet(meta, datasets, &cfg.evo_config(), &cfg.train_config(), cfg.seed, exec, observe)
}

/// One progress-log line: the appended record, or a warning when every
/// candidate diverged.
pub fn progress_line(pool: &KnowledgePool, o: &evopath_core::evo::GenerationOutcome) -> String {
    match o.appended {
        Some(i) => {
            let r = &pool.records()[i];
            format!(
                "generation={} scenario={} record={} parent={} score={} p={} effective_params={}",
                o.generation,
                o.scenario,
                r.id().short(),
                o.parent.short(),
                r.score(&o.scenario).unwrap_or(0.0),
                r.additional_params,
                effective_param_count(&r.model),
            )
        }
        None => format!(
            "warning generation={} scenario={} parent={} all {} candidates diverged",
            o.generation,
            o.scenario,
            o.parent.short(),
            o.candidates.len()
        ),
    }
}

fn eval(pool_dir: &Path, scenario: &str, allow_meta: bool, data: Option<&Path>) -> Result<String, CliError> {
    let loaded = load_pool(pool_dir)?;
    let cfg = RunConfig::from_echo(&loaded.config)
        .map_err(|e| CliError::Corrupt(format!("corrupt pool: stored config: {e}")))?;
    if evopath_core::assemble_path(&loaded.pool, scenario).fallback && !allow_meta {
        return Err(ReportError::UnknownScenario(scenario.into()).into());
    }
    let dataset = match (data, cfg.scenario(scenario)) {
        (Some(path), _) => file_dataset(&cfg, scenario, path)?,
        (None, Some(s)) => scenario_dataset(&cfg, s)?,
        (None, None) => match scenario.parse::<SceneKind>() {
            Ok(kind) => scenario_dataset(&cfg, &ScenarioConfig::synthetic(scenario, kind))?,
            Err(_) => {
                return Err(CliError::Usage(format!(
                    "no data source for scenario '{scenario}'; pass --data <file>"
                )))
            }
        },
    };
    let report = scenario_report(&loaded.pool, &dataset, &cfg, allow_meta)?;
    let mut text = report.to_text();
    text.push('\n');
    text.push_str(&serde_json::to_string_pretty(&report_json(&report)).expect("report serializes"));
    text.push('\n');
    Ok(text)
}

/// A fixed-width table, one row per record.
pub fn inspect(pool: &KnowledgePool) -> String {
    let mut s = format!(
        "{:>5}  {:<16}  {:<16}  {:>3}  {:>10}  {:>3}  {:>8}  {:>9}\n",
        "index", "id", "scenario", "gen", "score", "G", "p", "effective"
    );
    for (i, r) in pool.records().iter().enumerate() {
        let scope = r.scope().name();
        let score = r.score(scope).map_or_else(|| "-".into(), |v| format!("{v:.6}"));
        let _ = writeln!(
            s,
            "{:>5}  {:<16}  {:<16}  {:>3}  {:>10}  {:>3}  {:>8}  {:>9}",
            i,
            r.id().short(),
            scope,
            r.generation(),
            score,
            r.children,
            r.additional_params,
            effective_param_count(&r.model),
        );
    }
    s
}
