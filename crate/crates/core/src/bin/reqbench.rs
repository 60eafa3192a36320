use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use reqbench_core::bench::{
    build_gateway, build_runner, emit_report, load_dataset, qc_dataset, reexecute, render_text,
    write_dataset, BenchError, Pipeline, RunConfig, RunRecord, RunnerConfig, RunnerKind,
};
use reqbench_core::prompt::Stage;

#[derive(Parser)]
#[command(
    name = "reqbench",
    version,
    about = "Requirements-aware code generation benchmark harness"
)]
struct Cli {
    /// Log filter, e.g. `info` or `reqbench_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum RunnerArg {
    Stub,
    Process,
}

#[derive(clap::Args, Clone)]
struct RunnerOpts {
    /// Overrides the config's runner kind.
    #[arg(long, value_enum)]
    runner: Option<RunnerArg>,
    /// Runner command line, split on whitespace.
    #[arg(long)]
    runner_cmd: Option<String>,
}

#[derive(clap::Args, Clone)]
struct ProviderOpts {
    #[arg(long, env = "REQBENCH_API_KEY", hide_env_values = true)]
    api_key: Option<String>,
    #[arg(long, env = "REQBENCH_BASE_URL")]
    base_url: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate requirement documents.
    GenReqs {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        provider: ProviderOpts,
    },
    /// Generate code candidates (needs cached requirements).
    GenCode {
        #[arg(long)]
        config: PathBuf,
        /// Condition code on the generated tests.
        #[arg(long)]
        tdd: bool,
        #[command(flatten)]
        provider: ProviderOpts,
    },
    /// Generate test documents (needs cached requirements).
    GenTests {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        provider: ProviderOpts,
    },
    /// Generate, execute and report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        provider: ProviderOpts,
        #[command(flatten)]
        runner: RunnerOpts,
    },
    /// Re-execute the candidates and tests stored in a record.
    Exec {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `<output_dir>/record.json`.
        #[arg(long)]
        record: Option<PathBuf>,
        #[command(flatten)]
        runner: RunnerOpts,
    },
    /// Drop functional ground-truth tests the canonical solution fails.
    QcTests {
        #[arg(long)]
        dataset: PathBuf,
        /// Filtered dataset to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        runner: RunnerOpts,
        /// Used when no --runner-cmd is given with --runner process.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Rebuild report.json and report.txt from a record.
    Report {
        #[arg(long)]
        record: PathBuf,
        /// Defaults to the record's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn runner_config(base: &RunnerConfig, opts: &RunnerOpts) -> RunnerConfig {
    let mut rc = base.clone();
    if let Some(r) = opts.runner {
        rc.kind = match r {
            RunnerArg::Stub => RunnerKind::Stub,
            RunnerArg::Process => RunnerKind::Process,
        };
    }
    if let Some(cmd) = &opts.runner_cmd {
        rc.command = cmd.split_whitespace().map(String::from).collect();
    }
    rc
}

fn generate(
    config: &Path,
    stages: Vec<Stage>,
    provider: &ProviderOpts,
    name: &str,
) -> Result<RunRecord> {
    let mut cfg = RunConfig::load(config)?;
    cfg.stages = stages;
    cfg.validate()?;
    let gateway = build_gateway(&cfg, provider.api_key.clone(), provider.base_url.clone())?;
    let problems = load_dataset(&cfg.dataset)?;
    let record = Pipeline::new(&cfg, &gateway, None)?.run(&problems)?;
    let path = cfg.output_dir.join(format!("{name}.record.json"));
    record.save(&path)?;
    eprintln!(
        "{} problems generated, {} skipped; record at {}",
        record.problems.len(),
        record.skipped.len(),
        path.display()
    );
    Ok(record)
}

fn finish(record: RunRecord, out: &Path) -> Result<RunRecord> {
    record.save(&out.join("record.json"))?;
    let report = emit_report(&record, out)?;
    print!("{}", render_text(&report));
    Ok(record)
}

fn execute(cli: Cli) -> Result<Option<RunRecord>> {
    match cli.cmd {
        Cmd::GenReqs { config, provider } => generate(
            &config,
            vec![Stage::Requirements],
            &provider,
            "requirements",
        )
        .map(Some),
        Cmd::GenCode {
            config,
            tdd,
            provider,
        } => {
            let stage = if tdd { Stage::CodeTdd } else { Stage::Code };
            generate(&config, vec![stage], &provider, stage.as_str()).map(Some)
        }
        Cmd::GenTests { config, provider } => {
            generate(&config, vec![Stage::Tests], &provider, "tests").map(Some)
        }
        Cmd::Run {
            config,
            provider,
            runner,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.runner = runner_config(&cfg.runner, &runner);
            cfg.validate()?;
            let gateway = build_gateway(&cfg, provider.api_key, provider.base_url)?;
            let runner = build_runner(&cfg.runner)?;
            let problems = load_dataset(&cfg.dataset)?;
            let record = Pipeline::new(&cfg, &gateway, Some(runner.as_ref()))?.run(&problems)?;
            finish(record, &cfg.output_dir).map(Some)
        }
        Cmd::Exec {
            config,
            record,
            runner,
        } => {
            let cfg = RunConfig::load(&config)?;
            let path = record.unwrap_or_else(|| cfg.output_dir.join("record.json"));
            let mut rec = RunRecord::load(&path)?;
            rec.config.runner = runner_config(&cfg.runner, &runner);
            rec.config.validate()?;
            let runner = build_runner(&rec.config.runner)?;
            let problems = load_dataset(&cfg.dataset)?;
            let rec = reexecute(&rec, &problems, runner.as_ref())?;
            finish(rec, &cfg.output_dir).map(Some)
        }
        Cmd::QcTests {
            dataset,
            out,
            runner,
            config,
        } => {
            let base = match config {
                Some(c) => RunConfig::load(&c)?.runner,
                None => RunnerConfig::default(),
            };
            let rc = runner_config(&base, &runner);
            if rc.kind == RunnerKind::Process && rc.command.is_empty() {
                return Err(BenchError::Config("process runner needs --runner-cmd".into()).into());
            }
            let runner = build_runner(&rc)?;
            let problems = load_dataset(&dataset)?;
            let (filtered, log) = qc_dataset(runner.as_ref(), &problems)?;
            write_dataset(&out, &filtered)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&log).context("serializing qc log")?
            );
            Ok(None)
        }
        Cmd::Report { record, out } => {
            let rec = RunRecord::load(&record)?;
            let dir =
                out.unwrap_or_else(|| record.parent().map(Path::to_path_buf).unwrap_or_default());
            let report = emit_report(&rec, &dir)?;
            print!("{}", render_text(&report));
            Ok(None)
        }
    }
}

/// 2: bad config or input, 3: provider failure, 4: runner failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<BenchError>() {
        Some(
            BenchError::Config(_)
            | BenchError::Schema { .. }
            | BenchError::Prompt(_)
            | BenchError::Rank(_),
        ) => 2,
        Some(
            BenchError::MissingGroundTruth(_) | BenchError::Json { .. } | BenchError::Io { .. },
        ) => 2,
        Some(BenchError::Provider(_)) => 3,
        Some(BenchError::Runner(_)) => 4,
        _ => 1,
    }
}

/// A run where every problem was skipped for the same infrastructure
/// cause, or where the runner executed nothing at all, fails with that
/// cause's exit code.
fn record_code(rec: &RunRecord) -> u8 {
    let matrices: Vec<_> = rec
        .problems
        .iter()
        .filter_map(|p| p.verdicts.as_ref())
        .flat_map(|v| [&v.gen, &v.gt])
        .collect();
    let all_aborted = matrices.iter().any(|m| !m.aborted.is_empty())
        && matrices.iter().all(|m| m.rows.is_empty());
    if all_aborted {
        return 4;
    }
    if !rec.problems.is_empty() || rec.skipped.is_empty() {
        return 0;
    }
    let all = |cause: &str| rec.skipped.iter().all(|s| s.cause == cause);
    if all("provider") {
        3
    } else if all("runner") {
        4
    } else {
        0
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match execute(cli) {
        Ok(Some(rec)) => ExitCode::from(record_code(&rec)),
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
