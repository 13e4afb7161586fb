use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use sakugaflow_api::{router, ApiOptions};
use sakugaflow_cli::runner::run_script;
use sakugaflow_cli::{Cli, CliCommand, ExportArgs, RunArgs, ServeArgs};
use sakugaflow_core::{Engine, EngineConfig, Store};
use tracing_subscriber::EnvFilter;

fn run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let options = args.options()?;
    match run_script(&args.script, &options) {
        Ok(report) => {
            println!(
                "project {}: {} steps, {} completed nodes -> {}",
                report.project,
                report.steps,
                report.completed.len(),
                args.out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(ExitCode::from(e.exit_code() as u8))
        }
    }
}

fn export(args: ExportArgs) -> anyhow::Result<ExitCode> {
    let replayed = Store::replay_dir(&args.project_dir)
        .with_context(|| format!("loading {}", args.project_dir.display()))?;
    let doc = sakugaflow_core::TreeDocument::from_state(&replayed.state).to_json();
    match args.out {
        Some(path) => std::fs::write(&path, doc).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{doc}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(args: ServeArgs) -> anyhow::Result<ExitCode> {
    let backend = args.backend.build()?;
    let mut config = EngineConfig::new(&args.data_dir);
    config.parallel_jobs = args.parallel_jobs.max(1);
    config.cache_entries = args.cache_entries;
    config.tutor = args.backend.tutor();
    let engine = Engine::open(config, backend)
        .with_context(|| format!("opening {}", args.data_dir.display()))?;
    for (project, reason) in engine.skipped_projects() {
        tracing::warn!(%project, %reason, "project not loaded");
    }
    let options = ApiOptions {
        cors_origins: args.cors_origins,
        ui_dir: args.ui_dir,
    };
    let app = router(Arc::new(engine), &options);
    tokio::runtime::Runtime::new()?.block_on(sakugaflow_api::serve(args.listen, app))?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("SAKUGAFLOW_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        CliCommand::Run(args) => run(args),
        CliCommand::Export(args) => export(args),
        CliCommand::Serve(args) => serve(args),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
