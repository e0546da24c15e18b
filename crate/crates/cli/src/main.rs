use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rune_cli::report::write_report;
use rune_cli::sweep::{execute_all, parse_values, plan, runs_csv, summarize, summary_csv, summary_table, SweepAxis};
use rune_core::config::{Profile, RunConfig};
use rune_core::label_queue::LabelQueue;
use rune_core::orchestrator::Trainer;
use rune_core::teacher::TeacherMode;
use rune_label_server::LabelServer;

#[derive(Parser)]
#[command(name = "rune", version, about = "Preference-based RL with reward-uncertainty exploration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent from a config file.
    Run(RunArgs),
    /// Run a config across values of one axis, several seeds each.
    Sweep(SweepArgs),
    /// Export learning curves and seed bands from run directories.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Defaults the config file overrides.
    #[arg(long, default_value = "desk")]
    profile: Profile,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Collect labels from a human through the label server at this address
    /// (for example 127.0.0.1:8787).
    #[arg(long, value_name = "ADDR")]
    serve: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated values or an inclusive range such as `1..5`.
    #[arg(long)]
    values: String,
    /// Seeds per axis value (ignored on the seeds axis).
    #[arg(long, default_value_t = 5)]
    repeats: u64,
    /// Runs executed concurrently.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory that receives curves.csv and bands.csv.
    #[arg(long)]
    out: PathBuf,
    /// Run directories, each holding metrics.csv.
    dirs: Vec<PathBuf>,
}

fn load_config(common: &Common) -> Result<RunConfig, String> {
    let mut config =
        RunConfig::load(&common.config, common.profile).map_err(|e| format!("{}: {e}", common.config.display()))?;
    for item in &common.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| format!("--set expects KEY=VALUE, got `{item}`"))?;
        config.set(key.trim(), value.trim()).map_err(|e| format!("--set {item}: {e}"))?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output_dir = Some(out.clone());
    }
    config.validate().map_err(|(_, m)| m)?;
    Ok(config)
}

fn default_run_dir(config: &RunConfig) -> PathBuf {
    Path::new("runs").join(format!("{}-{}-seed{}", config.task, config.exploration.as_str(), config.seed))
}

fn cmd_run(args: RunArgs) -> Result<(), (u8, String)> {
    let mut config = load_config(&args.common).map_err(|e| (2, e))?;
    if config.output_dir.is_none() {
        config.output_dir = Some(default_run_dir(&config));
    }
    let out = config.output_dir.clone().expect("set above");
    let (trainer, server) = match &args.serve {
        Some(addr) => {
            config.teacher = TeacherMode::Human;
            let queue = Arc::new(LabelQueue::new(config.total_budget, config.teacher_config().timeout));
            let server = LabelServer::start(addr, queue.clone(), 4).map_err(|e| (1, format!("label server: {e}")))?;
            eprintln!("label server at http://{}", server.local_addr());
            (Trainer::with_queue(config, queue), Some(server))
        }
        None => (Trainer::from_config(config), None),
    };
    let trainer = trainer.map_err(|e| (1, e.to_string()))?;
    let result = trainer.run().map_err(|e| (1, e.to_string()))?;
    drop(server);
    if let Some(last) = result.final_row() {
        println!(
            "step {}: success {} return {} labels {} ({} sessions)",
            last.step, last.success_rate, last.true_return, result.budget_used, result.sessions
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), (u8, String)> {
    let base = load_config(&args.common).map_err(|e| (2, e))?;
    let values = parse_values(&args.values).map_err(|e| (2, e))?;
    let out = args
        .common
        .out
        .clone()
        .unwrap_or_else(|| Path::new("runs").join(format!("sweep-{}", args.axis.as_str())));
    let runs = plan(&base, args.axis, &values, args.repeats, Some(&out)).map_err(|e| (2, e))?;
    eprintln!("sweep: {} runs on {} worker(s)", runs.len(), args.workers.max(1));
    let outcomes = execute_all(&runs, args.workers);
    let cells = summarize(args.axis, &outcomes);
    let table = summary_table(args.axis, &cells);
    let write = |name: &str, text: String| {
        std::fs::write(out.join(name), text).map_err(|e| (1, format!("{}: {e}", out.join(name).display())))
    };
    std::fs::create_dir_all(&out).map_err(|e| (1, format!("{}: {e}", out.display())))?;
    write("summary.md", table.clone())?;
    write("summary.csv", summary_csv(args.axis, &cells))?;
    write("runs.csv", runs_csv(&outcomes))?;
    print!("{table}");
    let failed: usize = cells.iter().map(|c| c.failed).sum();
    if failed > 0 {
        eprintln!("{failed} run(s) failed; see {}", out.join("runs.csv").display());
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), (u8, String)> {
    let outcome = write_report(&args.dirs, &args.out).map_err(|e| (1, e))?;
    for (dir, why) in &outcome.skipped {
        eprintln!("warning: skipped {}: {why}", dir.display());
    }
    println!(
        "{} run(s): wrote {} and {}",
        outcome.loaded,
        outcome.curves.display(),
        outcome.bands.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
