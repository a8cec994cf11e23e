use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use divmerge::harness::{
    build_report, compare_runs, default_sweep_points, emit_markdown, emit_report, load_records, router_sweep,
    run_benchmark, ConfiguredModels, ReportFormat, ReportLabel, RunArm, RunConfig,
};
use divmerge::pipeline::MergeStrategy;
use divmerge::router::{train_logistic, RoutingDataset};

#[derive(Parser)]
#[command(name = "divmerge", about = "Divide-and-merge text-to-SQL runs and reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArmArg {
    Baseline,
    Module,
    Both,
    Routed,
}

#[derive(Clone, Copy, ValueEnum)]
enum MergeArg {
    Last,
    Planner,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or both arms over the configured dataset.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        arm: ArmArg,
        #[arg(long, value_enum)]
        merge: Option<MergeArg>,
        #[arg(long, value_enum)]
        cs: Option<Switch>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        limit: Option<usize>,
        /// Overrides `run_dir` from the config.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Write report.json and report.md for one or more run directories.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        /// Where the combined markdown goes when several runs are given.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the router-accuracy sweep for a run.
    Sweep {
        run_dir: PathBuf,
        #[arg(long, value_delimiter = ',')]
        points: Option<Vec<f64>>,
    },
    /// Train the logistic router on the disagreements of a run (directory or records.json).
    RouteTrain {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        learning_rate: f64,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long, default_value_t = 0.0)]
        l2: f64,
    },
    /// Per-example differences between two runs.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

const RUN_CONFIG: &str = "config.toml";

/// Accepts a run directory or a records file directly.
fn records_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("records.json")
    } else {
        path.to_path_buf()
    }
}

fn load_run_config(run_dir: &Path) -> Result<RunConfig> {
    let path = run_dir.join(RUN_CONFIG);
    RunConfig::load(&path).with_context(|| format!("reading {}", path.display()))
}

fn run(
    config: &Path,
    arm: ArmArg,
    merge: Option<MergeArg>,
    cs: Option<Switch>,
    workers: Option<usize>,
    limit: Option<usize>,
    run_dir: Option<PathBuf>,
) -> Result<()> {
    let mut config = RunConfig::load(config)?;
    if let Some(m) = merge {
        config.pipeline.merge_strategy = match m {
            MergeArg::Last => MergeStrategy::LastSubquery,
            MergeArg::Planner => MergeStrategy::PlannerExecutor,
        };
    }
    if let Some(s) = cs {
        config.pipeline.column_selection_enabled = matches!(s, Switch::On);
    }
    if let Some(w) = workers {
        config.worker_count = w;
    }
    if limit.is_some() {
        config.dataset.limit = limit;
    }
    if let Some(dir) = run_dir {
        config.run_dir = dir;
    }
    config.validate()?;
    let arm = match arm {
        ArmArg::Baseline => RunArm::Baseline,
        ArmArg::Module => RunArm::Module,
        ArmArg::Both => RunArm::Both,
        ArmArg::Routed => RunArm::Routed,
    };
    let factory = ConfiguredModels::from_config(&config.models)?;
    let records = run_benchmark(&config, arm, &factory)?;
    fs::write(config.run_dir.join(RUN_CONFIG), toml::to_string(&config)?)?;
    let failed = records.iter().filter(|r| !r.errors.is_empty()).count();
    println!(
        "{} examples, {failed} with errors, records in {}",
        records.len(),
        records_path(&config.run_dir).display()
    );
    Ok(())
}

fn report(run_dirs: &[PathBuf], out: Option<PathBuf>) -> Result<()> {
    let mut reports = Vec::new();
    for dir in run_dirs {
        let config = load_run_config(dir)?;
        let records = load_records(&records_path(dir))?;
        let report = build_report(&records, ReportLabel::from_config(&config), &default_sweep_points())?;
        emit_report(&report, ReportFormat::Json, &dir.join("report.json"))?;
        emit_report(&report, ReportFormat::Markdown, &dir.join("report.md"))?;
        println!("{}: n={} written report.json, report.md", dir.display(), report.n);
        reports.push(report);
    }
    if let Some(path) = out {
        fs::write(&path, emit_markdown(&reports))?;
        println!("combined report in {}", path.display());
    }
    Ok(())
}

fn sweep(run_dir: &Path, points: Option<Vec<f64>>) -> Result<()> {
    let records = load_records(&records_path(run_dir))?;
    let points = points.unwrap_or_else(default_sweep_points);
    println!("router_accuracy\tex");
    for (a, ex) in router_sweep(&records, &points)? {
        println!("{a:.2}\t{ex:.2}");
    }
    Ok(())
}

fn route_train(input: &Path, out: &Path, learning_rate: f64, epochs: usize, l2: f64) -> Result<()> {
    let records = load_records(&records_path(input))?;
    let data = RoutingDataset::from_outcomes(
        records
            .iter()
            .filter_map(|r| Some((r.features, r.baseline_correct?, r.module_correct?))),
    );
    if data.rows.is_empty() {
        bail!("no disagreement examples in {}", input.display());
    }
    let model = train_logistic(&data, learning_rate, epochs, l2)?;
    model.save(out)?;
    println!(
        "trained on {} disagreements, model in {}",
        data.rows.len(),
        out.display()
    );
    Ok(())
}

fn compare(a: &Path, b: &Path) -> Result<()> {
    let diff = compare_runs(&load_records(&records_path(a))?, &load_records(&records_path(b))?);
    println!("{}", serde_json::to_string_pretty(&diff)?);
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            arm,
            merge,
            cs,
            workers,
            limit,
            run_dir,
        } => run(&config, arm, merge, cs, workers, limit, run_dir),
        Command::Report { run_dirs, out } => report(&run_dirs, out),
        Command::Sweep { run_dir, points } => sweep(&run_dir, points),
        Command::RouteTrain {
            input,
            out,
            learning_rate,
            epochs,
            l2,
        } => route_train(&input, &out, learning_rate, epochs, l2),
        Command::Compare { a, b } => compare(&a, &b),
    }
}
