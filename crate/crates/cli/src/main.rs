//! `stostl` command-line tool: parses a project file, runs its tasks and writes reports,
//! LP dumps and closed-loop traces.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use stostl::parser::{parse_project, Project, Task, TaskKind};
use stostl::runner::{run_task, RunConfig, RunError, TaskReport};
use stostl_milp::Budget;

const EXIT_CONFIG: u8 = 1;
const EXIT_INTERNAL: u8 = 2;
const EXIT_EXPECTATION: u8 = 3;

#[derive(Parser)]
#[command(name = "stostl", version, about = "Stochastic assume-guarantee contract checking and synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every task of a project.
    Run {
        #[command(flatten)]
        common: Common,
        /// Run independent tasks concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Run one contract check.
    Check {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: String,
    },
    /// Run one closed-loop simulation task.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: String,
        /// Number of seeded runs, overriding the task.
        #[arg(long)]
        runs: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// Project file.
    project: PathBuf,
    /// Directory for report, LP and CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed of simulations.
    #[arg(long, env = "STOSTL_SEED")]
    seed: Option<u64>,
    #[arg(long, default_value_t = Budget::default().max_nodes)]
    budget_nodes: usize,
    #[arg(long, default_value_t = Budget::default().max_seconds)]
    budget_seconds: f64,
    /// Segment counts of the tightening ladder.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1u32, 2, 4, 8])]
    segments: Vec<u32>,
    /// Write an LP file per solved model.
    #[arg(long)]
    dump_lp: bool,
    /// Write a CSV trace per simulation run.
    #[arg(long)]
    csv: bool,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        if self.budget_nodes == 0 {
            bail!("--budget-nodes must be positive");
        }
        if !(self.budget_seconds > 0.0) {
            bail!("--budget-seconds must be positive");
        }
        if self.segments.is_empty() || self.segments.contains(&0) {
            bail!("--segments must list positive counts");
        }
        if (self.dump_lp || self.csv) && self.out.is_none() {
            bail!("--dump-lp and --csv need --out");
        }
        Ok(RunConfig {
            budget: Budget {
                max_nodes: self.budget_nodes,
                max_seconds: self.budget_seconds,
            },
            ladder: self.segments.clone(),
            seed: self.seed,
            dump_lp: self.dump_lp,
            csv: self.csv,
            ..RunConfig::default()
        })
    }

    fn load(&self) -> Result<Project> {
        let text = fs::read_to_string(&self.project).with_context(|| format!("reading {}", self.project.display()))?;
        parse_project(&text).map_err(|e| anyhow::anyhow!("{}:{e}", self.project.display()))
    }
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn config_error(error: anyhow::Error) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        error,
    }
}

fn task_error(e: RunError) -> Failure {
    Failure {
        code: if e.is_config() { EXIT_CONFIG } else { EXIT_INTERNAL },
        error: e.into(),
    }
}

fn write_outputs(dir: &Path, reports: &[TaskReport]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for r in reports {
        let path = dir.join(format!("{}.report.txt", r.name));
        fs::write(&path, &r.text).with_context(|| format!("writing {}", path.display()))?;
        for (name, body) in r.lp_files.iter().chain(&r.csv_files) {
            let path = dir.join(name);
            fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}

fn select<'a>(project: &'a Project, name: &str, simulate: bool) -> Result<&'a Task> {
    let task = project
        .task(name)
        .with_context(|| format!("no task named `{name}`"))?;
    let is_sim = matches!(task.kind, TaskKind::Simulate { .. });
    if simulate && !is_sim {
        bail!("task `{name}` is not a simulation; use `stostl check`");
    }
    if !simulate && is_sim {
        bail!("task `{name}` is a simulation; use `stostl simulate`");
    }
    Ok(task)
}

fn execute(cli: Cli) -> Result<bool, Failure> {
    let (common, selected, runs, parallel) = match &cli.command {
        Command::Run { common, parallel } => (common, None, None, *parallel),
        Command::Check { common, task } => (common, Some((task.as_str(), false)), None, false),
        Command::Simulate { common, task, runs } => (common, Some((task.as_str(), true)), *runs, false),
    };
    let mut cfg = common.config().map_err(config_error)?;
    if runs == Some(0) {
        return Err(config_error(anyhow::anyhow!("--runs must be positive")));
    }
    cfg.runs = runs;
    let project = common.load().map_err(config_error)?;
    let tasks: Vec<&Task> = match selected {
        Some((name, simulate)) => vec![select(&project, name, simulate).map_err(config_error)?],
        None => project.tasks.iter().collect(),
    };
    let results: Vec<Result<TaskReport, RunError>> = if parallel {
        tasks.par_iter().map(|t| run_task(&project, t, &cfg)).collect()
    } else {
        tasks.iter().map(|t| run_task(&project, t, &cfg)).collect()
    };
    let reports = results.into_iter().collect::<Result<Vec<_>, _>>().map_err(task_error)?;
    for r in &reports {
        print!("{}", r.text);
        println!();
    }
    if let Some(dir) = &common.out {
        write_outputs(dir, &reports).map_err(|error| Failure {
            code: EXIT_INTERNAL,
            error,
        })?;
    }
    let unmet: Vec<&str> = reports
        .iter()
        .filter(|r| r.expectation_met == Some(false))
        .map(|r| r.name.as_str())
        .collect();
    if !unmet.is_empty() {
        eprintln!("stostl: expectation not met by: {}", unmet.join(", "));
    }
    Ok(unmet.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_EXPECTATION),
        Err(f) => {
            eprintln!("stostl: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
