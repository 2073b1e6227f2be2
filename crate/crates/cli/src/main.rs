use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use grflab_cli::config::{read_config, thread_cap, ConfigError};
use grflab_cli::{error_payload, exit_code, verify, RunReport, Suite, EXIT_FAIL, EXIT_PASS};
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "grflab", version, about = "Generalized Ricci flow laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more experiment configs; independent configs run in parallel.
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Override the output directory (single config only).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a verification suite at two step sizes and report observed orders.
    Verify {
        suite: String,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize the reports under a directory.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", error_payload(&e));
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}

fn dispatch(cli: Cli) -> Result<i32> {
    if let Some(n) = thread_cap(std::env::var("GRFLAB_THREADS").ok())? {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("thread pool")?;
    }
    match cli.command {
        Command::Run { configs, out } => run(&configs, out),
        Command::Verify { suite, resolution, out } => {
            let suite: Suite = suite.parse().map_err(ConfigError)?;
            let report = verify(suite, resolution)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("report.json"), report.to_json())?;
            }
            print!("{}", report.render());
            Ok(status(&report))
        }
        Command::Report { dir } => report(&dir),
    }
}

fn status(report: &RunReport) -> i32 {
    if report.all_pass {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}

fn run(paths: &[PathBuf], out: Option<PathBuf>) -> Result<i32> {
    if out.is_some() && paths.len() > 1 {
        return Err(ConfigError("--out needs a single config".into()).into());
    }
    let mut configs = Vec::new();
    for p in paths {
        let mut cfg = read_config(p)?;
        if let Some(dir) = &out {
            cfg.output.dir = dir.clone();
        }
        configs.push(cfg);
    }
    let mut dirs: Vec<_> = configs.iter().map(|c| c.output.dir.clone()).collect();
    dirs.sort();
    dirs.dedup();
    if dirs.len() != configs.len() {
        return Err(ConfigError("configs in one batch need distinct output directories".into()).into());
    }
    let outcomes: Vec<Result<grflab_cli::RunOutcome>> = configs.par_iter().map(grflab_cli::execute).collect();
    // The worst outcome decides the exit code: config errors, then aborts, then failures.
    let mut code = EXIT_PASS;
    for (cfg, outcome) in configs.iter().zip(outcomes) {
        match outcome.and_then(|o| o.write(&cfg.output.dir).map(|_| o)) {
            Ok(o) => {
                println!("{}:", cfg.output.dir.display());
                print!("{}", o.report.render());
                code = code.max(status(&o.report));
            }
            Err(e) => {
                eprintln!("{}", error_payload(&e));
                code = code.max(exit_code(&e));
            }
        }
    }
    Ok(code)
}

/// Every `report.json` at or below `dir`, in path order.
fn find_reports(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let direct = dir.join("report.json");
    if direct.is_file() {
        found.push(direct);
    }
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for e in entries {
        find_reports(&e, found)?;
    }
    Ok(())
}

fn report(dir: &Path) -> Result<i32> {
    let mut paths = Vec::new();
    find_reports(dir, &mut paths).map_err(|e| ConfigError(format!("{e:#}")))?;
    if paths.is_empty() {
        return Err(ConfigError(format!("no report.json under {}", dir.display())).into());
    }
    let mut code = EXIT_PASS;
    for p in paths {
        let text = std::fs::read_to_string(&p)?;
        let rep = RunReport::from_json(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
        println!("{} (config {})", p.display(), &rep.config_hash[..12.min(rep.config_hash.len())]);
        print!("{}", rep.render());
        code = code.max(status(&rep));
    }
    Ok(code)
}
