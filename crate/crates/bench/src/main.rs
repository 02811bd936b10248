use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use marl_bench::compare::compare_to_reference;
use marl_bench::config::{load_run_config, load_sweep_config, parse_json};
use marl_bench::report::{render_all, tidy_rows, write_tidy_csv};
use marl_bench::sweep::{run_sweep, TrainingRunner};
use marl_bench::train::{cmd_train, ReportFile};
use marl_bench::BenchError;
use marl_core::profiler::GrowthTable;

/// Phase-level profiling of multi-agent actor-critic training.
#[derive(Debug, Parser)]
#[command(name = "marl-bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train once; writes report.json, rewards.csv and checkpoint.bin.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an agent-count sweep; writes per-point reports, growth tables and a comparison.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print breakdown tables for report files.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Also write tidy CSV rows here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compare a growth table against the published trends.
    Compare {
        #[arg(long)]
        growth: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = load_run_config(&config)?;
            let outcome = cmd_train(&cfg, &out)?;
            print!("{}", marl_bench::report::render("train", &outcome.report));
            println!("wrote {}", out.display());
        }
        Command::Sweep { config, out } => {
            let cfg = load_sweep_config(&config)?;
            let outcome = run_sweep(&cfg, &TrainingRunner, Some(&out))?;
            for p in &outcome.points {
                print!("{}", marl_bench::report::render(&format!("N={}", p.n_agents), &p.mean));
            }
            if let Some(c) = &outcome.comparison {
                println!("{}", c.summary);
            }
            println!("wrote {}", out.display());
        }
        Command::Report { files, csv } => {
            let mut named = Vec::new();
            for path in &files {
                let file = ReportFile::read(path)?;
                let id = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into());
                named.push((id, file.report));
            }
            print!("{}", render_all(&named));
            if let Some(csv) = csv {
                let mut rows = Vec::new();
                for (id, report) in &named {
                    rows.extend(tidy_rows(id, report)?);
                }
                write_tidy_csv(&rows, &csv)?;
            }
        }
        Command::Compare { growth } => {
            let text = std::fs::read_to_string(&growth).with_context(|| growth.display().to_string())?;
            let table: GrowthTable = parse_json(&text, &growth.display().to_string())?;
            let comparison = compare_to_reference(&table)?;
            for v in &comparison.verdicts {
                println!(
                    "{:>2}->{:<2} {:<22} measured {:>7} published {:>5}  {:?}",
                    v.n_from,
                    v.n_to,
                    v.group.label(),
                    v.measured.map_or("-".into(), |m| format!("{m:.2}")),
                    v.reference.map_or("-".into(), |r| format!("{r:.1}")),
                    v.verdict,
                );
            }
            println!("{}", comparison.summary);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("MARL_BENCH_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let validation = err.downcast_ref::<BenchError>().is_some_and(BenchError::is_validation);
            ExitCode::from(if validation { 1 } else { 2 })
        }
    }
}
