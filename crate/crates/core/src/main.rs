use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use metaconf::config::ExperimentConfig;
use metaconf::runner;
use metaconf::trainer::Variant;
use metaconf::{Error, Result};

#[derive(Parser)]
#[command(name = "metaconf", version, about = "Meta-learned confidence estimation on synthetic benchmarks")]
struct Cli {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark: training CSV at --out, test CSV and metadata beside it.
    Datagen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one estimator and write checkpoint, history, report and manifest.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every (seed, variant) pair and tabulate the results.
    Compare {
        /// Training CSV shared by all runs; a benchmark per seed is generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds, or a range such as `0..10`.
        #[arg(long, default_value = "0..10")]
        seeds: String,
        #[arg(long, value_delimiter = ',', default_value = "full,label_only,input_only,joint,reweight,resample,plain")]
        variants: Vec<String>,
    },
    /// Check the meta-gradient against finite differences.
    Gradcheck,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::config(format!("cannot parse seeds `{s}`"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        return Ok((a..b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

fn run(cli: Cli) -> Result<ExitCode> {
    let config = ExperimentConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::Datagen { out } => {
            let s = runner::cmd_datagen(&config, &out)?;
            println!(
                "train: {} rows, correct rate {:.4} -> {}",
                s.train.n_samples,
                s.metadata.realized_train_correct_rate,
                s.train_path.display()
            );
            println!(
                "test:  {} rows, correct rate {:.4} -> {}",
                s.test.n_samples,
                s.metadata.realized_test_correct_rate,
                s.test_path.display()
            );
            println!("noise scale {:.6}", s.metadata.noise_scale);
        }
        Command::Train { data, out } => {
            let s = runner::cmd_train(&config, &data, &out)?;
            println!("{} iterations -> {}", s.history.records.len(), s.out_dir.display());
            println!("{}", serde_json::to_string_pretty(&s.report.metrics)?);
        }
        Command::Eval { checkpoint, data, out } => {
            let report = runner::cmd_eval(&config, &checkpoint, &data, out.as_deref())?;
            if out.is_none() {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                println!("{}", serde_json::to_string_pretty(&report.metrics)?);
            }
        }
        Command::Compare { data, out, seeds, variants } => {
            let seeds = parse_seeds(&seeds)?;
            let variants = variants.iter().map(|v| Variant::parse(v)).collect::<Result<Vec<_>>>()?;
            let c = runner::cmd_compare(&config, data.as_deref(), &seeds, &variants, &out)?;
            print!("{}", runner::table_csv(&c.rows));
            if let Some(w) = &c.full_vs_joint {
                for (metric, rate) in w {
                    println!("full beats joint on {metric}: {}/{}", rate.wins, rate.comparisons);
                }
            }
            println!("table -> {}", c.table_path.display());
        }
        Command::Gradcheck => {
            let s = runner::cmd_gradcheck(&config)?;
            println!(
                "{:?}: max relative error {:.3e} over {} cases (tolerance {:.0e}) -> {}",
                s.mode,
                s.max_rel_error,
                s.case_errors.len(),
                s.tolerance,
                if s.passed { "pass" } else { "FAIL" }
            );
            if !s.passed {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors share exit code 1 with configuration errors
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
