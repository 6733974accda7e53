//! `nclpe`: datasets, training, CAF tables and attack curves from one
//! experiment config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ncofdm_lpe::caf::{Example1Case, Verdict};
use ncofdm_lpe::experiment::{
    run_attack_eval, run_caf, run_generate, run_train, ExperimentConfig,
};
use ncofdm_lpe::Result;

#[derive(Parser)]
#[command(name = "nclpe", version, about = "NC-OFDM low-probability-of-exploitation experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/test dataset files.
    Generate {
        /// Only this dataset.
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Train heads and write checkpoints plus loss traces.
    Train {
        /// Only this head (default: every head in order).
        #[arg(long)]
        head: Option<String>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Cyclic autocorrelation tables for the Example 1 cases.
    Caf {
        /// Restrict to these cases (1, 2, 3).
        #[arg(long, value_delimiter = ',')]
        case: Vec<u8>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Largest lag in samples.
        #[arg(long)]
        max_lag: Option<usize>,
        #[arg(long)]
        trials: Option<u64>,
    },
    /// BER curves for every scenario plus a manifest.
    AttackEval {
        /// Only this scenario.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// generate, train, caf (if configured) and attack-eval in turn.
    Run,
}

fn load_config(common: &Common, required: bool) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None if required => {
            return Err(ncofdm_lpe::Error::Config("--config is required for this command".into()));
        }
        None => ExperimentConfig::from_toml_str("")?,
    };
    if let Some(out) = &common.out {
        cfg.out.clone_from(out);
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn generate(cfg: &ExperimentConfig, only: Option<&str>, threads: usize) -> Result<()> {
    for r in run_generate(cfg, only, threads)? {
        let note = if r.reproduced { " (reproduced)" } else { "" };
        println!(
            "{}: {} train -> {}, {} test -> {}{note}",
            r.name,
            r.files.train_count,
            r.files.train.display(),
            r.files.test_count,
            r.files.test.display()
        );
    }
    Ok(())
}

fn train(cfg: &ExperimentConfig, head: Option<&str>, resume: Option<&Path>) -> Result<()> {
    let names: Vec<String> = match head {
        Some(h) => vec![h.to_string()],
        None if resume.is_some() => {
            return Err(ncofdm_lpe::Error::Config("--resume needs --head".into()));
        }
        None => cfg.heads.keys().cloned().collect(),
    };
    for name in names {
        let r = run_train(cfg, &name, resume)?;
        println!(
            "{name}: {} steps, test {} = {:.6}, checkpoint {}, trace {}",
            r.steps,
            cfg.heads[&name].head.metric().name(),
            r.test_metric,
            r.checkpoint.display(),
            r.trace.display()
        );
    }
    Ok(())
}

fn caf(cfg: &ExperimentConfig) -> Result<()> {
    for r in run_caf(cfg)? {
        let ambiguous = r.verdicts.iter().filter(|v| **v == Verdict::Ambiguous).count();
        let first: Vec<String> = r.peaks[0].iter().map(usize::to_string).collect();
        println!(
            "case {}: peaks [{}], ambiguous in {}/{} trials, table {}",
            r.case.index(),
            first.join(" "),
            ambiguous,
            r.verdicts.len(),
            r.table.display()
        );
    }
    Ok(())
}

fn attack(cfg: &ExperimentConfig, only: Option<&str>, threads: usize) -> Result<()> {
    let report = run_attack_eval(cfg, only, threads)?;
    for c in &report.curves {
        let last = c.points.last().expect("non-empty grid");
        println!(
            "{}: BER {:.3e} at {} dB over {} bits",
            c.scenario, last.ber, last.ebn0_db, last.trials
        );
    }
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    println!("manifest {}", report.manifest.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli.common.threads;
    match cli.command {
        Command::Generate { dataset } => {
            let cfg = load_config(&cli.common, true)?;
            cfg.write_snapshot()?;
            generate(&cfg, dataset.as_deref(), threads)
        }
        Command::Train { head, resume } => {
            let cfg = load_config(&cli.common, true)?;
            cfg.write_snapshot()?;
            train(&cfg, head.as_deref(), resume.as_deref())
        }
        Command::Caf {
            case,
            alpha,
            max_lag,
            trials,
        } => {
            let mut cfg = load_config(&cli.common, false)?;
            let mut c = cfg.caf.take().unwrap_or_default();
            if !case.is_empty() {
                c.cases = case
                    .iter()
                    .map(|&i| {
                        Example1Case::from_index(i)
                            .ok_or_else(|| ncofdm_lpe::Error::Config(format!("no Example 1 case {i}")))
                    })
                    .collect::<Result<_>>()?;
            }
            if let Some(a) = alpha {
                c.alpha = a;
            }
            if let Some(m) = max_lag {
                c.example1.max_lag = m;
            }
            if let Some(t) = trials {
                c.trials = t;
            }
            cfg.caf = Some(c);
            cfg.validate()?;
            cfg.write_snapshot()?;
            caf(&cfg)
        }
        Command::AttackEval { scenario } => {
            let cfg = load_config(&cli.common, true)?;
            cfg.write_snapshot()?;
            attack(&cfg, scenario.as_deref(), threads)
        }
        Command::Run => {
            let cfg = load_config(&cli.common, true)?;
            cfg.write_snapshot()?;
            generate(&cfg, None, threads)?;
            train(&cfg, None, None)?;
            if cfg.caf.is_some() {
                caf(&cfg)?;
            }
            if !cfg.scenarios.is_empty() {
                attack(&cfg, None, threads)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
