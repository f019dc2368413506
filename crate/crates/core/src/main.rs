use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use memefuse::commands::{self, RunContext};
use memefuse::error::{Error, Result};
use memefuse::models::Architecture;
use memefuse::training::Stage;

#[derive(Parser)]
#[command(name = "memefuse", version, about = "Multimodal misogynous meme classification pipeline")]
struct Cli {
    /// Run directory; defaults to $MEMEFUSE_RUN_ROOT/<run>.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Run name under $MEMEFUSE_RUN_ROOT (default root `runs`).
    #[arg(long, global = true, default_value = "default")]
    run: String,
    /// Extra TOML config layers, applied after <run>/config.toml.
    #[arg(long = "config", global = true)]
    configs: Vec<PathBuf>,
    /// `section.key=value` overrides, applied last.
    #[arg(long = "set", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus and register it in <run>/config.toml.
    SynthesizeCorpus {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stratified k-fold plan for the training corpus.
    Split {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train one stage with one architecture across all folds.
    Train {
        #[arg(long, required_unless_present = "manifest")]
        stage: Option<u8>,
        #[arg(long, required_unless_present = "manifest")]
        arch: Option<Architecture>,
        /// Re-run from a previous training manifest.
        #[arg(long, conflicts_with_all = ["stage", "arch"])]
        manifest: Option<PathBuf>,
    },
    /// Predict a corpus with saved fold models.
    Predict {
        #[arg(long)]
        stage: u8,
        #[arg(long)]
        arch: Architecture,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Weighted average of two prediction files.
    Ensemble {
        #[arg(long)]
        y1: Option<PathBuf>,
        #[arg(long)]
        y2: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hierarchy correction and binary submissions.
    Postprocess {
        #[arg(long)]
        subtask_b: Option<PathBuf>,
        #[arg(long)]
        misogyny: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Score predictions against gold labels.
    Evaluate {
        /// `name=path`; repeatable. Without it the pipeline outputs are scored.
        #[arg(long = "pred")]
        preds: Vec<String>,
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn parse_pred(s: &str) -> Result<(String, PathBuf)> {
    s.split_once('=')
        .map(|(n, p)| (n.to_string(), PathBuf::from(p)))
        .ok_or_else(|| Error::Argument(format!("--pred `{s}` is not name=path")))
}

fn run(cli: Cli) -> Result<()> {
    let dir = commands::resolve_run_dir(cli.run_dir.as_deref(), &cli.run);
    if let Command::Train { manifest: Some(m), .. } = &cli.command {
        let out = commands::train_from_manifest(m)?;
        println!("{}", out.dir.display());
        return Ok(());
    }
    let ctx = RunContext::open(&dir, &cli.configs, &cli.overrides)?;
    match cli.command {
        Command::SynthesizeCorpus { out } => {
            let (dir, s) = commands::synthesize_corpus(&ctx, out.as_deref())?;
            println!("{}: {} train, {} test, {} external", dir.display(), s.train, s.test, s.external);
        }
        Command::Split { k } => {
            let o = commands::split(&ctx, k)?;
            println!("{} (max label-rate deviation {:.4})", o.path.display(), o.max_deviation);
        }
        Command::Train { stage, arch, .. } => {
            let stage = Stage::from_number(stage.expect("required by clap"))?;
            let out = commands::train(&ctx, stage, arch.expect("required by clap"))?;
            println!("{}", out.dir.display());
        }
        Command::Predict { stage, arch, input, out } => {
            let p = commands::predict(&ctx, Stage::from_number(stage)?, arch, input.as_deref(), out.as_deref())?;
            println!("{}", p.display());
        }
        Command::Ensemble { y1, y2, alpha, out } => {
            let p = commands::ensemble(&ctx, y1.as_deref(), y2.as_deref(), alpha, out.as_deref())?;
            println!("{}", p.display());
        }
        Command::Postprocess { subtask_b, misogyny, out_dir } => {
            let o = commands::postprocess(&ctx, subtask_b.as_deref(), misogyny.as_deref(), out_dir.as_deref())?;
            println!("{}\n{}", o.submission_a.display(), o.submission_b.display());
        }
        Command::Evaluate { preds, gold, out_dir } => {
            let preds = preds.iter().map(|s| parse_pred(s)).collect::<Result<Vec<_>>>()?;
            let o = commands::evaluate(&ctx, &preds, gold.as_deref(), out_dir.as_deref())?;
            print!("{}", memefuse::metrics::results_table(&o.rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
