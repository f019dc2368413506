//! The full batch pipeline in a fresh run directory: synthesize, split,
//! train both stages, ensemble, post-process and evaluate.

use memefuse::commands::{self, RunContext};
use memefuse::models::Architecture;
use memefuse::training::Stage;

fn main() -> memefuse::error::Result<()> {
    let run = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("memefuse-run"));
    let overrides: Vec<String> = [
        "synth.n=120",
        "synth.n_test=40",
        "synth.n_external=60",
        "train.epochs=4",
        "train.k_folds=3",
        "train.patience=2",
        "train.batch_size=8",
        "train.image_size=64",
        "train.crop_size=56",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();

    let ctx = RunContext::open(&run, &[], &overrides)?;
    commands::synthesize_corpus(&ctx, None)?;
    // reopen so the registered corpus paths are picked up
    let ctx = RunContext::open(&run, &[], &overrides)?;
    let split = commands::split(&ctx, None)?;
    println!("folds: {:?}, max deviation {:.4}", split.plan.fold_sizes(), split.max_deviation);
    for (stage, arch) in [
        (Stage::MultiTask, Architecture::SingleFlow),
        (Stage::MultiTask, Architecture::DoubleTower),
        (Stage::SingleTask, Architecture::DoubleTower),
    ] {
        let out = commands::train(&ctx, stage, arch)?;
        println!("trained {stage} {arch} -> {}", out.dir.display());
    }
    commands::ensemble(&ctx, None, None, None, None)?;
    let pp = commands::postprocess(&ctx, None, None, None)?;
    println!("submissions: {} {}", pp.submission_a.display(), pp.submission_b.display());
    let eval = commands::evaluate(&ctx, &[], None, None)?;
    print!("{}", memefuse::metrics::results_table(&eval.rows));
    Ok(())
}
