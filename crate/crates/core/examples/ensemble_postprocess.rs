//! Weighted ensembling, hierarchy correction and binarization on simulated
//! predictions, with the Sub-task B F1 before and after correction.

use memefuse::labels::Task;
use memefuse::metrics::multilabel_f1_labels;
use memefuse::postprocess::{binarize, ensemble, hierarchy_postprocess, DEFAULT_ALPHA, DEFAULT_THRESHOLD};
use memefuse::synth::{calibrated_labels, simulate_predictions, NoiseModel, REFERENCE_PREVALENCE};

fn main() -> memefuse::error::Result<()> {
    let gold = calibrated_labels(500, &REFERENCE_PREVALENCE, 1)?;
    let noise = NoiseModel::default();
    let (single_flow, stage2) = simulate_predictions(&gold, &noise, 2);
    let (double_tower, _) = simulate_predictions(&gold, &noise, 3);

    let mixed = ensemble(&single_flow, &double_tower, DEFAULT_ALPHA)?;
    let corrected = hierarchy_postprocess(&mixed, &stage2, DEFAULT_THRESHOLD, true)?;

    let score = |m| -> memefuse::error::Result<f64> {
        let labels = binarize(m, DEFAULT_THRESHOLD)
            .label_vectors()
            .expect("five-task matrix");
        Ok(multilabel_f1_labels(&labels, &gold)?.macro_f1)
    };
    println!("ensemble          macro-F1 {:.4}", score(&mixed)?);
    println!("post-processed    macro-F1 {:.4}", score(&corrected)?);

    let violations = |m| {
        binarize(m, DEFAULT_THRESHOLD)
            .label_vectors()
            .expect("five-task matrix")
            .iter()
            .filter(|l| !l.validate_hierarchy())
            .count()
    };
    println!(
        "hierarchy violations: {} before, {} after",
        violations(&mixed),
        violations(&corrected)
    );
    let sub_a = binarize(&stage2.select(&[Task::Misogynous])?, DEFAULT_THRESHOLD);
    print!("{}", sub_a.to_tsv().lines().take(4).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(())
}
