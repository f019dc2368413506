//! Multi-label stratified k-fold assignment and its balance report.

use memefuse::split::{fold_balance_report, stratified_kfold};
use memefuse::synth::{synthetic_dataset, SynthConfig};

fn main() -> memefuse::error::Result<()> {
    let ds = synthetic_dataset(&SynthConfig {
        n: 1000,
        seed: 3,
        ..SynthConfig::default()
    })?;
    let plan = stratified_kfold(&ds, 5, 42)?;
    println!("fold sizes {:?}", plan.fold_sizes());
    println!("plan hash {}", plan.hash());
    print!("{}", fold_balance_report(&plan, &ds)?);

    let (train, val) = plan.split_indices(&ds, 0)?;
    println!("fold 0: {} train / {} validation", train.len(), val.len());
    Ok(())
}
