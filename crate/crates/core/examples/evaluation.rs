//! Per-label F1, macro and weighted averages, and the results table.

use memefuse::labels::LabelVector;
use memefuse::metrics::{evaluate, results_table, F1Mode, ResultRow};
use memefuse::predictions::PredictionMatrix;
use memefuse::labels::Task;

fn main() -> memefuse::error::Result<()> {
    let gold: Vec<(String, LabelVector)> = [
        [1, 1, 0, 0, 0],
        [1, 0, 1, 1, 0],
        [0, 0, 0, 0, 0],
        [1, 0, 0, 0, 1],
        [0, 0, 0, 0, 0],
        [1, 0, 1, 0, 0],
    ]
    .iter()
    .enumerate()
    .map(|(i, bits)| Ok((format!("m{i}"), LabelVector::from_ints(*bits)?)))
    .collect::<memefuse::error::Result<_>>()?;

    let probs = vec![
        vec![0.9, 0.7, 0.2, 0.1, 0.0],
        vec![0.8, 0.1, 0.6, 0.4, 0.1],
        vec![0.3, 0.0, 0.1, 0.2, 0.0],
        vec![0.6, 0.2, 0.1, 0.1, 0.3],
        vec![0.55, 0.1, 0.6, 0.1, 0.0],
        vec![0.2, 0.0, 0.7, 0.0, 0.0],
    ];
    let ids = (0..6).map(|i| format!("m{i}")).collect();
    let pred = PredictionMatrix::new(ids, Task::ALL.to_vec(), probs)?;

    let e = evaluate(&pred, &gold, 0.5)?;
    print!("{}", e.render(F1Mode::Weighted));

    let rows = vec![
        ResultRow::new("example model", e.subtask_a.unwrap_or(0.0), e.subtask_b_score(F1Mode::Macro).unwrap_or(0.0)),
        ResultRow {
            method: "sub-task A only".into(),
            subtask_a: e.subtask_a,
            subtask_b: None,
        },
    ];
    print!("\n{}", results_table(&rows));
    Ok(())
}
