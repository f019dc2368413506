//! Write a synthetic meme corpus to disk and read it back.
//!
//! ```text
//! cargo run --example synthetic_corpus -- /tmp/corpus
//! ```

use std::path::PathBuf;

use memefuse::data::{load_external_negatives, load_main_corpus, OffenseFilter};
use memefuse::labels::Task;
use memefuse::synth::{write_synthetic_corpus, SynthConfig};

fn main() -> memefuse::error::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("memefuse-corpus"));
    let cfg = SynthConfig {
        n: 200,
        ..SynthConfig::default()
    };
    let summary = write_synthetic_corpus(&dir, &cfg, 50, 80)?;
    println!("wrote {summary:?} to {}", dir.display());

    let train = load_main_corpus(&dir.join("train.tsv"), true)?;
    let prevalence = train.label_prevalence();
    for t in Task::ALL {
        println!("{:<16} {:.3}", t.name(), prevalence.rate(t));
    }

    let external = load_external_negatives(&dir.join("external.tsv"), &OffenseFilter::default())?;
    println!(
        "external negatives: {} kept, {} dropped by offense level",
        external.dataset.len(),
        external.dropped
    );
    let first = &train.samples[0];
    println!("first sample: {} {:?} {:?}", first.id, first.text, first.labels);
    Ok(())
}
